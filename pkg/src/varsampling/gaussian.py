"""Quadratic exponential family and (unnormalized) Gaussian moments.

A member of the family is ``q(x) = exp(theta . phi(x))`` where ``phi`` holds
the monomials of degree at most two.  Parameters are laid out as::

    theta = (theta0, b_1..b_d, c_ij for i <= j)

so that ``theta . phi(x) = theta0 + b.x + x.A.x`` with ``A[i, i] = c_ii`` and
``A[i, j] = A[j, i] = c_ij / 2`` off the diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

LOG_2PI = np.log(2 * np.pi)


class FeatureMap:
    """Feature map ``phi(x) = (1, x_1, .., x_d, x_i x_j for i <= j)``."""

    def __init__(self, dim: int):
        dim = int(dim)
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = dim
        self._iu = np.triu_indices(dim)
        self.n_params = 1 + dim + len(self._iu[0])

    def __repr__(self):
        return f"FeatureMap(dim={self.dim})"

    def __eq__(self, other):
        return isinstance(other, FeatureMap) and other.dim == self.dim

    def __hash__(self):
        return hash(("FeatureMap", self.dim))

    def features(self, x) -> np.ndarray:
        """Feature vector of a single point, length ``n_params``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a point of length {self.dim}, got shape {x.shape}")
        return self.design(x[None, :])[0]

    def design(self, points) -> np.ndarray:
        """Feature rows for a batch of points: array of shape (N, n_params).

        This is the transpose of the n x N matrix usually written Phi.
        """
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ValueError(f"expected points of shape (N, {self.dim}), got {points.shape}")
        i, j = self._iu
        return np.hstack([np.ones((points.shape[0], 1)), points, points[:, i] * points[:, j]])

    def split(self, theta):
        """Return ``(theta0, b, A)`` with ``A`` the symmetric quadratic matrix."""
        theta = self._check(theta)
        d = self.dim
        coef = theta[1 + d:]
        A = np.zeros((d, d))
        A[self._iu] = coef
        # halves the off-diagonal coefficients, keeps the diagonal
        A = 0.5 * (A + A.T)
        return theta[0], theta[1:1 + d].copy(), A

    def join(self, theta0, b, A) -> np.ndarray:
        """Inverse of :meth:`split`; ``A`` is symmetrized first."""
        A = np.asarray(A, dtype=float)
        A = 0.5 * (A + A.T)
        coef = 2.0 * A[self._iu]
        coef[self._diag_positions()] = np.diag(A)
        return np.concatenate([[float(theta0)], np.asarray(b, dtype=float).reshape(self.dim), coef])

    def _diag_positions(self):
        i, j = self._iu
        return np.flatnonzero(i == j)

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        return theta


@dataclass(frozen=True)
class Improper:
    """Outcome of a fit that is not an integrable Gaussian."""

    reason: str = ""

    def to_json(self) -> dict:
        return {"improper": True}


@dataclass(frozen=True)
class GaussianMoments:
    """Mass, mean and covariance of an unnormalized Gaussian ``Z N(mu, Sigma)``."""

    mass: float
    mean: np.ndarray
    cov: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float).reshape(mean.size, mean.size)
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise ValueError(f"mass must be finite and positive, got {self.mass}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive definite") from None
        mean.flags.writeable = False
        cov.flags.writeable = False
        chol.flags.writeable = False
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def standard(cls, dim: int, mass: float = 1.0) -> "GaussianMoments":
        return cls(mass, np.zeros(dim), np.eye(dim))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance."""
        return self._chol

    def log_density(self, points) -> np.ndarray:
        """``log(Z N(x; mu, Sigma))`` for points of shape (N, d)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        z = solve_triangular(self._chol, (points - self.mean).T, lower=True)
        logdet = 2 * np.sum(np.log(np.diag(self._chol)))
        return np.log(self.mass) - 0.5 * (self.dim * LOG_2PI + logdet + np.sum(z ** 2, axis=0))

    def to_json(self) -> dict:
        return {"mass": self.mass, "mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_json(cls, obj):
        if obj.get("improper"):
            return Improper()
        return cls(obj["mass"], obj["mean"], obj["cov"])


Moments = Union[GaussianMoments, Improper]


def is_proper(m) -> bool:
    return isinstance(m, GaussianMoments)


def natural_to_moments(fm: FeatureMap, theta) -> Moments:
    """Closed-form ``(Z, mu, Sigma)`` of ``exp(theta . phi)``, or :class:`Improper`.

    Properness is decided by a Cholesky factorization of the precision
    ``-2 A`` with no jitter.
    """
    theta0, b, A = fm.split(theta)
    precision = -2.0 * A
    try:
        cf = cho_factor(precision, lower=True, check_finite=True)
    except (LinAlgError, ValueError):
        return Improper("quadratic part is not negative definite")
    d = fm.dim
    cov = cho_solve(cf, np.eye(d))
    mean = cho_solve(cf, b)
    logdet_precision = 2 * np.sum(np.log(np.diag(cf[0])))
    log_mass = theta0 + 0.5 * b @ mean + 0.5 * d * LOG_2PI - 0.5 * logdet_precision
    with np.errstate(over="ignore"):
        mass = np.exp(log_mass)
    if not (np.isfinite(mass) and mass > 0):
        return Improper(f"mass out of floating point range (log mass {log_mass:.4g})")
    cov = 0.5 * (cov + cov.T)
    try:
        return GaussianMoments(mass, mean, cov)
    except ValueError as exc:
        return Improper(str(exc))


def moments_to_natural(fm: FeatureMap, m: GaussianMoments) -> np.ndarray:
    """Natural parameters of the unnormalized Gaussian ``m``."""
    if not isinstance(m, GaussianMoments):
        raise ValueError("improper moments have no natural parameters")
    if m.dim != fm.dim:
        raise ValueError(f"dimension mismatch: moments {m.dim}, features {fm.dim}")
    d = fm.dim
    L = m.chol
    linv = solve_triangular(L, np.eye(d), lower=True)
    precision = linv.T @ linv
    b = precision @ m.mean
    logdet_cov = 2 * np.sum(np.log(np.diag(L)))
    theta0 = np.log(m.mass) - 0.5 * b @ m.mean - 0.5 * d * LOG_2PI - 0.5 * logdet_cov
    return fm.join(theta0, b, -0.5 * precision)


def feature_moments(fm: FeatureMap, m: GaussianMoments) -> np.ndarray:
    """Integral of ``phi`` against the unnormalized Gaussian ``m``."""
    i, j = np.triu_indices(fm.dim)
    second = m.cov + np.outer(m.mean, m.mean)
    return m.mass * np.concatenate([[1.0], m.mean, second[i, j]])


def _x_minus_log1p(x):
    # x - log(1 + x) >= 0, accurate near 0
    return np.maximum(np.asarray(x) - np.log1p(x), 0.0)


def generalized_kl(a: GaussianMoments, b: GaussianMoments) -> float:
    """Generalized KL divergence ``D(a || b)`` between unnormalized Gaussians.

    Written as a sum of terms ``t - log(1 + t) >= 0`` so that the result is
    nonnegative and accurate when ``a`` and ``b`` are close.
    """
    if not (isinstance(a, GaussianMoments) and isinstance(b, GaussianMoments)):
        raise ValueError("generalized_kl requires two proper Gaussians")
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    # Sigma_b^{-1/2} Sigma_a^{1/2}; the squared singular values are the
    # eigenvalues of Sigma_b^{-1} Sigma_a
    M = solve_triangular(b.chol, a.chol, lower=True)
    s2 = np.linalg.svd(M, compute_uv=False) ** 2
    delta = solve_triangular(b.chol, a.mean - b.mean, lower=True)
    kl_normalized = 0.5 * (np.sum(_x_minus_log1p(s2 - 1.0)) + delta @ delta)
    # Za log(Za/Zb) - Za + Zb = Za (r - 1 - log r), r = Zb/Za
    mass_term = a.mass * _x_minus_log1p(b.mass / a.mass - 1.0)
    return float(a.mass * kl_normalized + mass_term)
