"""Target densities: a generic log-density interface and exponential power laws."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .gaussian import GaussianMoments


class TargetDensity:
    """Unnormalized log-density on R^d.

    ``log_density`` is evaluated on arrays of shape (N, d) and returns shape
    (N,).  ``reference_moments`` holds the exact mass, mean and covariance
    when they are known analytically; estimators never read it.
    """

    def __init__(
        self,
        dim: int,
        log_density: Callable[[np.ndarray], np.ndarray],
        reference_moments: Optional[GaussianMoments] = None,
    ):
        dim = int(dim)
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        if reference_moments is not None and reference_moments.dim != dim:
            raise ValueError("reference moments have the wrong dimension")
        self.dim = dim
        self._log_density = log_density
        self.reference_moments = reference_moments

    def log_density(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ValueError(f"expected points of shape (N, {self.dim}), got {points.shape}")
        out = np.asarray(self._log_density(points), dtype=float).reshape(points.shape[0])
        if np.isnan(out).any():
            raise FloatingPointError("target log-density returned NaN")
        return out


def log_density_at(target: TargetDensity, x) -> float:
    """Log-density of ``target`` at a single point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (target.dim,):
        raise ValueError(f"expected a point of length {target.dim}, got shape {x.shape}")
    return float(target.log_density(x[None, :])[0])


class ExpPowerTarget(TargetDensity):
    """Product of exponential power laws with unit variance per coordinate.

    p(x) = [beta / (2 alpha Gamma(1/beta))]^d exp(-sum_i |x_i / alpha|^beta)
    with alpha = sqrt(Gamma(1/beta) / Gamma(3/beta)).
    """

    def __init__(self, dim: int, beta: float):
        beta = float(beta)
        if not beta > 0:
            raise ValueError(f"shape parameter beta must be positive, got {beta}")
        if int(dim) < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.beta = beta
        self.alpha = float(np.exp(0.5 * (gammaln(1 / beta) - gammaln(3 / beta))))
        self.log_norm = int(dim) * (np.log(beta) - np.log(2 * self.alpha) - gammaln(1 / beta))
        super().__init__(dim, self._log_p, GaussianMoments.standard(int(dim)))

    def _log_p(self, points):
        return self.log_norm - np.sum(np.abs(points / self.alpha) ** self.beta, axis=1)

    def __repr__(self):
        return f"ExpPowerTarget(dim={self.dim}, beta={self.beta})"

    def __reduce__(self):
        return (ExpPowerTarget, (self.dim, self.beta))


def exp_power(d: int, beta: float) -> ExpPowerTarget:
    return ExpPowerTarget(d, beta)


def gaussian_target(moments: GaussianMoments) -> TargetDensity:
    """Target equal to the unnormalized Gaussian ``moments``."""
    return TargetDensity(moments.dim, moments.log_density, moments)


def parse_target(spec: str, dim: int) -> TargetDensity:
    """Build a target from a name such as ``exp_power:beta=1.5``."""
    kind, _, rest = spec.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"malformed target parameter {item!r} in {spec!r}")
        params[key.strip()] = float(value)
    if kind.strip() == "exp_power":
        if set(params) != {"beta"}:
            raise ValueError(f"exp_power takes exactly one parameter 'beta', got {sorted(params)}")
        return exp_power(dim, params["beta"])
    raise ValueError(f"unknown target kind {kind!r}")


def target_name(beta: float) -> str:
    return f"exp_power:beta={beta!r}"
