"""Gaussian fits from weighted samples: IS, variational sampling and BMC."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, qr
from scipy.linalg.lapack import dpocon

from .gaussian import (
    FeatureMap,
    GaussianMoments,
    Improper,
    Moments,
    feature_moments,
    is_proper,
    moments_to_natural,
    natural_to_moments,
)
from .samplers import SampleBatch

# exp() overflows a little above 709.78
_MAX_EXPONENT = 700.0
RANK_TOL = 1e-10


class RankDeficient(ValueError):
    """The feature matrix of the sample does not have full row rank."""

    def __init__(self, rank: int, n_params: int):
        self.rank = rank
        self.n_params = n_params
        super().__init__(
            f"feature matrix has rank {rank} < {n_params} parameters "
            f"(deficiency {n_params - rank}); the variational objective has no unique minimizer")


@dataclass
class FitResult:
    moments: Moments
    natural: Optional[np.ndarray] = None
    fit_seconds: float = 0.0
    iterations: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def proper(self) -> bool:
        return is_proper(self.moments)


@dataclass(frozen=True)
class VsConfig:
    grad_tol: float = 1e-8
    max_iterations: int = 200
    min_step: float = 1e-12
    hessian_jitter: float = 1e-10
    jitter_escalations: int = 3

    def __post_init__(self):
        if not (0 < self.grad_tol < 1):
            raise ValueError("grad_tol must lie in (0, 1)")
        if self.max_iterations < 1 or self.min_step <= 0 or self.hessian_jitter <= 0:
            raise ValueError("VS solver settings must be positive")


def _check_batch(batch: SampleBatch, fm: FeatureMap):
    if batch.dim != fm.dim:
        raise ValueError(f"batch dimension {batch.dim} does not match feature map dimension {fm.dim}")


def _chol_or_none(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None


def _weighted_moments(points, w, mass) -> Moments:
    """Gaussian with the w-weighted mean and covariance of ``points``."""
    wsum = w.sum()
    if not (np.isfinite(wsum) and wsum > 0):
        return Improper("all weights vanished")
    mean = w @ points / wsum
    xc = points - mean
    cov = (w[:, None] * xc).T @ xc / wsum
    cov = 0.5 * (cov + cov.T)
    if not (np.isfinite(mass) and mass > 0):
        return Improper("mass estimate is not positive")
    if _chol_or_none(cov) is None:
        return Improper("weighted covariance is not positive definite")
    return GaussianMoments(mass, mean, cov)


def _is_moments(batch: SampleBatch) -> tuple:
    lw = batch.log_weights
    shift = lw.max()
    w = np.exp(lw - shift)
    mass = np.exp(shift) * w.mean()
    return _weighted_moments(batch.points, w, mass), mass


def is_fit(batch: SampleBatch, fm: FeatureMap) -> FitResult:
    """Importance sampling moments (equivalently, weighted-likelihood moment matching).

    Z = mean of the weights; mean and covariance are self-normalized
    weighted averages.
    """
    _check_batch(batch, fm)
    tic = time.perf_counter()
    moments, mass = _is_moments(batch)
    elapsed = time.perf_counter() - tic
    diagnostics = {"mass_estimate": float(mass)}
    if isinstance(moments, Improper):
        diagnostics["improper_reason"] = moments.reason
    return FitResult(moments, fit_seconds=elapsed, diagnostics=diagnostics)


class Objective(NamedTuple):
    value: float
    grad: Optional[np.ndarray]
    hess: Optional[np.ndarray]

    @property
    def overflow(self) -> bool:
        return not np.isfinite(self.value)


def _objective(theta, phi, log_w, log_p, derivatives=True) -> Objective:
    N = phi.shape[0]
    # s = log(q / p) at the sample points
    s = phi @ theta - log_p
    log_wbar = log_w + s
    if s.max() > _MAX_EXPONENT or log_wbar.max() > _MAX_EXPONENT:
        return Objective(np.inf, None, None)
    w = np.exp(log_w)
    wbar = np.exp(log_wbar)
    # w (r - 1 - log r) with r = q / p
    value = float(w @ (np.expm1(s) - s)) / N
    if not np.isfinite(value):
        return Objective(np.inf, None, None)
    if not derivatives:
        return Objective(value, None, None)
    grad = phi.T @ (wbar - w) / N
    hess = (phi * wbar[:, None]).T @ phi / N
    return Objective(value, grad, 0.5 * (hess + hess.T))


def vs_objective(theta, batch: SampleBatch, fm: FeatureMap, derivatives: bool = True) -> Objective:
    """Monte Carlo generalized-KL objective with its gradient and Hessian.

    ``value`` is ``+inf`` (and the derivatives ``None``) when ``q/p`` would
    overflow at some sample point.
    """
    _check_batch(batch, fm)
    theta = fm._check(theta)
    return _objective(theta, fm.design(batch.points), batch.log_weights, batch.log_target, derivatives)


def rank_of_features(batch: SampleBatch, fm: FeatureMap) -> int:
    """Numerical rank of the feature matrix, by column-pivoted QR."""
    _check_batch(batch, fm)
    return _rank(fm.design(batch.points))


def _rank(phi) -> int:
    r = qr(phi, mode="r", pivoting=True)[0]
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0:
        return 0
    return int(np.sum(diag > RANK_TOL * diag[0]))


def _initial_theta(batch: SampleBatch, fm: FeatureMap) -> tuple:
    moments, mass = _is_moments(batch)
    if is_proper(moments):
        return moments_to_natural(fm, moments), "is"
    if not (np.isfinite(mass) and mass > 0):
        mass = 1.0
    plain = _weighted_moments(batch.points, np.ones(batch.size), mass)
    if is_proper(plain):
        return moments_to_natural(fm, plain), "sample_moments"
    return moments_to_natural(fm, GaussianMoments.standard(fm.dim, mass)), "standard"


def _newton_direction(hess, grad, cfg: VsConfig):
    scale = max(np.trace(hess) / hess.shape[0], np.finfo(float).tiny)
    jitter = 0.0
    for attempt in range(cfg.jitter_escalations + 1):
        try:
            cf = cho_factor(hess + jitter * scale * np.eye(hess.shape[0]), lower=True)
            return -cho_solve(cf, grad), jitter
        except LinAlgError:
            jitter = cfg.hessian_jitter * 10.0 ** attempt
    return None, jitter


def vs_fit(batch: SampleBatch, fm: FeatureMap, cfg: Optional[VsConfig] = None) -> FitResult:
    """Variational sampling: damped Newton minimization of the objective.

    Raises :class:`RankDeficient` when the feature matrix of the sample has
    rank below the number of parameters.  A stalled line search returns the
    best iterate with ``diagnostics['converged'] = False``.
    """
    cfg = cfg or VsConfig()
    _check_batch(batch, fm)
    tic = time.perf_counter()
    phi = fm.design(batch.points)
    rank = _rank(phi)
    if rank < fm.n_params:
        raise RankDeficient(rank, fm.n_params)
    log_w, log_p = batch.log_weights, batch.log_target

    theta, init = _initial_theta(batch, fm)
    obj = _objective(theta, phi, log_w, log_p)
    if obj.overflow:
        # warm start too far off; fall back to the flat member exp(theta0)
        theta = np.zeros(fm.n_params)
        theta[0] = np.median(log_p)
        init = "flat"
        obj = _objective(theta, phi, log_w, log_p)

    trace = [obj.value]
    status = "max_iterations"
    max_jitter = 0.0
    backtracks = 0
    iterations = 0
    grad_norm = float(np.abs(obj.grad).max()) if obj.grad is not None else np.inf
    while True:
        if grad_norm < cfg.grad_tol:
            status = "converged"
            break
        if iterations >= cfg.max_iterations:
            break
        direction, jitter = _newton_direction(obj.hess, obj.grad, cfg)
        max_jitter = max(max_jitter, jitter)
        if direction is None:
            status = "hessian_failure"
            break
        step = 1.0
        while step >= cfg.min_step:
            trial = theta + step * direction
            value = _objective(trial, phi, log_w, log_p, derivatives=False).value
            # ties are accepted: at this point the decrease is below
            # floating point resolution of the objective
            if value <= obj.value:
                break
            step *= 0.5
            backtracks += 1
        else:
            status = "line_search_stalled"
            break
        theta = trial
        obj = _objective(theta, phi, log_w, log_p)
        iterations += 1
        trace.append(obj.value)
        grad_norm = float(np.abs(obj.grad).max())

    moments = natural_to_moments(fm, theta)
    elapsed = time.perf_counter() - tic
    diagnostics = {
        "converged": status == "converged",
        "status": status,
        "grad_norm": grad_norm,
        "objective": obj.value,
        "rank": rank,
        "init": init,
        "backtracks": backtracks,
        "max_jitter": max_jitter,
        "trace": trace,
    }
    if isinstance(moments, Improper):
        diagnostics["improper_reason"] = moments.reason
    return FitResult(moments, natural=theta, fit_seconds=elapsed, iterations=iterations, diagnostics=diagnostics)


def _isotropic_variance(batch: SampleBatch) -> float:
    moments, _ = _is_moments(batch)
    if is_proper(moments):
        return float(np.trace(moments.cov) / batch.dim)
    if batch.size > 1:
        v = float(np.mean(np.var(batch.points, axis=0)))
        if v > 0:
            return v
    return 1.0


def bmc_fit(
    batch: SampleBatch,
    fm: FeatureMap,
    damping: float = 1.0,
    v: Union[float, str] = "auto",
) -> FitResult:
    """Bayesian Monte Carlo with an isotropic Gaussian correlation function.

    The target is interpolated at the sample points by a damped kernel
    regression, giving a mixture of Gaussians ``sum_k c_k N(x; x_k, v I)``
    whose moments are returned.  With ``v="auto"`` the kernel variance is the
    isotropic IS variance of the same batch.  Importance weights play no part
    in the solve.
    """
    _check_batch(batch, fm)
    if damping < 0:
        raise ValueError(f"damping must be nonnegative, got {damping}")
    tic = time.perf_counter()
    if isinstance(v, str):
        if v != "auto":
            raise ValueError(f"kernel variance must be a positive number or 'auto', got {v!r}")
        v = _isotropic_variance(batch)
    v = float(v)
    if not v > 0:
        raise ValueError(f"kernel variance must be positive, got {v}")
    x = batch.points
    N, d = x.shape
    sq = np.sum(x ** 2, axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2 * x @ x.T, 0.0)
    K = np.exp(-dist2 / (2 * v))
    K[np.diag_indices(N)] += damping
    y = np.exp(batch.log_target)
    diagnostics = {"kernel_var": v, "damping": float(damping)}
    try:
        cf = cho_factor(K, lower=False)
        a = cho_solve(cf, y)
        rcond, _ = dpocon(cf[0], np.abs(K).sum(axis=0).max(), uplo="U")
        diagnostics["cond"] = float(1.0 / rcond) if rcond > 0 else np.inf
    except LinAlgError:
        diagnostics["cond"] = np.inf
        diagnostics["improper_reason"] = "kernel system is not positive definite"
        return FitResult(Improper("kernel solve failed"), fit_seconds=time.perf_counter() - tic,
                         diagnostics=diagnostics)
    c = a * (2 * np.pi * v) ** (d / 2)
    Z = c.sum()
    moments: Moments
    if not (np.isfinite(Z) and Z > 0):
        moments = Improper("mixture mass is not positive")
    else:
        mean = c @ x / Z
        xc = x - mean
        cov = (c[:, None] * xc).T @ xc / Z + v * np.eye(d)
        cov = 0.5 * (cov + cov.T)
        if _chol_or_none(cov) is None:
            moments = Improper("mixture covariance is not positive definite")
        else:
            moments = GaussianMoments(Z, mean, cov)
    elapsed = time.perf_counter() - tic
    if isinstance(moments, Improper):
        diagnostics["improper_reason"] = moments.reason
    diagnostics["coefficients"] = c
    return FitResult(moments, fit_seconds=elapsed, diagnostics=diagnostics)


def bmc_interpolant(fit: FitResult, batch: SampleBatch, x) -> np.ndarray:
    """Evaluate the BMC mixture ``sum_k c_k N(x; x_k, v I)`` at points ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = fit.diagnostics["kernel_var"]
    c = fit.diagnostics["coefficients"]
    d = batch.dim
    dist2 = np.sum((x[:, None, :] - batch.points[None, :, :]) ** 2, axis=2)
    return np.exp(-dist2 / (2 * v)) @ c / (2 * np.pi * v) ** (d / 2)


def vs_asymptotic_variance(theta, batch: SampleBatch, fm: FeatureMap) -> np.ndarray:
    """Sample estimate of the VS asymptotic covariance at ``theta``.

    Averages ``((p - q) / pi)^2 phi phi^T`` over the batch, i.e.
    ``(w - wbar)^2 phi phi^T`` with ``wbar = w q / p``.
    """
    _check_batch(batch, fm)
    theta = fm._check(theta)
    phi = fm.design(batch.points)
    w = np.exp(batch.log_weights)
    wbar = np.exp(batch.log_weights + phi @ theta - batch.log_target)
    r = (w - wbar) ** 2
    out = (phi * r[:, None]).T @ phi / batch.size
    return 0.5 * (out + out.T)


def is_variance(batch: SampleBatch, fm: FeatureMap) -> np.ndarray:
    """Sample estimate of the per-sample covariance of the plain IS estimator."""
    _check_batch(batch, fm)
    phi = fm.design(batch.points)
    w = np.exp(batch.log_weights)
    I = w @ phi / batch.size
    out = (phi * (w ** 2)[:, None]).T @ phi / batch.size - np.outer(I, I)
    return 0.5 * (out + out.T)


def is_estimate(batch: SampleBatch, fm: FeatureMap) -> np.ndarray:
    """Unbiased IS estimate of the feature integral, ``mean(w phi)``."""
    _check_batch(batch, fm)
    return np.exp(batch.log_weights) @ fm.design(batch.points) / batch.size


def fitted_feature_moments(fm: FeatureMap, result: FitResult) -> np.ndarray:
    if not result.proper:
        raise ValueError("improper fit has no feature moments")
    return feature_moments(fm, result.moments)
