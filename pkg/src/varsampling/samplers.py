"""Weighted point sets: direct Gaussian sampling and annealed sampling."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .gaussian import GaussianMoments
from .targets import TargetDensity

# bound on (chains x steps x dim) random numbers held in memory at once
_CHUNK_BUDGET = 1 << 22
_MAX_INIT_RETRIES = 100


@dataclass(frozen=True)
class SampleBatch:
    """Control points with log importance weights and cached target values."""

    points: np.ndarray
    log_weights: np.ndarray
    log_target: np.ndarray
    sampling_seconds: float = 0.0

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1:
            raise ValueError(f"points must have shape (N, d) with N >= 1, got {points.shape}")
        n = points.shape[0]
        log_weights = np.array(self.log_weights, dtype=float).reshape(n)
        log_target = np.array(self.log_target, dtype=float).reshape(n)
        if not np.isfinite(log_weights).all():
            raise ValueError("all log weights must be finite")
        for arr in (points, log_weights, log_target):
            arr.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "log_weights", log_weights)
        object.__setattr__(self, "log_target", log_target)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class AnnealingSchedule:
    """Geometric tempering schedule from an isotropic Gaussian start."""

    lambda_start: float = 0.001
    lambda_end: float = 0.999
    steps: int = 1000
    proposal_var: float = 0.025
    init_var: float = 25.0

    def __post_init__(self):
        if not 0 < self.lambda_start < self.lambda_end < 1:
            raise ValueError("need 0 < lambda_start < lambda_end < 1")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        if not (self.proposal_var > 0 and self.init_var > 0):
            raise ValueError("proposal and initial variances must be positive")

    def lambdas(self) -> np.ndarray:
        """Inverse temperatures lambda_1..lambda_T."""
        if self.steps == 1:
            return np.array([self.lambda_start])
        t = np.arange(self.steps) / (self.steps - 1)
        return self.lambda_start * (self.lambda_end / self.lambda_start) ** t


def matched_sample(instrumental: GaussianMoments, N: int, seed: int, target: TargetDensity) -> SampleBatch:
    """Draw N i.i.d. points from a normalized Gaussian and weight them by p / pi."""
    if not np.isclose(instrumental.mass, 1.0, rtol=1e-12, atol=0):
        raise ValueError("instrumental distribution must have unit mass")
    if instrumental.dim != target.dim:
        raise ValueError("instrumental and target dimensions differ")
    if N < 1:
        raise ValueError(f"sample size must be positive, got {N}")
    tic = time.perf_counter()
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((N, target.dim))
    points = instrumental.mean + eps @ instrumental.chol.T
    log_target = target.log_density(points)
    log_weights = log_target - instrumental.log_density(points)
    elapsed = time.perf_counter() - tic
    return SampleBatch(points, log_weights, log_target, elapsed)


def _chain_randomness(seq: np.random.SeedSequence, dim, steps, init_scale, target):
    """Initial state and per-step noise for one chain, from its own stream."""
    rng = np.random.default_rng(seq)
    for _ in range(_MAX_INIT_RETRIES):
        x0 = init_scale * rng.standard_normal(dim)
        lp0 = target.log_density(x0[None, :])[0]
        if np.isfinite(lp0):
            break
    else:
        raise RuntimeError(
            f"target is -inf at {_MAX_INIT_RETRIES} consecutive initial draws; "
            "the initial distribution does not cover the target")
    noise = rng.standard_normal((steps, dim))
    log_u = np.log(rng.random(steps))
    return x0, lp0, noise, log_u


def annealed_sample(schedule: AnnealingSchedule, N: int, seed: int, target: TargetDensity) -> SampleBatch:
    """Run N independent tempered Metropolis chains and return their final states.

    Chain k starts from pi = N(0, init_var I) and takes one random-walk
    Metropolis step per temperature, targeting pi^(1 - lambda) p^lambda.  The
    extended-state log weight telescopes along the chain with the
    inverse-temperature sequence padded to 0 at the start and 1 at the end,
    so the weights are unbiased for p itself.

    Every chain draws from its own stream spawned from ``seed``, so the output
    does not depend on how chains are grouped for vectorization.
    """
    if N < 1:
        raise ValueError(f"sample size must be positive, got {N}")
    tic = time.perf_counter()
    d = target.dim
    T = int(schedule.steps)
    lambdas = np.concatenate([[0.0], schedule.lambdas(), [1.0]])
    dlam = np.diff(lambdas)
    init = GaussianMoments(1.0, np.zeros(d), schedule.init_var * np.eye(d))
    init_scale = np.sqrt(schedule.init_var)
    prop_scale = np.sqrt(schedule.proposal_var)
    streams = np.random.SeedSequence(seed).spawn(N)

    points = np.empty((N, d))
    log_weights = np.empty(N)
    log_target = np.empty(N)
    chunk = max(1, _CHUNK_BUDGET // ((T + 1) * d))
    for start in range(0, N, chunk):
        seqs = streams[start:start + chunk]
        drawn = [_chain_randomness(s, d, T, init_scale, target) for s in seqs]
        x = np.array([r[0] for r in drawn])
        lp = np.array([r[1] for r in drawn])
        noise = np.stack([r[2] for r in drawn], axis=1)
        log_u = np.stack([r[3] for r in drawn], axis=1)
        lpi = init.log_density(x)
        lw = dlam[0] * (lp - lpi)
        for t in range(T):
            lam = lambdas[t + 1]
            y = x + prop_scale * noise[t]
            lp_y = target.log_density(y)
            lpi_y = init.log_density(y)
            with np.errstate(invalid="ignore"):
                log_ratio = (1 - lam) * (lpi_y - lpi) + lam * (lp_y - lp)
            accept = log_u[t] < log_ratio
            x = np.where(accept[:, None], y, x)
            lp = np.where(accept, lp_y, lp)
            lpi = np.where(accept, lpi_y, lpi)
            lw += dlam[t + 1] * (lp - lpi)
        stop = start + len(seqs)
        points[start:stop] = x
        log_weights[start:stop] = lw
        log_target[start:stop] = lp
    elapsed = time.perf_counter() - tic
    return SampleBatch(points, log_weights, log_target, elapsed)
