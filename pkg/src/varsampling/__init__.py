"""Variational sampling, importance sampling and Bayesian Monte Carlo estimators
of Gaussian moments for unnormalized target densities."""

from .estimators import (
    FitResult,
    RankDeficient,
    VsConfig,
    bmc_fit,
    is_fit,
    is_variance,
    rank_of_features,
    vs_asymptotic_variance,
    vs_fit,
    vs_objective,
)
from .gaussian import (
    FeatureMap,
    GaussianMoments,
    Improper,
    feature_moments,
    generalized_kl,
    is_proper,
    moments_to_natural,
    natural_to_moments,
)
from .samplers import AnnealingSchedule, SampleBatch, annealed_sample, matched_sample
from .targets import ExpPowerTarget, TargetDensity, exp_power, log_density_at, parse_target

__version__ = "0.1.0"
