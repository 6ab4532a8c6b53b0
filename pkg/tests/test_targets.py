import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.special import gamma
from scipy.stats import norm

from varsampling.targets import (
    TargetDensity,
    exp_power,
    gaussian_target,
    log_density_at,
    parse_target,
)
from varsampling.gaussian import GaussianMoments


def _integrate_1d(target, power):
    f = lambda x: x ** power * math.exp(log_density_at(target, [x]))
    # split at the kink of |x|^beta
    return sum(quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=500)[0] for a, b in ((-np.inf, 0), (0, np.inf)))


def test_gaussian_scale():
    t = exp_power(1, 2.0)
    assert_allclose(t.alpha, math.sqrt(2), rtol=1e-15)
    assert_allclose(gamma(0.5) / gamma(1.5), 2.0, rtol=1e-15)


@pytest.mark.parametrize("beta", [0.5, 1.0, 2.0, 3.0, 5.0])
def test_unit_mass_and_variance(beta):
    t = exp_power(1, beta)
    assert abs(_integrate_1d(t, 0) - 1) < 1e-6
    assert abs(_integrate_1d(t, 2) - 1) < 1e-6
    assert abs(_integrate_1d(t, 1)) < 1e-10


def test_gaussian_case_matches_standard_normal():
    x = np.linspace(-5, 5, 100)
    for d in (1, 3):
        t = exp_power(d, 2.0)
        pts = np.column_stack([x] * d)
        assert_allclose(t.log_density(pts), d * norm.logpdf(x), rtol=0, atol=1e-12)


def test_value_at_origin():
    assert_allclose(log_density_at(exp_power(1, 2.0), [0.0]), -0.5 * math.log(2 * math.pi), rtol=1e-15)


def test_reference_moments():
    t = exp_power(3, 1.7)
    m = t.reference_moments
    assert m.mass == 1.0
    assert np.array_equal(m.mean, np.zeros(3))
    assert np.array_equal(m.cov, np.eye(3))


def test_symmetry():
    t = exp_power(2, 1.0)
    rng = np.random.default_rng(0)
    for x in rng.normal(size=(20, 2)):
        assert log_density_at(t, x) == log_density_at(t, -x)


def test_never_nan_in_tails():
    t = exp_power(2, 0.5)
    vals = t.log_density(np.array([[1e6, -1e6], [0.0, 1e300], [3.0, 4.0]]))
    assert not np.isnan(vals).any()
    assert np.all(vals < np.inf)


@pytest.mark.parametrize("d, beta", [(0, 1.0), (1, 0.0), (2, -1.0)])
def test_invalid_arguments(d, beta):
    with pytest.raises(ValueError):
        exp_power(d, beta)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        log_density_at(exp_power(2, 1.0), [0.0])
    with pytest.raises(ValueError):
        exp_power(2, 1.0).log_density(np.zeros((3, 1)))


def test_generic_target_rejects_nan():
    t = TargetDensity(1, lambda x: np.full(x.shape[0], np.nan))
    with pytest.raises(FloatingPointError):
        log_density_at(t, [0.0])


def test_generic_target_allows_minus_inf():
    t = TargetDensity(1, lambda x: np.where(x[:, 0] > 0, -x[:, 0], -np.inf))
    assert log_density_at(t, [-1.0]) == -np.inf
    assert log_density_at(t, [2.0]) == -2.0


def test_gaussian_target():
    m = GaussianMoments(2.0, [1.0], [[4.0]])
    t = gaussian_target(m)
    assert_allclose(log_density_at(t, [1.0]), math.log(2.0) + norm.logpdf(0.0, scale=2.0), rtol=1e-14)


def test_parse_target():
    t = parse_target("exp_power:beta=1.5", 3)
    assert t.dim == 3 and t.beta == 1.5
    for bad in ("exp_power", "exp_power:gamma=1", "normal:beta=1", "exp_power:beta"):
        with pytest.raises(ValueError):
            parse_target(bad, 1)


def test_picklable():
    import pickle

    t = exp_power(2, 3.0)
    t2 = pickle.loads(pickle.dumps(t))
    x = np.array([[0.3, -1.2]])
    assert t2.log_density(x)[0] == t.log_density(x)[0]
