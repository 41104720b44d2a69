import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lsis.densities import (
    DriftFamily,
    DriftVolFamily,
    KnotDriftSpec,
    MixtureFamily,
    ShiftedGaussian,
    ShiftedScaledGaussian,
    TwoModeMixture,
    expand_knots,
    knot_matrix,
    log_weight,
    sample,
)


def _interp_bruteforce(spec):
    """Drift per (step, factor) by explicit linear interpolation between knots."""
    vals = spec.knot_values
    out = np.zeros((spec.num_steps, spec.num_factors))
    for j in range(spec.num_factors):
        if spec.knots_per_factor == 1:
            out[:, j] = vals[j, 0]
            continue
        gap = (spec.num_steps - 1) / (spec.knots_per_factor - 1)
        for n in range(spec.num_steps):
            k = min(int(n // gap), spec.knots_per_factor - 2)
            t = (n - k * gap) / gap
            out[n, j] = (1 - t) * vals[j, k] + t * vals[j, k + 1]
    return out.reshape(-1)


# -- knots ---------------------------------------------------------------------

@pytest.mark.parametrize("N, K, steps", [(1, 1, 1), (3, 1, 12), (3, 3, 12), (2, 5, 80), (1, 4, 4), (3, 2, 7)])
def test_expand_knots_matches_bruteforce(N, K, steps):
    vals = np.random.default_rng(N * 100 + K * 10 + steps).normal(size=(N, K))
    spec = KnotDriftSpec(N, K, steps, vals)
    assert np.allclose(expand_knots(spec), _interp_bruteforce(spec), atol=1e-13)


def test_knot_endpoints_and_partition_of_unity():
    spec = KnotDriftSpec(1, 4, 10)
    B = knot_matrix(spec)
    assert np.allclose(B.sum(axis=1), 1.0)
    assert B[0, 0] == 1.0 and B[-1, -1] == 1.0


def test_single_knot_is_constant_shift():
    spec = KnotDriftSpec(3, 1, 5, [[0.1], [0.2], [0.3]])
    mu = expand_knots(spec)
    assert np.allclose(mu, np.tile([0.1, 0.2, 0.3], 5))


def test_knot_spec_validation():
    with pytest.raises(ValueError):
        KnotDriftSpec(0, 1, 1)
    with pytest.raises(ValueError):
        KnotDriftSpec(1, 5, 4)
    with pytest.raises(ValueError):
        KnotDriftSpec(2, 2, 4, np.zeros(3))


def test_with_values_round_trip():
    spec = KnotDriftSpec(2, 3, 9)
    s2 = spec.with_values(np.arange(6.0))
    assert np.array_equal(s2.knot_values, np.arange(6.0).reshape(2, 3))
    assert s2.dimension == 18 and s2.num_params == 6


# -- shifted Gaussian ----------------------------------------------------------

def test_zero_drift_weight_is_one():
    g = ShiftedGaussian(np.zeros(4))
    z = np.random.default_rng(0).normal(size=(10, 4))
    assert np.all(g.log_weight(z) == 0.0)


def test_shifted_gaussian_weight_matches_scipy():
    mu = np.array([0.5, -1.0, 2.0])
    z = np.random.default_rng(1).normal(size=(50, 3))
    ref = stats.multivariate_normal(np.zeros(3)).logpdf(z) - stats.multivariate_normal(mu).logpdf(z)
    assert np.allclose(ShiftedGaussian(mu).log_weight(z), ref, atol=1e-12)


def test_weight_expectation_is_one_under_trial():
    g = ShiftedGaussian([0.8, -0.3])
    z = g.sample(3, np.arange(400_000))
    w = np.exp(g.log_weight(z))
    assert abs(w.mean() - 1.0) < 5 * w.std() / np.sqrt(w.size)


def test_shifted_gaussian_sample_moments():
    g = ShiftedGaussian([1.5, -2.0])
    z = sample(g, 5, np.arange(200_000))
    assert np.allclose(z.mean(axis=0), [1.5, -2.0], atol=0.015)
    assert np.allclose(np.cov(z.T), np.eye(2), atol=0.02)


def test_density_validation():
    with pytest.raises(ValueError):
        ShiftedGaussian([])
    with pytest.raises(ValueError):
        ShiftedGaussian([np.nan])
    with pytest.raises(ValueError):
        ShiftedScaledGaussian(0.0, 0.0)
    with pytest.raises(ValueError):
        TwoModeMixture([0.0], [1.0], 1.0)
    with pytest.raises(ValueError):
        TwoModeMixture([0.0], [1.0, 2.0], 0.5)
    with pytest.raises(ValueError):
        ShiftedGaussian([1.0, 2.0]).log_weight(np.zeros((3, 3)))


def test_scalar_input_gives_scalar_weight():
    assert np.ndim(ShiftedGaussian([1.0]).log_weight(np.array([0.3]))) == 0
    assert np.ndim(log_weight(ShiftedScaledGaussian(0.0, 2.0), np.array([0.3]))) == 0


# -- drift and scale -----------------------------------------------------------

@given(st.floats(-3, 3), st.floats(0.2, 4.0), st.floats(-5, 5))
@settings(max_examples=60)
def test_scaled_gaussian_weight_matches_scipy(m, s, x):
    lw = ShiftedScaledGaussian(m, s).log_weight(np.array([x]))
    ref = stats.norm.logpdf(x) - stats.norm.logpdf(x, m, s)
    assert lw == pytest.approx(ref, abs=1e-10)


def test_scaled_gaussian_sample_moments():
    d = ShiftedScaledGaussian(2.0, 0.5)
    x = d.sample(8, np.arange(200_000))[:, 0]
    assert x.mean() == pytest.approx(2.0, abs=0.01)
    assert x.std() == pytest.approx(0.5, abs=0.005)


def test_drift_vol_family_round_trip():
    fam = DriftVolFamily()
    theta = np.array([1.3, np.log(0.7)])
    dens = fam.decode(theta)
    assert dens.scale == pytest.approx(0.7)
    assert np.allclose(fam.encode(dens), theta)
    assert np.all(fam.log_weight(fam.zeros(), np.array([[0.1], [2.0]])) == 0)


# -- mixture ---------------------------------------------------------------------

def _mixture_log_ratio_mp(z, a, b, w):
    with mpmath.workdps(30):
        z, a, b = ([mpmath.mpf(float(v)) for v in arr] for arr in (z, a, b))
        phi = lambda x, m: mpmath.exp(-sum((xi - mi) ** 2 for xi, mi in zip(x, m)) / 2)
        zero = [mpmath.mpf(0)] * len(z)
        return float(mpmath.log(phi(z, zero) / (w * phi(z, a) + (1 - w) * phi(z, b))))


def test_mixture_weight_matches_high_precision():
    a, b, w = np.array([1.0, 0.5]), np.array([-2.0, 0.3]), 0.3
    mix = TwoModeMixture(a, b, w)
    z = np.random.default_rng(4).normal(scale=3.0, size=(30, 2))
    got = mix.log_weight(z)
    ref = [_mixture_log_ratio_mp(zi, a, b, w) for zi in z]
    assert np.allclose(got, ref, atol=1e-11)


def test_mixture_weight_stable_in_far_tail():
    mix = TwoModeMixture([40.0], [-40.0], 0.5)
    lw = mix.log_weight(np.array([[60.0], [-60.0], [0.0]]))
    assert np.all(np.isfinite(lw))
    ref = [_mixture_log_ratio_mp([v], [40.0], [-40.0], 0.5) for v in (60.0, -60.0, 0.0)]
    assert np.allclose(lw, ref, atol=1e-9)


def test_mixture_sample_mode_proportions():
    mix = TwoModeMixture([4.0], [-4.0], 0.25)
    x = mix.sample(2, np.arange(100_000))[:, 0]
    frac = np.mean(x > 0)
    assert abs(frac - 0.25) < 4.5 * np.sqrt(0.25 * 0.75 / x.size)
    w = np.exp(mix.log_weight(x[:, None]))
    assert abs(w.mean() - 1.0) < 5 * w.std() / np.sqrt(w.size)


def test_mixture_family_round_trip_and_weight_clip():
    fam = MixtureFamily(KnotDriftSpec(1, 2, 5))
    theta = np.array([0.2, 0.4, -0.1, -0.3, 0.5])
    dens = fam.decode(theta)
    assert dens.weight_a == pytest.approx(1 / (1 + np.exp(-0.5)))
    assert np.allclose(fam.encode(dens), theta)
    extreme = fam.decode(np.array([0, 0, 0, 0, 1e6]))
    assert 0 < extreme.weight_a < 1 and 0 < extreme.weight_b


# -- drift family ------------------------------------------------------------------

def test_drift_family_encode_decode():
    fam = DriftFamily(KnotDriftSpec(3, 3, 12))
    theta = np.random.default_rng(7).normal(size=9)
    assert np.allclose(fam.encode(fam.decode(theta)), theta, atol=1e-12)
    assert fam.dimension == 36 and fam.num_params == 9


def test_drift_family_log_weight_consistent_with_density():
    fam = DriftFamily(KnotDriftSpec(2, 2, 4))
    theta = np.array([0.3, -0.1, 0.2, 0.6])
    z = np.random.default_rng(8).normal(size=(20, 8))
    assert np.allclose(fam.log_weight(theta, z), fam.decode(theta).log_weight(z), atol=1e-13)


def test_constant_family():
    fam = DriftFamily.constant(2)
    assert np.allclose(fam.drift([0.5, -1.0]), [0.5, -1.0])
