import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from bmalab.bma import (
    EVInputs,
    SourcePosterior,
    WeightVector,
    bma_estimate,
    ev_index,
    limiting_unbiased_log_odds,
    log_marginal_kernel,
    model_weights,
    posterior_mean,
    predicted_log_odds,
    predicted_weight_bound,
    predicted_weights,
    source_bias,
)
from bmalab.core import fold_outcomes
from bmalab.errors import EmptyCellError, InvalidInputError
from bmalab.models import CellStats, ConstantPrecision, SourcePrior, WorkingModel

UNIT = WorkingModel()


def prior(mean, nu=1.0, label=""):
    return SourcePrior(prior_mean=mean, precision_schedule=ConstantPrecision(nu0=nu), label=label)


def stats_with_mean(count, mean):
    return CellStats(count, count * mean, 0.0)


# ----------------------------
# Posterior means
# ----------------------------
def test_posterior_without_data_is_prior():
    assert posterior_mean(CellStats(), prior(2.0), UNIT, 5.0) == SourcePosterior(2.0, 5.0)


def test_equal_precisions_give_midpoint():
    post = posterior_mean(stats_with_mean(10, 2.0), prior(0.0), UNIT, 10.0)
    assert post.mean == pytest.approx(1.0)
    assert post.precision == 20.0


def test_posterior_mean_matches_quadrature():
    ys = np.array([1.0, 1.5, 2.0])
    post = posterior_mean(fold_outcomes(ys), prior(1.0), UNIT, 2.0)
    assert post.mean == pytest.approx(1.3, abs=1e-12)

    def density(theta):
        return np.prod(norm.pdf(ys, loc=theta, scale=1.0)) * norm.pdf(theta, loc=1.0, scale=math.sqrt(0.5))

    num, _ = integrate.quad(lambda t: t * density(t), -15, 15, points=[1.3], epsabs=1e-14, epsrel=1e-12, limit=200)
    den, _ = integrate.quad(density, -15, 15, points=[1.3], epsabs=1e-14, epsrel=1e-12, limit=200)
    assert abs(num / den - post.mean) <= 1e-8


def test_posterior_rejects_non_positive_precision():
    with pytest.raises(InvalidInputError):
        posterior_mean(CellStats(), prior(0.0), UNIT, 0.0)


@given(
    count=st.integers(min_value=1, max_value=500),
    m=st.floats(min_value=-50, max_value=50),
    zeta=st.floats(min_value=-50, max_value=50),
    nu=st.floats(min_value=1e-6, max_value=1e6),
)
@settings(max_examples=1000, deadline=None)
def test_posterior_mean_is_convex_combination(count, m, zeta, nu):
    post = posterior_mean(stats_with_mean(count, m), prior(zeta), UNIT, nu)
    tol = 1e-9 * (1.0 + abs(m) + abs(zeta))
    assert min(m, zeta) - tol <= post.mean <= max(m, zeta) + tol


@given(
    count=st.integers(min_value=1, max_value=500),
    m=st.floats(min_value=-50, max_value=50),
    zeta=st.floats(min_value=-50, max_value=50),
    nu_a=st.floats(min_value=1e-6, max_value=1e6),
    nu_b=st.floats(min_value=1e-6, max_value=1e6),
)
@settings(max_examples=1000, deadline=None)
def test_shrinkage_is_monotone_in_precision(count, m, zeta, nu_a, nu_b):
    lo, hi = sorted((nu_a, nu_b))
    stats = stats_with_mean(count, m)
    weak = posterior_mean(stats, prior(zeta), UNIT, lo).mean
    strong = posterior_mean(stats, prior(zeta), UNIT, hi).mean
    tol = 1e-9 * (1.0 + abs(m) + abs(zeta))
    assert abs(strong - zeta) <= abs(weak - zeta) + tol


# ----------------------------
# Kernels and weights
# ----------------------------
def test_kernel_at_prior_mean():
    k = log_marginal_kernel(stats_with_mean(1, 3.0), 3.0, 1.0, UNIT)
    assert k == pytest.approx(-0.5 * math.log(2 * math.pi * 2))


def test_kernel_direct_evaluation():
    k = log_marginal_kernel(stats_with_mean(1, 0.0), 2.0, 1.0, UNIT)
    assert k == pytest.approx(-1.0 - 0.5 * math.log(4 * math.pi))


def test_kernel_undefined_for_empty_cell():
    with pytest.raises(EmptyCellError):
        log_marginal_kernel(CellStats(), 0.0, 1.0, UNIT)


def _log_marginal_by_quadrature(ys, zeta, nu, variance=1.0):
    """log of the integral of prod phi(y_i; theta, variance) * phi(theta; zeta, 1/nu), up to a factor shared by all priors."""
    sd = math.sqrt(variance)
    m = float(np.mean(ys))
    anchor = norm.logpdf(ys, loc=m, scale=sd).sum()

    def integrand(theta):
        return math.exp(norm.logpdf(ys, loc=theta, scale=sd).sum() - anchor) * norm.pdf(
            theta, loc=zeta, scale=1.0 / math.sqrt(nu)
        )

    precision = len(ys) / variance + nu
    center = (m * len(ys) / variance + zeta * nu) / precision
    half_width = 40.0 / math.sqrt(precision)
    value, _ = integrate.quad(
        integrand, center - half_width, center + half_width, points=[center], epsabs=0.0, epsrel=1e-11, limit=400
    )
    return math.log(value)


def test_kernel_difference_matches_quadrature_ratio():
    ys = np.random.default_rng(11).normal(1.0, 1.0, 5)
    stats = fold_outcomes(ys)
    k1 = log_marginal_kernel(stats, 0.5, 2.0, UNIT)
    k2 = log_marginal_kernel(stats, 2.0, 0.3, UNIT)
    oracle = _log_marginal_by_quadrature(ys, 0.5, 2.0) - _log_marginal_by_quadrature(ys, 2.0, 0.3)
    assert abs((k1 - k2) - oracle) <= 1e-8


def test_single_source_gets_all_weight():
    w = model_weights(stats_with_mean(5, 0.3), [prior(0.0)], UNIT, [1.0])
    assert w.weights == (1.0,)


def test_identical_sources_split_evenly():
    w = model_weights(stats_with_mean(5, 0.3), [prior(1.0, 4.0), prior(1.0, 4.0)], UNIT, [4.0, 4.0])
    assert w.weights == pytest.approx((0.5, 0.5))


def test_two_source_log_odds_of_one():
    w = model_weights(stats_with_mean(4, 1.0), [prior(1.0), prior(2.0)], UNIT, [4.0, 4.0])
    assert w.weights[0] == pytest.approx(math.e / (1 + math.e), abs=1e-12)


def test_empty_cell_falls_back_to_prior_probabilities():
    w = model_weights(CellStats(), [prior(0.0), prior(1.0)], UNIT, [1.0, 1.0], prior_model_probs=[0.2, 0.8])
    assert w.weights == (0.2, 0.8)


def test_zero_prior_probability_keeps_zero_weight():
    w = model_weights(stats_with_mean(3, 0.0), [prior(0.0), prior(1.0)], UNIT, [1.0, 1.0], prior_model_probs=[0.0, 1.0])
    assert w.weights == (0.0, 1.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"sources": [], "nus": []},
        {"sources": [prior(0.0)], "nus": [1.0, 2.0]},
        {"sources": [prior(0.0), prior(1.0)], "nus": [1.0, 1.0], "prior_model_probs": [0.5, 0.6]},
    ],
)
def test_model_weights_rejects_bad_inputs(kwargs):
    with pytest.raises(InvalidInputError):
        model_weights(stats_with_mean(3, 0.0), model=UNIT, **kwargs)


@pytest.mark.parametrize("case", range(200))
def test_weights_match_quadrature_oracle(case):
    rng = np.random.default_rng([2024, case])
    count = int(rng.integers(1, 21))
    n_sources = int(rng.integers(1, 5))
    variance = float(rng.uniform(0.5, 2.0))
    ys = rng.normal(rng.uniform(-1, 1), math.sqrt(variance), count)
    zetas = rng.uniform(-2.0, 2.0, n_sources)
    nus = rng.uniform(0.1, 20.0, n_sources)
    probs = rng.dirichlet(np.ones(n_sources))

    w = model_weights(
        fold_outcomes(ys),
        [prior(float(z), float(v)) for z, v in zip(zetas, nus)],
        WorkingModel(variance=variance),
        [float(v) for v in nus],
        prior_model_probs=[float(p) for p in probs],
    )

    logs = np.log(probs) + np.array([_log_marginal_by_quadrature(ys, z, v, variance) for z, v in zip(zetas, nus)])
    oracle = np.exp(logs - logs.max())
    oracle /= oracle.sum()
    np.testing.assert_allclose(w.as_array(), oracle, rtol=1e-6, atol=1e-12)


@given(
    zetas=st.lists(st.floats(min_value=-100, max_value=100), min_size=2, max_size=6),
    nu_exp=st.lists(st.floats(min_value=-3, max_value=6), min_size=6, max_size=6),
    m=st.floats(min_value=-100, max_value=100),
)
@settings(max_examples=300, deadline=None)
def test_weights_normalize_under_extreme_kernel_spreads(zetas, nu_exp, m):
    nus = [10.0 ** e for e in nu_exp[: len(zetas)]]
    w = model_weights(stats_with_mean(1000, m), [prior(z, nu) for z, nu in zip(zetas, nus)], UNIT, nus)
    arr = w.as_array()
    assert np.all(np.isfinite(arr))
    assert np.all(arr >= 0)
    assert abs(math.fsum(arr) - 1.0) <= 1e-12


def test_normalization_with_thousand_unit_kernel_gap():
    stats = stats_with_mean(1000, 0.0)
    w = model_weights(stats, [prior(0.0, 1e6), prior(50.0, 1e6)], UNIT, [1e6, 1e6])
    assert w.log_kernels[0] - w.log_kernels[1] > 1e3
    assert w.weights == (1.0, 0.0)


@given(
    ys=st.lists(st.integers(min_value=-20, max_value=20), min_size=16, max_size=16),
    zetas=st.lists(st.integers(min_value=-5, max_value=5), min_size=3, max_size=3),
    delta=st.integers(min_value=-1000, max_value=1000),
)
@settings(max_examples=300, deadline=None)
def test_translation_equivariance(ys, zetas, delta):
    nus = [1.0, 4.0, 16.0]
    priors = [prior(float(z), nu) for z, nu in zip(zetas, nus)]
    shifted_priors = [prior(float(z + delta), nu) for z, nu in zip(zetas, nus)]
    stats = fold_outcomes([float(y) for y in ys])
    shifted = fold_outcomes([float(y + delta) for y in ys])

    w = model_weights(stats, priors, UNIT, nus)
    w_shift = model_weights(shifted, shifted_priors, UNIT, nus)
    assert w_shift.weights == w.weights

    est = bma_estimate(w, [posterior_mean(stats, p, UNIT, nu) for p, nu in zip(priors, nus)])
    est_shift = bma_estimate(w_shift, [posterior_mean(shifted, p, UNIT, nu) for p, nu in zip(shifted_priors, nus)])
    assert est_shift - est == pytest.approx(delta, abs=1e-9)


# ----------------------------
# Estimate
# ----------------------------
def test_bma_estimate_single_source():
    assert bma_estimate(WeightVector((1.0,), (0.0,)), [SourcePosterior(1.3, 1.0)]) == 1.3


def test_bma_estimate_midpoint():
    w = WeightVector((0.5, 0.5), (0.0, 0.0))
    assert bma_estimate(w, [SourcePosterior(0.0, 1.0), SourcePosterior(2.0, 1.0)]) == 1.0


def test_bma_estimate_length_mismatch():
    with pytest.raises(InvalidInputError):
        bma_estimate(WeightVector((1.0,), (0.0,)), [])


def test_bma_estimate_matches_one_shot_formula():
    ys = np.random.default_rng(5).normal(1.0, 1.0, 25)
    stats = fold_outcomes(ys)
    m = float(np.mean(ys))
    sources = [(1.0, 1.0), (1.0, 12.5)]

    w = model_weights(stats, [prior(z, nu) for z, nu in sources], UNIT, [nu for _, nu in sources])
    est = bma_estimate(w, [posterior_mean(stats, prior(z, nu), UNIT, nu) for z, nu in sources])

    dens = [math.exp(-((m - z) ** 2) / (2 * (1 / 25 + 1 / nu))) / math.sqrt(1 / 25 + 1 / nu) for z, nu in sources]
    alphas = [d / sum(dens) for d in dens]
    means = [(25 * m + nu * z) / (25 + nu) for z, nu in sources]
    assert est == pytest.approx(sum(a * mu for a, mu in zip(alphas, means)), abs=1e-12)


def test_source_bias():
    assert source_bias(1.0, prior(2.0)) == -1.0


# ----------------------------
# External-validity index
# ----------------------------
@pytest.mark.parametrize(
    "bias, p, expected",
    [(0.0, 1.0, 0.0), (1.0, 1.0, -1.0), (0.5, 4.0, -1.0 + math.log(4.0))],
)
def test_ev_index(bias, p, expected):
    assert ev_index(EVInputs(bias, p)) == pytest.approx(expected)


@pytest.mark.parametrize("p", [0.0, -1.0])
def test_ev_index_rejects_non_positive_p(p):
    with pytest.raises(InvalidInputError):
        ev_index(EVInputs(0.0, p))


@given(st.floats(min_value=1e-3, max_value=1e3))
def test_unbiased_ev_sign(p):
    assert (ev_index(EVInputs(0.0, p)) > 0) == (p > 1)


@given(st.floats(min_value=0.01, max_value=10), st.floats(min_value=0.01, max_value=10))
def test_ev_decreasing_in_abs_bias(a, b):
    lo, hi = sorted((a, b))
    if lo < hi:
        assert ev_index(EVInputs(-hi, 3.0)) < ev_index(EVInputs(lo, 3.0))


def test_ev_diverges_for_biased_source():
    values = [ev_index(EVInputs(0.5, p)) for p in (1e2, 1e4, 1e6)]
    assert values[0] > values[1] > values[2]
    assert values[2] < -1e5


def test_predicted_log_odds_identical_inputs():
    assert predicted_log_odds(EVInputs(0.3, 7.0), EVInputs(0.3, 7.0)) == 0.0


def test_predicted_log_odds_between_unbiased_sources():
    assert predicted_log_odds(EVInputs(0.0, 6.0), EVInputs(0.0, 2.0)) == pytest.approx(0.5 * math.log(3.0))
    assert limiting_unbiased_log_odds(3.0, 1.0) == pytest.approx(0.5 * math.log(3.0))


def test_predicted_log_odds_unbiased_vs_biased():
    assert predicted_log_odds(EVInputs(0.0, 100.0), EVInputs(1.0, 100.0)) == pytest.approx(50.0)


def test_simulated_log_odds_track_prediction():
    theta, n, nu = 1.0, 10_000, 100.0
    rng = np.random.default_rng(99)
    sources = [prior(theta, nu), prior(theta + 1.0, nu)]
    diffs = []
    for _ in range(200):
        stats = fold_outcomes(rng.normal(theta, 1.0, n))
        w = model_weights(stats, sources, UNIT, [nu, nu])
        diffs.append(w.log_kernels[0] - w.log_kernels[1])
    predicted = predicted_log_odds(EVInputs(0.0, nu), EVInputs(1.0, nu))
    assert abs(np.mean(diffs) - predicted) / predicted < 0.2


def test_limiting_log_odds_rejects_non_positive_limits():
    with pytest.raises(InvalidInputError):
        limiting_unbiased_log_odds(0.0, 1.0)


def test_predicted_weights_are_softmax_of_half_ev():
    inputs = [EVInputs(0.0, 4.0), EVInputs(0.5, 4.0)]
    w = predicted_weights(inputs)
    assert math.fsum(w) == pytest.approx(1.0)
    assert math.log(w[0] / w[1]) == pytest.approx(predicted_log_odds(*inputs))


def test_weight_bound_with_unbiased_source():
    bound = predicted_weight_bound(EVInputs(1.0, 40.0), nu_b=40.0, max_unbiased_nu=50.0, diffuse_regime=False)
    assert bound == pytest.approx(0.8 * math.exp(-10.0))
    assert bound == pytest.approx(3.63e-5, rel=1e-2)


def test_weight_bound_diffuse_regime():
    assert predicted_weight_bound(EVInputs(1.0, 40.0), 40.0, 1.0, diffuse_regime=True) == pytest.approx(math.exp(-10.0))


def test_weight_bound_rejects_unbiased_source():
    with pytest.raises(InvalidInputError):
        predicted_weight_bound(EVInputs(0.0, 40.0), 40.0, 50.0, diffuse_regime=False)


# ----------------------------
# Weight concentration
# ----------------------------
def _weights(n, sources, nus, target, reps=200, seed=3):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(reps):
        stats = fold_outcomes(rng.normal(1.0, 1.0, n))
        out.append(model_weights(stats, sources, UNIT, nus).weights[target])
    return out


def _mean_weight(n, sources, nus, target, reps=200, seed=3):
    return math.fsum(_weights(n, sources, nus, target, reps, seed)) / reps


def test_biased_weight_vanishes_next_to_unbiased_source():
    means = []
    for n in (25, 50, 125, 250):
        sources = [prior(1.0, n, "unbiased"), prior(2.0, n, "biased")]
        means.append(_mean_weight(n, sources, [float(n), float(n)], target=1))
    assert all(a > b for a, b in zip(means, means[1:]))
    assert means[-1] < 1e-3


def test_median_biased_weight_tracks_bound_after_fitted_prefactor():
    ratios = []
    for n in (25, 50, 125):
        sources = [prior(1.0, n), prior(2.0, n)]
        median = float(np.median(_weights(n, sources, [float(n), float(n)], target=1, reps=1000)))
        bound = predicted_weight_bound(EVInputs(1.0, n), float(n), float(n), diffuse_regime=False)
        ratios.append(median / bound)
    # prefactor fitted at the smallest n
    assert all(r <= 5.0 * ratios[0] for r in ratios[1:])


def test_diffuse_source_wins_when_informative_sources_are_biased():
    n = 125
    sources = [prior(1.5, 1.0, "diffuse"), prior(2.0, n, "biased"), prior(0.0, n, "biased_low")]
    assert _mean_weight(n, sources, [1.0, float(n), float(n)], target=0) > 0.99
