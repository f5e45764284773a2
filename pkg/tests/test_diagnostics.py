import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import comb

from polarsim.checks import binomial_tie_probability, cycle_influence, forced_split_free_run
from polarsim.diagnostics import (
    MetricsSeries,
    Verdict,
    balls_in_bins_simulate,
    cluster_pattern,
    decay_rate_fit,
    good_event_gamma,
    split_free_transfer_matrix,
    strong_polarization_verdict,
    tie_distance_floor,
    tie_event_census,
    tie_probability,
    time_average_occupancy,
    weak_polarization_curve,
    wilson_interval,
)
from polarsim.dynamics import HJMR, FiniteSupport, RngStream, simulate
from polarsim.errors import EmptySeries, NonPositiveValue, TimeNotRecorded
from polarsim.geometry import distance_to_polarized, haar_sample, project_to_sphere

# Frozen oracles.
# C(100, 50) / 2^100 by exact integer arithmetic.
BINOMIAL_T100 = 0.07958923738717877
# A simple random walk avoids zero on (1e4, 1e6] with probability
# (2/pi) arcsin(sqrt(1e4 / 1e6)) (arcsine law), so the d=2 census grows in
# about 93.6% of runs.
CENSUS_D2_GROWTH = 1 - 0.06376856085851985
# d=3, horizon 1e5: all three pairs tie at the max for some t >= 1 in
# 0.894 +- 0.007 of runs (2000 runs, event detection written against raw
# cumulative counts, independent seed).
CENSUS_D3_ALL_PAIRS = 0.894


def series_of(rho, t=None):
    rho = np.asarray(rho, dtype=float)
    t = np.arange(len(rho)) if t is None else np.asarray(t)
    nan = np.full(len(rho), np.nan)
    return MetricsSeries(t, rho, nan, nan, np.zeros(len(rho), bool), np.eye(2))


# ---------------------------------------------------------------------------
# Verdicts and estimators


def test_verdict_examples():
    assert strong_polarization_verdict(series_of([1, 0.5, 0.1, 1e-5, 1e-6]), 1e-3, 0.4) is Verdict.CONVERGED
    assert strong_polarization_verdict(series_of([0.5] * 10), 1e-3) is Verdict.NOT_CONVERGED
    assert Verdict.CONVERGED.value == "Converged"


def test_verdict_tail_uses_ceiling():
    # 5 entries, tail 0.2 -> last entry only; tail 0.21 -> last two
    rho = [1, 1, 1, 1, 0]
    assert strong_polarization_verdict(rho, 0.5, 0.2) is Verdict.CONVERGED
    assert strong_polarization_verdict(rho, 0.5, 0.21) is Verdict.NOT_CONVERGED


def test_verdict_errors():
    with pytest.raises(EmptySeries):
        strong_polarization_verdict([], 0.1)
    with pytest.raises(ValueError):
        strong_polarization_verdict([0.0], 0.1, 0.0)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 3), min_size=1, max_size=40), st.floats(1e-3, 2), st.floats(0.01, 1))
def test_verdict_is_monotone_in_epsilon(rho, eps, frac):
    if strong_polarization_verdict(rho, eps, frac) is Verdict.CONVERGED:
        assert strong_polarization_verdict(rho, eps * 2, frac) is Verdict.CONVERGED
        # a converged tail also counts toward occupancy
        assert time_average_occupancy(rho, eps) >= min(frac, 1.0) - 1 / len(rho) - 1e-12


def test_occupancy_counts():
    assert time_average_occupancy(series_of([0.0, 0.001]), 0.01) == 1.0
    assert time_average_occupancy(series_of([1.0, 2.0]), 0.01) == 0.0
    assert time_average_occupancy(series_of([0.0, 1.0, 0.001, 5.0]), 0.01) == 0.5


def test_weak_curve_polarized_ensemble_is_zero():
    ens = [series_of(np.zeros(5)) for _ in range(20)]
    for t, est in weak_polarization_curve(ens, 0.01, [0, 2, 4]):
        assert est.point == 0.0 and est.lower == 0.0 and est.upper > 0


def test_weak_curve_single_far_replica():
    [(t, est)] = weak_polarization_curve([series_of([1.0, 1.0])], 0.5, [1])
    assert t == 1 and est.point == 1.0
    assert est.lower < 0.5 and est.upper == 1.0


def test_weak_curve_requires_recorded_time():
    with pytest.raises(TimeNotRecorded):
        weak_polarization_curve([series_of([1.0, 1.0], t=[0, 10])], 0.5, [5])


def test_wilson_interval_known_value():
    # 95% Wilson interval for 5/10
    ci = wilson_interval(5, 10)
    assert ci.lower == pytest.approx(0.2365930, abs=1e-6)
    assert ci.upper == pytest.approx(0.7634070, abs=1e-6)


# ---------------------------------------------------------------------------
# Decay fits


def test_geometric_fit_exact():
    pts = [(t, 0.9 ** t) for t in range(1, 30)]
    rate, res = decay_rate_fit(pts, "geometric")
    assert rate == pytest.approx(0.9, abs=1e-12) and res < 1e-12


def test_power_law_fit_exact():
    pts = [(t, t ** -0.5) for t in (10, 100, 1000, 10_000)]
    exp, res = decay_rate_fit(pts, "power_law")
    assert exp == pytest.approx(-0.5, abs=1e-12) and res < 1e-12


def test_decay_fit_rejects_nonpositive():
    with pytest.raises(NonPositiveValue):
        decay_rate_fit([(1, 1.0), (2, 0.0), (3, 0.5)])


def test_binomial_tie_oracle():
    assert binomial_tie_probability(100) == pytest.approx(BINOMIAL_T100, rel=1e-12)
    assert float(comb(100, 50, exact=True)) / 2 ** 100 == pytest.approx(BINOMIAL_T100, rel=1e-15)
    assert binomial_tie_probability(101) == 0.0


def test_tie_probability_matches_binomial_and_decays():
    times = [100, 316, 1000, 3162, 10_000]
    est = tie_probability(2, times, 20_000, np.random.default_rng(0))
    p100 = est[0][1].point
    assert abs(p100 - BINOMIAL_T100) < 4 * math.sqrt(BINOMIAL_T100 * (1 - BINOMIAL_T100) / 20_000)
    # odd times never tie; K=1 covers them
    est = tie_probability(2, times, 20_000, np.random.default_rng(1), K=1)
    exp, _ = decay_rate_fit([(t, e.point) for t, e in est], "power_law")
    assert -0.6 <= exp <= -0.4


# ---------------------------------------------------------------------------
# Balls in bins


def test_single_bin_counts_every_ball():
    path = balls_in_bins_simulate(1, 50, rng=np.random.default_rng(0))
    assert np.array_equal(path.counts_over_time[:, 0], np.arange(51))


def test_degenerate_probs_leave_bin_empty():
    path = balls_in_bins_simulate(2, 200, probs=[1.0, 0.0], rng=np.random.default_rng(0))
    assert np.all(path.counts_over_time[:, 1] == 0)
    pairwise, per_bin = tie_event_census(path)
    assert np.array_equal(per_bin[0], np.arange(201))
    assert list(pairwise[(0, 1)]) == [0]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 300), st.integers(0, 2 ** 32 - 1))
def test_counts_are_a_valid_path(d, steps, seed):
    c = balls_in_bins_simulate(d, steps, rng=np.random.default_rng(seed)).counts_over_time
    assert c.shape == (steps + 1, d)
    assert np.array_equal(c.sum(axis=1), np.arange(steps + 1))
    assert np.all(np.diff(c, axis=0) >= 0)


@pytest.mark.slow
def test_census_d2_ties_keep_coming():
    rng = np.random.default_rng(2024)
    runs, grew = 100, 0
    for _ in range(runs):
        pairwise, per_bin = tie_event_census(balls_in_bins_simulate(2, 1_000_000, rng=rng))
        assert all(len(v) >= 1 for v in per_bin.values())
        ties = pairwise[(0, 1)]
        grew += np.count_nonzero(ties <= 1_000_000) > np.count_nonzero(ties <= 10_000)
    se = math.sqrt(CENSUS_D2_GROWTH * (1 - CENSUS_D2_GROWTH) / runs)
    assert abs(grew / runs - CENSUS_D2_GROWTH) <= 3 * se


def test_census_d3_every_pair_ties_at_the_max():
    rng = np.random.default_rng(77)
    runs, ok = 100, 0
    for _ in range(runs):
        pairwise, _ = tie_event_census(balls_in_bins_simulate(3, 100_000, rng=rng))
        ok += all(np.any(v >= 1) for v in pairwise.values())
    se = math.sqrt(CENSUS_D3_ALL_PAIRS * (1 - CENSUS_D3_ALL_PAIRS) / runs)
    assert abs(ok / runs - CENSUS_D3_ALL_PAIRS) <= 3 * se


# ---------------------------------------------------------------------------
# Clustering, floors, helper constants


def test_cluster_pattern_cases():
    u = project_to_sphere([0.1, 0.7, -0.3])
    assert list(cluster_pattern(np.stack([u, u, -u]), 1e-9)) == [1, 1, -1]
    assert cluster_pattern(np.eye(3), 0.01) is None


def test_tie_distance_floor_bounds_tied_states():
    rng = np.random.default_rng(3)
    X0 = np.zeros((2, 3))
    X0[:, :2] = haar_sample(rng, 2, 2)
    floor = tie_distance_floor(X0)
    assert floor > 0
    # tie on a two-coordinate support: the state equals X0 exactly
    assert floor == pytest.approx(distance_to_polarized(X0).rho, abs=1e-12)
    X1 = haar_sample(rng, 2, 3)
    floor = tie_distance_floor(X1)
    for counts in ([5, 5, 0], [7, 2, 7], [1, 9, 9], [4, 4, 4]):
        Y = np.stack([project_to_sphere(x * 1.2 ** np.array(counts)) for x in X1])
        assert distance_to_polarized(Y).rho >= floor - 1e-3


def test_good_event_gamma_three_dims():
    # <xi, z> is uniform on [-1, 1] in three dimensions
    assert good_event_gamma(3) == pytest.approx(0.125, abs=1e-12)
    xi = haar_sample(np.random.default_rng(0), 200_000, 5)
    g = good_event_gamma(5)
    assert np.mean(np.abs(xi[:, 0]) < g) == pytest.approx(1 / 8, abs=0.005)


def test_transfer_matrix_is_stochastic_and_exact():
    rng = np.random.default_rng(4)
    H = cycle_influence(4)
    X0 = np.abs(haar_sample(rng, 4, 3))
    issues = np.abs(haar_sample(rng, 30, 3))  # positive orthant: no agent is split
    M, X = split_free_transfer_matrix(H, X0, issues)
    assert np.allclose(M.sum(axis=1), 1, atol=1e-14)
    assert np.all(M >= 0)
    Y = M @ X0
    assert np.allclose(Y / np.linalg.norm(Y, axis=1)[:, None], X, atol=1e-12)


def test_transfer_matrix_rejects_split_issue():
    with pytest.raises(ValueError):
        split_free_transfer_matrix(np.ones((2, 2)), np.array([[1.0, 0.0], [-1.0, 0.1]]), [[1.0, 0.0]])


def test_forced_split_free_run_shrinks_spread():
    rng = np.random.default_rng(5)
    X0 = np.abs(haar_sample(rng, 4, 3))
    path, issues = forced_split_free_run(cycle_influence(4), X0, 300, rng)
    assert issues.shape == (300, 3)
    assert distance_to_polarized(path[-1]).rho < 1e-6


def test_basis_issues_keep_off_support_coordinates_zero():
    X0 = project_to_sphere(np.array([[0.6, 0.8, 0.0], [0.8, -0.6, 0.0]]))
    s = simulate(HJMR(0.2), FiniteSupport.orthonormal(3), X0, 400, RngStream(0), record_every=1)
    # coordinate 3 is off the support, so it stays zero for ever
    assert s.terminal_config[:, 2].tolist() == [0.0, 0.0]
