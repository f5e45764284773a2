import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polarsim.diagnostics import MetricsSeries
from polarsim.dynamics import (
    HJMR,
    FiniteSupport,
    HaarUniform,
    InfluenceGraph,
    Party,
    RngStream,
    SignedHJMR,
    TiltedHaar,
    axis_tilt,
    is_irreducible,
    is_oblivious,
    orthonormal_closed_form,
    record_schedule,
    sample_issue,
    IssueSampler,
    simulate,
    simulate_batch,
    split_event,
    step,
    zonal_tilt,
)
from polarsim.errors import DimensionMismatch, InvalidDistribution, ZeroVector
from polarsim.geometry import distance_to_polarized, haar_sample, project_to_sphere

e1, e2, e3 = np.eye(3)


def haar(seed, n, d):
    return haar_sample(np.random.default_rng(seed), n, d)


MODELS = [HJMR(0.1), SignedHJMR(0.1), Party(np.full((3, 3), 0.2))]


# ---------------------------------------------------------------------------
# Single steps


@pytest.mark.parametrize("eta", [0.01, 0.5, 3.0])
def test_hjmr_issue_is_fixed_point(eta):
    assert np.allclose(step(HJMR(eta), e1[None], e1), [e1], atol=1e-15)


def test_signed_orthogonal_issue_is_noop():
    assert np.array_equal(step(SignedHJMR(0.3), e2[None], e1), [e2])


def test_party_all_ones_example():
    X = np.eye(2)
    xi = np.ones(2) / math.sqrt(2)
    out = step(Party(np.ones((2, 2))), X, xi)
    assert np.allclose(out, [[2 / math.sqrt(5), 1 / math.sqrt(5)], [1 / math.sqrt(5), 2 / math.sqrt(5)]],
                       atol=1e-15)


def test_party_antipodal_pair_is_invariant():
    u = project_to_sphere([0.2, -0.4, 0.9])
    X = np.stack([u, -u])
    out = step(Party(np.array([[1.0, 0.7], [0.3, 1.0]])), X, project_to_sphere([1.0, 0.5, 0.0]))
    assert np.allclose(out, X, atol=1e-15)


def test_party_update_can_vanish():
    # agent 1 is pulled toward nothing and pushed off two vectors summing to e1
    X = np.array([[1.0, 0.0], [0.5, math.sqrt(3) / 2], [0.5, -math.sqrt(3) / 2]])
    H = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    with pytest.raises(ZeroVector):
        step(Party(H), X, np.array([0.0, 1.0]))


def test_simulate_reports_zero_vector_step():
    X = np.array([[1.0, 0.0], [0.5, math.sqrt(3) / 2], [0.5, -math.sqrt(3) / 2]])
    H = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    dist = FiniteSupport(np.array([[0.0, 1.0]]), np.array([1.0]))
    with pytest.raises(ZeroVector) as info:
        simulate(Party(H), dist, X, 5, RngStream(0))
    assert info.value.step == 0


def test_step_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        step(HJMR(0.1), np.eye(3), np.array([1.0, 0.0]))


def test_party_size_mismatch():
    with pytest.raises(ValueError):
        step(Party(np.ones((2, 2))), np.eye(3), e1)


@pytest.mark.parametrize("cls", [HJMR, SignedHJMR])
def test_eta_must_be_positive(cls):
    with pytest.raises(ValueError):
        cls(0.0)


def test_party_rejects_negative_weights():
    with pytest.raises(ValueError):
        Party(np.array([[1.0, -0.1], [0.0, 1.0]]))


def test_obliviousness():
    assert is_oblivious(HJMR(0.1)) and is_oblivious(SignedHJMR(0.1))
    assert not is_oblivious(Party(np.ones((2, 2))))


# ---------------------------------------------------------------------------
# Invariances of the transition


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(range(len(MODELS))))
def test_sign_flip_commutes_with_step(seed, m):
    rng = np.random.default_rng(seed)
    X = haar_sample(rng, 3, 3)
    xi = haar_sample(rng, 1, 3)[0]
    s = np.where(rng.random(3) < 0.5, -1.0, 1.0)
    model = MODELS[m]
    assert np.allclose(step(model, s[:, None] * X, xi), s[:, None] * step(model, X, xi), atol=1e-12)
    # flipping the issue changes nothing either
    assert np.allclose(step(model, X, -xi), step(model, X, xi), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(range(len(MODELS))))
def test_polarized_set_is_invariant(seed, m):
    rng = np.random.default_rng(seed)
    u = haar_sample(rng, 1, 3)[0]
    s = np.array([1.0, -1.0, 1.0])
    X = s[:, None] * u
    xi = haar_sample(rng, 1, 3)[0]
    assert distance_to_polarized(step(MODELS[m], X, xi)).rho < 1e-7


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_oblivious_models_act_agentwise(seed):
    # permuting agents permutes the output; each agent's update ignores the rest
    rng = np.random.default_rng(seed)
    X = haar_sample(rng, 4, 3)
    xi = haar_sample(rng, 1, 3)[0]
    perm = rng.permutation(4)
    for model in (HJMR(0.3), SignedHJMR(0.3)):
        full = step(model, X, xi)
        assert np.allclose(step(model, X[perm], xi), full[perm], atol=1e-15)
        assert np.allclose(step(model, X[:1], xi), full[:1], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_party_permutation_symmetry(seed):
    rng = np.random.default_rng(seed)
    X = haar_sample(rng, 4, 3)
    xi = haar_sample(rng, 1, 3)[0]
    H = rng.random((4, 4))
    perm = rng.permutation(4)
    out = step(Party(H), X, xi)
    assert np.allclose(step(Party(H[np.ix_(perm, perm)]), X[perm], xi), out[perm], atol=1e-12)


def test_hjmr_is_continuous_in_the_issue():
    rng = np.random.default_rng(5)
    X = haar_sample(rng, 3, 3)
    xi = haar_sample(rng, 1, 3)[0]
    base = step(HJMR(0.5), X, xi)
    for h in (1e-3, 1e-5, 1e-7):
        near = project_to_sphere(xi + h * haar_sample(rng, 1, 3)[0])
        assert np.abs(step(HJMR(0.5), X, near) - base).max() < 10 * h


def test_signed_step_without_split_moves_toward_polarized_set():
    # no split relative to the nearest pattern: every aligned agent gets the same push
    rng = np.random.default_rng(11)
    model = SignedHJMR(0.2)
    checked = 0
    while checked < 2000:
        X = haar_sample(rng, 3, 3)
        xi = haar_sample(rng, 1, 3)[0]
        near = distance_to_polarized(X)
        if split_event(near.pattern[:, None] * X, xi):
            continue
        checked += 1
        assert distance_to_polarized(step(model, X, xi)).rho <= near.rho + 1e-12


# ---------------------------------------------------------------------------
# Closed form for basis-vector issues


def test_closed_form_zero_counts_is_identity():
    v = project_to_sphere([0.3, -0.5, 0.8])
    assert np.allclose(orthonormal_closed_form(v, [0, 0, 0], 0.4), v, atol=1e-15)


def test_closed_form_example():
    v = np.ones(2) / math.sqrt(2)
    assert np.allclose(orthonormal_closed_form(v, [1, 0], 1.0), np.array([2, 1]) / math.sqrt(5), atol=1e-15)


def test_closed_form_survives_huge_counts():
    v = project_to_sphere([1.0, 1.0, 0.0])
    out = orthonormal_closed_form(v, [100_000, 99_999, 5], 0.2)
    assert np.all(np.isfinite(out))
    assert out[0] / out[1] == pytest.approx(1.2, rel=1e-9)
    assert out[2] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 1.0))
def test_closed_form_matches_iteration_in_any_order(seed, eta):
    rng = np.random.default_rng(seed)
    v = haar_sample(rng, 1, 3)[0]
    picks = rng.integers(0, 3, size=200)
    X = v[None]
    for k in picks:
        X = step(HJMR(eta), X, np.eye(3)[k])
    counts = np.bincount(picks, minlength=3)
    assert np.allclose(X[0], orthonormal_closed_form(v, counts, eta), atol=1e-10)
    Y = v[None]
    for k in rng.permutation(picks):
        Y = step(HJMR(eta), Y, np.eye(3)[k])
    assert np.allclose(X, Y, atol=1e-10)


# ---------------------------------------------------------------------------
# Influence graphs and splits


def test_irreducibility_cases():
    assert is_irreducible(np.ones((4, 4)))
    block = np.kron(np.eye(2), np.ones((2, 2)))
    assert not is_irreducible(InfluenceGraph.from_influence(block))
    cycle = np.roll(np.eye(5), 1, axis=1)
    assert is_irreducible(cycle)
    assert not is_irreducible(np.triu(np.ones((3, 3))))
    assert is_irreducible(np.zeros((1, 1)))


def test_split_event_cases():
    u = project_to_sphere([0.3, 0.4, 0.5])
    for xi in haar(1, 20, 3):
        assert not split_event(np.stack([u, u]), xi)
    assert split_event(np.stack([e1, -e1]), project_to_sphere([0.5, 1.0, 0.0]))


def test_split_frequency_is_angle_over_pi():
    theta = 0.8
    X = np.array([[1.0, 0.0, 0.0], [math.cos(theta), math.sin(theta), 0.0]])
    issues = haar(2, 200_000, 3)
    freq = np.mean(np.sign(issues @ X[0]) != np.sign(issues @ X[1]))
    se = math.sqrt(theta / math.pi * (1 - theta / math.pi) / len(issues))
    assert abs(freq - theta / math.pi) < 4 * se
    assert split_event(X, issues[0]) == (np.sign(issues[0] @ X[0]) != np.sign(issues[0] @ X[1]))


# ---------------------------------------------------------------------------
# Issue distributions


def test_haar_draws_are_unit():
    xs = IssueSampler(HaarUniform(4), RngStream(3)).take(1000)
    assert np.abs(np.linalg.norm(xs, axis=1) - 1).max() < 1e-9
    assert abs(np.linalg.norm(sample_issue(HaarUniform(3), RngStream(9))) - 1) < 1e-9


def test_point_mass_always_returns_atom():
    dist = FiniteSupport(e1[None], np.array([1.0]))
    assert np.array_equal(IssueSampler(dist, RngStream(0)).take(50), np.tile(e1, (50, 1)))
    assert np.array_equal(sample_issue(dist, RngStream(1)), e1)


def test_constant_tilt_behaves_like_haar():
    dist = TiltedHaar(3, lambda xi: np.ones(len(xi)), 1.0, 1.0)
    sampler = IssueSampler(dist, RngStream(4))
    xs = sampler.take(100_000)
    assert np.linalg.norm(xs.mean(axis=0)) < 0.02
    # every proposal accepted
    assert sampler.rng.counter == 100_000


def test_axis_tilt_shifts_the_mean():
    a = 0.5
    xs = IssueSampler(axis_tilt(3, e3, a), RngStream(6)).take(100_000)
    # E[xi_3] under density 1 + a xi_3 on S^2 is a/3
    assert xs[:, 2].mean() == pytest.approx(a / 3, abs=0.01)
    assert abs(xs[:, 0].mean()) < 0.01


def test_tilt_bounds_validated():
    with pytest.raises(InvalidDistribution):
        axis_tilt(3, e3, 1.0)
    with pytest.raises(InvalidDistribution):
        zonal_tilt(2, e3, 0.2)
    with pytest.raises(InvalidDistribution):
        TiltedHaar(3, lambda xi: np.ones(len(xi)), 0.0, 1.0)


def test_finite_support_validation():
    with pytest.raises(InvalidDistribution):
        FiniteSupport(np.eye(2), np.array([0.6, 0.6]))
    with pytest.raises(InvalidDistribution):
        FiniteSupport(np.eye(2), np.array([1.0]))


def test_orthonormal_support_frequencies():
    xs = IssueSampler(FiniteSupport.orthonormal(3), RngStream(8)).take(30_000)
    freq = np.abs(xs).argmax(axis=1)
    assert np.allclose(np.bincount(freq, minlength=3) / 30_000, 1 / 3, atol=0.015)


def test_streams_are_reproducible_and_distinct():
    a = IssueSampler(HaarUniform(3), RngStream(7, 2)).take(10)
    b = IssueSampler(HaarUniform(3), RngStream(7, 2)).take(10)
    c = IssueSampler(HaarUniform(3), RngStream(7, 3)).take(10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sampler_chunking_does_not_change_draws():
    dist = axis_tilt(3, e3, 0.4)
    whole = IssueSampler(dist, RngStream(1)).take(500)
    s = IssueSampler(dist, RngStream(1), block=7)
    pieces = np.concatenate([s.take(k) for k in (1, 99, 250, 150)])
    assert np.array_equal(whole, pieces)


# ---------------------------------------------------------------------------
# Simulation


def test_zero_steps_records_only_start():
    X0 = haar(0, 4, 3)
    s = simulate(SignedHJMR(0.1), HaarUniform(3), X0, 0, RngStream(0))
    assert isinstance(s, MetricsSeries)
    assert list(s.t) == [0]
    assert s.rho[0] == pytest.approx(distance_to_polarized(X0).rho)
    assert np.array_equal(s.terminal_config, X0)


def test_polarized_start_stays_polarized():
    u = project_to_sphere([1.0, 2.0, 3.0])
    X0 = np.array([1.0, -1.0, -1.0, 1.0])[:, None] * u
    for model in (HJMR(0.2), SignedHJMR(0.2), Party(np.full((4, 4), 0.3))):
        s = simulate(model, HaarUniform(3), X0, 500, RngStream(1), record_every=1)
        assert s.rho.max() < 1e-6


def test_simulation_is_deterministic():
    X0 = haar(2, 4, 3)
    a = simulate(SignedHJMR(0.1), HaarUniform(3), X0, 2000, RngStream(5, 1), track_phi=True)
    b = simulate(SignedHJMR(0.1), HaarUniform(3), X0, 2000, RngStream(5, 1), track_phi=True)
    for field in ("t", "rho", "phi", "max_angle", "split", "terminal_config"):
        assert np.array_equal(getattr(a, field), getattr(b, field), equal_nan=field == "phi")


def test_batch_membership_does_not_change_a_replica():
    X0 = haar(3, 4, 3)
    streams = [RngStream(9, r) for r in range(6)]
    together = simulate_batch(SignedHJMR(0.1), HaarUniform(3), np.stack([X0] * 6), 1500, streams)
    alone = simulate(SignedHJMR(0.1), HaarUniform(3), X0, 1500, RngStream(9, 4))
    assert np.array_equal(together[4].rho, alone.rho)
    assert np.array_equal(together[4].terminal_config, alone.terminal_config)


def test_record_schedule():
    assert list(record_schedule(10, 4)) == [0, 4, 8, 10]
    assert list(record_schedule(10, 5, [3, 99])) == [0, 3, 5, 10]
    assert len(record_schedule(100_000)) == 10_001
    with pytest.raises(ValueError):
        record_schedule(10, 0)


def test_split_flags_cover_the_interval():
    X0 = np.stack([e1, -e1 + 0.0])
    X0[1] = project_to_sphere([-1.0, 0.2, 0.1])
    s = simulate(SignedHJMR(0.1), HaarUniform(3), X0, 100, RngStream(0), record_every=10)
    assert not s.split[0]
    fine = simulate(SignedHJMR(0.1), HaarUniform(3), X0, 100, RngStream(0), record_every=1)
    for k in range(1, len(s.t)):
        assert s.split[k] == fine.split[10 * (k - 1) + 1: 10 * k + 1].any()


def test_phi_tracking_is_nan_when_off():
    s = simulate(HJMR(0.1), HaarUniform(3), haar(4, 3, 3), 50, RngStream(0))
    assert np.all(np.isnan(s.phi))
    s = simulate(HJMR(0.1), HaarUniform(3), haar(4, 3, 3), 50, RngStream(0), track_phi=True)
    assert np.all(np.isfinite(s.phi))
