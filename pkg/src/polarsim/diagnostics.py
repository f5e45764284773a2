"""Polarization verdicts, ensemble estimators and balls-in-bins machinery."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EmptySeries, NonPositiveValue, TimeNotRecorded
from .geometry import (
    _norm,
    as_configuration,
    distance_to_polarized,
    polarized_distance_batch,
    project_to_sphere,
)


@dataclass
class MetricsSeries:
    """Recorded diagnostics of one trajectory.

    Arrays are aligned with ``t``. ``phi`` holds ``nan`` where the potential
    was not computed or the configuration was outside the one-sided regime.
    ``split[k]`` is true when some issue between records ``k - 1`` and ``k``
    separated two agents.
    """

    t: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    max_angle: np.ndarray
    split: np.ndarray
    terminal_config: np.ndarray

    def __len__(self):
        return len(self.t)

    @property
    def entries(self):
        for k in range(len(self.t)):
            phi = None if np.isnan(self.phi[k]) else float(self.phi[k])
            yield int(self.t[k]), float(self.rho[k]), phi, float(self.max_angle[k]), bool(self.split[k])

    def rho_at(self, t: int) -> float:
        k = np.searchsorted(self.t, t)
        if k >= len(self.t) or self.t[k] != t:
            raise TimeNotRecorded(t)
        return float(self.rho[k])


@dataclass(frozen=True)
class EstimateWithCI:
    point: float
    lower: float
    upper: float
    confidence: float
    samples: int


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> EstimateWithCI:
    if trials <= 0:
        raise ValueError("need at least one trial")
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return EstimateWithCI(p, max(0.0, min(p, center - half)), min(1.0, max(p, center + half)), confidence, trials)


class Verdict(str, enum.Enum):
    CONVERGED = "Converged"
    NOT_CONVERGED = "NotConverged"


def _rho_of(series):
    rho = np.asarray(series.rho if isinstance(series, MetricsSeries) else series, dtype=float)
    if rho.size == 0:
        raise EmptySeries("series has no entries")
    return rho


def strong_polarization_verdict(series, epsilon: float = 0.01, tail_fraction: float = 0.2) -> Verdict:
    """Finite-horizon surrogate for almost-sure convergence of rho to zero.

    Converged iff every recorded rho in the last ``tail_fraction`` of the
    entries is below ``epsilon``. Accepts a series or a bare rho sequence.
    """
    if not epsilon > 0 or not 0 < tail_fraction <= 1:
        raise ValueError("need epsilon > 0 and 0 < tail_fraction <= 1")
    rho = _rho_of(series)
    tail = max(1, math.ceil(tail_fraction * rho.size - 1e-9))
    return Verdict.CONVERGED if np.all(rho[-tail:] < epsilon) else Verdict.NOT_CONVERGED


def weak_polarization_curve(ensemble, epsilon: float, times, confidence: float = 0.95):
    """Estimate ``Pr(rho(X_t, P) >= epsilon)`` at each requested time."""
    ensemble = list(ensemble)
    if not ensemble:
        raise EmptySeries("empty ensemble")
    out = []
    for t in times:
        far = sum(s.rho_at(int(t)) >= epsilon for s in ensemble)
        out.append((int(t), wilson_interval(far, len(ensemble), confidence)))
    return out


def time_average_occupancy(series, epsilon: float) -> float:
    """Fraction of recorded entries with ``rho <= epsilon``."""
    rho = _rho_of(series)
    return float(np.count_nonzero(rho <= epsilon)) / rho.size


def decay_rate_fit(points, model: str = "geometric"):
    """Least-squares fit of log(value) against t or log t.

    Returns ``(rate, rms_residual)``: for ``"geometric"`` the per-unit factor
    ``r`` in ``value ~ C r^t``; for ``"power_law"`` the exponent ``b`` in
    ``value ~ C t^b``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least three (t, value) points")
    t, v = pts[:, 0], pts[:, 1]
    if np.any(v <= 0):
        raise NonPositiveValue("values must be positive to fit on a log scale")
    if model == "geometric":
        x = t
    elif model == "power_law":
        if np.any(t <= 0):
            raise NonPositiveValue("power-law fit needs t > 0")
        x = np.log(t)
    else:
        raise ValueError(f"unknown model {model!r}")
    y = np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return (float(np.exp(slope)) if model == "geometric" else float(slope)), rms


def cluster_pattern(X, epsilon: float):
    """Canonical sign pattern of the nearest polarized configuration, or None if rho > epsilon."""
    res = distance_to_polarized(X, "exact")
    return res.pattern if res.rho <= epsilon else None


# ---------------------------------------------------------------------------
# Balls in bins


@dataclass
class BallsInBinsPath:
    d: int
    counts_over_time: np.ndarray  # (steps + 1, d), row t holds N_t
    probs: np.ndarray


def _probs(d, probs):
    p = np.full(d, 1.0 / d) if probs is None else np.asarray(probs, dtype=float)
    if p.shape != (d,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("probs must be a distribution over the d bins")
    return p


def _draw_bins(rng, d, p, size):
    if d == 1:
        return np.zeros(size, dtype=np.int8)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right").astype(np.int8)


def balls_in_bins_simulate(d: int, steps: int, probs=None, rng=None) -> BallsInBinsPath:
    """One path of i.i.d. categorical ball placements into ``d`` labeled bins."""
    from .dynamics import as_generator

    p = _probs(d, probs)
    rng = as_generator(rng)
    bins = _draw_bins(rng, d, p, steps)
    counts = np.zeros((steps + 1, d), dtype=np.int64)
    for i in range(d):
        counts[1:, i] = np.cumsum(bins == i)
    return BallsInBinsPath(d, counts, p)


def tie_probability(d: int, times, replicas: int, rng, probs=None, K: int = 0, chunk: int = 100_000):
    """Monte Carlo estimate of ``Pr(some i != j has |N_i - N_j| <= K)`` at each time.

    Paths are generated in replica chunks, each by the same categorical draw
    as :func:`balls_in_bins_simulate`. Returns a list of ``(t, EstimateWithCI)``.
    """
    from .dynamics import as_generator

    p = _probs(d, probs)
    rng = as_generator(rng)
    times = np.asarray(sorted(int(t) for t in times))
    horizon = int(times[-1])
    hits = np.zeros(times.size, dtype=np.int64)
    per = max(1, min(chunk, (20_000_000 // max(horizon, 1))))
    done = 0
    while done < replicas:
        m = min(per, replicas - done)
        bins = _draw_bins(rng, d, p, (m, horizon))
        counts = np.stack([np.cumsum(bins == i, axis=1, dtype=np.int32)[:, times - 1] for i in range(d)], axis=-1)
        near = np.zeros((m, times.size), dtype=bool)
        for i, j in itertools.combinations(range(d), 2):
            near |= np.abs(counts[..., i] - counts[..., j]) <= K
        hits += near.sum(axis=0)
        done += m
    return [(int(t), wilson_interval(int(h), replicas)) for t, h in zip(times, hits)]


def tie_event_census(path: BallsInBinsPath):
    """Times at which bins attain, or jointly attain, the running maximum.

    Returns ``(pairwise, per_bin)``: ``pairwise[(i, j)]`` lists the t with
    ``N_i = N_j = max_k N_k`` and ``per_bin[i]`` the t with ``N_i = max_k N_k``.
    """
    counts = np.asarray(path.counts_over_time)
    if counts.size == 0:
        raise EmptySeries("empty path")
    at_max = counts == counts.max(axis=1, keepdims=True)
    per_bin = {i: np.flatnonzero(at_max[:, i]) for i in range(path.d)}
    pairwise = {(i, j): np.flatnonzero(at_max[:, i] & at_max[:, j])
                for i, j in itertools.combinations(range(path.d), 2)}
    return pairwise, per_bin


# ---------------------------------------------------------------------------
# Basis-issue HJMR: distance floor at joint ties


def tie_distance_floor(X0, grid: int = 201) -> float:
    """Lower bound on rho whenever two support coordinates tie at the max count.

    Under basis issues the state is ``P((1 + eta)^N * v0)``. When coordinates
    ``i`` and ``j`` share the largest count on the common support, those two
    coordinates keep their initial values and every other coordinate is
    scaled by a factor in ``[0, 1]``. The floor is rho minimized over those
    factors (on a grid) and over all support pairs.
    """
    X0 = as_configuration(X0)
    n, d = X0.shape
    support = np.flatnonzero(np.any(X0 != 0, axis=0))
    if support.size < 2:
        return 0.0
    floor = np.inf
    for i, j in itertools.combinations(support, 2):
        rest = [k for k in support if k not in (i, j)]
        per_axis = grid if len(rest) <= 1 else max(2, int(round(grid ** (1.0 / len(rest)))))
        scales = np.array(list(itertools.product(np.linspace(0.0, 1.0, per_axis), repeat=len(rest))))
        W = np.zeros((scales.shape[0], n, d))
        W[:, :, i] = X0[:, i]
        W[:, :, j] = X0[:, j]
        for c, k in enumerate(rest):
            W[:, :, k] = X0[None, :, k] * scales[:, c, None]
        keep = np.all(_norm(W) > 0, axis=1)
        if not keep.any():
            continue
        rho, _, _ = polarized_distance_batch(project_to_sphere(W[keep]), "auto")
        floor = min(floor, float(rho.min()))
    return 0.0 if not np.isfinite(floor) else floor


# ---------------------------------------------------------------------------
# Helpers for the property checks


def good_event_gamma(d: int, miss_prob: float = 1 / 8) -> float:
    """Threshold with ``Pr(|<xi, z>| < gamma) = miss_prob`` for Haar ``xi`` on S^{d-1}.

    ``<xi, z>^2`` is Beta(1/2, (d - 1)/2) distributed for any unit ``z``.
    """
    return float(np.sqrt(stats.beta.ppf(miss_prob, 0.5, (d - 1) / 2.0)))


def split_free_transfer_matrix(influence, X0, issues):
    """Track a split-free run of the party model as a linear map.

    Every issue must leave all agents strictly on one side. Each step is then
    ``X <- D^{-1} (I + H) X`` with ``D`` the row norms; the accumulated product
    is row-normalized into a stochastic ``M`` with ``X_k`` parallel, row by
    row, to ``M X_0``. Returns ``(M, X_k)``.
    """
    H = np.asarray(influence, dtype=float)
    X = as_configuration(X0).copy()
    n = X.shape[0]
    A = np.eye(n)
    step_mat = np.eye(n) + H
    for xi in np.atleast_2d(issues):
        s = np.sign(X @ xi)
        if np.any(s == 0) or np.any(s != s[0]):
            raise ValueError("issue splits the agents; the transfer matrix needs split-free steps")
        U = step_mat @ X
        norms = _norm(U)
        X = U / norms[:, None]
        A = (step_mat @ A) / norms[:, None]
    M = A / A.sum(axis=1, keepdims=True)
    return M, X
