"""Markov-chain steppers for the HJMR, signed HJMR and party models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import DimensionMismatch, InvalidDistribution, RejectionStall, ZeroVector
from .geometry import (
    EXACT_MAX_N,
    ZERO_NORM,
    _greedy_signs,
    _norm,
    as_configuration,
    max_pairwise_angle_batch,
    phi_potential_batch,
    polarized_distance_batch,
    project_to_sphere,
)

# ---------------------------------------------------------------------------
# Models


@dataclass(frozen=True)
class HJMR:
    """``x <- P(x + eta <x, xi> xi)``."""

    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")


@dataclass(frozen=True)
class SignedHJMR:
    """``x <- P(x + eta sgn(<x, xi>) xi)`` with ``sgn(0) = 0``."""

    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")


@dataclass(frozen=True, eq=False)
class Party:
    """Party model; ``influence[i, j]`` is the weight agent j exerts on agent i.

    Each agent moves toward every agent (itself included) on its side of the
    issue and away from those on the other side.
    """

    influence: np.ndarray

    def __post_init__(self):
        H = np.array(self.influence, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError(f"influence must be a square matrix, got shape {H.shape}")
        if np.any(H < 0) or not np.all(np.isfinite(H)):
            raise ValueError("influence weights must be finite and >= 0")
        H.setflags(write=False)
        object.__setattr__(self, "influence", H)

    @property
    def n(self):
        return self.influence.shape[0]

    def __eq__(self, other):
        return isinstance(other, Party) and np.array_equal(self.influence, other.influence)


ModelSpec = Union[HJMR, SignedHJMR, Party]


def is_oblivious(model: ModelSpec) -> bool:
    return not isinstance(model, Party)


@dataclass(frozen=True)
class InfluenceGraph:
    adjacency: np.ndarray

    @classmethod
    def from_influence(cls, influence) -> "InfluenceGraph":
        return cls(np.asarray(influence) > 0)


def is_irreducible(graph) -> bool:
    """True iff every agent reaches every other along directed edges.

    Accepts an :class:`InfluenceGraph`, a boolean adjacency matrix, or a
    nonnegative influence matrix. A single agent is trivially irreducible.
    """
    A = graph.adjacency if isinstance(graph, InfluenceGraph) else np.asarray(graph) > 0
    n = A.shape[0]
    reach = A | np.eye(n, dtype=bool)
    for _ in range(n):
        nxt = reach | ((reach.astype(np.int64) @ A.astype(np.int64)) > 0)
        if np.array_equal(nxt, reach):
            break
        reach = nxt
    return bool(reach.all())


# ---------------------------------------------------------------------------
# Issue distributions and random streams


@dataclass(frozen=True)
class HaarUniform:
    d: int


@dataclass(frozen=True, eq=False)
class TiltedHaar:
    """Haar measure reweighted by ``density`` with ``lower <= density <= upper``.

    ``density`` maps an ``(k, d)`` array of unit vectors to ``(k,)`` values and
    must integrate to one against Haar measure. ``kind``/``params`` record a
    named family so the distribution can be written back to a config file.
    """

    d: int
    density: Callable[[np.ndarray], np.ndarray]
    lower: float
    upper: float
    kind: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.lower <= self.upper:
            raise InvalidDistribution(f"need 0 < lower <= upper, got {self.lower}, {self.upper}")


@dataclass(frozen=True, eq=False)
class FiniteSupport:
    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        probs = np.asarray(self.probs, dtype=float)
        if atoms.shape[0] != probs.shape[0]:
            raise InvalidDistribution("atoms and probs differ in length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidDistribution("probs must be >= 0 and sum to 1 (tolerance 1e-12)")
        atoms = project_to_sphere(atoms)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @property
    def d(self):
        return self.atoms.shape[1]

    @classmethod
    def orthonormal(cls, d: int) -> "FiniteSupport":
        return cls(np.eye(d), np.full(d, 1.0 / d))


IssueDistribution = Union[HaarUniform, TiltedHaar, FiniteSupport]


def axis_tilt(d: int, axis, amplitude: float) -> TiltedHaar:
    """Density ``1 + a <axis, xi>``; bounded in ``[1 - a, 1 + a]`` for ``0 <= a < 1``."""
    u = project_to_sphere(np.asarray(axis, dtype=float))
    if len(u) != d:
        raise InvalidDistribution(f"axis has length {len(u)}, expected {d}")
    if not 0 <= amplitude < 1:
        raise InvalidDistribution(f"amplitude must lie in [0, 1), got {amplitude}")
    return TiltedHaar(d, lambda xi: 1.0 + amplitude * (xi @ u), 1.0 - amplitude, 1.0 + amplitude,
                      kind="axis_tilt", params={"axis": u.tolist(), "amplitude": float(amplitude)})


def zonal_tilt(d: int, axis, amplitude: float) -> TiltedHaar:
    """Even density ``1 + a (d <axis, xi>^2 - 1)``, bounded in ``[1 - a, 1 + a (d - 1)]``."""
    u = project_to_sphere(np.asarray(axis, dtype=float))
    if len(u) != d:
        raise InvalidDistribution(f"axis has length {len(u)}, expected {d}")
    if not 0 <= amplitude < 1:
        raise InvalidDistribution(f"amplitude must lie in [0, 1), got {amplitude}")
    return TiltedHaar(d, lambda xi: 1.0 + amplitude * (d * (xi @ u) ** 2 - 1.0),
                      1.0 - amplitude, 1.0 + amplitude * (d - 1),
                      kind="zonal_tilt", params={"axis": u.tolist(), "amplitude": float(amplitude)})


TILT_FAMILIES = {"axis_tilt": axis_tilt, "zonal_tilt": zonal_tilt}

_PURPOSE = {"issue": 0, "accept": 1, "init": 2}


class RngStream:
    """Counter-based random stream keyed by ``(master_seed, stream_index)``.

    Each purpose (issue proposals, rejection uniforms, initial conditions)
    gets its own Philox generator spawned from the key, so two streams with
    the same key replay the same draws however the work is scheduled.
    ``counter`` counts issue proposals consumed.
    """

    def __init__(self, master_seed: int, stream_index: int = 0):
        self.master_seed = int(master_seed)
        self.stream_index = int(stream_index)
        self.counter = 0
        self._gens = {}

    def generator(self, purpose: str = "issue") -> np.random.Generator:
        gen = self._gens.get(purpose)
        if gen is None:
            seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index, _PURPOSE[purpose]))
            gen = self._gens[purpose] = np.random.Generator(np.random.Philox(seq))
        return gen

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_index={self.stream_index}, counter={self.counter})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator("init")
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


REJECTION_LIMIT = 1_000_000


class IssueSampler:
    """Buffered issue draws for one stream.

    Proposals and acceptance uniforms come from separate sub-generators and
    are paired by index, so drawing in blocks yields exactly the sequence that
    repeated :func:`sample_issue` calls on a fresh stream would.
    """

    def __init__(self, dist: IssueDistribution, rng: RngStream, block: int = 1024):
        self.dist = dist
        self.rng = rng
        self.block = block
        self._buf = np.empty((0, dist.d))
        self._rejects = 0

    def _proposals(self, k):
        g = self.rng.generator("issue").standard_normal((k, self.dist.d))
        self.rng.counter += k
        return g / _norm(g)[:, None]

    def _fill(self, k):
        dist = self.dist
        if isinstance(dist, HaarUniform):
            return self._proposals(k)
        if isinstance(dist, FiniteSupport):
            u = self.rng.generator("issue").random(k)
            self.rng.counter += k
            cdf = np.cumsum(dist.probs)
            cdf[-1] = 1.0
            return dist.atoms[np.searchsorted(cdf, u, side="right")]
        if isinstance(dist, TiltedHaar):
            out = []
            got = 0
            while got < k:
                xi = self._proposals(k)
                u = self.rng.generator("accept").random(k)
                dens = np.asarray(dist.density(xi), dtype=float)
                if np.any(dens < dist.lower - 1e-12) or np.any(dens > dist.upper + 1e-12):
                    raise InvalidDistribution("density left its declared bounds [lower, upper]")
                acc = u * dist.upper < dens
                # consecutive rejections, carried across blocks
                hits = np.flatnonzero(acc)
                if hits.size == 0:
                    self._rejects += k
                elif self._rejects + hits[0] >= REJECTION_LIMIT:
                    self._rejects += int(hits[0])
                else:
                    self._rejects = k - 1 - int(hits[-1])
                if self._rejects >= REJECTION_LIMIT:
                    raise RejectionStall(f"{self._rejects} consecutive rejections; density bound violated?")
                out.append(xi[acc])
                got += hits.size
            return np.concatenate(out)
        raise TypeError(f"unsupported distribution {type(dist).__name__}")

    def take(self, k: int) -> np.ndarray:
        while self._buf.shape[0] < k:
            self._buf = np.concatenate([self._buf, self._fill(max(self.block, k))])
        out, self._buf = self._buf[:k], self._buf[k:]
        return out


def sample_issue(dist: IssueDistribution, rng: RngStream) -> np.ndarray:
    """One draw of the issue vector.

    Haar: normalized Gaussian. Tilted: Haar proposals accepted with
    probability ``density / upper``. Finite support: inverse CDF.
    """
    if isinstance(dist, TiltedHaar):
        issue_gen, acc_gen = rng.generator("issue"), rng.generator("accept")
        for _ in range(REJECTION_LIMIT):
            g = issue_gen.standard_normal((1, dist.d))
            rng.counter += 1
            xi = g / _norm(g)[:, None]
            dens = float(np.asarray(dist.density(xi))[0])
            if not dist.lower - 1e-12 <= dens <= dist.upper + 1e-12:
                raise InvalidDistribution("density left its declared bounds [lower, upper]")
            if acc_gen.random(1)[0] * dist.upper < dens:
                return xi[0]
        raise RejectionStall(f"{REJECTION_LIMIT} consecutive rejections; density bound violated?")
    return IssueSampler(dist, rng, block=1).take(1)[0]


# ---------------------------------------------------------------------------
# Update rules


def _signs_and_update(model, X, xi):
    ip = (X * xi[:, None, :]).sum(axis=-1)
    if isinstance(model, HJMR):
        U = X + model.eta * ip[..., None] * xi[:, None, :]
        s = np.sign(ip)
    elif isinstance(model, SignedHJMR):
        s = np.sign(ip)
        U = X + model.eta * s[..., None] * xi[:, None, :]
    elif isinstance(model, Party):
        s = np.sign(ip)
        agree = s[:, :, None] == s[:, None, :]
        W = np.where(agree, model.influence, -model.influence)
        U = X + (W[..., None] * X[:, None, :, :]).sum(axis=2)
    else:
        raise TypeError(f"unsupported model {type(model).__name__}")
    return U, s


def step_batch(model: ModelSpec, X: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Advance ``(R, n, d)`` configurations by one step with issues ``(R, d)``."""
    U, _ = _signs_and_update(model, X, xi)
    norms = _norm(U)
    if np.any(norms < ZERO_NORM):
        raise ZeroVector("unnormalized update vanished")
    return U / norms[..., None]


def step(model: ModelSpec, X, xi) -> np.ndarray:
    """One transition of the chain for a single configuration."""
    X = np.asarray(X, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != xi.shape[0]:
        raise DimensionMismatch(f"configuration has d={X.shape[1]}, issue has d={xi.shape[0]}")
    if isinstance(model, Party) and model.n != X.shape[0]:
        raise ValueError(f"influence matrix is {model.n}x{model.n} but there are {X.shape[0]} agents")
    return step_batch(model, X[None], xi[None])[0]


def split_event_batch(X, xi):
    s = np.sign((X * xi[:, None, :]).sum(axis=-1))
    return s.max(axis=1) != s.min(axis=1)


def split_event(X, xi) -> bool:
    """True iff the issue's hyperplane separates two agents (``sgn(0)`` is its own class)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    xi = np.asarray(xi, dtype=float)
    return bool(split_event_batch(X[None], xi[None])[0])


def orthonormal_closed_form(v0, counts, eta: float) -> np.ndarray:
    """State after basis-vector issues with per-coordinate tallies ``counts``.

    Returns ``P((1 + eta)^N_i v_i)``, evaluated in log space relative to the
    largest count on the support of ``v0`` so large tallies cannot overflow.
    """
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")
    v0 = np.asarray(v0, dtype=float)
    N = np.asarray(counts, dtype=float)
    if N.shape != v0.shape or np.any(N < 0):
        raise ValueError("counts must be nonnegative with one entry per coordinate")
    support = v0 != 0
    if not support.any():
        raise ZeroVector()
    lg = N * math.log1p(eta)
    shift = lg[support].max()
    scaled = np.where(support, v0 * np.exp(np.where(support, lg - shift, 0.0)), 0.0)
    return project_to_sphere(scaled)


# ---------------------------------------------------------------------------
# Simulation


def default_record_every(steps: int) -> int:
    return 1 if steps <= 10_000 else math.ceil(steps / 10_000)


def record_schedule(steps: int, record_every: int | None = None, record_times=()) -> np.ndarray:
    every = default_record_every(steps) if record_every is None else int(record_every)
    if every < 1:
        raise ValueError("record_every must be >= 1")
    times = set(range(0, steps + 1, every))
    times.add(steps)
    times.update(int(t) for t in record_times if 0 <= int(t) <= steps)
    return np.array(sorted(times), dtype=np.int64)


def aligned_phi(X) -> np.ndarray:
    """Minimax angle of each greedily sign-aligned configuration in ``(B, n, d)``.

    ``nan`` where the aligned agents do not sit strictly inside one hemisphere.
    """
    aligned = np.empty_like(X)
    for b in range(X.shape[0]):
        signs, _ = _greedy_signs(X[b])
        aligned[b] = signs[:, None] * X[b]
    vals, _, _, res = phi_potential_batch(aligned)
    return np.where(np.isfinite(res) & (vals < np.pi / 2), vals, np.nan)


def configuration_metrics(X, track_phi: bool = False, rho_mode: str = "auto"):
    """``(rho, phi, max_angle)`` for ``(B, n, d)`` configurations.

    ``phi`` is ``nan`` when ``track_phi`` is off; see :func:`aligned_phi`.
    """
    rho, _, _ = polarized_distance_batch(X, rho_mode)
    max_angle = max_pairwise_angle_batch(X)
    phi = aligned_phi(X) if track_phi else np.full(X.shape[0], np.nan)
    return rho, phi, max_angle


# recorded states are buffered and their potential solved in one batch
_PHI_BATCH = 8192


def simulate_batch(model: ModelSpec, dist: IssueDistribution, X0, steps: int, streams,
                   record_every: int | None = None, record_times=(), track_phi: bool = False):
    """Run one trajectory per stream, vectorized across replicas.

    Each replica's issues come only from its own stream, and every update is
    elementwise, so a replica's path does not depend on which other replicas
    share the batch.
    """
    from .diagnostics import MetricsSeries

    X = np.array(X0, dtype=float)
    if X.ndim == 2:
        X = np.broadcast_to(X, (len(streams),) + X.shape).copy()
    R, n, d = X.shape
    if len(streams) != R:
        raise ValueError("need one stream per replica")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if isinstance(model, Party) and model.n != n:
        raise ValueError(f"influence matrix is {model.n}x{model.n} but there are {n} agents")
    rho_mode = "exact" if n <= min(EXACT_MAX_N, 16) else "heuristic"
    times = record_schedule(steps, record_every, record_times)
    T = times.size
    rho = np.empty((R, T))
    phi = np.full((R, T), np.nan)
    ang = np.empty((R, T))
    split = np.zeros((R, T), dtype=bool)
    pending_phi = []  # (record index, states)

    def record(k):
        rho[:, k], _, ang[:, k] = configuration_metrics(X, False, rho_mode)
        if track_phi:
            pending_phi.append((k, X.copy()))
            if len(pending_phi) * R >= _PHI_BATCH or k == T - 1:
                cols = [c for c, _ in pending_phi]
                vals = aligned_phi(np.concatenate([S for _, S in pending_phi]))
                phi[:, cols] = vals.reshape(len(cols), R).T
                pending_phi.clear()

    record(0)
    samplers = [IssueSampler(dist, s) for s in streams]
    pending = np.zeros(R, dtype=bool)
    rec = 1
    t = 0
    chunk = 1024
    while t < steps:
        k = min(chunk, steps - t)
        issues = np.stack([s.take(k) for s in samplers], axis=0)
        for j in range(k):
            xi = issues[:, j]
            U, s = _signs_and_update(model, X, xi)
            norms = _norm(U)
            if np.any(norms < ZERO_NORM):
                raise ZeroVector("unnormalized update vanished", step=t)
            X = U / norms[..., None]
            pending |= s.max(axis=1) != s.min(axis=1)
            t += 1
            if rec < T and times[rec] == t:
                record(rec)
                split[:, rec] = pending
                pending[:] = False
                rec += 1
    return [MetricsSeries(times.copy(), rho[r], phi[r], ang[r], split[r], X[r].copy()) for r in range(R)]


def simulate(model: ModelSpec, dist: IssueDistribution, X0, steps: int, rng: RngStream,
             record_every: int | None = None, record_times=(), track_phi: bool = False):
    """Single-trajectory simulation; see :func:`simulate_batch`."""
    X0 = as_configuration(X0)
    return simulate_batch(model, dist, X0[None], steps, [rng], record_every, record_times, track_phi)[0]
