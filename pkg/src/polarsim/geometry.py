"""Geometric primitives on the unit sphere S^{d-1}.

Opinions and issues are plain numpy arrays: a unit vector has shape ``(d,)``
and a configuration of ``n`` agents has shape ``(n, d)``. Functions with a
``_batch`` suffix take a leading replica axis, ``(B, n, d)``, and are what the
simulator calls; the scalar versions are thin wrappers around them so both
paths share one implementation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInput,
    DimensionMismatch,
    ExactTooLarge,
    InvalidLambda,
    ZeroVector,
)

UNIT_TOL = 1e-9
ZERO_NORM = 1e-12
EXACT_MAX_N = 24
# patterns enumerated per block in exact mode; bounds peak memory for n near 24
_PATTERN_BLOCK = 1 << 14


@dataclass(frozen=True)
class PolarizedDistance:
    rho: float
    pattern: np.ndarray
    center: np.ndarray


@dataclass(frozen=True)
class PhiResult:
    phi: float
    center: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True)
class HullCertificate:
    """Outcome of :func:`zero_in_convex_hull`.

    ``weights`` is the convex combination found (always populated), ``separator``
    is the unit direction ``-p/|p|`` for the final iterate ``p`` (``None`` when
    the origin was certified inside), and ``min_norm`` is ``|p|``.
    """

    contains: bool
    weights: np.ndarray
    separator: np.ndarray | None
    min_norm: float
    iterations: int

    def __bool__(self):
        return self.contains


def _dot(a, b):
    return (a * b).sum(axis=-1)


def _norm(a):
    return np.sqrt((a * a).sum(axis=-1))


def as_configuration(X) -> np.ndarray:
    """Validate and return ``X`` as an ``(n, d)`` float array of unit vectors."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch(f"configuration must be (n, d), got shape {X.shape}")
    n, d = X.shape
    if n < 1 or d < 2:
        raise DimensionMismatch(f"need n >= 1 and d >= 2, got n={n}, d={d}")
    if np.any(np.abs(_norm(X) - 1.0) > UNIT_TOL):
        raise ValueError("configuration rows must have unit norm (tolerance 1e-9)")
    return X


def project_to_sphere(v) -> np.ndarray:
    """Return ``v / |v|`` along the last axis.

    Raises ZeroVector when any norm is below 1e-12: a zero unnormalized update
    means the model or its parameters are degenerate, so there is no fallback.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.shape[-1] < 2:
        raise DimensionMismatch(f"need a vector of length d >= 2, got shape {v.shape}")
    norms = _norm(v)
    if np.any(norms < ZERO_NORM):
        raise ZeroVector()
    return v / norms[..., None]


def angle(u, v):
    """Angle in radians between unit vectors, broadcasting over leading axes.

    Uses ``2 asin(|u - v| / 2)``, which agrees with ``acos(<u, v>)`` on the
    sphere but keeps full relative precision for tiny angles.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionMismatch(f"dimension {u.shape[-1]} != {v.shape[-1]}")
    half_chord = np.minimum(_norm(u - v) / 2.0, 1.0)
    out = 2.0 * np.arcsin(half_chord)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Distance to the polarized set


def canonical_patterns(n: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Sign patterns with first entry +1, indexed ``start <= k < stop``.

    Pattern ``k`` flips agent ``i + 1`` when bit ``i`` of ``k`` is set, so
    index 0 is the all-ones (consensus) pattern.
    """
    total = 1 << (n - 1)
    stop = total if stop is None else min(stop, total)
    k = np.arange(start, stop, dtype=np.int64)
    bits = (k[:, None] >> np.arange(n - 1, dtype=np.int64)) & 1
    signs = np.ones((k.size, n), dtype=np.int8)
    signs[:, 1:] = 1 - 2 * bits.astype(np.int8)
    return signs


def pattern_index(pattern) -> int:
    """Inverse of :func:`canonical_patterns` for a canonical pattern."""
    p = np.asarray(pattern)
    if p[0] < 0:
        p = -p
    return int(sum(1 << i for i, s in enumerate(p[1:]) if s < 0))


def _residual_rho(X, signs):
    # rho^2 = sum_i |s_i x_i - c|^2 with c the normalized signed sum; computed
    # directly instead of via 2n - 2|S| to avoid cancellation near P
    S = (signs[..., None] * X).sum(axis=-2)
    c = S / _norm(S)[..., None]
    diff = signs[..., None] * X - c[..., None, :]
    return np.sqrt((diff * diff).sum(axis=(-1, -2))), c


def _exact_best_patterns(X):
    B, n, _ = X.shape
    total = 1 << (n - 1)
    best = np.full(B, -1.0)
    best_signs = np.ones((B, n), dtype=np.int8)
    for start in range(0, total, _PATTERN_BLOCK):
        signs = canonical_patterns(n, start, start + _PATTERN_BLOCK).astype(float)
        sums = np.einsum("pn,bnd->bpd", signs, X)
        norms = _norm(sums)
        k = np.argmax(norms, axis=1)
        val = norms[np.arange(B), k]
        better = val > best
        best[better] = val[better]
        best_signs[better] = signs[k[better]].astype(np.int8)
    return best_signs


def _heuristic_patterns(X):
    B, n, _ = X.shape
    out = np.empty((B, n), dtype=np.int8)
    for b in range(B):
        signs, _ = _greedy_signs(X[b])
        S = (signs[:, None] * X[b]).sum(axis=0)
        # single flips: |S - 2 s_i x_i|^2 > |S|^2  iff  s_i <x_i, S> < 1
        for _ in range(4 * n):
            score = signs * (X[b] @ S)
            i = int(np.argmin(score))
            if score[i] >= 1.0 - 1e-12:
                break
            S = S - 2.0 * signs[i] * X[b, i]
            signs[i] = -signs[i]
        out[b] = signs if signs[0] > 0 else -signs
    return out


def polarized_distance_batch(X, mode: str = "exact"):
    """Vectorized :func:`distance_to_polarized` over ``(B, n, d)`` input.

    ``mode`` is ``"exact"``, ``"heuristic"`` or ``"auto"`` (exact when
    n <= 24). Returns ``(rho, patterns, centers)``.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    if mode == "auto":
        mode = "exact" if n <= EXACT_MAX_N else "heuristic"
    if mode == "exact":
        if n > EXACT_MAX_N:
            raise ExactTooLarge(f"exact mode enumerates 2^(n-1) patterns; n={n} > {EXACT_MAX_N}")
        signs = _exact_best_patterns(X)
    elif mode == "heuristic":
        signs = _heuristic_patterns(X)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rho, centers = _residual_rho(X, signs.astype(float))
    return rho, signs, centers


def distance_to_polarized(X, mode: str = "exact") -> PolarizedDistance:
    """Euclidean distance from ``X`` to the set P of sign-polarized configurations.

    For a fixed sign pattern the nearest point of P is ``(s_i c)`` with ``c``
    the normalized signed sum, giving ``rho^2 = 2n - 2|sum_i s_i x_i|``. Exact
    mode maximizes the signed-sum norm over all canonical patterns; heuristic
    mode (any n) runs greedy alignment plus single-flip descent and returns
    an upper bound.
    """
    X = as_configuration(X)
    rho, signs, centers = polarized_distance_batch(X[None], mode)
    return PolarizedDistance(float(rho[0]), signs[0], centers[0])


def max_pairwise_angle_batch(X):
    X = np.asarray(X, dtype=float)
    n = X.shape[-2]
    if n < 2:
        return np.zeros(X.shape[:-2])
    iu, ju = np.triu_indices(n, k=1)
    return angle(X[..., iu, :], X[..., ju, :]).max(axis=-1)


def max_pairwise_angle(X) -> float:
    """Largest raw angle between any two agents (no sign folding); 0 for n = 1."""
    X = as_configuration(X)
    return float(max_pairwise_angle_batch(X[None])[0])


def _greedy_signs(X):
    n = X.shape[0]
    signs = np.ones(n, dtype=np.int8)
    running = X[0].copy()
    for i in range(1, n):
        if X[i] @ running < 0:
            signs[i] = -1
        running += signs[i] * X[i]
    return signs, running


def canonical_sign_alignment(X):
    """Greedily sign each agent to agree with the running signed sum.

    Returns ``(pattern, signed_configuration)`` with ``pattern[0] == +1``.
    """
    X = as_configuration(X)
    signs, _ = _greedy_signs(X)
    return signs, signs[:, None] * X


# ---------------------------------------------------------------------------
# Convex-hull membership of the origin


def zero_in_convex_hull(points, tol: float = 1e-6, max_iter: int = 10_000) -> HullCertificate:
    """Decide whether the origin lies in ``conv(points)``.

    Minimizes ``|sum_i a_i z_i|`` over the simplex with fully corrective
    Frank-Wolfe: the linear minimization oracle picks the coordinate with the
    smallest ``<z_i, p>``, and each correction re-solves the problem exactly
    over the active set. Reports inclusion when the norm falls below ``tol``.
    """
    Z = np.asarray(points, dtype=float)
    if Z.ndim == 1:
        Z = Z[None, :]
    m = Z.shape[0]
    if m < 1:
        raise ValueError("need at least one point")
    active = [int(np.argmin((Z * Z).sum(axis=1)))]
    alpha = np.zeros(m)
    it = 0
    for it in range(1, max_iter + 1):
        p, w = min_norm_point(Z[active])
        alpha[:] = 0.0
        alpha[active] = w
        pp = float(p @ p)
        if pp < tol * tol:
            break
        scores = Z @ p
        s = int(np.argmin(scores))
        # optimal once no vertex improves on the current face
        if pp - scores[s] <= 1e-12 * max(1.0, pp) or s in active:
            break
        active = [a for a, wa in zip(active, w) if wa > 0] + [s]
    p = alpha @ Z
    norm_p = float(_norm(p))
    if norm_p < tol:
        return HullCertificate(True, alpha, None, norm_p, it)
    return HullCertificate(False, alpha, -p / norm_p, norm_p, it)


# ---------------------------------------------------------------------------
# Minimax-angle potential


def min_norm_point(Z, tol: float = 1e-12):
    """Nearest point of ``conv(Z)`` to the origin, by Wolfe's active-set method.

    Returns ``(p, weights)``. Finite and exact up to rounding for the small
    point sets used here.
    """
    Z = np.asarray(Z, dtype=float)
    m = Z.shape[0]
    sq = (Z * Z).sum(axis=1)
    scale = sq.max()
    S = [int(np.argmin(sq))]
    w = np.array([1.0])
    x = Z[S[0]].copy()
    for _ in range(50 * m + 50):
        ips = Z @ x
        j = int(np.argmin(ips))
        if ips[j] >= x @ x - tol * scale or j in S:
            break
        S.append(j)
        w = np.append(w, 0.0)
        for _ in range(m + 1):
            ZS = Z[S]
            k = len(S)
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = ZS @ ZS.T
            K[:k, k] = K[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            a = np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
            if (a > tol).all():
                w = a
                x = a @ ZS
                break
            neg = a <= tol
            theta = np.min(w[neg] / (w[neg] - a[neg]))
            w = (1.0 - theta) * w + theta * a
            keep = w > tol
            if not keep.any():
                keep[np.argmax(w)] = True
            S = [s for s, kp in zip(S, keep) if kp]
            w = w[keep] / w[keep].sum()
            x = w @ Z[S]
    weights = np.zeros(m)
    weights[S] = w
    return x, weights


def phi_potential_batch(X, tol: float = 1e-7, step_scale: float = 1.0,
                        patience: int = 50, max_iter: int = 2_000):
    """Vectorized :func:`phi_potential` over ``(B, n, d)``.

    Returns arrays ``(phi, centers, iterations, residual)``. ``residual`` is a
    duality gap in cosine units: ``|p| - min_i <v, x_i>`` for a convex
    combination ``p`` of the agents, which bounds the suboptimality of the
    reported center. It is ``nan`` when no certificate was found (outside the
    one-sided regime).
    """
    X = np.asarray(X, dtype=float)
    B, n, d = X.shape
    if n >= 2:
        G = np.einsum("bid,bjd->bij", X, X)
        iu, ju = np.triu_indices(n, k=1)
        if np.any(G[:, iu, ju] <= -1.0 + 1e-12):
            raise DegenerateInput("antipodal agents; the minimax angle is only defined on one side")

    mean = X.mean(axis=1)
    mnorm = _norm(mean)
    v = np.where((mnorm > ZERO_NORM)[:, None], mean / np.maximum(mnorm, ZERO_NORM)[:, None], X[:, 0])
    ips = _dot(X, v[:, None, :])
    best_val = ips.min(axis=1)
    best_v = v.copy()
    iters = np.zeros(B, dtype=np.int64)
    # work on a compacted subset of still-running items
    idx = np.arange(B)
    Xr, vr, ipr, bv = X, v, ips, best_val.copy()
    stall = np.zeros(B, dtype=np.int64)
    for k in range(1, max_iter + 1):
        tight = (ipr <= ipr.min(axis=1, keepdims=True) + 1e-12).astype(float)
        g = (tight[:, None, :] @ Xr)[:, 0] / tight.sum(axis=1, keepdims=True)
        vr = vr + (step_scale / np.sqrt(k)) * g
        vr = vr / np.linalg.norm(vr, axis=1)[:, None]
        ipr = (Xr @ vr[:, :, None])[..., 0]
        val = ipr.min(axis=1)
        live = stall < patience
        better = live & (val > bv)
        stall = np.where(live & (val > bv + tol), 0, stall + 1)
        bv = np.where(better, val, bv)
        if better.any():
            best_v[idx[better]] = vr[better]
        iters[idx[live]] = k
        n_live = int(np.count_nonzero(stall < patience))
        if n_live == 0:
            break
        if n_live < 0.75 * idx.size:
            live = stall < patience
            best_val[idx] = bv
            idx, Xr, vr, ipr, bv, stall = (a[live] for a in (idx, Xr, vr, ipr, bv, stall))
    best_val[idx] = bv

    # the optimal value of max_v min_i <v, x_i> equals the norm of the
    # min-norm point of conv(x_i) whenever that norm is positive, and the
    # normalized min-norm point is an optimal center
    residual = np.full(B, np.nan)
    for b in range(B):
        p, _ = min_norm_point(X[b])
        pn = float(_norm(p))
        if pn <= ZERO_NORM:
            continue
        cand = p / pn
        cval = float((X[b] @ cand).min())
        if cval >= best_val[b]:
            best_v[b], best_val[b] = cand, cval
        residual[b] = max(pn - best_val[b], 0.0)

    phi = angle(best_v[:, None, :], X).max(axis=1)
    return phi, best_v, iters, residual


def phi_potential(X, tol: float = 1e-7) -> PhiResult:
    """Minimax angle ``min_v max_i angle(v, x_i)`` and an optimal center.

    Projected supergradient ascent on ``min_i <v, x_i>`` from the normalized
    mean (step ``1/sqrt(k)``, stop after 50 iterations without a ``tol``
    improvement), then refined to the exact optimum through the min-norm point
    of the agents' convex hull. Intended for agents lying
    strictly on one side of a hyperplane; outside that regime the result is a
    local answer with ``residual`` set to ``nan``.
    """
    X = as_configuration(X)
    phi, v, it, res = phi_potential_batch(X[None], tol=tol)
    return PhiResult(float(phi[0]), v[0], int(it[0]), float(res[0]))


# ---------------------------------------------------------------------------


def haar_sample(rng: np.random.Generator, size, d: int) -> np.ndarray:
    """Haar-uniform unit vectors via normalized standard Gaussians."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    g = rng.standard_normal(shape + (d,))
    return g / _norm(g)[..., None]


def margin_direction(X, lam: float, max_trials: int = 100_000, rng=None):
    """Rejection-sample a Haar direction ``z`` with ``|<z, x_i>| >= lam`` for all i.

    Returns the witness, or ``None`` if ``max_trials`` proposals all fail.
    """
    if not 0.0 < lam < 1.0:
        raise InvalidLambda(f"lambda must lie in (0, 1), got {lam}")
    X = as_configuration(X)
    rng = np.random.default_rng() if rng is None else rng
    d = X.shape[1]
    done = 0
    while done < max_trials:
        k = min(4096, max_trials - done)
        z = haar_sample(rng, k, d)
        ok = (np.abs(z @ X.T) >= lam).all(axis=1)
        if ok.any():
            return z[int(np.argmax(ok))]
        done += k
    return None
