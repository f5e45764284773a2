"""Numerical property checks behind the experiment suites.

Each check draws its own random instances from a seed and returns a
:class:`Check` holding the verdict, the worst observed statistic and the
bound it was compared against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .diagnostics import (
    decay_rate_fit,
    good_event_gamma,
    split_free_transfer_matrix,
    tie_probability,
)
from .dynamics import (
    HJMR,
    Party,
    SignedHJMR,
    orthonormal_closed_form,
    step,
    step_batch,
)
from .geometry import (
    _norm,
    haar_sample,
    max_pairwise_angle_batch,
    phi_potential_batch,
    project_to_sphere,
    zero_in_convex_hull,
)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(self.passed)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _gen(seed, tag):
    return np.random.default_rng([seed, tag])


def one_sided(gen, count, n, d, margin=0.05):
    """``(count, n, d)`` configurations with ``<v, x_i> >= margin`` for a random unit ``v``."""
    out = np.empty((count, n, d))
    v = haar_sample(gen, count, d)
    for b in range(count):
        got = 0
        while got < n:
            cand = haar_sample(gen, 4 * n, d)
            cand = cand[cand @ v[b] >= margin][: n - got]
            out[b, got:got + len(cand)] = cand
            got += len(cand)
    return out


def cycle_influence(n, eta=0.3, self_weight=1.0):
    H = np.eye(n) * self_weight
    for i in range(n):
        H[i, (i + 1) % n] = eta
    return H


# ---------------------------------------------------------------------------
# Geometric inequalities


def check_normalization_contraction(seed=0, trials=10_000, epsilons=(0.0, 0.1, 1.0), d=3):
    """Normalizing two shifted unit vectors of length >= 1 + eps shrinks their gap by 1/(1 + eps)."""
    gen = _gen(seed, 1)
    worst = -np.inf
    for eps in epsilons:
        got = 0
        while got < trials:
            x = haar_sample(gen, 4 * trials, d)
            y = haar_sample(gen, 4 * trials, d)
            z = haar_sample(gen, 4 * trials, d) * gen.uniform(0, 4, (4 * trials, 1))
            ok = (_norm(x + z) >= 1 + eps) & (_norm(y + z) >= 1 + eps)
            x, y, z = x[ok][: trials - got], y[ok][: trials - got], z[ok][: trials - got]
            lhs = _norm(project_to_sphere(x + z) - project_to_sphere(y + z))
            rhs = _norm(x - y) / (1 + eps)
            worst = max(worst, float(np.max(lhs - rhs)))
            got += len(x)
    passed = worst <= 1e-9
    return Check("normalization contraction", passed,
                 f"max excess {worst:.3e} over {trials} triples per eps in {list(epsilons)} (bound 1e-9)",
                 {"max_excess": worst})


def check_mean_shrink(seed=0, trials=10_000):
    """Vectors in the unit ball with 0 in their hull have mean norm <= 1 - 1/n."""
    gen = _gen(seed, 2)
    worst = -np.inf
    got = 0
    while got < trials:
        n = int(gen.integers(2, 8))
        d = int(gen.integers(2, 4))
        Z = haar_sample(gen, n, d) * gen.random((n, 1)) ** (1.0 / d)
        if not zero_in_convex_hull(Z):
            continue
        worst = max(worst, float(np.linalg.norm(Z.mean(axis=0)) - (1 - 1 / n)))
        got += 1
    passed = worst <= 1e-9
    return Check("mean shrink with 0 in hull", passed,
                 f"max excess {worst:.3e} over {trials} certified sets (bound 1e-9)", {"max_excess": worst})


def check_conic_projection(seed=0, trials=2000):
    """Projecting a one-sided configuration onto the optimal center's complement puts 0 in the hull."""
    gen = _gen(seed, 3)
    failures = 0
    worst = 0.0
    per = trials // 4
    for n, d in ((2, 2), (3, 3), (5, 3), (6, 4)):
        X = one_sided(gen, per, n, d)
        _, centers, _, _ = phi_potential_batch(X)
        for b in range(per):
            y = centers[b]
            proj = X[b] - np.outer(X[b] @ y, y)
            cert = zero_in_convex_hull(proj, tol=1e-6)
            worst = max(worst, cert.min_norm)
            failures += not cert.contains
    return Check("conic projection", failures == 0,
                 f"{failures} of {4 * per} configurations without 0 in the projected hull "
                 f"(max min-norm {worst:.2e}, tol 1e-6)", {"failures": failures, "max_min_norm": worst})


def check_phi_sandwich(seed=0, trials=10_000, tol=1e-7):
    """Phi <= max pairwise angle <= 2 Phi on one-sided configurations."""
    gen = _gen(seed, 4)
    low = high = -np.inf
    shapes = ((2, 2), (3, 3), (5, 3), (4, 5))
    per = trials // len(shapes)
    for n, d in shapes:
        X = one_sided(gen, per, n, d, margin=0.0)
        phi, _, _, _ = phi_potential_batch(X)
        pair = max_pairwise_angle_batch(X)
        low = max(low, float(np.max(phi - pair)))
        high = max(high, float(np.max(pair - 2 * phi)))
    passed = low <= tol and high <= 2 * tol
    return Check("minimax angle sandwich", passed,
                 f"max(Phi - maxpair) = {low:.2e}, max(maxpair - 2 Phi) = {high:.2e} over {per * len(shapes)} configurations",
                 {"lower_excess": low, "upper_excess": high})


# ---------------------------------------------------------------------------
# Split-free party dynamics


def forced_split_free_run(H, X0, steps, gen):
    """Party run where each issue is redrawn until it separates no pair of agents."""
    model = Party(H)
    X = X0.copy()
    path = [X.copy()]
    issues = []
    d = X.shape[1]
    for _ in range(steps):
        while True:
            xi = haar_sample(gen, 1, d)[0]
            s = np.sign(X @ xi)
            if np.all(s == s[0]) and s[0] != 0:
                break
        X = step(model, X, xi)
        path.append(X.copy())
        issues.append(xi)
    return np.array(path), np.array(issues)


def reachable(H):
    """Boolean matrix of pairs (i, j) with a directed path from i to j in the influence graph."""
    A = (np.asarray(H) > 0) | np.eye(len(H), dtype=bool)
    R = A.copy()
    for _ in range(len(H)):
        R = R | ((R.astype(int) @ A.astype(int)) > 0)
    return R


def check_transfer_matrix(seed=0, runs=50, n=4, d=3):
    """n split-free party steps act as a row-stochastic matrix supported on reachable pairs."""
    gen = _gen(seed, 5)
    graphs = {"cycle": cycle_influence(n), "chain": np.eye(n) + 0.3 * np.eye(n, k=1)}
    row_err = 0.0
    prop_err = 0.0
    support_bad = 0
    eps_run = np.inf
    for H in graphs.values():
        R = reachable(H)
        for _ in range(runs):
            X0 = one_sided(gen, 1, n, d, margin=0.1)[0]
            path, issues = forced_split_free_run(H, X0, n, gen)
            M, Xn = split_free_transfer_matrix(H, X0, issues)
            row_err = max(row_err, float(np.max(np.abs(M.sum(axis=1) - 1))))
            prop_err = max(prop_err, float(np.max(np.abs(project_to_sphere(M @ X0) - path[-1]))))
            support_bad += int(np.any((M > 0) != R))
            eps_run = min(eps_run, float(M[R].min()))
    passed = row_err <= 1e-9 and prop_err <= 1e-9 and support_bad == 0 and eps_run > 0
    return Check("split-free transfer matrix", passed,
                 f"row-sum error {row_err:.1e}, X_n vs P(M X_0) {prop_err:.1e}, "
                 f"{support_bad} support mismatches, min entry on reachable pairs {eps_run:.3e}",
                 {"row_err": row_err, "prop_err": prop_err, "support_bad": support_bad, "epsilon_run": eps_run})


def check_phi_decay(seed=0, runs=40, n=4, d=3, blocks=50, tol=1e-7):
    """Along split-free party runs Phi never increases and decays geometrically."""
    gen = _gen(seed, 6)
    H = cycle_influence(n)
    steps = blocks * n
    X0 = one_sided(gen, runs, n, d, margin=0.1)
    paths = np.stack([forced_split_free_run(H, X0[r], steps, gen)[0] for r in range(runs)])
    phi, _, _, _ = phi_potential_batch(paths.reshape(-1, n, d))
    phi = phi.reshape(runs, steps + 1)
    step_rise = float(np.max(np.diff(phi, axis=1)))
    block_rise = float(np.max(np.diff(phi[:, ::n], axis=1)))
    rates = []
    for r in range(runs):
        t = np.arange(steps + 1)
        keep = phi[r] > 1e-10  # below this the solver's accuracy dominates
        if keep.sum() >= 3:
            rates.append(decay_rate_fit(np.column_stack([t[keep], phi[r][keep]]), "geometric")[0])
    worst_rate = max(rates) if rates else math.nan
    passed = step_rise <= tol and block_rise <= tol and worst_rate <= 0.999
    return Check("split-free potential decay", passed,
                 f"max per-step rise {step_rise:.2e}, max per-{n}-step rise {block_rise:.2e} (tol {tol:g}); "
                 f"worst fitted per-step rate {worst_rate:.4f} (bound 0.999) over {runs} runs of {steps} steps",
                 {"step_rise": step_rise, "block_rise": block_rise, "worst_rate": worst_rate})


# ---------------------------------------------------------------------------
# Dynamics symmetries


def _random_models(gen, n):
    H = gen.uniform(0, 1, (n, n)) * (gen.random((n, n)) < 0.7)
    return [HJMR(float(gen.uniform(0.05, 2))), SignedHJMR(float(gen.uniform(0.05, 2))), Party(H)]


def check_sign_invariance(seed=0, trials=10_000, n=4, d=3):
    """Flipping agents and the issue commutes with every update rule."""
    gen = _gen(seed, 7)
    worst = 0.0
    for model in _random_models(gen, n):
        X = haar_sample(gen, trials * n, d).reshape(trials, n, d)
        xi = haar_sample(gen, trials, d)
        tau = np.where(gen.random((trials, n)) < 0.5, -1.0, 1.0)
        flip = np.where(gen.random(trials) < 0.5, -1.0, 1.0)
        lhs = step_batch(model, tau[..., None] * X, flip[:, None] * xi)
        rhs = tau[..., None] * step_batch(model, X, xi)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return Check("sign invariance", worst <= 1e-9,
                 f"max deviation {worst:.2e} over {trials} cases per model (tol 1e-9)", {"max_dev": worst})


def check_polarized_invariance(seed=0, trials=10_000, n=4, d=3):
    """A configuration equal up to per-agent signs stays so, with the same signs."""
    gen = _gen(seed, 8)
    worst = 0.0
    for model in _random_models(gen, n):
        u = haar_sample(gen, trials, d)
        sigma = np.where(gen.random((trials, n)) < 0.5, -1.0, 1.0)
        X = sigma[..., None] * u[:, None, :]
        Y = step_batch(model, X, haar_sample(gen, trials, d))
        # every agent times its sign must equal the first agent times its sign
        aligned = sigma[..., None] * Y
        worst = max(worst, float(np.max(np.abs(aligned - aligned[:, :1]))))
    return Check("polarized-set invariance", worst <= 1e-9,
                 f"max deviation from a sign orbit {worst:.2e} over {trials} steps per model (tol 1e-9)",
                 {"max_dev": worst})


# ---------------------------------------------------------------------------
# Issue geometry


def _pair_at_angle(gen, theta, d):
    u = haar_sample(gen, 1, d)[0]
    w = haar_sample(gen, 1, d)[0]
    w = project_to_sphere(w - (w @ u) * u)
    return u, math.cos(theta) * u + math.sin(theta) * w


def split_frequency(gen, theta, d, draws):
    x, y = _pair_at_angle(gen, theta, d)
    hits = 0
    done = 0
    while done < draws:
        m = min(250_000, draws - done)
        xi = haar_sample(gen, m, d)
        hits += int(np.count_nonzero(np.sign(xi @ x) != np.sign(xi @ y)))
        done += m
    return hits / draws


def check_split_probability(seed=0, draws=1_000_000, thetas=(0.01, 0.05, 0.1, 0.3, 0.5), dims=(2, 3, 5)):
    """Split frequency is linear in the angle: ratio near 1/pi in d=2, bounded uniformly in higher d."""
    gen = _gen(seed, 9)
    ratios = {d: [split_frequency(gen, th, d, draws) / th for th in thetas] for d in dims}
    c = 1 / math.pi
    ok2 = all(abs(r - c) <= 0.05 for r in ratios.get(2, []))
    bound = c + 0.05
    okd = all(r <= bound for d, rs in ratios.items() if d != 2 for r in rs)
    detail = "; ".join(f"d={d}: " + ", ".join(f"{r:.4f}" for r in rs) for d, rs in ratios.items())
    return Check("split probability linear in angle", ok2 and okd,
                 f"frequency/theta {detail} (d=2 band 1/pi +- 0.05, higher d bound {bound:.4f})",
                 {"ratios": {str(d): rs for d, rs in ratios.items()}})


def check_good_event(seed=0, pairs=200, draws=20_000, d=3):
    """Acute pairs see a same-sign issue with both correlations >= gamma w.p. >= 1/4 - 0.02."""
    gen = _gen(seed, 10)
    gamma = good_event_gamma(d)
    thetas = np.concatenate([[math.pi / 2, 0.0], gen.uniform(0, math.pi / 2, pairs - 2)])
    worst = np.inf
    for th in thetas:
        x, y = _pair_at_angle(gen, float(th), d)
        xi = haar_sample(gen, draws, d)
        a, b = xi @ x, xi @ y
        good = (np.sign(a) == np.sign(b)) & (np.abs(a) >= gamma) & (np.abs(b) >= gamma)
        worst = min(worst, float(good.mean()))
    return Check("good event probability", worst >= 0.25 - 0.02,
                 f"min frequency {worst:.4f} over {pairs} acute pairs, gamma = {gamma:.4f} (bound 0.23)",
                 {"min_frequency": worst, "gamma": gamma})


# ---------------------------------------------------------------------------
# Basis issues and balls in bins


def check_closed_form(seed=0, cases=100, steps=1000, tol=1e-10):
    """Stepping through basis issues matches the count-based closed form, in any order."""
    gen = _gen(seed, 11)
    worst_iter = worst_perm = 0.0
    for _ in range(cases):
        d = int(gen.integers(2, 6))
        eta = float(gen.uniform(0.01, 1.0))
        v0 = haar_sample(gen, 1, d)[0]
        seq = gen.integers(0, d, steps)
        E = np.eye(d)
        model = HJMR(eta)
        x = v0[None]
        for k in seq:
            x = step(model, x, E[k])
        perm = v0[None]
        for k in gen.permutation(seq):
            perm = step(model, perm, E[k])
        closed = orthonormal_closed_form(v0, np.bincount(seq, minlength=d), eta)
        worst_iter = max(worst_iter, float(np.max(np.abs(x[0] - closed))))
        worst_perm = max(worst_perm, float(np.max(np.abs(perm[0] - x[0]))))
    return Check("basis-issue closed form", worst_iter <= tol and worst_perm <= tol,
                 f"iterate vs closed form {worst_iter:.2e}, permuted order {worst_perm:.2e} "
                 f"over {cases} sequences of {steps} issues (tol {tol:g})",
                 {"iter_err": worst_iter, "perm_err": worst_perm})


def binomial_tie_probability(t: int) -> float:
    """Exact ``Pr(N_1 = N_2)`` after t uniform balls in two bins."""
    if t % 2:
        return 0.0
    return float(np.exp(special.gammaln(t + 1) - 2 * special.gammaln(t / 2 + 1) - t * math.log(2)))


def check_tie_gap(seed=0, replicas_point=1_000_000, replicas_fit=100_000,
                  times=(100, 316, 1000, 3162, 10000)):
    """Two-bin tie probability matches the binomial value at t=100 and decays like t^(-1/2)."""
    gen = _gen(seed, 12)
    (_, point), = tie_probability(2, [100], replicas_point, gen)
    exact = binomial_tie_probability(100)
    se = math.sqrt(exact * (1 - exact) / replicas_point)
    z = abs(point.point - exact) / se
    curve = tie_probability(2, times, replicas_fit, gen)
    exponent, rms = decay_rate_fit([(t, e.point) for t, e in curve], "power_law")
    passed = z <= 3 and -0.6 <= exponent <= -0.4
    return Check("two-bin tie decay", passed,
                 f"P(tie at 100) = {point.point:.5f} vs exact {exact:.5f} ({z:.2f} standard errors, bound 3); "
                 f"fitted exponent {exponent:.4f} (band [-0.6, -0.4], rms {rms:.3f})",
                 {"estimate": point.point, "exact": exact, "z": z, "exponent": exponent,
                  "curve": [(t, e.point) for t, e in curve]})


PROPERTY_CHECKS = (
    check_normalization_contraction,
    check_mean_shrink,
    check_conic_projection,
    check_phi_sandwich,
    check_transfer_matrix,
    check_phi_decay,
    check_sign_invariance,
    check_polarized_invariance,
    check_split_probability,
    check_good_event,
)
