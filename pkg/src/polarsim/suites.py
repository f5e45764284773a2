"""Named experiment suites: canned configurations bound to pass thresholds."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .checks import PROPERTY_CHECKS, Check, check_closed_form, check_tie_gap, cycle_influence
from .config import ExperimentConfig
from .diagnostics import (
    Verdict,
    cluster_pattern,
    decay_rate_fit,
    strong_polarization_verdict,
    tie_distance_floor,
    weak_polarization_curve,
)
from .dynamics import HJMR, FiniteSupport, HaarUniform, Party, SignedHJMR, axis_tilt, is_irreducible
from .geometry import canonical_patterns, pattern_index
from .runner import initial_configuration, run

ORTHO_TIMES = [100, 316, 1000, 3162, 10000]


@dataclass
class SuiteReport:
    name: str
    claim: str
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def by_criterion(self, criterion: int):
        return [c for c in self.checks if c.stats.get("criterion") == criterion]

    def text(self) -> str:
        lines = [f"suite {self.name}: {self.claim}"]
        lines += [c.line() for c in self.checks]
        lines += [f"[NOTE] {n}" for n in self.notes]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f} s)")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "claim": self.claim,
            "passed": self.passed,
            "seconds": self.seconds,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail, "stats": _jsonable(c.stats)}
                       for c in self.checks],
            "notes": self.notes,
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _tag(check: Check, criterion: int | None) -> Check:
    if criterion is not None:
        check.stats["criterion"] = criterion
    return check


def _fraction_check(name, result, threshold, criterion):
    frac = result.converged_fraction()
    agg = result.manifest["aggregate"][next(iter(result.manifest["aggregate"]))]
    lo, hi = agg["converged_ci95"]
    return _tag(Check(name, frac >= threshold,
                      f"{agg['converged']}/{result.config.replicas} converged = {frac:.4f} "
                      f"(95% CI [{lo:.4f}, {hi:.4f}]), threshold {threshold}",
                      {"fraction": frac}), criterion)


def _implication_check(name, result):
    """Strong fraction never exceeds the fraction within epsilon at the final time."""
    eps = result.config.epsilon_grid[0]
    strong = result.converged_fraction()
    near = 1 - result.manifest["aggregate"][next(iter(result.manifest["aggregate"]))]["final_far_fraction"]
    return Check(name, strong <= near + 1e-12,
                 f"converged fraction {strong:.4f} <= fraction with rho < {eps:g} at the last record {near:.4f}")


def _sub(out, name):
    return False if out is None else Path(out) / name


# ---------------------------------------------------------------------------
# Configurations


def signed_hjmr_config(seed=0, tilted=False) -> ExperimentConfig:
    dist = axis_tilt(3, [0.0, 0.0, 1.0], 0.5) if tilted else HaarUniform(3)
    return ExperimentConfig(
        name="signed-hjmr-tilted" if tilted else "signed-hjmr",
        model=SignedHJMR(0.1), distribution=dist, n=4, d=3, init={"type": "haar_random"},
        steps=20_000, replicas=500, master_seed=seed, epsilon_grid=[0.01], record_every=20,
    )


def two_cycles_influence():
    H = np.eye(4)
    H[0, 1] = H[1, 0] = H[2, 3] = H[3, 2] = 0.3
    return H


def party_config(seed=0, reducible=False) -> ExperimentConfig:
    H = two_cycles_influence() if reducible else cycle_influence(4, eta=0.3, self_weight=1.0)
    return ExperimentConfig(
        name="party-two-components" if reducible else "party-cycle",
        model=Party(H), distribution=HaarUniform(3), n=4, d=3, init={"type": "haar_random"},
        steps=20_000, replicas=300, master_seed=seed, epsilon_grid=[0.01], record_every=20,
    )


def ortho_config(seed=0, steps=10_000) -> ExperimentConfig:
    return ExperimentConfig(
        name=f"ortho-T{steps}",
        model=HJMR(0.2), distribution=FiniteSupport.orthonormal(3), n=2, d=3,
        init={"type": "equal_support_random"}, steps=steps, replicas=2000, master_seed=seed,
        epsilon_grid=[0.1], record_every=max(1, steps // 1000),
        record_times=[t for t in ORTHO_TIMES if t <= steps],
    )


def consensus_config(seed=0) -> ExperimentConfig:
    return ExperimentConfig(
        name="consensus", model=SignedHJMR(0.1), distribution=HaarUniform(3), n=4, d=3,
        init={"type": "haar_random"}, steps=20_000, replicas=2000, master_seed=seed,
        epsilon_grid=[0.01], record_every=200,
    )


# ---------------------------------------------------------------------------
# Suites


def signed_hjmr_suite(seed=0, out=None, workers=None) -> SuiteReport:
    report = SuiteReport("signed-hjmr", "signed HJMR polarizes strongly from any start, "
                                        "under Haar issues and under any bounded-density tilt of them")
    for tilted in (False, True):
        cfg = signed_hjmr_config(seed, tilted)
        res = run(cfg, workers, _sub(out, cfg.name))
        label = "tilted density in [0.5, 1.5]" if tilted else "Haar issues"
        report.checks.append(_fraction_check(f"strong polarization, {label}", res, 0.99, 1))
        report.checks.append(_implication_check(f"strong implies weak, {label}", res))
    return report


def party_suite(seed=0, out=None, workers=None) -> SuiteReport:
    report = SuiteReport("party", "the party model polarizes strongly when the influence graph is irreducible")
    cfg = party_config(seed)
    report.checks.append(Check("cycle influence graph is irreducible", is_irreducible(cfg.model.influence),
                               "directed 4-cycle with weight 0.3 plus self-weights 1.0"))
    res = run(cfg, workers, _sub(out, cfg.name))
    report.checks.append(_fraction_check("strong polarization, irreducible cycle", res, 0.97, 2))
    report.checks.append(_implication_check("strong implies weak, irreducible cycle", res))
    ctrl = party_config(seed, reducible=True)
    report.checks.append(Check("control graph is reducible", not is_irreducible(ctrl.model.influence),
                               "two disconnected 2-cycles"))
    ctrl_res = run(ctrl, workers, _sub(out, ctrl.name))
    report.notes.append(f"reducible control (no claim): {ctrl_res.converged_fraction():.4f} of "
                        f"{ctrl.replicas} replicas converged at epsilon {ctrl.epsilon_grid[0]}")
    return report


def recurrence_fraction(result) -> tuple[float, np.ndarray]:
    """Fraction of replicas whose rho exceeds half their tie floor in the second half of the run."""
    cfg = result.config
    hits = []
    floors = np.empty(cfg.replicas)
    for r, s in enumerate(result.series):
        floors[r] = tie_distance_floor(initial_configuration(cfg, r)[0])
        late = s.t > cfg.steps / 2
        hits.append(bool(np.any(s.rho[late] > floors[r] / 2)))
    return float(np.mean(hits)), floors


def ortho_suite(seed=0, out=None, workers=None) -> SuiteReport:
    report = SuiteReport("ortho-weak-not-strong",
                         "HJMR with orthonormal basis issues polarizes weakly, at rate t^(-1/2), "
                         "but not strongly, for equal-support starts that differ in sign pattern")
    short = run(ortho_config(seed, 10_000), workers, _sub(out, "ortho-T10000"))
    curve = weak_polarization_curve(short.series, 0.1, ORTHO_TIMES)
    pts = [(t, e.point) for t, e in curve]
    if all(v > 0 for _, v in pts):
        exponent, rms = decay_rate_fit(pts, "power_law")
    else:
        exponent, rms = float("nan"), float("nan")
    report.checks.append(_tag(Check(
        "weak polarization rate", -0.65 <= exponent <= -0.35,
        "Pr(rho >= 0.1) at t = " + ", ".join(f"{t}: {v:.4f}" for t, v in pts)
        + f"; fitted exponent {exponent:.4f} (band [-0.65, -0.35], rms {rms:.3f})",
        {"exponent": exponent, "curve": pts}), 3))
    for res in (short, run(ortho_config(seed, 100_000), workers, _sub(out, "ortho-T100000"))):
        frac, floors = recurrence_fraction(res)
        report.checks.append(_tag(Check(
            f"no strong polarization, T = {res.config.steps}", frac >= 0.5,
            f"{frac:.4f} of replicas exceed half their tie floor in the second half "
            f"(recorded every {res.config.record_every} steps; median floor {np.median(floors):.4f}); threshold 0.5",
            {"fraction": frac}), 3))
    report.checks.append(_tag(check_closed_form(seed), 4))
    report.checks.append(_tag(check_tie_gap(seed), 5))
    return report


def lemma_suite(seed=0, out=None, workers=None) -> SuiteReport:
    report = SuiteReport("lemma-checks", "geometric and probabilistic inequalities behind the polarization results")
    start = time.perf_counter()
    for check in PROPERTY_CHECKS:
        report.checks.append(_tag(check(seed), 6))
    elapsed = time.perf_counter() - start
    report.checks.append(_tag(Check("property suite runtime", elapsed < 300,
                                    f"{elapsed:.1f} s (budget 300 s)", {"seconds": elapsed}), 6))
    return report


def consensus_suite(seed=0, out=None, workers=None) -> SuiteReport:
    report = SuiteReport("consensus-remark", "from Haar-random starts every clustering is equally likely, "
                                             "so consensus has probability 2^(1-n)")
    cfg = consensus_config(seed)
    res = run(cfg, workers, _sub(out, cfg.name))
    n = cfg.n
    counts = np.zeros(2 ** (n - 1), dtype=int)
    unresolved = 0
    for s in res.series:
        pattern = cluster_pattern(s.terminal_config, cfg.epsilon_grid[0])
        if pattern is None or strong_polarization_verdict(s, cfg.epsilon_grid[0]) is not Verdict.CONVERGED:
            unresolved += 1
            continue
        counts[pattern_index(pattern)] += 1
    total = int(counts.sum())
    chi = stats.chisquare(counts)
    consensus = counts[0] / total if total else float("nan")
    labels = ["".join("+" if v > 0 else "-" for v in p) for p in canonical_patterns(n)]
    report.checks.append(_tag(Check(
        "clusterings uniform", bool(chi.pvalue > 0.01),
        "counts " + ", ".join(f"{lab}: {c}" for lab, c in zip(labels, counts))
        + f"; chi-square p = {chi.pvalue:.4f} (threshold 0.01)",
        {"counts": counts.tolist(), "pvalue": float(chi.pvalue)}), 7))
    lo, hi = 2.0 ** (1 - n) - 0.03, 2.0 ** (1 - n) + 0.03
    report.checks.append(_tag(Check(
        "consensus fraction", bool(lo <= consensus <= hi),
        f"{consensus:.4f} of {total} polarized replicas reach consensus (band [{lo:.3f}, {hi:.3f}])",
        {"consensus": consensus}), 7))
    report.notes.append(f"{unresolved} of {cfg.replicas} replicas were not within epsilon of a clustering")
    return report


SUITES = {
    "signed-hjmr": signed_hjmr_suite,
    "party": party_suite,
    "ortho-weak-not-strong": ortho_suite,
    "lemma-checks": lemma_suite,
    "consensus-remark": consensus_suite,
}


def run_suite(name: str, seed: int = 0, out=None, workers=None) -> SuiteReport:
    if name not in SUITES:
        raise KeyError(name)
    start = time.perf_counter()
    report = SUITES[name](seed, out, workers)
    report.seconds = time.perf_counter() - start
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.text() + "\n")
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return report
