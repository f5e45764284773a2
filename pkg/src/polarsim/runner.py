"""Replica fan-out, initial conditions and on-disk outputs for one experiment."""
from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, serialize_config
from .diagnostics import Verdict, strong_polarization_verdict, time_average_occupancy, wilson_interval
from .dynamics import RngStream, simulate_batch
from .geometry import UNIT_TOL, _norm, haar_sample

# Replicas are simulated in blocks of this fixed size. Block membership
# depends only on the replica index, so outputs do not depend on the number
# of workers.
BLOCK = 128

SERIES_HEADER = ["replica", "t", "rho", "phi", "max_angle", "split"]
SUMMARY_HEADER = ["replica", "terminal_rho", "epsilon", "verdict", "occupancy"]


def fmt(x) -> str:
    """Float as 17 significant digits; NaN (an absent value) as the empty string."""
    x = float(x)
    return "" if np.isnan(x) else format(x, ".17g")


def worker_count(requested: int | None = None) -> int:
    """Requested workers (default: CPU count), capped by ``POLARSIM_THREADS``."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get("POLARSIM_THREADS")
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise ValueError(f"POLARSIM_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


# ---------------------------------------------------------------------------
# Initial conditions


def _equal_support(gen, n, d):
    """Shared random support of size >= 2, Haar on that subsphere, no sign-equal pair."""
    masks = [m for m in range(1, 1 << d) if bin(m).count("1") >= 2]
    while True:
        mask = masks[gen.integers(len(masks))]
        support = [k for k in range(d) if mask >> k & 1]
        X = np.zeros((n, d))
        X[:, support] = haar_sample(gen, n, len(support))
        S = np.sign(X[:, support])
        same = np.all(S[:, None] == S[None], axis=-1) | np.all(S[:, None] == -S[None], axis=-1)
        sign_equal = np.any(same & ~np.eye(n, dtype=bool))
        if not sign_equal:
            return X


def initial_configuration(config: ExperimentConfig, replica: int):
    """``(X0, renormalized)`` for one replica, drawn from its own init stream."""
    kind = config.init["type"]
    n, d = config.n, config.d
    if kind == "explicit":
        V = np.array(config.init["vectors"], dtype=float)
        norms = _norm(V)
        return V / norms[:, None], bool(np.any(np.abs(norms - 1) > UNIT_TOL))
    gen = RngStream(config.master_seed, replica).generator("init")
    if kind == "haar_random":
        return haar_sample(gen, n, d), False
    if kind == "polarized":
        u = haar_sample(gen, 1, d)[0]
        signs = np.where(gen.random(n) < 0.5, -1.0, 1.0)
        signs[0] = 1.0
        return signs[:, None] * u, False
    if kind == "equal_support_random":
        return _equal_support(gen, n, d), False
    raise ValueError(f"unknown init {kind!r}")


# ---------------------------------------------------------------------------
# Running


@dataclass
class RunResult:
    config: ExperimentConfig
    series: list
    manifest: dict
    out_dir: Path | None = None
    files: dict = field(default_factory=dict)

    def converged_fraction(self, epsilon=None) -> float:
        eps = self.config.epsilon_grid[0] if epsilon is None else epsilon
        return self.manifest["aggregate"][repr(float(eps))]["converged_fraction"]


def _run_block(config, indices):
    X0 = np.empty((len(indices), config.n, config.d))
    flagged = False
    for k, r in enumerate(indices):
        X0[k], renorm = initial_configuration(config, r)
        flagged |= renorm
    streams = [RngStream(config.master_seed, r) for r in indices]
    series = simulate_batch(config.model, config.distribution, X0, config.steps, streams,
                            config.record_every, config.record_times, config.track_phi)
    return series, flagged


def simulate_config(config: ExperimentConfig, workers: int | None = None, order=None):
    """All replicas of ``config`` as a list indexed by replica.

    ``order`` permutes the block execution order; results are identical for
    every order and worker count.
    """
    blocks = [list(range(s, min(s + BLOCK, config.replicas))) for s in range(0, config.replicas, BLOCK)]
    sequence = list(range(len(blocks))) if order is None else list(order)
    workers = worker_count(workers)
    out = [None] * config.replicas
    flagged = False
    if workers == 1 or len(blocks) == 1:
        results = [(b, _run_block(config, blocks[b])) for b in sequence]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(b, pool.submit(_run_block, config, blocks[b])) for b in sequence]
            results = [(b, f.result()) for b, f in futures]
    for b, (series, renorm) in results:
        flagged |= renorm
        for r, s in zip(blocks[b], series):
            out[r] = s
    return out, flagged


def _column(values):
    return ["" if v != v else format(v, ".17g") for v in np.asarray(values, dtype=float).tolist()]


def series_csv(series) -> str:
    parts = [",".join(SERIES_HEADER) + "\n"]
    for r, s in enumerate(series):
        rows = zip(s.t.tolist(), _column(s.rho), _column(s.phi), _column(s.max_angle),
                   np.asarray(s.split, dtype=int).tolist())
        parts.append("".join(f"{r},{t},{a},{b},{c},{f}\n" for t, a, b, c, f in rows))
    return "".join(parts)


def summary_rows(series, config):
    rows = []
    for r, s in enumerate(series):
        for eps in config.epsilon_grid:
            verdict = strong_polarization_verdict(s, eps, config.tail_fraction)
            rows.append([r, fmt(s.rho[-1]), fmt(eps), verdict.value, fmt(time_average_occupancy(s, eps))])
    return rows


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerows(rows)
    return buf.getvalue()


def run(config: ExperimentConfig, workers: int | None = None, out_dir=None, order=None) -> RunResult:
    """Simulate every replica, then write series.csv, summary.csv and manifest.json.

    ``out_dir`` defaults to ``config.outputs``; pass ``False`` to skip writing.
    """
    start = time.perf_counter()
    series, renormalized = simulate_config(config, workers, order)
    wall = time.perf_counter() - start
    rows = summary_rows(series, config)
    aggregate = {}
    for eps in config.epsilon_grid:
        hits = sum(row[3] == Verdict.CONVERGED.value for row in rows if row[2] == fmt(eps))
        ci = wilson_interval(hits, config.replicas)
        final_far = sum(s.rho[-1] >= eps for s in series)
        aggregate[repr(float(eps))] = {
            "converged": hits,
            "converged_fraction": hits / config.replicas,
            "converged_ci95": [ci.lower, ci.upper],
            "final_far_fraction": final_far / config.replicas,
        }
    manifest = {
        "config": config.to_dict(),
        "version": __version__,
        "stream_indices": list(range(config.replicas)),
        "wall_clock_seconds": wall,
        "workers": worker_count(workers),
        "init_renormalized": renormalized,
        "terminal_rho": [float(s.rho[-1]) for s in series],
        "aggregate": aggregate,
    }
    result = RunResult(config, series, manifest)
    target = config.outputs if out_dir is None else out_dir
    if target is not False:
        result.out_dir = Path(target)
        result.out_dir.mkdir(parents=True, exist_ok=True)
        files = {
            "series.csv": series_csv(series),
            "summary.csv": summary_csv(rows),
            "manifest.json": json.dumps(manifest, indent=2) + "\n",
            "config.yaml": serialize_config(config),
        }
        for name, text in files.items():
            path = result.out_dir / name
            path.write_text(text)
            result.files[name] = path
    return result
