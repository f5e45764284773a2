"""Experiment configuration: YAML parsing, validation and serialization."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import (
    HJMR,
    TILT_FAMILIES,
    FiniteSupport,
    HaarUniform,
    Party,
    SignedHJMR,
    TiltedHaar,
)
from .errors import ConfigInvalid, InvalidDistribution

INIT_KINDS = ("haar_random", "explicit", "polarized", "equal_support_random")


@dataclass(eq=False)
class ExperimentConfig:
    name: str
    model: object
    distribution: object
    n: int
    d: int
    init: dict
    steps: int
    replicas: int = 1
    master_seed: int = 0
    epsilon_grid: list = field(default_factory=lambda: [0.01])
    record_every: int | None = None
    outputs: str = "out"
    tail_fraction: float = 0.2
    track_phi: bool = False
    record_times: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "model": model_to_dict(self.model),
            "distribution": distribution_to_dict(self.distribution),
            "n": self.n,
            "d": self.d,
            "init": _plain(self.init),
            "steps": self.steps,
            "replicas": self.replicas,
            "master_seed": self.master_seed,
            "epsilon_grid": [float(e) for e in self.epsilon_grid],
            "record_every": self.record_every,
            "outputs": str(self.outputs),
            "tail_fraction": float(self.tail_fraction),
            "track_phi": bool(self.track_phi),
            "record_times": [int(t) for t in self.record_times],
        }

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.to_dict() == other.to_dict()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def model_to_dict(model) -> dict:
    if isinstance(model, HJMR):
        return {"type": "hjmr", "eta": float(model.eta)}
    if isinstance(model, SignedHJMR):
        return {"type": "signed_hjmr", "eta": float(model.eta)}
    if isinstance(model, Party):
        return {"type": "party", "influence": model.influence.tolist()}
    raise TypeError(f"unsupported model {model!r}")


def distribution_to_dict(dist) -> dict:
    if isinstance(dist, HaarUniform):
        return {"type": "haar"}
    if isinstance(dist, FiniteSupport):
        return {"type": "finite", "atoms": dist.atoms.tolist(), "probs": dist.probs.tolist()}
    if isinstance(dist, TiltedHaar):
        if dist.kind not in TILT_FAMILIES:
            raise TypeError("only named tilt families can be serialized")
        return {"type": "tilted", "family": dist.kind, **_plain(dist.params)}
    raise TypeError(f"unsupported distribution {dist!r}")


def _require(raw, key, kind, where=""):
    name = f"{where}{key}"
    if key not in raw:
        raise ConfigInvalid(name, "missing required field")
    value = raw[key]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(name, f"expected an integer, got {value!r}")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigInvalid(name, f"expected a finite number, got {value!r}")
        value = float(value)
    elif kind is str and not isinstance(value, str):
        raise ConfigInvalid(name, f"expected a string, got {value!r}")
    return value


def _matrix(value, name):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigInvalid(name, "expected a numeric matrix") from None
    if arr.ndim != 2:
        raise ConfigInvalid(name, f"expected a 2-d list, got shape {arr.shape}")
    return arr


def model_from_dict(raw, n: int):
    if not isinstance(raw, dict):
        raise ConfigInvalid("model", "expected a mapping with a 'type' key")
    kind = _require(raw, "type", str, "model.")
    if kind in ("hjmr", "signed_hjmr"):
        eta = _require(raw, "eta", float, "model.")
        if not eta > 0:
            raise ConfigInvalid("model.eta", f"must be > 0, got {eta}")
        return HJMR(eta) if kind == "hjmr" else SignedHJMR(eta)
    if kind == "party":
        H = _matrix(_require(raw, "influence", None, "model."), "model.influence")
        if H.shape != (n, n):
            raise ConfigInvalid("model.influence", f"expected a {n}x{n} matrix, got {H.shape}")
        if np.any(H < 0) or not np.all(np.isfinite(H)):
            raise ConfigInvalid("model.influence", "entries must be finite and >= 0")
        return Party(H)
    raise ConfigInvalid("model.type", f"unknown model {kind!r}; expected hjmr, signed_hjmr or party")


def distribution_from_dict(raw, d: int):
    if not isinstance(raw, dict):
        raise ConfigInvalid("distribution", "expected a mapping with a 'type' key")
    kind = _require(raw, "type", str, "distribution.")
    try:
        if kind == "haar":
            return HaarUniform(d)
        if kind == "orthonormal":
            return FiniteSupport.orthonormal(d)
        if kind == "finite":
            atoms = _matrix(_require(raw, "atoms", None, "distribution."), "distribution.atoms")
            if atoms.shape[1] != d:
                raise ConfigInvalid("distribution.atoms", f"atoms must have length d={d}")
            return FiniteSupport(atoms, _require(raw, "probs", None, "distribution."))
        if kind == "tilted":
            family = _require(raw, "family", str, "distribution.")
            if family not in TILT_FAMILIES:
                raise ConfigInvalid("distribution.family", f"unknown family {family!r}; expected one of {sorted(TILT_FAMILIES)}")
            axis = _require(raw, "axis", None, "distribution.")
            amplitude = _require(raw, "amplitude", float, "distribution.")
            return TILT_FAMILIES[family](d, axis, amplitude)
    except ConfigInvalid:
        raise
    except (InvalidDistribution, ValueError) as exc:
        raise ConfigInvalid("distribution", str(exc)) from None
    raise ConfigInvalid("distribution.type", f"unknown distribution {kind!r}; expected haar, orthonormal, finite or tilted")


def _init_from_dict(raw, n, d):
    if isinstance(raw, str):
        raw = {"type": raw}
    if not isinstance(raw, dict):
        raise ConfigInvalid("init", "expected a mapping with a 'type' key")
    kind = _require(raw, "type", str, "init.")
    if kind not in INIT_KINDS:
        raise ConfigInvalid("init.type", f"unknown init {kind!r}; expected one of {list(INIT_KINDS)}")
    out = {"type": kind}
    if kind == "explicit":
        V = _matrix(_require(raw, "vectors", None, "init."), "init.vectors")
        if V.shape != (n, d):
            raise ConfigInvalid("init.vectors", f"expected {n} vectors of length {d}, got shape {V.shape}")
        if np.any(np.linalg.norm(V, axis=1) < 1e-12):
            raise ConfigInvalid("init.vectors", "zero vector cannot be normalized")
        out["vectors"] = V.tolist()
    return out


def config_from_dict(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigInvalid("<root>", "config must be a mapping")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigInvalid(extra[0], "unknown field")
    name = _require(raw, "name", str)
    n = _require(raw, "n", int)
    d = _require(raw, "d", int)
    if n < 1:
        raise ConfigInvalid("n", "must be >= 1")
    if d < 2:
        raise ConfigInvalid("d", "must be >= 2")
    steps = _require(raw, "steps", int)
    if steps < 0:
        raise ConfigInvalid("steps", "must be >= 0")
    replicas = raw.get("replicas", 1)
    if isinstance(replicas, bool) or not isinstance(replicas, int) or replicas < 1:
        raise ConfigInvalid("replicas", f"must be an integer >= 1, got {replicas!r}")
    seed = raw.get("master_seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigInvalid("master_seed", "must be an unsigned 64-bit integer")
    eps = raw.get("epsilon_grid", [0.01])
    if not isinstance(eps, list) or not eps or not all(
            isinstance(e, (int, float)) and not isinstance(e, bool) and e > 0 for e in eps):
        raise ConfigInvalid("epsilon_grid", "must be a non-empty list of positive numbers")
    every = raw.get("record_every")
    if every is not None and (isinstance(every, bool) or not isinstance(every, int) or every < 1):
        raise ConfigInvalid("record_every", "must be an integer >= 1 or null")
    tail = raw.get("tail_fraction", 0.2)
    if isinstance(tail, bool) or not isinstance(tail, (int, float)) or not 0 < tail <= 1:
        raise ConfigInvalid("tail_fraction", "must lie in (0, 1]")
    times = raw.get("record_times", [])
    if not isinstance(times, list) or not all(isinstance(t, int) and not isinstance(t, bool) and 0 <= t <= steps for t in times):
        raise ConfigInvalid("record_times", "must be a list of integers within [0, steps]")
    track_phi = raw.get("track_phi", False)
    if not isinstance(track_phi, bool):
        raise ConfigInvalid("track_phi", "must be true or false")
    outputs = raw.get("outputs", "out")
    if not isinstance(outputs, str):
        raise ConfigInvalid("outputs", "must be a path string")
    return ExperimentConfig(
        name=name,
        model=model_from_dict(_require(raw, "model", None), n),
        distribution=distribution_from_dict(_require(raw, "distribution", None), d),
        n=n,
        d=d,
        init=_init_from_dict(raw.get("init", "haar_random"), n, d),
        steps=steps,
        replicas=replicas,
        master_seed=seed,
        epsilon_grid=[float(e) for e in eps],
        record_every=every,
        outputs=outputs,
        tail_fraction=float(tail),
        track_phi=track_phi,
        record_times=sorted(set(times)),
    )


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid("<root>", f"not valid YAML: {exc}") from None
    return config_from_dict(raw)


def serialize_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
