"""Run configuration: one JSON file driving every command.

Sections: topology, mixture, mnist, train, integrate, eval, seeds. Any key
absent falls back to the documented default; any key not in the schema is
rejected (typos must not silently change an experiment). Commands echo the
fully resolved configuration next to their outputs.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .data import DISPLACEMENT_AMPLITUDE, DisplacementMap, MixtureSpec
from .dynamics import BLOWUP_THRESHOLD, IntegratorConfig
from .errors import ValidationError
from .learning import CD1Config, TrainConfig
from .model import Topology

DEFAULTS = {
    "topology": {
        "kind": "complete",       # complete | uncoupled | grid | explicit
        "n": 2,
        "rows": None,
        "cols": None,
        "coupling_range": None,
        "metric": "euclidean",
        "edges": None,
    },
    "mixture": {
        "weights": [0.65, 0.35],
        "means": [[-0.55, -0.20], [0.55, 0.30]],
        "covariances": [[[0.004, 0.0], [0.0, 0.004]],
                        [[0.004, 0.0], [0.0, 0.004]]],
    },
    "mnist": {
        "images": None,
        "labels": None,
        "classes": [0, 1],
        "out_side": 12,
        "binarize": True,
        "threshold": None,
        "x_lo": -DISPLACEMENT_AMPLITUDE,
        "x_hi": DISPLACEMENT_AMPLITUDE,
    },
    "train": {
        "kbt": 0.005,
        "tau": 4.0,
        "n_times": 15,
        "batch_size": 256,
        "steps_per_time": 2000,
        "learning_rate": 1e-3,
        "optimizer": "adam",
        "adam_b1": 0.9,
        "adam_b2": 0.999,
        "adam_eps": 1e-8,
        "gamma_min": 0.001,
        "alpha0": -1.0,
        "beta0": 1.0,
        "gamma0": 1.0,
        "frozen_kinds": [],
        "log_every": 100,
        "rule": "force_matching",
        "cd1": {"delta": 1e-3, "n_noise": 64, "antithetic": True},
    },
    "integrate": {
        "dt": None,               # None -> tau / 800
        "blowup": BLOWUP_THRESHOLD,
    },
    "eval": {
        "bins": 50,
        "grid_resolution": 201,
        "grid_lo": -1.5,
        "grid_hi": 1.5,
    },
    "seeds": {
        "seed": 0,
    },
}


def _merge(defaults: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise ValidationError(f"unknown config key '{path}{key}'")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(val, dict):
                raise ValidationError(f"config key '{path}{key}' must be an object")
            out[key] = _merge(defaults[key], val, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(user: dict) -> dict:
    """Fill defaults and reject unknown keys at every level."""
    if not isinstance(user, dict):
        raise ValidationError("config root must be a JSON object")
    return _merge(DEFAULTS, user, "")


def load_run_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
    return resolve_config(user)


def echo_config(cfg: dict, out_path, extra: dict | None = None) -> None:
    """Write the resolved config (+ seeds/provenance extras) as a manifest."""
    doc = {"config": cfg}
    if extra:
        doc.update(extra)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def topology_from_config(sec: dict) -> Topology:
    kind = sec["kind"]
    if kind == "complete":
        return Topology.complete(int(sec["n"]))
    if kind == "uncoupled":
        return Topology.uncoupled(int(sec["n"]))
    if kind == "grid":
        if sec["rows"] is None or sec["cols"] is None or sec["coupling_range"] is None:
            raise ValidationError("grid topology needs rows, cols, and coupling_range")
        return Topology.from_grid(int(sec["rows"]), int(sec["cols"]),
                                  float(sec["coupling_range"]), metric=sec["metric"])
    if kind == "explicit":
        if sec["edges"] is None:
            raise ValidationError("explicit topology needs an edge list")
        edges = tuple((int(a), int(b)) for a, b in sec["edges"])
        return Topology(int(sec["n"]), edges)
    raise ValidationError(f"unknown topology kind '{kind}'")


def mixture_from_config(sec: dict) -> MixtureSpec:
    return MixtureSpec(
        weights=np.asarray(sec["weights"], dtype=np.float64),
        means=np.asarray(sec["means"], dtype=np.float64),
        covariances=np.asarray(sec["covariances"], dtype=np.float64),
    )


def mapping_from_config(sec: dict) -> DisplacementMap:
    return DisplacementMap(x_lo=float(sec["x_lo"]), x_hi=float(sec["x_hi"]))


def train_config_from(sec: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        kbt=float(sec["kbt"]), tau=float(sec["tau"]), n_times=int(sec["n_times"]),
        batch_size=int(sec["batch_size"]), steps_per_time=int(sec["steps_per_time"]),
        learning_rate=float(sec["learning_rate"]), optimizer=sec["optimizer"],
        adam_b1=float(sec["adam_b1"]), adam_b2=float(sec["adam_b2"]),
        adam_eps=float(sec["adam_eps"]), gamma_min=float(sec["gamma_min"]),
        alpha0=float(sec["alpha0"]), beta0=float(sec["beta0"]), gamma0=float(sec["gamma0"]),
        seed=int(seed), frozen_kinds=tuple(sec["frozen_kinds"]),
        log_every=int(sec["log_every"]),
    )


def cd1_config_from(sec: dict) -> CD1Config:
    return CD1Config(delta=float(sec["delta"]), n_noise=int(sec["n_noise"]),
                     antithetic=bool(sec["antithetic"]))


def integrator_from_config(sec: dict, tau: float, kbt: float) -> IntegratorConfig:
    dt = sec["dt"]
    if dt is None:
        dt = tau / 800.0
    return IntegratorConfig(dt=float(dt), kbt=float(kbt), blowup=float(sec["blowup"]))
