"""Experiment configuration files and CSV records.

Config files are flat JSON objects whose keys match the ``simulate`` flags:

    {"game": "rps", "grid": 10, "eps": 0.2, "phases": 400, "phase_len": 2000,
     "trials": 20, "seed": 7, "rho": 0.05, "e": 0.1, "eta": 0.2, "auto_delta": true}

Per-player learner overrides go in ``"players": [{"rho": ...}, ...]``.
Seeding: ``seed`` feeds a ``numpy.random.SeedSequence``; trial ``t`` uses child
``t`` of it, and inside a trial child 0 drives the environment and child
``1 + i`` drives agent ``i``.  Every stream is a Philox generator.
"""
from __future__ import annotations

import csv
import json
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ParseError, RangeError, ShapeMismatch
from .learners import LearnerParams, StepSize
from .orchestrator import ExperimentConfig, FrequencyCurve

# config key -> ExperimentConfig field
_TOP = {
    "game": "game",
    "grid": "grid_m",
    "eps": "eps",
    "phases": "num_phases",
    "phase_len": "phase_length",
    "trials": "num_trials",
    "seed": "master_seed",
    "eval_stride": "eval_stride",
    "initial_policy": "initial_policy",
    "auto_delta": "auto_delta",
    "tol": "tol",
    "track_q_error": "track_q_error",
}
# config key -> LearnerParams field
_LEARNER = {
    "rho": "rho",
    "e": "e",
    "eta": "eta",
    "delta": "delta",
    "objective": "objective",
    "step_power": "step_size",
}
_TYPES = {
    "grid": int, "phases": int, "trials": int, "seed": int, "eval_stride": int,
    "eps": float, "tol": float, "rho": float, "e": float, "eta": float, "delta": float,
    "step_power": float, "auto_delta": bool, "track_q_error": bool, "game": str,
    "objective": str,
}


def fmt(x: float) -> str:
    """17 significant digits, enough for an exact float round-trip."""
    return format(float(x), ".17g")


def _coerce(key, value):
    if value is None:
        return None
    kind = _TYPES.get(key)
    if kind is None:
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ParseError(f"field {key!r}: expected true or false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not float(value).is_integer():
            raise ParseError(f"field {key!r}: expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"field {key!r}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ParseError(f"field {key!r}: expected a string, got {value!r}")
    return value


def _learner_from(d: dict, base: LearnerParams) -> LearnerParams:
    kwargs = {}
    for key, value in d.items():
        if key not in _LEARNER:
            raise ParseError(f"unknown learner field {key!r}")
        value = _coerce(key, value)
        if key == "step_power":
            try:
                value = StepSize(value)
            except ValueError:
                raise RangeError("step_power") from None
        kwargs[_LEARNER[key]] = value
    return replace(base, **kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build and validate a config; raises ParseError or RangeError naming the field."""
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object")
    top, learner, players = {}, {}, None
    for key, value in data.items():
        if key in _TOP:
            if key == "phase_len" and isinstance(value, list):
                top["phase_length"] = [_coerce("phases", v) for v in value]
            elif key == "phase_len":
                top["phase_length"] = _coerce("phases", value)
            elif key == "initial_policy" and not isinstance(value, (str, list)):
                raise ParseError("field 'initial_policy': expected \"random\" or a list of ids")
            else:
                top[_TOP[key]] = _coerce(key, value)
        elif key in _LEARNER:
            learner[key] = value
        elif key == "players":
            if not isinstance(value, list) or not all(isinstance(p, dict) for p in value):
                raise ParseError("field 'players': expected a list of objects")
            players = value
        else:
            raise ParseError(f"unknown field {key!r}")
    if top.get("initial_policy", "random") != "random" and not isinstance(top["initial_policy"], list):
        raise ParseError("field 'initial_policy': expected \"random\" or a list of ids")
    base = _learner_from(learner, LearnerParams())
    top["learner"] = base
    if players is not None:
        top["per_player"] = [_learner_from(p, base) for p in players]
    try:
        cfg = ExperimentConfig(**top)
    except RangeError:
        raise
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc)) from None
    if cfg.learner.delta is None and not cfg.auto_delta:
        raise RangeError("delta", "delta is required unless auto_delta is set")
    if cfg.per_player is not None and any(p.delta is None for p in cfg.per_player) and not cfg.auto_delta:
        raise RangeError("delta", "delta is required unless auto_delta is set")
    return cfg


def _learner_dict(p: LearnerParams) -> dict:
    if not isinstance(p.step_size, StepSize):
        raise ConfigError("only power-law step sizes can be serialized")
    return {
        "rho": p.rho, "e": p.e, "eta": p.eta, "delta": p.delta,
        "objective": p.objective, "step_power": p.step_size.power,
    }


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {
        "game": cfg.game,
        "grid": cfg.grid_m,
        "eps": cfg.eps,
        "phases": cfg.num_phases,
        "phase_len": list(cfg.phase_length) if isinstance(cfg.phase_length, (list, tuple)) else cfg.phase_length,
        "trials": cfg.num_trials,
        "seed": cfg.master_seed,
        "eval_stride": cfg.eval_stride,
        "initial_policy": cfg.initial_policy if isinstance(cfg.initial_policy, str) else list(cfg.initial_policy),
        "auto_delta": cfg.auto_delta,
        "tol": cfg.tol,
        "track_q_error": cfg.track_q_error,
    }
    out.update(_learner_dict(cfg.learner))
    if cfg.per_player is not None:
        out["players"] = [_learner_dict(p) for p in cfg.per_player]
    if out["game"] is None:
        del out["game"]
    return out


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a JSON config; ``overrides`` (config keys, ``None`` values ignored) win over the file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if overrides:
        if not isinstance(data, dict):
            raise ParseError("config must be a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# CSV records


def satisfied_bitmask(flags) -> int:
    return sum(1 << i for i, s in enumerate(flags) if s)


def write_run_csv(results, path) -> None:
    """One row per (trial, phase): the equilibrium flag, satisfaction bitmask and policy ids."""
    results = list(results)
    n = len(results[0].final_policy) if results else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "phase", "is_eq", "satisfied_bitmask"] + [f"policy_{i}" for i in range(n)])
        for r in results:
            for lg in r.logs:
                flag = "" if lg.is_eq is None else int(lg.is_eq)
                w.writerow([r.trial, lg.phase, flag, satisfied_bitmask(lg.satisfied), *lg.policy_ids])


def read_run_csv(path) -> dict:
    """Map trial index to its list of equilibrium flags (``None`` where not evaluated)."""
    flags: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"trial", "phase", "is_eq"} <= set(reader.fieldnames):
            raise ParseError(f"{path}: missing trial/phase/is_eq columns")
        for line, row in enumerate(reader, start=2):
            try:
                t, k = int(row["trial"]), int(row["phase"])
                v = row["is_eq"]
                flag = None if v == "" else bool(int(v))
            except (TypeError, ValueError):
                raise ParseError(f"{path}: line {line}: malformed row") from None
            seq = flags.setdefault(t, [])
            if k != len(seq):
                raise ShapeMismatch(f"{path}: trial {t} phases out of order at line {line}")
            seq.append(flag)
    return dict(sorted(flags.items()))


def write_freq_csv(curve: FrequencyCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "mean", "stderr"])
        for k, m, s in zip(curve.phases, curve.mean, curve.stderr):
            w.writerow([int(k), fmt(m), fmt(s)])


def read_freq_csv(path) -> FrequencyCurve:
    rows = list(csv.DictReader(open(path, newline="")))
    return FrequencyCurve(
        np.array([int(r["phase"]) for r in rows], dtype=np.int64),
        np.array([float(r["mean"]) for r in rows]),
        np.array([float(r["stderr"]) for r in rows]),
        num_trials=-1,
    )

