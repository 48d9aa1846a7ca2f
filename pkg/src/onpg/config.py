"""Experiment configuration parsed from the flat key-value format.

Example::

    env.generator = random_tabular
    env.S = 4
    env.A = 3
    env.H = 3
    env.seed = 7
    K = 50
    N = 900
    m = 5
    eta = 0.02
    ope = tabular
    num_seeds = 3
    sweep = N
    grid[3] = 256 1024 4096

An environment may instead come from ``env.file = path`` or be given inline
with ``env.kind`` plus its arrays (``env.P[...]``, ``env.R[...]`` or
``env.phi``, ``env.psi``, ``env.w_star``). When ``epsilon`` is set, any of
``K``, ``N``, ``eta``, ``m`` left out are filled from the theory schedule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import kvtext
from .driver import RunConfig, complexity_measure, theorem1_params
from .env import (
    env_from_dict,
    load_env,
    make_deterministic_tabular,
    make_gap_tabular,
    make_random_linear,
    make_random_tabular,
)
from .kvtext import ParseError
from .oracle import bellman_image_class, random_distractors
from .rng import StreamRegistry

GENERATORS = ("random_tabular", "random_linear", "gap_tabular", "deterministic_tabular")
SWEEP_AXES = ("none", "N", "K", "alpha", "m")
OPE_KINDS = ("tabular", "linear", "general")

_ENV_SCALARS = {"file", "generator", "seed", "S", "A", "H", "d", "gap", "concentration",
                "reward_noise", "kind", "s1"}
_ENV_ARRAYS = {"P", "R", "phi", "psi", "w_star"}
_RUN_KEYS = {"K", "N", "m", "eta", "alpha_scale", "alpha", "lambda", "beta", "ope", "seed",
             "num_seeds", "record_invariants", "truncation", "delta", "sweep", "grid", "out",
             "epsilon", "c_K", "c_N", "c_eta", "c_m", "class.size", "class.seed"}


@dataclass
class ExperimentConfig:
    env: dict[str, Any]
    run: dict[str, Any]
    num_seeds: int = 1
    sweep: str = "none"
    grid: tuple = ()
    out: str | None = None
    class_size: int = 20
    class_seed: int = 0

    @property
    def seed(self) -> int:
        return int(self.run.get("seed", 0))


def _require(data, key, kind):
    if key not in data:
        raise ParseError(f"missing required key {key!r}", key)
    value = data[key]
    if kind is int and not (isinstance(value, (int, np.integer)) and not isinstance(value, bool)):
        raise ParseError(f"key {key!r} must be an integer, got {value!r}", key)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            raise ParseError(f"key {key!r} must be a number, got {value!r}", key)
        return float(value)
    return value


def parse_config(text: str) -> ExperimentConfig:
    data = kvtext.loads(text)
    env: dict[str, Any] = {}
    run: dict[str, Any] = {}
    for key, value in data.items():
        if key.startswith("env."):
            sub = key[4:]
            if sub not in _ENV_SCALARS | _ENV_ARRAYS:
                raise ParseError(f"unknown key {key!r}", key)
            env[sub] = value
        elif key in _RUN_KEYS:
            run[key] = value
        else:
            raise ParseError(f"unknown key {key!r}", key)
    if not env:
        raise ParseError("missing environment (env.generator, env.file or env.kind)", "env.generator")
    if "generator" in env and env["generator"] not in GENERATORS:
        raise ParseError(f"env.generator must be one of {GENERATORS}", "env.generator")

    for key in ("K", "N", "m", "num_seeds", "seed", "class.size", "class.seed"):
        if key in run:
            _require(run, key, int)
    for key in ("eta", "alpha_scale", "alpha", "lambda", "beta", "delta", "epsilon", "c_K", "c_N", "c_eta", "c_m"):
        if key in run:
            run[key] = _require(run, key, float)
    if "epsilon" not in run:
        for key in ("K", "N", "m", "eta"):
            _require(run, key, float if key == "eta" else int)
    if "ope" in run and run["ope"] not in OPE_KINDS:
        raise ParseError(f"ope must be one of {OPE_KINDS}", "ope")
    if run.get("truncation", "step") not in ("step", "horizon"):
        raise ParseError("truncation must be 'step' or 'horizon'", "truncation")
    if "record_invariants" in run and not isinstance(run["record_invariants"], bool):
        raise ParseError("record_invariants must be true or false", "record_invariants")

    num_seeds = int(run.pop("num_seeds", 1))
    if num_seeds < 1:
        raise ParseError("num_seeds must be >= 1", "num_seeds")
    sweep = str(run.pop("sweep", "none"))
    if sweep not in SWEEP_AXES:
        raise ParseError(f"sweep must be one of {SWEEP_AXES}", "sweep")
    grid_raw = run.pop("grid", None)
    if sweep != "none":
        if grid_raw is None:
            raise ParseError("sweep needs a grid", "grid")
        grid = tuple(np.atleast_1d(np.asarray(grid_raw)).tolist())
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ParseError("grid must be nonempty and strictly increasing", "grid")
    else:
        grid = ()
    out = run.pop("out", None)
    return ExperimentConfig(
        env=env, run=run, num_seeds=num_seeds, sweep=sweep, grid=grid,
        out=None if out is None else str(out),
        class_size=int(run.pop("class.size", 20)), class_seed=int(run.pop("class.seed", 0)),
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", None) from None
    return parse_config(text)


def build_env(spec: dict[str, Any]):
    if "file" in spec:
        return load_env(spec["file"])
    if "kind" in spec:
        return env_from_dict(spec)
    gen = spec["generator"]
    rng = StreamRegistry(int(spec.get("seed", 0))).stream("env", GENERATORS.index(gen))
    S, A, H = int(spec.get("S", 4)), int(spec.get("A", 3)), int(spec.get("H", 3))
    noise = spec.get("reward_noise", "deterministic")
    if gen == "random_tabular":
        return make_random_tabular(S, A, H, rng, concentration=float(spec.get("concentration", 1.0)),
                                   reward_noise=noise)
    if gen == "random_linear":
        return make_random_linear(int(spec.get("d", 4)), S, A, H, rng,
                                  concentration=float(spec.get("concentration", 1.0)), reward_noise=noise)
    if gen == "gap_tabular":
        return make_gap_tabular(S, A, H, rng, gap=float(spec.get("gap", 0.3)))
    return make_deterministic_tabular(S, A, H, rng)


def build_run_config(exp: ExperimentConfig, env, **overrides) -> RunConfig:
    run = {**exp.run, **{k: v for k, v in overrides.items() if v is not None}}
    kind = run.get("ope", "tabular")
    if "epsilon" in run and not all(k in run for k in ("K", "N", "m", "eta")):
        d = env.phi.shape[-1] if hasattr(env, "phi") else env.S * env.A
        L = complexity_measure(kind if kind != "general" else "tabular", env.H, S=env.S, A=env.A, d=d)
        sched = theorem1_params(run["epsilon"], env.H, env.A, L,
                                **{k: run[k] for k in ("c_K", "c_N", "c_eta", "c_m") if k in run})
        for key in ("K", "N", "m", "eta"):
            run.setdefault(key, getattr(sched, key))
    return RunConfig(
        K=int(run["K"]), N=int(run["N"]), m=int(run["m"]), eta=float(run["eta"]), ope_kind=kind,
        alpha_scale=float(run.get("alpha_scale", 1.0)), alpha=run.get("alpha"),
        lam=float(run.get("lambda", 1.0)), beta=run.get("beta"), seed=int(run.get("seed", 0)),
        record_invariants=bool(run.get("record_invariants", False)),
        truncation=str(run.get("truncation", "step")), delta=float(run.get("delta", 0.05)),
    )


def build_function_class(exp: ExperimentConfig, env):
    """Oracle-realizable finite class: the true Bellman image plus ``class.size`` random tables per step."""
    rng = StreamRegistry(exp.class_seed).stream("class")
    fclass = bellman_image_class(env, random_distractors(env, exp.class_size, rng))
    return fclass, env.H * math.log(exp.class_size + 1)
