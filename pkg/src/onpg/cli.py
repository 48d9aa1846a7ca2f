"""``onpg`` command line: run, sweep, check, gen-env.

Exit codes: 0 success, 1 a check suite failed, 2 config parse error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import io
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checks, kvtext
from .config import ExperimentConfig, build_env, build_function_class, build_run_config, load_config
from .driver import run
from .env import dumps_env
from .errors import ConfigurationError, NumericalError, SizeGuardError, ValidationError
from .kvtext import ParseError

log = logging.getLogger("onpg")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_PARSE, EXIT_RUNTIME = 0, 1, 2, 3
RUNTIME_ERRORS = (ConfigurationError, ValidationError, NumericalError, SizeGuardError, OSError)


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ONPG_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, jobs):
    """Ordered map, fanned out over ONPG_THREADS processes when more than one is allowed."""
    n = min(_workers(), len(jobs))
    if n <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, jobs))


def _execute(job):
    exp, overrides, seed = job
    env = build_env(exp.env)
    cfg = build_run_config(exp, env, **overrides)
    cfg = replace(cfg, seed=seed)
    fclass, log_size = (None, None)
    if cfg.ope_kind == "general":
        fclass, log_size = build_function_class(exp, env)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = run(cfg, env, function_class=fclass, log_class_size=log_size)
    return env.H, result


def _seeds(exp: ExperimentConfig, base: int | None) -> list[int]:
    start = exp.seed if base is None else base
    return [start + i for i in range(exp.num_seeds)]


def _overrides(args) -> dict:
    return {"ope": args.ope, "alpha_scale": args.alpha_scale}


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    exp = load_config(args.config)
    jobs = [(exp, _overrides(args), s) for s in _seeds(exp, args.seed)]
    results = _map(_execute, jobs)
    H = results[0][0]
    header = ["k", "t_k", "vbar1", "vpik", "subopt"] + [f"mean_bonus_h{h + 1}" for h in range(H)]
    header += ["opt_violations", "seed"]
    rows = []
    for (_, result), (_, _, seed) in zip(results, jobs):
        for r in result.records:
            rows.append([r.k, r.t_k, r.vbar1, r.vpik, r.subopt, *r.mean_bonus, r.opt_violations, seed])
        log.info("seed %d: out index %d, subopt %.6g", seed, result.out_index, result.out_subopt)
    _write(_csv(rows, header), args.out or exp.out)
    return EXIT_OK


_AXIS_KEY = {"N": "N", "K": "K", "m": "m", "alpha": "alpha_scale"}


def cmd_sweep(args) -> int:
    exp = load_config(args.config)
    if exp.sweep == "none":
        raise ParseError("sweep command needs a sweep axis", "sweep")
    jobs, values = [], []
    for value in exp.grid:
        over = _overrides(args)
        key = _AXIS_KEY[exp.sweep]
        over[key] = float(value) if key == "alpha_scale" else int(value)
        for s in _seeds(exp, args.seed):
            jobs.append((exp, over, s))
            values.append(value)
    results = _map(_execute, jobs)
    rows = []
    for value, (_, result), (_, _, seed) in zip(values, results, jobs):
        bonus = float(np.mean([np.mean(r.mean_bonus) for r in result.records]))
        rows.append([value, seed, result.records[-1].subopt, bonus, result.episodes_used])
    header = ["axis_value", "seed", "final_subopt", "mean_bonus_overall", "episodes_used"]
    _write(_csv(rows, header), args.out or exp.out)
    return EXIT_OK


def _check_settings(path) -> dict:
    data = kvtext.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    for key in data:
        if key not in ("seed", "alpha_scale"):
            raise ParseError(f"unknown key {key!r} for check (allowed: seed, alpha_scale)", key)
    return data


def cmd_check(args) -> int:
    settings = _check_settings(args.config)
    seed = int(settings.get("seed", 0)) if args.seed is None else args.seed
    scale = float(settings.get("alpha_scale", 1.0)) if args.alpha_scale is None else args.alpha_scale
    reports = checks.all_suites(seed=seed, alpha_scale=scale)
    text = "\n".join(r.line() for r in reports) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if not args.quiet or not args.out:
        sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


def cmd_gen_env(args) -> int:
    exp = load_config(args.config)
    spec = dict(exp.env)
    if args.seed is not None:
        spec["seed"] = args.seed
    _write(dumps_env(build_env(spec)), args.out or exp.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onpg", description="Optimistic natural policy gradient experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="key = value experiment file")
        p.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
        p.add_argument("--out", default=None, help="output path (default: config 'out', else stdout)")
        p.add_argument("--alpha-scale", type=float, default=None, dest="alpha_scale")
        p.add_argument("--quiet", action="store_true")
        return p

    common(sub.add_parser("run", help="run the learner, one CSV row per iteration")).add_argument(
        "--ope", choices=("tabular", "linear", "general"), default=None)
    common(sub.add_parser("sweep", help="one summary row per grid value and seed")).add_argument(
        "--ope", choices=("tabular", "linear", "general"), default=None)
    common(sub.add_parser("check", help="run the invariant suites"), needs_config=False)
    common(sub.add_parser("gen-env", help="write a generated environment file"))
    return parser


_COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "check": cmd_check, "gen-env": cmd_gen_env}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    if not hasattr(args, "ope"):
        args.ope = None
    try:
        return _COMMANDS[args.command](args)
    except ParseError as exc:
        print(f"onpg: config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except RUNTIME_ERRORS as exc:
        print(f"onpg: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
