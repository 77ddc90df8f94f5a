"""Command-line runner: ``adaptmeas run | verify | calibrate``.

Configs are JSON files of the form::

    {"experiment": "feedback", "seed": 7, "parameters": {...}, "output": "out/feedback"}

Every key is optional except ``experiment`` (for ``run``); unknown keys are
rejected. Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from .errors import CalibrationError, ConfigError
from .experiments import RUNNERS, resolve_parameters

THREADS_ENV = "ADAPTMEAS_THREADS"
TOP_KEYS = {"experiment", "seed", "parameters", "output"}
VERIFY_DEFAULTS = {"trials": 100_000, "theta2_offset_deg": 0.0}


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON ({exc.msg}, line {exc.lineno})", "config") from None
    except OSError as exc:
        raise ConfigError(str(exc), "config") from None
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be an object", "config")
    for key in cfg:
        if key not in TOP_KEYS:
            raise ConfigError("unknown key", key)
    if "parameters" in cfg and not isinstance(cfg["parameters"], dict):
        raise ConfigError("must be an object", "parameters")
    return cfg


def _seed(cfg: dict, override: int | None) -> int:
    seed = cfg.get("seed", 0) if override is None else override
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("must be an integer in [0, 2**64)", "seed")
    return seed


def _threads(value: int | None) -> int:
    if value is None:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"not an integer: {raw!r}", THREADS_ENV) from None
    if value < 1:
        raise ConfigError("must be >= 1", "threads")
    return value


def _merge_known(defaults: dict, params: dict, prefix: str = "parameters") -> dict:
    merged = dict(defaults)
    for key, value in params.items():
        if key not in merged:
            raise ConfigError("unknown parameter", f"{prefix}.{key}")
        merged[key] = value
    return merged


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    experiment = args.experiment or cfg.get("experiment")
    if experiment is None:
        raise ConfigError("missing", "experiment")
    seed = _seed(cfg, args.seed)
    threads = _threads(args.threads)
    params = resolve_parameters(experiment, cfg.get("parameters"), args.trials_override)
    out = Path(args.out or cfg.get("output") or f"results/{experiment}")
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    files = RUNNERS[experiment](params, seed, out, threads)
    manifest = {
        "experiment": experiment,
        "seed": seed,
        "version": __version__,
        "config": {"experiment": experiment, "seed": seed, "parameters": params},
        "files": [f.name for f in files],
        "wall_clock_s": round(time.perf_counter() - start, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"{experiment}: wrote {len(files)} file(s) to {out}")
    return 0


def cmd_verify(args) -> int:
    from .acceptance import run_all

    cfg = load_config(args.config)
    seed = _seed(cfg, args.seed)
    params = _merge_known(VERIFY_DEFAULTS, cfg.get("parameters", {}))
    if args.trials_override is not None:
        params["trials"] = args.trials_override
    trials = params["trials"]
    if isinstance(trials, bool) or not isinstance(trials, int) or trials < 1:
        raise ConfigError("must be a positive integer", "parameters.trials")
    offset = math.radians(float(params["theta2_offset_deg"]))
    threads = _threads(args.threads)
    if threads > 1:
        with ProcessPoolExecutor(threads) as ex:
            results = run_all(trials, seed, offset, ex)
    else:
        results = run_all(trials, seed, offset)
    for c in results:
        print(c.line())
    failed = [c.number for c in results if not c.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report = [{"number": c.number, "name": c.name, "passed": bool(c.passed), "measured": str(c.measured),
                   "target": str(c.target), "tolerance": str(c.tolerance), "notes": c.notes} for c in results]
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    return 1 if failed else 0


def cmd_calibrate(args) -> int:
    from .readout_sim import ReadoutTargets, calibrate_readout

    cfg = load_config(args.config)
    defaults = {f.name: f.default for f in fields(ReadoutTargets)}
    defaults.update(bin_duration=1e-6, max_bins=100)
    params = _merge_known(defaults, cfg.get("parameters", {}))
    bin_duration = params.pop("bin_duration")
    max_bins = params.pop("max_bins")
    result = calibrate_readout(ReadoutTargets(**params), bin_duration, max_bins)
    report = {
        "model": asdict(result.model),
        "achieved": result.achieved,
        "targets": result.targets,
        "residuals": result.residuals,
        "tolerances": result.tolerances,
        "version": __version__,
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptmeas", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("run", cmd_run, "run one experiment and write CSV curves plus a manifest"),
        ("verify", cmd_verify, "run the acceptance checks; nonzero exit on any failure"),
        ("calibrate", cmd_calibrate, "fit the readout model to target fidelities"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (run) or file (verify, calibrate)")
        p.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
        p.add_argument("--trials-override", type=int, help="replace the trial count")
        if name == "run":
            p.add_argument("experiment", nargs="?", help="experiment name; overrides the config")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
