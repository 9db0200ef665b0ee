"""``cnodes`` command-line entry point.

Each run writes ``<out>/<run-id>/`` containing ``manifest.json``,
``metrics.csv`` (metric, value), an optional ``checkpoint.bin`` and
task-specific CSVs.  The run id is derived from the subcommand, the seed and
a hash of the full configuration, so it is stable across reruns.
Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure.
"""

import argparse
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone

import numpy as np

import cnodes
from cnodes.cli.config import SUBCOMMANDS, RunConfig, load_config, serialize, to_dict
from cnodes.diffcore.checkpoint import description_hash, save_checkpoint
from cnodes.errors import ConfigError, ContractError, DimensionError, NumericalError, TaskError
from cnodes.solver import SolveStats

log = logging.getLogger("cnodes")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (sectioned key = value)")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--out", help="output root directory (default: out)")
    common.add_argument("--grad-mode", choices=("adjoint", "discrete"))
    common.add_argument("--solver", choices=("euler", "rk4", "dopri5"))
    common.add_argument("--rtol", type=float)
    common.add_argument("--atol", type=float)
    common.add_argument("--k", type=int, help="characteristic dimension")
    common.add_argument("--parallel", type=int, help="worker processes for replicates")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="cnodes", description="Characteristic neural ODE experiments.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "solve":
            p.add_argument("--dynamics", choices=("decay", "logistic", "oscillator"))
            p.add_argument("--t", type=float, help="final time")
    return parser


def config_from_args(args):
    if args.config:
        cfg = load_config(args.config)
        if cfg.subcommand != args.subcommand:
            raise ConfigError(f"config is for {cfg.subcommand!r}, not {args.subcommand!r}")
    else:
        cfg = RunConfig(args.subcommand)
    return cfg.with_overrides(**{
        "seed": args.seed,
        "out": args.out,
        "parallel": args.parallel,
        "train.grad_mode": args.grad_mode,
        "solver.method": args.solver,
        "solver.rtol": args.rtol,
        "solver.atol": args.atol,
        "model.k": args.k,
        "task.dynamics": getattr(args, "dynamics", None),
        "task.t": getattr(args, "t", None),
    })


class RunDir:
    """Output directory of one run; collects metrics, files and solver totals."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.run_id = f"{cfg.subcommand}-s{cfg.seed}-{cfg.digest}"
        self.path = os.path.join(cfg.out, self.run_id)
        os.makedirs(self.path, exist_ok=True)
        self.metrics = {}
        self.files = []
        self.stats = {}
        self.checkpoint = None

    def file(self, name):
        self.files.append(name)
        return os.path.join(self.path, name)

    def csv(self, name, header, rows):
        from cnodes.tasks.data import write_csv
        write_csv(self.file(name), header, rows)

    def metric(self, name, value):
        self.metrics[name] = value

    def add_stats(self, name, stats):
        if isinstance(stats, SolveStats):
            stats = stats.to_json()
        prev = self.stats.get(name, {"nfe": 0, "steps_accepted": 0, "steps_rejected": 0})
        self.stats[name] = {k: prev[k] + int(stats.get(k, 0)) for k in prev}

    def save(self, params, description):
        self.checkpoint = "checkpoint.bin"
        save_checkpoint(self.file(self.checkpoint), params, description_hash(description))

    def write_metrics(self):
        rows = [(k, v) for k, v in self.metrics.items()]
        self.csv("metrics.csv", ["metric", "value"], rows)

    def write_manifest(self, started, status, error=None, wall=0.0):
        doc = {
            "run_id": self.run_id,
            "subcommand": self.cfg.subcommand,
            "seed": self.cfg.seed,
            "config": to_dict(self.cfg),
            "config_text": serialize(self.cfg),
            "versions": {"cnodes": cnodes.__version__, "numpy": np.__version__, "python": platform.python_version()},
            "started": started,
            "finished": _now(),
            "wall_time_s": wall,
            "status": status,
            "error": error,
            "metrics": _jsonable(self.metrics),
            "solve_stats": self.stats,
            "checkpoint": self.checkpoint,
            "files": sorted(set(self.files) | {"manifest.json"}),
        }
        tmp = os.path.join(self.path, "manifest.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, os.path.join(self.path, "manifest.json"))


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        rd = RunDir(cfg)
    except (ConfigError, DimensionError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return 1
    from cnodes.cli import commands

    started, t0 = _now(), time.perf_counter()
    try:
        code = commands.COMMANDS[cfg.subcommand](cfg, rd)
    except (ConfigError, DimensionError, ContractError) as exc:
        rd.write_manifest(started, "config-error", str(exc), time.perf_counter() - t0)
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, TaskError, FloatingPointError) as exc:
        rd.write_metrics()
        rd.write_manifest(started, "numerical-failure", str(exc), time.perf_counter() - t0)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    rd.write_metrics()
    rd.write_manifest(started, "ok" if code == 0 else "failed", None, time.perf_counter() - t0)
    print(f"run directory: {rd.path}", file=sys.stderr)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
