"""Command-line runner: ``lpsquare run <experiment>``, ``list`` and ``describe``.

Settings come from an optional flat ``key = value`` file (``--config``) and
from flags; flags win. Exit status is 0 when every verdict passes or is
informational, 1 when any verdict fails and 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from fractions import Fraction

from .experiments import EXPERIMENTS, FORMATS, GRID_KEYS, ConfigError, ExperimentConfig, emit, resolve, run

_INT_GRID_KEYS = ("n", "nx", "nt")
_FILE_KEYS = ("experiment", "grid", "seed", "p", "N", "operator", "weight", "count", "workers",
              "out", "format")


def _number(text: str, what: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"bad {what} value {text!r}") from None


def parse_grid(text: str) -> tuple:
    """``nx=256,nt=64,l=16,tmin=1e-3,tmax=4`` to ``((key, value), ...)``."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in GRID_KEYS:
            raise ConfigError(f"bad grid entry {part!r}; keys are {', '.join(GRID_KEYS)}")
        num = _number(value, f"grid {key}")
        if key in _INT_GRID_KEYS:
            if num != int(num):
                raise ConfigError(f"grid {key} must be an integer, got {value.strip()!r}")
            num = int(num)
        out.append((key, num))
    return tuple(out)


def parse_numbers(text: str, what: str) -> tuple:
    vals = tuple(_number(v, what) for v in text.split(",") if v.strip())
    if not vals:
        raise ConfigError(f"empty {what} list")
    return vals


def parse_names(text: str) -> tuple:
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    if not names:
        raise ConfigError("empty name list")
    return names


def _int(text, what: str) -> int:
    try:
        return int(str(text).strip())
    except ValueError:
        raise ConfigError(f"{what} must be an integer, got {text!r}") from None


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; a leading section header is optional."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        if not text.lstrip().startswith("["):
            text = "[run]\n" + text
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config file {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key not in _FILE_KEYS:
                raise ConfigError(f"unknown config key {key!r} in {path}")
            values[key] = value
    return values


def build_config(args) -> ExperimentConfig:
    raw = read_config_file(args.config) if args.config else {}
    for key in _FILE_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            raw[key] = flag
    name = raw.get("experiment")
    if not name:
        raise ConfigError("no experiment given")
    fields = {"name": name}
    if "grid" in raw:
        fields["grid"] = parse_grid(raw["grid"])
    if "seed" in raw:
        fields["seed"] = _int(raw["seed"], "seed")
    if "count" in raw:
        fields["count"] = _int(raw["count"], "count")
    if "workers" in raw:
        fields["workers"] = _int(raw["workers"], "workers")
    if "p" in raw:
        fields["p"] = parse_numbers(raw["p"], "p")
    if "N" in raw:
        fields["N"] = parse_numbers(raw["N"], "N")
    if "operator" in raw:
        fields["operator"] = parse_names(raw["operator"])
    if "weight" in raw:
        fields["weight"] = parse_names(raw["weight"])
    if "out" in raw:
        fields["out"] = raw["out"]
    if "format" in raw:
        fields["format"] = raw["format"].strip()
    return ExperimentConfig(**fields)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpsquare",
                                 description="Square-function experiments on a discretized half-space.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment and emit its report")
    r.add_argument("experiment", nargs="?", help="experiment name (or 'experiment' in --config)")
    r.add_argument("--config", help="flat key = value file; flags override it")
    r.add_argument("--grid", help="e.g. nx=256,nt=64,l=16,tmin=1e-3,tmax=4,n=1")
    r.add_argument("--seed")
    r.add_argument("--p", help="comma-separated exponents, fractions allowed")
    r.add_argument("--N", help="comma-separated scale parameters")
    r.add_argument("--operator", help="comma-separated operator presets")
    r.add_argument("--weight", help="comma-separated weight presets")
    r.add_argument("--count", help="corpus size")
    r.add_argument("--workers", help="worker threads (results do not depend on it)")
    r.add_argument("--out", help="output path; stdout when omitted")
    r.add_argument("--format", choices=FORMATS)
    r.add_argument("--timings", action="store_true", help="print stage timings to stderr")
    r.add_argument("--quiet", action="store_true", help="no verdict summary on stderr")
    sub.add_parser("list", help="list experiments")
    d = sub.add_parser("describe", help="show an experiment's defaults")
    d.add_argument("experiment")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for exp in EXPERIMENTS.values():
            print(f"{exp.name:20s} {exp.summary}")
        return 0
    if args.command == "describe":
        try:
            defaults = resolve(ExperimentConfig(args.experiment))
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(EXPERIMENTS[args.experiment].summary)
        print(json.dumps(defaults, indent=1))
        return 0
    try:
        cfg = build_config(args)
        report = run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    data = emit(report, cfg.format)
    if cfg.out:
        try:
            with open(cfg.out, "wb") as fh:
                fh.write(data)
        except OSError as exc:
            print(f"error: cannot write {cfg.out}: {exc}", file=sys.stderr)
            return 2
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    if not args.quiet:
        for v in report.verdicts:
            print(f"{v.status:4s}  {v.name}: {v.value!r} {v.relation} {v.threshold!r}", file=sys.stderr)
    if args.timings:
        for stage, seconds in report.timings.items():
            print(f"time  {stage}: {seconds:.3f} s", file=sys.stderr)
    return report.exit_code
