"""Command-line entry point: ``erasure3d`` or ``python -m erasure3d.cli``."""

from __future__ import annotations

import argparse
import configparser
import json
import re
import sys
from dataclasses import fields

from ..harness import AllTrialsFailed, ExperimentSpec, Mode, _metadata, constants_report, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ALL_FAILED = 3
EXIT_BUDGET = 4

# config-file section -> key -> ExperimentSpec field
CONFIG_KEYS = {
    "network": {"n": "n_list", "lambda": "lam", "mu": "mu", "nu": "nu", "density": "density_mode"},
    "model": {"model": "model", "gamma": "gamma", "alpha": "alpha"},
    "percolation": {"c": "c", "kappa": "kappa"},
    "routing": {"w": "w", "packets_per_source": "packets_per_source", "slot_budget": "slot_budget"},
    "experiment": {
        "mode": "mode", "seed": "base_seed", "trials": "seeds_per_n", "out": "out",
        "workers": "workers", "trace": "trace", "bounds": "with_bounds",
    },
}

_FIELD_TYPES = {
    "n_list": "nlist", "lam": float, "mu": float, "nu": float, "gamma": float, "alpha": float,
    "c": float, "kappa": float, "w": float, "slot_budget": float, "packets_per_source": int,
    "base_seed": int, "seeds_per_n": int, "workers": int, "with_bounds": "bool",
}


class ConfigError(ValueError):
    pass


def parse_n_list(text: str) -> tuple[int, ...]:
    """Comma-separated sizes; ``2^a..2^b`` expands to every power of two in between."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        m = re.fullmatch(r"2\^(\d+)\s*\.\.\s*2\^(\d+)", part)
        if m:
            out.extend(2 ** e for e in range(int(m.group(1)), int(m.group(2)) + 1))
        elif re.fullmatch(r"2\^\d+", part):
            out.append(2 ** int(part[2:]))
        elif part:
            out.append(int(part))
    return tuple(out)


def _convert(name: str, raw):
    kind = _FIELD_TYPES.get(name, str)
    if raw is None or (isinstance(raw, str) and raw.lower() in ("", "none")):
        return None
    try:
        if kind == "nlist":
            return parse_n_list(raw)
        if kind == "bool":
            return str(raw).lower() in ("1", "true", "yes", "on")
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def read_config(path: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in CONFIG_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in CONFIG_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            name = CONFIG_KEYS[section][key]
            values[name] = _convert(name, raw.strip().strip('"'))
    return values


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="erasure3d", description="Capacity-scaling sweeps for 3D erasure networks.")
    p.add_argument("--config", help="key=value config file with [network], [model], ... sections")
    p.add_argument("--n", dest="n_list", help="sizes, e.g. 4096,8192 or 2^10..2^14")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--density", dest="density_mode", choices=["extended", "dense"])
    p.add_argument("--model", choices=["exponential", "polynomial"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--w", type=float)
    p.add_argument("--seed", dest="base_seed", type=int)
    p.add_argument("--trials", dest="seeds_per_n", type=int)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--out", help="output stem; writes <out>.csv and <out>.json")
    p.add_argument("--workers", type=int)
    p.add_argument("--trace", help="write per-slot events to this file")
    return p


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    values = read_config(args.config) if args.config else {}
    for f in fields(ExperimentSpec):
        raw = getattr(args, f.name, None)
        if raw is not None:
            values[f.name] = _convert(f.name, raw) if f.name == "n_list" else raw
    values = {k: v for k, v in values.items() if v is not None}
    values.setdefault("n_list", ())
    try:
        return ExperimentSpec(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        spec = build_spec(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if spec.mode is Mode.CONSTANTS:
        doc = json.dumps({**constants_report(spec), "metadata": _metadata(spec)}, indent=1)
        if spec.out:
            with open(spec.out + ".json", "w") as fh:
                fh.write(doc + "\n")
        print(doc)
        return EXIT_OK
    try:
        result = run_sweep(spec)
    except AllTrialsFailed as exc:
        print(f"all trials failed: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED
    if spec.out:
        csv_path, json_path = result.write(spec.out)
        print(f"wrote {csv_path} and {json_path}", file=sys.stderr)
    else:
        sys.stdout.write(result.to_csv())
    print(json.dumps(result.summary(), default=str), file=sys.stderr)
    if result.any_incomplete:
        print("slot budget exhausted in at least one trial", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK
