"""``bench`` command line entry point."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bench import BmcConfig, RunConfig, emit, run, summarize
from .estimators import VsConfig
from .samplers import AnnealingSchedule

log = logging.getLogger("varsampling")

# config-file and flag spellings of RunConfig fields
_ALIASES = {
    "factors": "sample_factors",
    "reps": "replications",
    "seed": "base_seed",
    "out": "output_path",
}
_SECTIONS = {"anneal": AnnealingSchedule, "vs": VsConfig, "bmc": BmcConfig}


class ConfigError(ValueError):
    pass


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _str_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def load_config(path) -> dict:
    """Read a TOML config into flat RunConfig keyword arguments."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return _normalize(raw, str(path))


def _normalize(raw: dict, where: str) -> dict:
    fields = {f.name for f in dataclasses.fields(RunConfig)} - set(_SECTIONS)
    out = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: '{key}' must be a table of settings")
            allowed = {f.name for f in dataclasses.fields(_SECTIONS[key])}
            unknown = set(value) - allowed
            if unknown:
                raise ConfigError(f"{where}: unknown {key}.* keys {sorted(unknown)}; allowed {sorted(allowed)}")
            out[key] = dict(value)
            continue
        if key == "paper":
            out["paper"] = bool(value)
            continue
        name = _ALIASES.get(key, key)
        if name not in fields:
            raise ConfigError(f"{where}: unknown key '{key}'")
        out[name] = value
    return out


def resolve_config(file_settings: dict, flag_settings: dict, paper: bool = False) -> RunConfig:
    """Defaults (desk or full-scale), then config file, then flags."""
    paper = paper or file_settings.get("paper", False)
    base = RunConfig.paper() if paper else RunConfig()
    merged = {}
    for source in (file_settings, flag_settings):
        for key, value in source.items():
            if key == "paper":
                continue
            if key in _SECTIONS:
                merged.setdefault(key, {}).update(value)
            else:
                merged[key] = value
    for key in _SECTIONS:
        if key in merged:
            merged[key] = dataclasses.replace(getattr(base, key), **merged[key])
    try:
        return dataclasses.replace(base, **merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="IS / VS / BMC moment-estimation benchmark")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a benchmark sweep and write CSV/JSON output")
    p.add_argument("--config", help="TOML file with run settings")
    p.add_argument("--dims", type=_int_list)
    p.add_argument("--betas", type=_float_list)
    p.add_argument("--factors", type=_int_list, help="sample-size multiples k, N = k n")
    p.add_argument("--reps", type=int)
    p.add_argument("--strategies", type=_str_list)
    p.add_argument("--methods", type=_str_list)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--no-timing", action="store_true",
                   help="record zero times so output is byte-reproducible")
    p.add_argument("--paper", action="store_true",
                   help="full-scale settings: d in {1, 10}, 100 replications, 1000 annealing steps")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override an anneal.*, vs.* or bmc.* setting, e.g. --set anneal.steps=1000")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _flag_settings(args) -> dict:
    values = {
        "dims": args.dims, "betas": args.betas, "factors": args.factors, "reps": args.reps,
        "strategies": args.strategies, "methods": args.methods, "seed": args.seed,
        "out": args.out, "workers": args.workers,
    }
    raw = {k: v for k, v in values.items() if v is not None}
    if args.no_timing:
        raw["record_timing"] = False
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not (sep and dot):
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        raw.setdefault(section, {})[name] = _parse_value(value.strip())
    return _normalize(raw, "command line")


def _print_summary(rows, stream):
    stream.write(f"{'method':6} {'d':>3} {'beta':>5} {'N':>6} {'strategy':9} "
                 f"{'median eps':>11} {'improper':>8} {'fit/IS':>7} {'total/IS':>8}\n")
    for r in rows:
        eps = "inf" if math.isinf(r.median_epsilon) else f"{r.median_epsilon:.3e}"
        stream.write(f"{r.method:6} {r.d:3d} {r.beta:5g} {r.N:6d} {r.strategy:9} {eps:>11} "
                     f"{r.improper_fraction:8.2f} {r.fit_time_ratio:7.2f} {r.total_time_ratio:8.2f}\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_settings = load_config(args.config) if args.config else {}
        cfg = resolve_config(file_settings, _flag_settings(args), paper=args.paper)
    except ConfigError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    records = run(cfg)
    rows = summarize(records)
    try:
        paths = emit(records, rows, cfg.output_path, cfg, format=args.format)
    except OSError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 1
    _print_summary(rows, sys.stdout)
    for path in paths:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
