"""Command-line entry point: ``arratia-lab --experiment NAME [options]``."""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, ExperimentConfig, load_config, tomllib
from .errors import ConfigurationError
from .parallel import WORKERS_ENV
from .runner import EXIT_CONFIG, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="arratia-lab",
        description="Monte Carlo experiments for coalescing Brownian flows with drift.",
        epilog=f"Worker threads default to ${WORKERS_ENV} (or 1). Exit codes: 0 all checks pass, "
               "1 a check failed, 2 invalid configuration, 3 empty bins (partial outputs written).")
    p.add_argument("--config", help="flat TOML configuration file")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--steps", type=int, help="time steps m")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker threads")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key (TOML value syntax), repeatable")
    return p


def _parse_set(items) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        out[key.strip()] = value
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), **_parse_set(args.set)})
        cfg = cfg.with_overrides(experiment=args.experiment, seed=args.seed, replicas=args.replicas,
                                 m=args.steps, out=args.out)
        cfg.validate()
        code, files = run(cfg, workers=args.workers)
    except ConfigurationError as exc:
        print(f"arratia-lab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for f in files:
        print(f)
    print({0: "PASS", 1: "FAIL", 3: "EMPTY-BIN"}[code], cfg.experiment)
    return code


if __name__ == "__main__":
    sys.exit(main())
