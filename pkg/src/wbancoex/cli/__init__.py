"""Command-line experiment runner: ``wbancoex {synth,run,stats,report}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import ConfigError, WbanError
from .commands import COMMANDS
from .config import RunConfig, load_config

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wbancoex",
                                description="Co-located WBAN relaying experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--seed", type=int, default=None, help="override [run] seed")
    p.add_argument("--out", required=True, help="output root directory")
    p.add_argument("--workers", type=int, default=None, help="parallel analysis sets")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg: RunConfig = load_config(args.config, seed=args.seed, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        d = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WbanError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"{args.command}: wrote {d}")
    return EXIT_OK


__all__ = ["main", "build_parser", "load_config", "EXIT_OK", "EXIT_CONFIG", "EXIT_DATA"]
