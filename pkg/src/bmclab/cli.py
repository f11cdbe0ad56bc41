"""Command-line entry point: ``bmclab <command> --config PATH [options]``."""

from __future__ import annotations

import argparse
import sys

from ._validation import ConfigurationError, DegenerateEnvironmentError, UnsupportedExactError
from .experiments import COMMANDS
from .io import _read_raw, config_from_dict, config_hash, run_command


def build_parser():
    parser = argparse.ArgumentParser(prog="bmclab", description="Branching Markov chain simulation lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, cls in COMMANDS.items():
        p = sub.add_parser(name, help=(cls.__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        p.add_argument("--mode", choices=["aggregated", "explicit"], help="simulation mode")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = _read_raw(args.config)
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object")
        for key in ("seed", "threads", "mode"):
            if getattr(args, key) is not None:
                raw[key] = getattr(args, key)
        # threads never affects results, so it is kept out of the hash
        digest = config_hash({k: v for k, v in raw.items() if k != "threads"})
        cfg = config_from_dict(raw)
        status, manifest = run_command(args.command, cfg, args.out, digest)
    except (ConfigurationError, DegenerateEnvironmentError, UnsupportedExactError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    for name, verdict in manifest.verdicts[args.command].items():
        print(f"{verdict.upper():12s} {name}")
    print("PASS" if status == 0 else "FAIL")
    return status


if __name__ == "__main__":
    sys.exit(main())
