"""Command line: run a config, run a preset, or validate a config.

Exit codes: 0 success, 2 invalid config, 3 invariant violation.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backoff_queue import ProtocolViolation
from .config import ConfigError, load_config
from .presets import PRESETS, run_preset
from .scenario import EXIT_INVALID, EXIT_INVARIANT, EXIT_OK, run_scenario, write_outputs
from .workload import HarnessError


def _cmd_run(args) -> int:
    config = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        config = config.replace(**changes)
    result = run_scenario(config, protocol_trace=True if args.trace else None)
    if args.out:
        for path in write_outputs(result, Path(args.out)):
            print(path)
    else:
        sys.stdout.write(result.csv_text())
    return EXIT_OK


def _cmd_preset(args) -> int:
    kwargs = {}
    if args.seeds is not None and args.id in ("fig8_low_rate", "fig9_high_rate"):
        kwargs["seeds"] = tuple(range(1, args.seeds + 1))
    if args.jobs > 1 and args.id in ("fig8_low_rate", "fig9_high_rate"):
        kwargs["jobs"] = args.jobs
    report = run_preset(args.id, Path(args.out) if args.out else None, **kwargs)
    sys.stdout.write(report.table)
    if not report.ok:
        print("walkthrough traces differ from the stored vectors", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    print(f"{args.config}: ok ({config.scheme}, seed {config.seed})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="railmac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario config")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--trace", action="store_true", help="write the protocol trace")
    run.add_argument("--out", help="output directory (default: CSV to stdout)")
    run.set_defaults(func=_cmd_run)

    preset = sub.add_parser("preset", help="run a preset experiment")
    preset.add_argument("id", choices=PRESETS)
    preset.add_argument("--out")
    preset.add_argument("--seeds", type=int, help="number of seeds (default 10)")
    preset.add_argument("--jobs", type=int, default=1, help="worker processes")
    preset.set_defaults(func=_cmd_preset)

    validate = sub.add_parser("validate", help="check a config without running it")
    validate.add_argument("config")
    validate.set_defaults(func=_cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_INVALID
    except ProtocolViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        if exc.snapshot:
            print(f"snapshot: {exc.snapshot}", file=sys.stderr)
        return EXIT_INVARIANT
    except HarnessError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
