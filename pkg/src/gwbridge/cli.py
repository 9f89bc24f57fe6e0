"""Command-line entry points.

    gwbridge run --config cfg.json --out dir [--seed N] [--workers K]
    gwbridge verify [--out dir] [--seed N]

``run`` executes the experiment named in the config (JSON mirroring
ExperimentConfig) and writes <experiment>.csv plus manifest.json. ``verify``
runs the oracle suite and exits nonzero if any named invariant fails.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments import (DEFAULT_CONFIGS, ExperimentConfig, run_experiment,
                          sort_records)


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gwbridge",
                                description="Random-walk bridge experiments on "
                                            "Galton-Watson trees")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment from a JSON config")
    run_p.add_argument("--config", required=True, help="path to the config JSON")
    run_p.add_argument("--out", default=None, help="output directory (overrides config)")
    run_p.add_argument("--seed", type=int, default=None, help="master seed override")
    run_p.add_argument("--workers", type=int, default=None, help="worker count override")

    ver_p = sub.add_parser("verify", help="run the oracle suite")
    ver_p.add_argument("--out", default=None, help="also write OracleSuite.csv here")
    ver_p.add_argument("--seed", type=int, default=None, help="master seed override")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        with open(args.config) as fh:
            config = ExperimentConfig.from_json(fh.read())
        if args.out is not None:
            config.out_dir = args.out
        if args.seed is not None:
            config.master_seed = args.seed
        if args.workers is not None:
            config.workers = args.workers
        path, records = run_experiment(config)
        print(f"wrote {len(records)} records to {path}")
        failed = [r.stat for r in records if r.flag == "fail"]
        if failed:
            print(f"{len(failed)} invariant(s) FAILED: {', '.join(sorted(failed))}",
                  file=sys.stderr)
            return 1
        return 0

    config = ExperimentConfig(**DEFAULT_CONFIGS["OracleSuite"])
    if args.seed is not None:
        config.master_seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
        _, records = run_experiment(config)
    else:
        from .experiments import run_oracle_suite
        records = run_oracle_suite(config)
    failed = 0
    for rec in sort_records(records):
        print(f"{rec.stat}: {rec.flag} (value={rec.value:.6g})")
        if rec.flag == "fail":
            failed += 1
    if failed:
        print(f"{failed} invariant(s) FAILED", file=sys.stderr)
        return 1
    print("all invariants pass")
    return 0


if __name__ == "__main__":
    sys.exit(main())
