"""python -m gwbridge_report <out_dir> [--format png|svg]"""

from __future__ import annotations

import argparse
import sys

from .figures import ReportError, render_report


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(prog="gwbridge_report")
    p.add_argument("out_dir", help="directory holding the experiment CSVs")
    p.add_argument("--format", default="png", choices=("png", "svg"))
    args = p.parse_args(argv)
    try:
        summary = render_report(args.out_dir, image_format=args.format)
    except ReportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, info in sorted(summary.items()):
        print(f"{name}: {info['figure']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
