"""Figure rendering CLI: curves from metrics CSVs, length histograms from snapshots."""
from __future__ import annotations

import argparse
import sys

from .curves import CurveSpec, plot_curves
from .lengths import plot_length_hist
from .schema import SchemaError


def cmd_curves(args) -> int:
    spec = CurveSpec(
        csv_paths=tuple(args.csv),
        y_columns=tuple(args.y),
        x_column=args.x,
        labels=tuple(args.label) if args.label else (),
        smoothing_window=args.smooth,
        band=args.band,
        output_path=args.out,
    )
    path = plot_curves(spec)
    print(f"wrote {path}")
    return 0


def cmd_lengths(args) -> int:
    snapshots = {}
    for entry in args.snapshot:
        if "=" not in entry:
            raise ValueError(f"snapshot {entry!r} must look like STEP=path")
        step, path = entry.split("=", 1)
        snapshots[int(step)] = path
    checkpoints = (
        tuple(int(c) for c in args.checkpoints.split(","))
        if args.checkpoints else tuple(sorted(snapshots))
    )
    path = plot_length_hist(snapshots, checkpoints, args.out, args.max_length)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoflow-plot", description="Render figures from training artifacts."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_curves = sub.add_parser("curves", help="metric curves with seed bands")
    p_curves.add_argument("--csv", action="append", required=True,
                          help="metrics.csv path, repeatable")
    p_curves.add_argument("--y", action="append", required=True,
                          help="y column, repeatable (one panel each)")
    p_curves.add_argument("--x", default="step", help="step or reward_calls")
    p_curves.add_argument("--label", action="append",
                          help="group label per --csv; same label = seed band")
    p_curves.add_argument("--smooth", type=int, default=1, help="rolling-mean window")
    p_curves.add_argument("--band", default="minmax", choices=("minmax", "std"))
    p_curves.add_argument("--out", default="curves.png")
    p_curves.set_defaults(fn=cmd_curves)

    p_len = sub.add_parser("lengths", help="trajectory-length histograms")
    p_len.add_argument("--snapshot", action="append", required=True,
                       metavar="STEP=PATH", help="snapshot file per checkpoint")
    p_len.add_argument("--checkpoints", default=None, help="comma-separated steps")
    p_len.add_argument("--max-length", type=int, default=None)
    p_len.add_argument("--out", default="lengths.png")
    p_len.set_defaults(fn=cmd_lengths)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
