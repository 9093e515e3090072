"""``xokde-bench`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import DatasetError, ExperimentConfig, emit_report, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="xokde-bench",
        description="Online KDE classification benchmark over shuffled train/test splits.",
    )
    p.add_argument("--dataset", required=True, help="delimiter-separated data file, or synthetic:N,D,C[,CONST]")
    p.add_argument("--covariance", choices=("full", "diag"), default="full")
    p.add_argument("--shuffles", type=int, default=12)
    p.add_argument("--train-frac", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dth", type=float, default=0.02, help="compression error threshold")
    p.add_argument("--forgetting", type=float, default=1.0)
    p.add_argument("--trigger-floor", type=int, default=10)
    p.add_argument("--growth-factor", type=float, default=1.5)
    p.add_argument("--label-col", default="last", help="last, first or a column index")
    p.add_argument("--skip-header", action="store_true")
    p.add_argument("--delimiter", default=",", help="field delimiter; 'ws' for whitespace")
    p.add_argument("--output", choices=("json", "csv"), default="json")
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")
    p.add_argument("--no-timing", action="store_true", help="omit wall-time fields")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig(
            dataset=args.dataset,
            covariance=args.covariance,
            shuffles=args.shuffles,
            train_fraction=args.train_frac,
            seed=args.seed,
            dth=args.dth,
            forgetting=args.forgetting,
            trigger_floor=args.trigger_floor,
            growth_factor=args.growth_factor,
            label_col=args.label_col,
            skip_header=args.skip_header,
            delimiter=None if args.delimiter == "ws" else args.delimiter,
            output=args.output,
        )
        if not 0.0 < cfg.forgetting <= 1.0 or cfg.dth <= 0:
            raise ValueError("forgetting must lie in (0, 1] and dth must be positive")
        report = run_experiment(cfg)
        text = emit_report(report, cfg.output, include_timing=not args.no_timing)
        if args.out:
            args.out.write_text(text)
        else:
            sys.stdout.write(text)
    except (DatasetError, OSError, ValueError) as exc:
        print(f"xokde-bench: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
