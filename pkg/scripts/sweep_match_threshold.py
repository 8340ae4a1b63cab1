#!/usr/bin/env python3
"""Re-score stored results under shifted match thresholds.

Pass rates are re-derived from each report's stored match score without
re-grading, so the sweep is a pure function of the result files.
"""
import argparse
import sys
from pathlib import Path

from rvbench.cli import SWEEP_THRESHOLDS, aggregate_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("results", help="directory of *.result.json files")
    ap.add_argument("--csv", default=None)
    args = ap.parse_args()

    paths = sorted(Path(args.results).glob("*.result.json"))
    agg = aggregate_report(paths, sweep=True)
    tiers = list(agg.per_tier_pass)
    print("tau    " + "  ".join(f"{t:>7}" for t in tiers))
    for tau in SWEEP_THRESHOLDS:
        print(f"{tau:.2f}   " + "  ".join(f"{agg.sweep[tau][t]:6.1f}%"
                                          for t in tiers))
    if args.csv:
        lines = ["tau," + ",".join(tiers)]
        lines += [f"{tau:.2f}," + ",".join(f"{agg.sweep[tau][t]:.3f}"
                                           for t in tiers)
                  for tau in SWEEP_THRESHOLDS]
        Path(args.csv).write_text("\n".join(lines) + "\n")
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
