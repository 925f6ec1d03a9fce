#!/usr/bin/env python3
"""Log-log convergence figure with fitted slopes.

Input: a refinement table with header ``h,error`` and an optional ``label``
column for several series.  Each series gets a fitted slope in the legend.

Usage: plot_convergence.py --input table.csv --output figure.png
"""

from __future__ import annotations

import argparse
import math
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from plot_common import SchemaError, floats, load_rows

COLUMNS = ("h", "error")


def _slope(hs, errs):
    n = len(hs)
    lx = [math.log(h) for h in hs]
    ly = [math.log(e) for e in errs]
    mx = sum(lx) / n
    my = sum(ly) / n
    num = sum((a - mx) * (b - my) for a, b in zip(lx, ly))
    den = sum((a - mx) ** 2 for a in lx)
    return num / den


def render(input_path: str, output_path: str) -> None:
    rows = load_rows(input_path, COLUMNS)
    series = defaultdict(list)
    for r in rows:
        series[r.get("label", "error")].append(r)
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for label, sub in sorted(series.items()):
        sub.sort(key=lambda r: float(r["h"]))
        hs = floats(sub, "h")
        errs = floats(sub, "error")
        if len(hs) < 2:
            raise SchemaError(f"{input_path}: series {label!r} needs at least two rows")
        if min(errs) <= 0 or min(hs) <= 0:
            raise SchemaError(f"{input_path}: h and error must be positive for log axes")
        ax.loglog(hs, errs, marker="o", label=f"{label} (slope {_slope(hs, errs):.2f})")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(output_path, dpi=150)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--input", required=True)
    parser.add_argument("--output", required=True)
    args = parser.parse_args(argv)
    try:
        render(args.input, args.output)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
