#!/usr/bin/env python3
"""Render a parameter sweep as log-scale empirical-constant curves.

Accepts either sweep artifact:

* estimate sweeps with header
  ``lambda,s,lhs,rhs_interior,rhs_boundary,rhs_trace0,c_emp``
  produce one c_emp(s) line per lambda on log-log axes;
* stability sweeps with header
  ``amplitude,lhs,rhs_interior,rhs_gamma,rhs_x0,c_emp,det_margin,rel_l2_error``
  produce c_emp against amplitude with a log x-axis.

Usage: plot_sweep.py --input sweep.csv --output figure.png
"""

from __future__ import annotations

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from plot_common import SchemaError, floats, load_rows

ESTIMATE_COLUMNS = ("lambda", "s", "c_emp")
STABILITY_COLUMNS = ("amplitude", "c_emp")


def render(input_path: str, output_path: str) -> None:
    with open(input_path, newline="") as fh:
        header = next(csv.reader(fh), [])
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    if "s" in header and "lambda" in header:
        rows = load_rows(input_path, ESTIMATE_COLUMNS)
        lams = sorted({r["lambda"] for r in rows}, key=float)
        for lam in lams:
            sub = [r for r in rows if r["lambda"] == lam]
            sub.sort(key=lambda r: float(r["s"]))
            ax.loglog(floats(sub, "s"), floats(sub, "c_emp"), marker="o",
                      label=f"lambda={float(lam):g}")
        ax.set_xlabel("s")
        ax.set_ylabel("empirical constant")
        ax.legend()
    elif "amplitude" in header:
        rows = load_rows(input_path, STABILITY_COLUMNS)
        rows.sort(key=lambda r: float(r["amplitude"]))
        ax.semilogx(floats(rows, "amplitude"), floats(rows, "c_emp"), marker="o")
        ax.set_xlabel("perturbation amplitude")
        ax.set_ylabel("empirical constant")
    else:
        raise SchemaError(
            f"{input_path}: header {header} matches neither the estimate sweep "
            f"(needs {list(ESTIMATE_COLUMNS)}) nor the stability sweep "
            f"(needs {list(STABILITY_COLUMNS)})"
        )
    ax.grid(True, which="both", alpha=0.3)
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
