#!/usr/bin/env python3
"""Plot recovered coefficient-perturbation profiles against ground truth.

Input: reconstruction artifact with header
``x,v,r_t,r_s,r_t_true,r_s_true``.  One panel per component; recovered
profiles drawn solid per velocity node, the planted truth dashed.

Usage: plot_reconstruction.py --input reconstruction.csv --output figure.png
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from plot_common import SchemaError, load_rows

COLUMNS = ("x", "v", "r_t", "r_s", "r_t_true", "r_s_true")


def render(input_path: str, output_path: str) -> None:
    rows = load_rows(input_path, COLUMNS)
    by_v = defaultdict(list)
    for r in rows:
        by_v[float(r["v"])].append(r)
    fig, axes = plt.subplots(1, 2, figsize=(8.2, 3.4), sharex=True)
    for ax, comp in zip(axes, ("r_t", "r_s")):
        for v, sub in sorted(by_v.items()):
            sub.sort(key=lambda r: float(r["x"]))
            xs = [float(r["x"]) for r in sub]
            ax.plot(xs, [float(r[comp]) for r in sub], lw=1.0, alpha=0.8)
            ax.plot(xs, [float(r[comp + "_true"]) for r in sub], ls="--", lw=1.0,
                    color="black", alpha=0.5)
        ax.set_xlabel("x")
        ax.set_title(comp)
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("perturbation")
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
