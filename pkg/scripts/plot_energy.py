"""Plot total energy V(t) from run directories or a sweep.csv (needs matplotlib)."""

import argparse
import csv
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np


def load(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def series(path: Path):
    if path.is_dir():
        path = path / ("sweep.csv" if (path / "sweep.csv").exists() else "energy.csv")
    header, data = load(path)
    if path.name == "sweep.csv":
        return [(name, data[:, 0], data[:, i]) for i, name in enumerate(header) if i > 0]
    return [(path.parent.name, data[:, 0], data[:, header.index("V")])]


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("paths", nargs="+", type=Path)
    ap.add_argument("--log", action="store_true", help="logarithmic energy axis")
    ap.add_argument("--save", type=Path, help="write the figure instead of showing it")
    args = ap.parse_args()
    fig, ax = plt.subplots(figsize=(6, 4))
    for p in args.paths:
        for label, t, v in series(p):
            ax.plot(t, v, label=label)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("V")
    if args.log:
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    if args.save:
        fig.savefig(args.save, dpi=150)
    else:
        plt.show()
