#!/usr/bin/env python3
"""Figures from lrdyn CSV reports (developer utility).

    python scripts/plot.py out/bcs-converge.csv out/bcs-selfconsistent.csv -o figures

Convergence-style reports (a `gap` column) give gap-versus-L plots on a log
scale; flow reports (`re_g*` columns) give scalar trajectories.
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def plot_gaps(df, ax, title):
    if "component" in df.columns:
        for who, part in df.groupby("component", sort=False):
            ax.semilogy(part["l"], part["gap"], marker="o", label=str(who))
        ax.legend()
    else:
        ax.semilogy(df["l"], df["gap"], marker="o")
    ax.set_xlabel("L")
    ax.set_ylabel("gap")
    ax.set_title(title)


def plot_flow(df, ax, title):
    for col in df.columns:
        if col.startswith("re_g"):
            slot = col[3:]
            ax.plot(df["re_" + slot], df["im_" + slot], label=slot)
    ax.set_xlabel("Re g")
    ax.set_ylabel("Im g")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend()
    ax.set_title(title)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("csv", nargs="+", type=Path)
    parser.add_argument("-o", "--out", type=Path, default=Path("figures"))
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for path in args.csv:
        df = pd.read_csv(path)
        fig, ax = plt.subplots(figsize=(5, 4))
        if "gap" in df.columns:
            plot_gaps(df, ax, path.stem)
        elif any(c.startswith("re_g") for c in df.columns):
            plot_flow(df, ax, path.stem)
        else:
            print(f"skipping {path}: no gap or flow columns")
            plt.close(fig)
            continue
        fig.tight_layout()
        target = args.out / f"{path.stem}.png"
        fig.savefig(target, dpi=150)
        plt.close(fig)
        print(f"wrote {target}")


if __name__ == "__main__":
    main()
