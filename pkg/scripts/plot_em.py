"""Plot E(m) curves from an em.csv written by `pmc-variance simulate-em`."""

import argparse
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.experiments import read_em_csv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csv", help="em.csv or em_combined.csv")
    parser.add_argument("--out", default="em.png")
    parser.add_argument("--title", default="E(m)")
    args = parser.parse_args()

    records = read_em_csv(args.csv)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for chain_id in sorted({r.chain_id for r in records}):
        chain = [r for r in records if r.chain_id == chain_id]
        ax.plot([r.m for r in chain], [r.e_m for r in chain], label=f"chain {chain_id}")
    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("m")
    ax.set_ylabel("E(m)")
    ax.set_title(args.title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"Saved {args.out}")


if __name__ == "__main__":
    main()
