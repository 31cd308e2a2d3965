"""Attention maps on a 2-row table with the reading-order bias off and on (amplified gate).

Writes text + PGM dumps for both runs and prints the adjacent-cell mass and map maxima.
"""
import argparse

from roap.attention_sim import dump_attention
from roap.checks import steering_runs
from roap.config import RunConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/steering")
    ap.add_argument("--strength", type=float, default=4.0)
    ap.add_argument("--gate", type=float, default=8.0, help="raw gate value")
    args = ap.parse_args()

    off, on, adjacent = steering_runs(RunConfig(), args.strength, args.gate)
    n = adjacent.shape[0]
    for tag, res in (("off", off), ("on", on)):
        for h in range(res.attention[0].shape[1]):
            d = dump_attention(res, 0, h, 0, f"{args.out}/{tag}")
            mass = res.attention[0][0, h, :n, :n][adjacent].mean()
            print(f"{tag:3s} head {h}: adjacent mass {mass:.4f}  max {d.max_value:.4f}  -> {d.image_path}")


if __name__ == "__main__":
    main()
