"""Finite-difference gradient check on the toy simulator; prints per-array max relative error."""
import argparse

import numpy as np

from roap.attention_sim import SimParams, finite_difference_check, toy_config
from roap.checks import toy_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon", type=float, default=1e-5)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--gate-mode", choices=("sigmoid", "raw"), default="sigmoid")
    args = ap.parse_args()

    cfg = toy_config(gate_mode=args.gate_mode)
    params = SimParams.init(cfg, seed=args.seed)
    params.randomize_priors(np.random.default_rng(args.seed + 1))
    batch = toy_batch(cfg, lengths=(12, 9), seed=args.seed + 2)
    report = finite_difference_check(batch, cfg, params, epsilon=args.epsilon)
    for name in sorted(report.max_rel_error):
        print(f"{name:20s} coords={report.coords_checked[name]:4d} max_rel_err={report.max_rel_error[name]:.3e}")
    print(f"worst {report.worst:.3e} ({'ok' if report.worst <= 1e-4 else 'FAIL'} at 1e-4)")


if __name__ == "__main__":
    main()
