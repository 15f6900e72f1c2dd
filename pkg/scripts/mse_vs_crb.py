"""Monte Carlo ML angle estimation against the CRB over an SNR grid.

    python3 scripts/mse_vs_crb.py --trials 1000 --out results/mse
"""

import argparse

from iscsc import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/reference.yaml")
    ap.add_argument("--snrs", default="-10,0,10,20")
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--snapshots", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/mse")
    args = ap.parse_args()
    snrs = [float(s) for s in args.snrs.split(",")]
    harness.cmd_mse_vs_crb(args.config, snrs, args.trials, args.out, seed=args.seed, snapshots=args.snapshots)


if __name__ == "__main__":
    main()
