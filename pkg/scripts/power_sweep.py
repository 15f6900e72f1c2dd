"""Power-budget sweep of the full design against fixed rho = 1, with plots.

Writes ``sweep.csv``, ``plot_<metric>.csv`` and PNGs into ``--out``; rows that
already exist are reused, so an interrupted sweep can be resumed.

    python3 scripts/power_sweep.py --config configs/reference.yaml --out results/reference_sweep
"""

import argparse

from iscsc import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/reference.yaml")
    ap.add_argument("--powers", default="15,20,25,30,35")
    ap.add_argument("--modes", default="full,rho1")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--out", default="results/sweep")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()

    powers = [float(p) for p in args.powers.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    harness.cmd_sweep(args.config, powers, args.modes.split(","), seeds, args.out,
                      force=args.force, workers=args.workers)
    rows = harness.read_sweep(f"{args.out}/sweep.csv")
    by = {(float(r["power_dbm"]), r["mode"]): r for r in rows.values() if r["status"] == "optimal"}
    if any(m == "rho-fixed-1" for _, m in by):
        print("\npower_dbm  full/rho1 rate ratio")
        for p in powers:
            a, b = by.get((p, "full")), by.get((p, "rho-fixed-1"))
            if a and b:
                print(f"{p:>9g}  {float(a['sum_semantic_rate']) / float(b['sum_semantic_rate']):.3f}")
    try:
        harness.cmd_plot(args.out)
    except ImportError:
        print("matplotlib not installed; skipping PNGs")


if __name__ == "__main__":
    main()
