"""Solve one scenario in every design mode and print a comparison table.

    python3 scripts/run_scenario.py --config configs/reference.yaml --power 20
"""

import argparse
import time

from iscsc.optimizer import MODES, run_algorithm1
from iscsc.scenario import load_scenario, synthesize_channels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/fast.yaml")
    ap.add_argument("--power", type=float, default=None, help="override the power budget (dBm)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--modes", default=",".join(MODES))
    args = ap.parse_args()

    cfg = load_scenario(args.config)
    if args.power is not None:
        cfg = cfg.replace(power_budget_dbm=args.power)
    channels = synthesize_channels(cfg, args.seed)
    print(f"N={cfg.n_antennas} K={cfg.n_cu} L={cfg.n_targets} P_t={cfg.power_budget_dbm:g} dBm seed={args.seed}")
    print(f"{'mode':<18}{'status':<10}{'outer':>6}{'rate':>10}{'ssr':>10}{'rcrb':>11}{'P_comp W':>11}{'gap':>10}{'s':>7}")
    for mode in args.modes.split(","):
        t0 = time.perf_counter()
        sol, rep = run_algorithm1(cfg, channels, mode=mode, seed=args.seed)
        dt = time.perf_counter() - t0
        if sol is None:
            print(f"{mode:<18}{rep.status:<10}{rep.outer_iterations:>6}  {rep.message}")
            continue
        m = rep.metrics
        print(f"{mode:<18}{rep.status:<10}{rep.outer_iterations:>6}{m['sum_semantic_rate']:>10.3f}"
              f"{m['sum_ssr']:>10.3f}{m['sum_rcrb']:>11.3g}{m['power']['comp_w']:>11.4g}{m['sdr_gap']:>10.2g}{dt:>7.1f}")
        print(f"{'':<18}rho={[round(r, 4) for r in sol.rho]} lambda={[float(f'{x:.4g}') for x in sol.lam]}")


if __name__ == "__main__":
    main()
