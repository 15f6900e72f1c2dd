"""Command-line entry point (``iscsc`` / ``python -m iscsc``).

Exit codes: 0 optimal or success, 1 failed validation check, 2 infeasible,
3 numerical limit, 4 usage error, 5 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from iscsc import harness
from iscsc.scenario import ConfigError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(harness.EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _words(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iscsc", description="Robust secure ISAC beamforming with semantic extraction ratios.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="run one scenario")
    s.add_argument("--config", required=True)
    s.add_argument("--mode", default="full", help="full, rho1 (rho-fixed-1) or conv (conventional-isac)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    w = sub.add_parser("sweep", help="sweep the power budget over modes and seeds")
    w.add_argument("--config", required=True)
    w.add_argument("--powers", type=_floats, default=[15.0, 20.0, 25.0, 30.0, 35.0])
    w.add_argument("--modes", type=_words, default=["full", "rho1"])
    w.add_argument("--seeds", type=_ints, default=[0])
    w.add_argument("--out", required=True)
    w.add_argument("--force", action="store_true", help="recompute rows already in the table")
    w.add_argument("--workers", type=int, default=1)

    v = sub.add_parser("validate", help="run the numerical cross-checks")
    v.add_argument("--seed", type=int, default=0)

    m = sub.add_parser("mse-crb", help="Monte Carlo ML angle MSE against the CRB")
    m.add_argument("--config", required=True)
    m.add_argument("--snrs", type=_floats, default=[-10.0, 0.0, 10.0, 20.0])
    m.add_argument("--trials", type=int, default=1000)
    m.add_argument("--snapshots", type=int, default=64)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)

    g = sub.add_parser("plot", help="render PNGs from a sweep directory")
    g.add_argument("--sweep", required=True)

    r = sub.add_parser("verify", help="recompute a stored run's metrics from its solution")
    r.add_argument("--run", required=True)
    return p


def _dispatch(args) -> int:
    if args.command == "solve":
        return harness.cmd_solve(args.config, args.mode, args.seed, args.out)
    if args.command == "sweep":
        return harness.cmd_sweep(args.config, args.powers, args.modes, args.seeds, args.out,
                                 force=args.force, workers=args.workers)
    if args.command == "validate":
        return harness.cmd_validate(args.seed)
    if args.command == "mse-crb":
        return harness.cmd_mse_vs_crb(args.config, args.snrs, args.trials, args.out,
                                      seed=args.seed, snapshots=args.snapshots)
    if args.command == "plot":
        return harness.cmd_plot(args.sweep)
    if args.command == "verify":
        problems = harness.verify_run(args.run)
        for line in problems:
            print(line)
        print("verified" if not problems else f"{len(problems)} mismatches")
        return harness.EXIT_OK if not problems else harness.EXIT_FAILED_CHECK
    raise harness.UsageError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (harness.UsageError, ConfigError) as exc:
        print(f"iscsc: {exc}", file=sys.stderr)
        return harness.EXIT_USAGE
    except (harness.OutputError, OSError) as exc:
        print(f"iscsc: {exc}", file=sys.stderr)
        return harness.EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
