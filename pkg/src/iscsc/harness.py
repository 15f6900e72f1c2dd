"""Run persistence, power sweeps, Monte Carlo checks and the command implementations.

Output layout
-------------
``solve`` writes two JSON files into its output directory:

``report.json``
    ``schema`` ("iscsc-report/1"), ``digest``, ``mode``, ``seed``, ``status``,
    ``converged``, ``outer_iterations``, ``wall_time``, ``message``,
    ``config`` (scenario as a plain mapping), ``metrics``, ``solver_stats``
    and ``trace`` (one record per algorithm step).
``solution.json``
    ``schema`` ("iscsc-solution/1"), ``w_vecs`` (K x N), ``w_mats`` (K x N x N),
    ``r_mats`` (L x N x N), ``sdr_w_mats``, ``rho`` and ``lambda``. Complex
    arrays are stored as ``{"re": [...], "im": [...]}``.

``sweep`` writes ``sweep.csv`` with the header in :data:`SWEEP_HEADER`, one
run directory per row under ``runs/`` and one ``plot_<metric>.csv`` file per
metric with the power in the first column and one column per mode (mean over
the seeds that finished with status ``optimal``).
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from iscsc import sdpcore
from iscsc.optimizer import evaluate_metrics, mode_config, run_algorithm1
from iscsc.scenario import ScenarioConfig, config_from_dict, load_scenario, synthesize_channels
from iscsc.sensing import crb_theta, estimate_angle_ml, fim, simulate_echo, steering_vector

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 4
EXIT_IO = 5

STATUS_EXIT = {
    sdpcore.OPTIMAL: EXIT_OK,
    sdpcore.INFEASIBLE: EXIT_INFEASIBLE,
    sdpcore.NUMERICAL_LIMIT: EXIT_NUMERICAL,
}

SWEEP_HEADER = [
    "power_dbm", "mode", "seed", "sum_semantic_rate", "sum_ssr", "sum_rcrb",
    "p_comp_w", "p_cs_w", "iters", "status",
]
PLOT_METRICS = ("sum_semantic_rate", "sum_ssr", "sum_rcrb", "p_comp_w")

MODE_ALIASES = {
    "full": "full",
    "rho1": "rho-fixed-1",
    "rho-fixed-1": "rho-fixed-1",
    "conv": "conventional-isac",
    "conventional-isac": "conventional-isac",
}

TOL_ENV = "ISCSC_SOLVER_TOL"


class UsageError(ValueError):
    pass


class OutputError(OSError):
    pass


def canonical_mode(name: str) -> str:
    try:
        return MODE_ALIASES[name]
    except KeyError:
        raise UsageError(f"unknown mode {name!r}; use one of {sorted(MODE_ALIASES)}") from None


def apply_env(cfg: ScenarioConfig) -> ScenarioConfig:
    """Apply the solver tolerance override from the environment, if set."""
    raw = os.environ.get(TOL_ENV)
    if not raw:
        return cfg
    try:
        tol = float(raw)
    except ValueError:
        raise UsageError(f"{TOL_ENV}={raw!r} is not a number") from None
    if not tol > 0:
        raise UsageError(f"{TOL_ENV} must be positive")
    return cfg.replace(solver_tol=tol)


# ---------------------------------------------------------------------------
# JSON encoding


def _c2j(a) -> dict:
    a = np.asarray(a, dtype=complex)
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


def _j2c(d) -> np.ndarray:
    return np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _write_json(path: Path, payload) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(_jsonable(payload), indent=1))
        tmp.replace(path)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def report_payload(report, cfg: ScenarioConfig, seed: int) -> dict:
    return {
        "schema": "iscsc-report/1",
        "digest": report.digest,
        "mode": report.mode,
        "seed": seed,
        "status": report.status,
        "converged": report.converged,
        "outer_iterations": report.outer_iterations,
        "wall_time": report.wall_time,
        "message": report.message,
        "config": cfg.to_dict(),
        "metrics": report.metrics,
        "solver_stats": report.solver_stats,
        "trace": report.trace,
    }


def solution_payload(solution) -> dict:
    return {
        "schema": "iscsc-solution/1",
        "w_vecs": _c2j(solution.w_vecs),
        "w_mats": _c2j(solution.w_mats),
        "r_mats": _c2j(solution.r_mats),
        "sdr_w_mats": _c2j(solution.sdr_w_mats),
        "rho": np.asarray(solution.rho, dtype=float).tolist(),
        "lambda": np.asarray(solution.lam, dtype=float).tolist(),
    }


def save_run(out_dir, cfg: ScenarioConfig, seed: int, solution, report) -> Path:
    out = Path(out_dir)
    _write_json(out / "report.json", report_payload(report, cfg, seed))
    if solution is not None:
        _write_json(out / "solution.json", solution_payload(solution))
    return out


def load_run(run_dir) -> tuple[dict, dict | None]:
    run_dir = Path(run_dir)
    try:
        report = json.loads((run_dir / "report.json").read_text())
        sol_path = run_dir / "solution.json"
        solution = json.loads(sol_path.read_text()) if sol_path.exists() else None
    except (OSError, json.JSONDecodeError) as exc:
        raise OutputError(f"cannot read run in {run_dir}: {exc}") from exc
    return report, solution


def _compare(stored, fresh, path, tol, problems):
    if isinstance(fresh, dict):
        for key, val in fresh.items():
            if key not in stored:
                problems.append(f"{path}.{key} missing")
            else:
                _compare(stored[key], val, f"{path}.{key}", tol, problems)
    elif isinstance(fresh, list):
        if len(stored) != len(fresh):
            problems.append(f"{path} length {len(stored)} != {len(fresh)}")
            return
        for i, (a, b) in enumerate(zip(stored, fresh)):
            _compare(a, b, f"{path}[{i}]", tol, problems)
    else:
        a, b = float(stored), float(fresh)
        if abs(a - b) > tol * max(1.0, abs(b)):
            problems.append(f"{path}: stored {a!r}, recomputed {b!r}")


def verify_run(run_dir, tol: float = 1e-8) -> list[str]:
    """Recompute the stored metrics from the stored solution; returns mismatch descriptions."""
    report, solution = load_run(run_dir)
    if solution is None:
        return [] if report["status"] != sdpcore.OPTIMAL else ["optimal run without a solution file"]
    cfg = mode_config(config_from_dict(report["config"]), report["mode"])
    channels = synthesize_channels(cfg, report["seed"])
    fresh = evaluate_metrics(
        _j2c(solution["w_mats"]), _j2c(solution["r_mats"]).reshape(-1, cfg.n_antennas, cfg.n_antennas),
        np.asarray(solution["rho"]), np.asarray(solution["lambda"]), channels, cfg,
    )
    problems: list[str] = []
    _compare(report["metrics"], fresh, "metrics", tol, problems)
    return problems


# ---------------------------------------------------------------------------
# solve


def solve_config(cfg: ScenarioConfig, mode: str, seed: int):
    channels = synthesize_channels(cfg, seed)
    return run_algorithm1(cfg, channels, mode=mode, seed=seed)


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OutputError(f"{out} is not writable")
    return out


def cmd_solve(config_path, mode: str, seed: int, out_dir, log=print) -> int:
    cfg = apply_env(load_scenario(config_path))
    mode = canonical_mode(mode)
    _prepare_out(out_dir)
    solution, report = solve_config(cfg, mode, seed)
    save_run(out_dir, cfg, seed, solution, report)
    m = report.metrics
    log(f"status={report.status} converged={report.converged} outer={report.outer_iterations} "
        f"digest={report.digest} wall={report.wall_time:.1f}s")
    if m:
        log(f"sum_semantic_rate={m['sum_semantic_rate']:.6g} sum_ssr={m['sum_ssr']:.6g} "
            f"sum_rcrb={m['sum_rcrb']:.6g} p_comp={m['power']['comp_w']:.6g} W p_cs={m['power']['cs_w']:.6g} W")
    if report.message:
        log(report.message)
    return STATUS_EXIT.get(report.status, EXIT_NUMERICAL)


# ---------------------------------------------------------------------------
# sweep


def _row_key(row) -> tuple:
    return (float(row["power_dbm"]), row["mode"], int(row["seed"]))


def read_sweep(path) -> dict:
    path = Path(path)
    if not path.exists():
        return {}
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != SWEEP_HEADER:
                raise OutputError(f"{path} has an unexpected header {reader.fieldnames}")
            return {_row_key(r): r for r in reader}
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc


def write_sweep(path, rows: dict) -> None:
    path = Path(path)
    ordered = sorted(rows.values(), key=lambda r: (r["mode"], float(r["power_dbm"]), int(r["seed"])))
    tmp = path.with_suffix(".csv.tmp")
    try:
        with tmp.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_HEADER)
            writer.writeheader()
            writer.writerows(ordered)
        tmp.replace(path)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def _fmt_power(p: float) -> str:
    return f"{p:g}"


def run_dir_name(power_dbm: float, mode: str, seed: int) -> str:
    return f"{mode}_p{_fmt_power(power_dbm)}dBm_s{seed}"


def _sweep_job(cfg_dict: dict, power_dbm: float, mode: str, seed: int, run_dir: str) -> dict:
    cfg = config_from_dict(cfg_dict).replace(power_budget_dbm=power_dbm)
    row = {"power_dbm": _fmt_power(power_dbm), "mode": mode, "seed": str(seed)}
    try:
        solution, report = solve_config(cfg, mode, seed)
        save_run(run_dir, cfg, seed, solution, report)
    except Exception as exc:  # a failed row must not stop the sweep
        row.update({k: "" for k in SWEEP_HEADER if k not in row})
        row["status"] = f"error: {type(exc).__name__}"
        return row
    m = report.metrics
    if m:
        row.update({
            "sum_semantic_rate": repr(m["sum_semantic_rate"]),
            "sum_ssr": repr(m["sum_ssr"]),
            "sum_rcrb": repr(m["sum_rcrb"]),
            "p_comp_w": repr(m["power"]["comp_w"]),
            "p_cs_w": repr(m["power"]["cs_w"]),
        })
    else:
        row.update({k: "" for k in ("sum_semantic_rate", "sum_ssr", "sum_rcrb", "p_comp_w", "p_cs_w")})
    row["iters"] = str(report.outer_iterations)
    row["status"] = report.status
    return row


def write_plot_data(out_dir, rows: dict) -> list[Path]:
    """One CSV per metric: power in the first column, one mean column per mode."""
    out_dir = Path(out_dir)
    ok = [r for r in rows.values() if r["status"] == sdpcore.OPTIMAL]
    modes = sorted({r["mode"] for r in ok})
    powers = sorted({float(r["power_dbm"]) for r in ok})
    written = []
    for metric in PLOT_METRICS:
        path = out_dir / f"plot_{metric}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["power_dbm", *modes])
            for p in powers:
                line = [_fmt_power(p)]
                for mode in modes:
                    vals = [float(r[metric]) for r in ok if r["mode"] == mode and float(r["power_dbm"]) == p]
                    line.append(repr(float(np.mean(vals))) if vals else "")
                writer.writerow(line)
        written.append(path)
    return written


def cmd_sweep(config_path, powers, modes, seeds, out_dir, force: bool = False, workers: int = 1, log=print) -> int:
    if not powers:
        raise UsageError("the power list is empty")
    if not modes:
        raise UsageError("the mode list is empty")
    if not seeds:
        raise UsageError("the seed list is empty")
    if workers < 1:
        raise UsageError("--workers must be at least 1")
    modes = [canonical_mode(m) for m in modes]
    cfg = apply_env(load_scenario(config_path))
    out = _prepare_out(out_dir)
    table_path = out / "sweep.csv"
    rows = read_sweep(table_path)
    jobs = []
    for mode in modes:
        for p in powers:
            for s in seeds:
                key = (float(p), mode, int(s))
                if key in rows and not force:
                    log(f"skip {mode} {p:g} dBm seed {s} (already in table)")
                    continue
                jobs.append((float(p), mode, int(s), str(out / "runs" / run_dir_name(p, mode, s))))
    cfg_dict = cfg.to_dict()

    def record(row):
        rows[_row_key(row)] = row
        write_sweep(table_path, rows)
        log(f"{row['mode']} {row['power_dbm']} dBm seed {row['seed']}: {row['status']} "
            f"rate={row['sum_semantic_rate']} rcrb={row['sum_rcrb']}")

    if workers == 1 or len(jobs) <= 1:
        for job in jobs:
            record(_sweep_job(cfg_dict, *job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_job, cfg_dict, *job) for job in jobs]
            for fut in as_completed(futures):
                record(fut.result())
    if not table_path.exists():
        write_sweep(table_path, rows)
    write_plot_data(out, rows)
    failed = [r for r in rows.values() if r["status"] != sdpcore.OPTIMAL]
    if failed:
        log(f"{len(failed)} of {len(rows)} rows did not finish optimally")
    return EXIT_OK


# ---------------------------------------------------------------------------
# validate


def cmd_validate(seed: int, denominator_shift: float = 0.0, log=print) -> int:
    from iscsc.validation import run_all

    results = run_all(seed, denominator_shift=denominator_shift)
    for r in results:
        log(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        log("failed checks: " + ", ".join(failed))
        return EXIT_FAILED_CHECK
    return EXIT_OK


# ---------------------------------------------------------------------------
# Monte Carlo ML estimation against the CRB


MSE_HEADER = ["snr_db", "trials", "mse", "crb", "ratio"]


def mse_vs_crb(cfg: ScenarioConfig, snrs_db, trials: int, seed: int = 0, snapshots: int = 64, target: int = 0) -> list[dict]:
    """Monte Carlo MSE of the ML angle estimate next to the CRB, one row per SNR.

    The transmitted snapshots are fixed per run (drawn once from ``seed``), so
    the CRB uses their sample covariance. SNR is the per-element echo SNR
    ``|beta|^2 E|a^H x|^2 / sigma^2`` with unit transmit power per antenna.
    """
    if trials < 100:
        raise UsageError("trials must be at least 100")
    if cfg.n_targets == 0:
        raise UsageError("the scenario has no targets")
    n = cfg.n_antennas
    theta = float(np.deg2rad(cfg.target_angles[target]))
    beta = complex(cfg.pathloss_roundtrip[target])
    rng = np.random.default_rng(seed)
    X = (rng.standard_normal((snapshots, n)) + 1j * rng.standard_normal((snapshots, n))) / math.sqrt(2)
    rx = X.T @ X.conj() / snapshots
    a = steering_vector(theta, n, cfg.spacing_ratio)
    echo_power = abs(beta) ** 2 * float(np.mean(np.abs(X @ a.conj()) ** 2))
    rows = []
    for i, snr_db in enumerate(snrs_db):
        noise = echo_power / 10 ** (snr_db / 10)
        crb = crb_theta(fim(theta, beta, rx, snapshots, noise, cfg.spacing_ratio))
        err2 = np.empty(trials)
        for trial in range(trials):
            samples = [
                simulate_echo(X[t], theta, beta, noise, seed=(seed, i, trial, t), spacing_ratio=cfg.spacing_ratio)
                for t in range(snapshots)
            ]
            err2[trial] = (estimate_angle_ml(samples, spacing_ratio=cfg.spacing_ratio) - theta) ** 2
        mse = float(np.mean(err2))
        rows.append({"snr_db": float(snr_db), "trials": trials, "mse": mse, "crb": crb, "ratio": mse / crb})
    return rows


def cmd_mse_vs_crb(config_path, snrs_db, trials: int, out_dir, seed: int = 0, snapshots: int = 64, log=print) -> int:
    if not snrs_db:
        raise UsageError("the SNR list is empty")
    if trials < 100:
        raise UsageError("trials must be at least 100")
    cfg = load_scenario(config_path)
    out = _prepare_out(out_dir)
    rows = mse_vs_crb(cfg, snrs_db, trials, seed=seed, snapshots=snapshots)
    try:
        with (out / "mse_vs_crb.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=MSE_HEADER)
            writer.writeheader()
            for r in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    except OSError as exc:
        raise OutputError(f"cannot write into {out}: {exc}") from exc
    for r in rows:
        log(f"snr={r['snr_db']:g} dB mse={r['mse']:.4g} crb={r['crb']:.4g} mse/crb={r['ratio']:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plots


def cmd_plot(sweep_dir, log=print) -> int:
    """Render one PNG per ``plot_<metric>.csv`` found in a sweep directory."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sweep_dir = Path(sweep_dir)
    files = sorted(sweep_dir.glob("plot_*.csv"))
    if not files:
        raise OutputError(f"no plot_*.csv files in {sweep_dir}")
    for path in files:
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = [row for row in reader]
        x = [float(r[0]) for r in data]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for j, mode in enumerate(header[1:], start=1):
            pts = [(xi, float(r[j])) for xi, r in zip(x, data) if r[j]]
            if pts:
                ax.plot(*zip(*pts), marker="o", label=mode)
        ax.set_xlabel("power budget (dBm)")
        ax.set_ylabel(path.stem.removeprefix("plot_"))
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        png = path.with_suffix(".png")
        fig.savefig(png, dpi=120)
        plt.close(fig)
        log(f"wrote {png}")
    return EXIT_OK
