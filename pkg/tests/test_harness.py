import csv
import json

import pytest

from iscsc import harness
from iscsc.cli import main
from iscsc.scenario import BleuParams, dump_scenario, fast_scenario


def tiny_config(**kw):
    base = dict(
        n_antennas=4, cu_angles=(-30.0,), bleu_params=(BleuParams(rho_lower=0.4),),
        target_angles=(40.0,), error_radius=(0.01,),
        pathloss_oneway=(0.1 + 0j,), pathloss_roundtrip=(0.1 + 0j,),
    )
    base.update(kw)
    return fast_scenario(**base)


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(dump_scenario(tiny_config()))
    return path


@pytest.fixture(scope="module")
def solved_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("solve")
    cfg_path = root / "tiny.yaml"
    cfg_path.write_text(dump_scenario(tiny_config()))
    out = root / "run"
    code = main(["solve", "--config", str(cfg_path), "--mode", "full", "--seed", "3", "--out", str(out)])
    return code, out


def test_solve_writes_report_and_solution(solved_run):
    code, out = solved_run
    assert code == harness.EXIT_OK
    report = json.loads((out / "report.json").read_text())
    solution = json.loads((out / "solution.json").read_text())
    assert report["schema"] == "iscsc-report/1" and solution["schema"] == "iscsc-solution/1"
    assert report["seed"] == 3 and report["mode"] == "full"
    assert len(report["metrics"]["cu"]) == 1 and len(report["metrics"]["targets"]) == 1
    assert report["digest"] == tiny_config().digest(3)


def test_stored_run_verifies(solved_run, capsys):
    _, out = solved_run
    assert harness.verify_run(out) == []
    assert main(["verify", "--run", str(out)]) == harness.EXIT_OK
    assert "verified" in capsys.readouterr().out


def test_tampered_run_fails_verification(solved_run, tmp_path):
    _, out = solved_run
    copy = tmp_path / "copy"
    copy.mkdir()
    for name in ("report.json", "solution.json"):
        (copy / name).write_text((out / name).read_text())
    rep = json.loads((copy / "report.json").read_text())
    rep["metrics"]["sum_semantic_rate"] *= 1.001
    (copy / "report.json").write_text(json.dumps(rep))
    problems = harness.verify_run(copy)
    assert any("sum_semantic_rate" in p for p in problems)


def test_digest_is_deterministic():
    assert tiny_config().digest(0) == tiny_config().digest(0)


def test_infeasible_solve_exit_code(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(dump_scenario(tiny_config(qos_threshold=1000.0)))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == harness.EXIT_INFEASIBLE
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["status"] == "infeasible"


def test_unwritable_output_is_io_error(tiny_yaml, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["solve", "--config", str(tiny_yaml), "--out", str(blocker / "sub")]) == harness.EXIT_IO


def test_missing_config_is_usage_error(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) in (
        harness.EXIT_USAGE, harness.EXIT_IO,
    )


def test_usage_errors(tiny_yaml, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == harness.EXIT_USAGE
    assert main(["sweep", "--config", str(tiny_yaml), "--powers", "", "--out", str(tmp_path)]) == harness.EXIT_USAGE
    assert main(["solve", "--config", str(tiny_yaml), "--mode", "turbo", "--out", str(tmp_path)]) == harness.EXIT_USAGE
    assert main(["mse-crb", "--config", str(tiny_yaml), "--trials", "99", "--out", str(tmp_path)]) == harness.EXIT_USAGE


def test_mse_trials_guard():
    with pytest.raises(harness.UsageError):
        harness.mse_vs_crb(tiny_config(), [10.0], trials=50)


def test_solver_tolerance_env(monkeypatch):
    monkeypatch.setenv(harness.TOL_ENV, "1e-6")
    assert harness.apply_env(tiny_config()).solver_tol == 1e-6
    monkeypatch.setenv(harness.TOL_ENV, "fast")
    with pytest.raises(harness.UsageError):
        harness.apply_env(tiny_config())
    monkeypatch.delenv(harness.TOL_ENV)
    assert harness.apply_env(tiny_config()) == tiny_config()


def test_mode_aliases():
    assert harness.canonical_mode("rho1") == "rho-fixed-1"
    assert harness.canonical_mode("conv") == "conventional-isac"
    with pytest.raises(harness.UsageError):
        harness.canonical_mode("x")


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return reader.fieldnames, list(reader)


def test_sweep_table_plot_data_and_idempotence(tiny_yaml, tmp_path):
    out = tmp_path / "sweep"
    logs = []
    assert harness.cmd_sweep(tiny_yaml, [15.0, 25.0], ["full"], [0], out, log=logs.append) == harness.EXIT_OK
    header, rows = _read_rows(out / "sweep.csv")
    assert header == harness.SWEEP_HEADER
    assert [r["power_dbm"] for r in rows] == ["15", "25"]
    assert all(r["status"] == "optimal" for r in rows)
    assert float(rows[1]["sum_semantic_rate"]) >= float(rows[0]["sum_semantic_rate"]) * (1 - 1e-6)
    for metric in harness.PLOT_METRICS:
        assert (out / f"plot_{metric}.csv").exists()
    for r in rows:
        run = out / "runs" / harness.run_dir_name(float(r["power_dbm"]), "full", 0)
        assert harness.verify_run(run) == []

    before = (out / "sweep.csv").read_text()
    logs.clear()
    harness.cmd_sweep(tiny_yaml, [15.0, 25.0], ["full"], [0], out, log=logs.append)
    assert (out / "sweep.csv").read_text() == before
    assert sum("skip" in line for line in logs) == 2

    assert harness.cmd_plot(out, log=logs.append) == harness.EXIT_OK
    assert (out / "plot_sum_semantic_rate.png").stat().st_size > 0


def test_sweep_records_failures_and_continues(tiny_yaml, tmp_path, monkeypatch):
    calls = []

    def fake_job(cfg_dict, power, mode, seed, run_dir):
        calls.append(power)
        if power == 20.0:
            raise_row = {k: "" for k in harness.SWEEP_HEADER}
            raise_row.update(power_dbm="20", mode=mode, seed=str(seed), status="error: SolverError")
            return raise_row
        return {"power_dbm": f"{power:g}", "mode": mode, "seed": str(seed), "sum_semantic_rate": "1.0",
                "sum_ssr": "0.5", "sum_rcrb": "0.1", "p_comp_w": "0.0", "p_cs_w": "0.05", "iters": "3",
                "status": "optimal"}

    monkeypatch.setattr(harness, "_sweep_job", fake_job)
    out = tmp_path / "s"
    harness.cmd_sweep(tiny_yaml, [15.0, 20.0, 25.0], ["rho1"], [0, 1], out, log=lambda *_: None)
    _, rows = _read_rows(out / "sweep.csv")
    assert len(rows) == 6 and len(calls) == 6
    assert sum(r["status"].startswith("error") for r in rows) == 2
    calls.clear()
    harness.cmd_sweep(tiny_yaml, [15.0, 20.0, 25.0], ["rho1"], [0, 1], out, force=True, log=lambda *_: None)
    assert len(calls) == 6


def test_validate_command(capsys):
    assert main(["validate", "--seed", "1"]) == harness.EXIT_OK
    text = capsys.readouterr().out
    assert text.count("PASS") == 7 and "FAIL" not in text


def test_validate_catches_wrong_bleu_bound():
    lines = []
    assert harness.cmd_validate(0, denominator_shift=0.1, log=lines.append) == harness.EXIT_FAILED_CHECK
    assert any(line.startswith("FAIL bleu_inversion") for line in lines)


def test_mse_table_written(tiny_yaml, tmp_path):
    assert harness.cmd_mse_vs_crb(tiny_yaml, [20.0], 100, tmp_path, snapshots=16, log=lambda *_: None) == 0
    header, rows = _read_rows(tmp_path / "mse_vs_crb.csv")
    assert header == harness.MSE_HEADER
    assert float(rows[0]["mse"]) > 0 and float(rows[0]["crb"]) > 0
