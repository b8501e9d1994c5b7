import csv
import json

import pytest

from rendezvous import cli
from rendezvous.logs import MissionLog
from rendezvous.mission import MissionResult


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate_lands_and_writes_logs(tmp_path, capsys):
    assert cli.main(["simulate", "scenario_fig7.json", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["final_phase"] == "landed"
    assert manifest["verdict"] in ("proceed", "abort")
    assert manifest["config"]["planner"]["E_r0"] == 16000.0
    assert "phase=landed" in capsys.readouterr().out


def test_seeded_runs_are_identical(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["simulate", "scenario_fig7.json", "--seed", "42", "--out", str(tmp_path / name)]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        if f.name != "timing.json":
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"map": "map_1path.json", "planner": {"v_maxx": 3}}))
    assert cli.main(["simulate", str(bad)]) == 2
    assert "planner.v_maxx" in capsys.readouterr().err
    assert cli.main(["validate", str(bad)]) == 2
    assert cli.main(["validate", "scenario_fig7.json"]) == 0
    assert cli.main(["simulate", "scenario_fig7.json", "--set", "risk.nope=1"]) == 2
    assert cli.main(["sweep", "scenario_fig7.json", "--runs", "1", "--vary", "risk.nope=1,2",
                     "--out", str(tmp_path)]) == 2
    assert cli.main(["sweep", "scenario_fig7.json", "--runs", "0", "--out", str(tmp_path)]) == 2


def test_safety_trip_exits_3(monkeypatch, tmp_path):
    def tripped(cfg, seed):
        log = MissionLog()
        return MissionResult(log, "landed", False, "abort", 1, 10.0, -1.0)

    monkeypatch.setattr(cli, "run_mission", tripped)
    assert cli.main(["simulate", "scenario_fig7.json", "--out", str(tmp_path)]) == 3


def test_output_directory_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["simulate", "scenario_fig7.json", "--seed", "1"]) == 0
    assert (tmp_path / "env" / "manifest.json").exists()


def test_single_run_sweep_equals_simulate(tmp_path):
    cli.main(["simulate", "scenario_fig7.json", "--seed", "5", "--out", str(tmp_path / "sim")])
    cli.main(["sweep", "scenario_fig7.json", "--runs", "1", "--seed", "5", "--keep-logs",
              "--out", str(tmp_path / "sw")])
    for f in (tmp_path / "sim").glob("*.csv"):
        assert f.read_bytes() == (tmp_path / "sw" / "run_0000" / f.name).read_bytes()
    row = read_csv(tmp_path / "sw" / "sweep.csv")[0]
    manifest = json.loads((tmp_path / "sim" / "manifest.json").read_text())
    assert row["final_phase"] == manifest["final_phase"]
    assert row["delivered"] == str(int(manifest["delivered"]))


def test_kappa_sweep_abort_rate_monotone(tmp_path):
    cli.main(["sweep", "scenario_fig7.json", "--runs", "3", "--vary", "risk.kappa=-inf,0,inf",
              "--out", str(tmp_path)])
    rows = read_csv(tmp_path / "sweep.csv")
    assert len(rows) == 9
    rate = {}
    for r in rows:
        rate.setdefault(r["vary_value"], []).append(r["verdict"] == "abort")
    order = ["-inf", "0", "inf"]
    aborts = [sum(rate[k]) for k in order]
    assert aborts == sorted(aborts, reverse=True)
    assert aborts[0] == 3


def test_convergence_sweep(tmp_path):
    cli.main(["sweep", "scenario_convergence.json", "--runs", "3", "--set", "run.iterations=10",
              "--out", str(tmp_path)])
    summary = read_csv(tmp_path / "convergence.csv")
    trace = read_csv(tmp_path / "convergence_trace.csv")
    assert len(summary) == 3 and len(trace) == 30
    assert list(trace[0]) == list(cli.TRACE_COLUMNS)


def test_parse_vary():
    assert cli.parse_vary("risk.kappa=0:10:3") == ("risk.kappa", [0.0, 5.0, 10.0])
    assert cli.parse_vary("sampler.strategy=best_first,worst_first")[1] == ["best_first", "worst_first"]
    assert cli.parse_vary("risk.kappa=-inf,1")[1] == ["-inf", 1]
    for bad in ("risk.kappa", "=1", "risk.kappa=1:2:0", "risk.kappa=a:b:c"):
        with pytest.raises(cli.ConfigError):
            cli.parse_vary(bad)


def test_quadrature_bench(tmp_path):
    assert cli.main(["bench", "--quadrature", "--repeats", "3", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "bench_quadrature.csv")
    assert rows and all(float(r["abs_error"]) <= 1e-9 for r in rows)


def test_gp_bench(tmp_path):
    assert cli.main(["bench", "--gp", "--repeats", "3", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "bench_gp.csv")
    assert [int(r["M"]) for r in rows] == [50, 100, 200, 300]
    assert list(rows[0]) == list(cli.GP_BENCH_COLUMNS)
