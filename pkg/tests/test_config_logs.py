import json
import math

import pytest

from rendezvous.config import ConfigError, bundled, load_scenario, scenario_from_dict, set_option
from rendezvous.logs import SCHEMAS, MissionLog, Table, format_value, write_csv


def base(**sections):
    return {"map": "map_1path.json", **sections}


def test_defaults_are_materialized():
    cfg = scenario_from_dict(base())
    d = cfg.to_dict()
    assert d["planner"]["E_r0"] == 16000.0
    assert d["sampler"]["lambda"] == 0.5
    assert d["gp"]["n_inducing"] == 30
    assert d["map"]["landing_site"] == [0, 0]
    # round trip through JSON gives the same digest
    again = scenario_from_dict(json.loads(json.dumps(d)))
    assert again.digest() == cfg.digest()


@pytest.mark.parametrize("data,key", [
    (base(risk={"kapa": 0}), "risk.kapa"),
    (base(extra={}), "extra"),
    (base(sampler={"lam": 0.5}), "sampler.lam"),
    (base(planner={"v_max": -1}), "planner.v_max"),
    (base(planner={"alpha": 0}), "planner.alpha"),
    (base(sampler={"weights": [1, 2]}), "sampler.weights"),
    (base(sampler={"n_s": 2, "n_e": 2}), "sampler.n_e"),
    (base(sampler={"strategy": "random"}), "sampler.strategy"),
    (base(risk={"gamma": 1.5}), "risk.gamma"),
    (base(run={"seed": "x"}), "run.seed"),
    (base(gp={"kind": "fitc"}), "gp.kind"),
    (base(traffic={"chosen_path": 4}), "traffic.chosen_path"),
    (base(traffic={"deviation": {"kind": "cubic"}}), "traffic.deviation"),
    ({"traffic": {}}, "map"),
    ({"map": "nowhere.json"}, "map"),
])
def test_errors_name_the_offending_key(data, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        scenario_from_dict(data)


def test_infinite_kappa_round_trip():
    cfg = scenario_from_dict(base(risk={"kappa": "-inf"}))
    assert cfg.risk.kappa == -math.inf
    assert cfg.to_dict()["risk"]["kappa"] == "-inf"
    assert set_option(cfg, "risk.kappa", 0.0).risk.kappa == 0.0
    with pytest.raises(ConfigError):
        set_option(cfg, "risk.nope", 1)
    with pytest.raises(ConfigError):
        set_option(cfg, "nowhere", 1)


def test_bundled_scenarios_load(tmp_path):
    for name in ("scenario_fig7.json", "scenario_convergence.json"):
        cfg = load_scenario(bundled(name))
        assert cfg.path_map().ids
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_scenario(bad)


def test_format_value():
    assert format_value(0.1) == "0.1"
    assert format_value(math.inf) == "inf" and format_value(-math.inf) == "-inf"
    assert format_value(math.nan) == "nan"
    assert format_value(True) == "1"
    assert format_value([1, 2.5]) == "1;2.5"
    assert format_value(None) == ""


def test_table_and_log_writing(tmp_path):
    t = Table(("a", "b"))
    t.add(a=1, b=0.5)
    with pytest.raises(KeyError):
        t.add(c=1)
    assert t.to_csv() == "a,b\n1,0.5\n"
    assert t.column("b") == [0.5]
    write_csv(tmp_path / "x.csv", ("a",), [{"a": 2}])
    assert (tmp_path / "x.csv").read_text() == "a\n2\n"

    log = MissionLog()
    log.manifest["value"] = math.inf
    log.timing["wall_seconds"] = 1.0
    out = log.write(tmp_path / "run")
    for name, cols in SCHEMAS.items():
        assert (out / f"{name}.csv").read_text().splitlines()[0] == ",".join(cols)
    assert json.loads((out / "manifest.json").read_text())["value"] == "inf"
    assert (out / "timing.json").exists()
