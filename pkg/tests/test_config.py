import pytest

from sotif_sentinel.config import Config, ConfigError, apply_overrides, dumps, load, loads
from sotif_sentinel.field import PERSON, TRAFFIC_CONE


def test_defaults():
    cfg = Config()
    assert cfg.perception.affinity_threshold == 0.95
    assert cfg.perception.T == 5 and cfg.perception.C == 11
    assert cfg.vehicle.m == 1860.0
    assert cfg.scenario.v_e == 15.0 and cfg.scenario.x_0 == 30.0
    assert cfg.field.margins.U_x == 8.0
    assert cfg.field.categories[PERSON].L_x == 15.0
    assert cfg.planner.dt == cfg.scenario.dt


def test_roundtrip():
    cfg = apply_overrides(Config(), ["planner.Q=3.0, 0.25", "field.traffic_cone.L_x=9", "scenario.seed=4"])
    assert loads(dumps(cfg)) == cfg


def test_override_nested_section():
    cfg = apply_overrides(Config(), ["field.person.a=60", "field.U_y=1.5"])
    assert cfg.field.categories[PERSON].a == 60.0
    assert cfg.field.margins.U_y == 1.5
    assert cfg.field.categories[TRAFFIC_CONE].a != 60.0


def test_planner_dt_follows_scenario():
    cfg = apply_overrides(Config(), ["scenario.dt=0.05"])
    assert cfg.planner.dt == 0.05
    assert "dt" not in dumps(cfg).split("[planner]")[1].split("[")[0]


@pytest.mark.parametrize(
    "ov",
    ["nosuch.key=1", "scenario.nokey=1", "scenario.v_e=fast", "planner.Q=1", "scenario", "field.unicorn.a=1", "scenario.x_0=-3"],
)
def test_bad_overrides(ov):
    with pytest.raises(ConfigError):
        apply_overrides(Config(), [ov])


def test_load_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[scenario]\nx_0 = 40\n\n[case]\ncase_id = 3\n")
    cfg = load(str(p), ["scenario.x_0=35"])
    assert cfg.scenario.x_0 == 35.0 and cfg.case.case_id == 3


def test_missing_file():
    with pytest.raises(ConfigError):
        load("/nonexistent/x.ini")
