import copy

import numpy as np
import pytest

from conftest import DIFFRACTION_CONFIG, SHIPPED_CONFIG
from nfsecure_utils.config_manager import (
    ConfigManager,
    RunConfig,
    dbm_to_watts,
    load_raw_config,
    parse_config,
    parse_gamma1,
    parse_gamma2,
    write_config,
)
from nfsecure_utils.data_validation import ConfigValidationError


@pytest.fixture
def raw():
    return ConfigManager().get_default_config()


def _write(tmp_path, raw):
    path = tmp_path / "scenario.toml"
    write_config(raw, str(path))
    return str(path)


def test_defaults_validate(raw):
    ConfigManager().validate_config(raw)
    run = ConfigManager().build_run_config()
    assert run.mode == "episode"
    assert run.gamma2 == 0.15


def test_save_and_load(tmp_path, raw):
    path = _write(tmp_path, raw)
    loaded = load_raw_config(path)
    assert loaded['users']['angles_deg'] == raw['users']['angles_deg']
    assert loaded['thresholds']['gamma1'] == 3


def test_unknown_key_names_the_key(tmp_path, raw):
    raw['array']['foo'] = 1
    with pytest.raises(ConfigValidationError) as info:
        ConfigManager(_write(tmp_path, raw))
    assert info.value.key == "array.foo"


def test_missing_section(tmp_path, raw):
    del raw['ekf']
    with pytest.raises(ConfigValidationError) as info:
        ConfigManager(_write(tmp_path, raw))
    assert info.value.key == "ekf"


def test_missing_key(tmp_path, raw):
    del raw['users']['noise_dbm']
    with pytest.raises(ConfigValidationError) as info:
        ConfigManager(_write(tmp_path, raw))
    assert info.value.key == "users.noise_dbm"


def test_empty_file(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("")
    with pytest.raises(ConfigValidationError) as info:
        ConfigManager(str(path))
    assert info.value.key == "array"


def test_unparseable_and_missing_files(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[array\nnum_antennas = ")
    with pytest.raises(ConfigValidationError):
        ConfigManager(str(path))
    with pytest.raises(ConfigValidationError):
        ConfigManager(str(tmp_path / "nowhere.toml"))


@pytest.mark.parametrize("section, key, value", [
    ("array", "num_antennas", 0),
    ("eavesdropper", "angle_deg", 190.0),
    ("thresholds", "gamma1", 9),
    ("thresholds", "gamma2", -0.1),
    ("ekf", "rcs", 0.0),
    ("run", "mode", "train"),
])
def test_bad_values(raw, section, key, value):
    bad = copy.deepcopy(raw)
    bad[section][key] = value
    with pytest.raises(ConfigValidationError) as info:
        ConfigManager().validate_config(bad)
    assert info.value.key == f"{section}.{key}"


def test_desk_profile_shrinks_array_keeping_spacing():
    manager = ConfigManager()
    paper = manager.build_scenario("paper", "gbd")
    desk = manager.build_scenario("desk", "gbd")
    assert paper.geometry.num_antennas == 64
    assert desk.geometry.num_antennas == 16
    assert desk.geometry.spacing == pytest.approx(1.0 / 63.0)
    assert paper.geometry.spacing == pytest.approx(desk.geometry.spacing)
    assert desk.num_users == 5
    assert paper.num_users == 7
    assert manager.build_scenario("desk", "zfsca").num_users == 7


def test_scenario_units():
    scenario = ConfigManager().build_scenario("paper", "episode", seed=4, slots=2)
    assert scenario.p_max == pytest.approx(dbm_to_watts(37.0))
    assert scenario.eve_noise == pytest.approx(1e-11)
    assert scenario.eve_truth.angle == pytest.approx(np.deg2rad(90.1))
    assert scenario.seed == 4 and scenario.num_slots == 2


def test_dbm_to_watts():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3)


def test_parse_gamma1():
    assert parse_gamma1("3") == [3]
    assert parse_gamma1("0:4") == [0, 1, 2, 3, 4]
    assert parse_gamma1("1,3") == [1, 3]
    with pytest.raises(ConfigValidationError):
        parse_gamma1("a")
    with pytest.raises(ConfigValidationError):
        parse_gamma1("4:2")


def test_parse_gamma2():
    assert parse_gamma2("0.1") == [0.1]
    assert parse_gamma2("0.1:0.5:5") == pytest.approx([0.1, 0.2, 0.3, 0.4, 0.5])
    assert parse_gamma2("0.05,0.1") == [0.05, 0.1]
    with pytest.raises(ConfigValidationError):
        parse_gamma2("0:1")
    with pytest.raises(ConfigValidationError):
        parse_gamma2("-0.1")


def test_run_config_rejects_bad_mode():
    with pytest.raises(ConfigValidationError) as info:
        RunConfig(None, "train", 1, 0.1, 0).validate()
    assert info.value.key == "run.mode"
    with pytest.raises(ConfigValidationError):
        RunConfig(None, "pareto", 1, 0.1, 0).validate()


def test_shipped_config_parses():
    scenario, run = parse_config(SHIPPED_CONFIG)
    assert run.profile == "desk"
    assert scenario.geometry.num_antennas == 16
    assert run.gamma1_range == [0, 1, 2, 3]
    paper, _ = parse_config(SHIPPED_CONFIG, profile="paper")
    assert paper.geometry.num_antennas == 64


def test_shipped_eavesdropper_stays_on_user_bearing():
    scenario, _ = parse_config(SHIPPED_CONFIG)
    truth = scenario.eve_truth
    assert np.rad2deg(truth.angle) == pytest.approx(90.1)
    # radial drift keeps the bearing
    assert truth.vx * np.cos(truth.angle) + truth.vy * np.sin(truth.angle) == pytest.approx(0.5, rel=1e-4)
    assert scenario.initial_belief.sigma_distance == pytest.approx(0.02)


def test_diffraction_config_parses():
    scenario, run = parse_config(DIFFRACTION_CONFIG)
    assert run.mode == "beampattern"
    assert scenario.num_users == 1
    assert scenario.geometry.num_antennas == 16
    user = scenario.user_positions[0]
    assert user.angle == pytest.approx(scenario.eve_truth.angle)
    assert user.distance > scenario.eve_truth.distance
    assert scenario.eve_truth.speed == 0.0
