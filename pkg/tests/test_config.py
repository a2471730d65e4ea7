import json
import math

import numpy as np
import pytest

from gridpmbm.config import (
    ConfigError,
    build_gm_birth,
    build_grid_birth,
    build_tracker_config,
    bundled_path,
    dump_config,
    json_schema,
    load_config,
    parse_config,
)


def test_paper_scenario_values():
    cfg = load_config("paper_scenario")
    assert tuple(cfg.grid.counts) == (201, 201)
    assert tuple(cfg.grid.cell_size) == (10.0, 10.0)
    assert cfg.motion.survival_prob == 0.99
    assert cfg.planner.horizon == 15
    assert cfg.planner.eta == 100.0
    assert cfg.sensor.fov_side == 400.0
    assert cfg.sensor.detect_prob == 0.9
    assert len(cfg.sensors) == 2


def test_full_scenario_birth_models():
    cfg = load_config("paper_scenario")
    grid = build_grid_birth(cfg)
    assert grid.total == pytest.approx(0.01)
    col = grid.weights[np.any(grid.weights > 0, axis=1)]
    assert col.shape == (1, 201)
    assert col[0, 0] == pytest.approx(0.01 / 201)
    gm = build_gm_birth(cfg)
    assert len(gm) == 9
    np.testing.assert_allclose(gm.weights, 0.01 / 9)
    np.testing.assert_allclose(gm.means[:, 2], -1000.0 + 250.0 * np.arange(9))
    np.testing.assert_allclose(gm.means[:, [0, 1, 3]], np.tile([1000.0, -1.0, 0.0], (9, 1)))
    np.testing.assert_allclose(gm.covs[0], np.diag([1.0, 1.0, 125.0**2, 1.0]))


def test_scaled_scenario():
    cfg = load_config("scaled_scenario")
    assert tuple(cfg.grid.counts) == (101, 101)
    assert tuple(cfg.grid.cell_size) == (20.0, 20.0)
    assert cfg.run.n_steps == 400 and cfg.run.n_runs == 10


def test_minimal_file_gets_defaults():
    cfg = parse_config("{}")
    assert cfg.motion.tau == 10.0
    assert cfg.sensor.clutter_rate == 5.0
    assert cfg.planner.eta == 100.0
    assert cfg.filter.max_hypotheses == 100
    assert parse_config("") == cfg


def test_detect_prob_out_of_range():
    text = "sensor:\n  detect_prob: 1.5\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    err = info.value
    assert err.path == "sensor.detect_prob"
    assert (err.line, err.column) == (2, 16)
    assert "sensor.detect_prob" in str(err)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config("planner:\n  eta: 1.0\n  horizn: 3\n")
    assert info.value.path == "planner.horizn"
    assert info.value.line == 3


def test_syntax_error_has_position():
    with pytest.raises(ConfigError) as info:
        parse_config("motion: {tau: 10\nsensor: [\n")
    assert info.value.line is not None and info.value.column is not None


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError):
        parse_config("- 1\n- 2\n")


def test_phi_cov_must_be_pd():
    with pytest.raises(ConfigError) as info:
        parse_config("grid:\n  phi_cov: [[1.0, 2.0], [2.0, 1.0]]\n")
    assert info.value.path.startswith("grid")


def test_bad_target():
    with pytest.raises(ConfigError):
        parse_config("targets:\n  - {appear_step: 10, disappear_step: 5, initial_state: [0, 0, 0, 0]}\n")


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/scenario.yaml")


def test_dump_round_trip():
    cfg = load_config("paper_scenario")
    assert parse_config(dump_config(cfg)) == cfg


def test_schema_file_in_sync():
    shipped = json.loads(bundled_path("paper_scenario").with_name("scenario.schema.json").read_text())
    assert shipped == json_schema()


def test_tracker_config_from_file():
    cfg = load_config("scaled_scenario")
    grid = build_tracker_config(cfg, "grid")
    gm = build_tracker_config(cfg, "gm")
    assert grid.uses_grid and not gm.uses_grid
    assert grid.kernel is not None
    assert grid.sensor.fov_half_side == 200.0
    assert math.isclose(grid.motion.survival_prob, 0.99)
    with pytest.raises(ValueError):
        build_tracker_config(cfg, "pf")
