import numpy as np
import pytest

from gridpmbm.core import GaussianDensity, GridIntensity, GridSpec, cv_model, cv_sensor_model

# (criterion, passed, detail) lines recorded by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"ACCEPTANCE {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def motion():
    return cv_model(10.0, 0.05, 0.99)


@pytest.fixture
def sensor():
    return cv_sensor_model(10.0, 0.9, 400.0, 5.0)


@pytest.fixture
def phi_prior():
    return GaussianDensity(np.array([-1.0, 0.0]), np.eye(2))


@pytest.fixture
def small_spec():
    return GridSpec((-200.0, -200.0), (10.0, 10.0), (40, 40))


@pytest.fixture
def small_grid(small_spec, phi_prior):
    rng = np.random.default_rng(3)
    return GridIntensity(small_spec, rng.uniform(0.0, 1e-3, small_spec.shape), phi_prior)


TINY_YAML = """\
grid: {origin: [-1010.0, -1010.0], cell_size: [20.0, 20.0], counts: [101, 101], birth: {column_x: 700.0, rate: 0.01}}
gm_birth: {x: 700.0}
run: {n_steps: 20, n_runs: 2, seed: 0}
targets:
  - {appear_step: 2, disappear_step: 20, initial_state: [700.0, -1.0, -250.0, 0.0]}
"""


@pytest.fixture
def tiny_config_file(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY_YAML, encoding="utf-8")
    return p
