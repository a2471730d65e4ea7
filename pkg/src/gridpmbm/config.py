"""Scenario configuration: YAML on disk, validated by pydantic models.

Every field has a default, so an empty mapping is a valid scenario (the
full-size two-sensor search-and-track scenario). Unknown keys are rejected.
Errors carry the dotted field path and, when known, the line/column in the
source file.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from .assoc import AssociationParams
from .core import (
    GaussianDensity,
    GaussianMixtureIntensity,
    GridSpec,
    MotionModel,
    SensorModel,
    SensorState,
    cv_model,
    cv_sensor_model,
)
from .grid import column_birth
from .planner import PlannerParams, PlanningContext
from .tracker import TrackerConfig

BUNDLED = ("paper_scenario", "scaled_scenario")

Probability = Field(ge=0.0, le=1.0)


class ConfigError(ValueError):
    """Invalid or unparsable scenario file."""

    def __init__(self, message: str, path: str = "", line: int | None = None, column: int | None = None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path:
            where.append(f"field '{path}'")
        if line is not None:
            where.append(f"line {line}, column {column}")
        super().__init__(f"{message} ({'; '.join(where)})" if where else message)


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MotionConfig(_Block):
    tau: PositiveFloat = 10.0
    sigma_w: NonNegativeFloat = 0.05
    survival_prob: float = Field(0.99, ge=0.0, le=1.0)


class SensorConfig(_Block):
    fov_side: PositiveFloat = 400.0
    detect_prob: float = Field(0.9, ge=0.0, le=1.0)
    sigma_p: PositiveFloat = 10.0
    clutter_rate: NonNegativeFloat = 5.0
    speed: PositiveFloat = 5.0
    turn_rate: PositiveFloat = math.pi / 10
    heading_steps: PositiveInt = Field(6, description="heading changes are n*pi/heading_steps")


class SensorInit(_Block):
    position: tuple[float, float]
    heading: float = 0.0


class GridBirthConfig(_Block):
    column_x: float = Field(1000.0, description="x of the grid column receiving births")
    rate: NonNegativeFloat = Field(0.01, description="expected births per step")


class GridConfig(_Block):
    origin: tuple[float, float] = (-1005.0, -1005.0)
    cell_size: tuple[PositiveFloat, PositiveFloat] = (10.0, 10.0)
    counts: tuple[PositiveInt, PositiveInt] = (201, 201)
    birth: GridBirthConfig = GridBirthConfig()
    phi_mean: tuple[float, float] = (-1.0, 0.0)
    phi_cov: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    trunc_sigmas: PositiveFloat = 4.0
    gate_sigmas: PositiveFloat = 3.0

    @field_validator("phi_cov")
    @classmethod
    def _pd(cls, v):
        a = np.asarray(v, float)
        if not np.allclose(a, a.T):
            raise ValueError("phi_cov must be symmetric")
        if np.any(np.linalg.eigvalsh(a) <= 0):
            raise ValueError("phi_cov must be positive definite")
        return v


class GMBirthConfig(_Block):
    """Components placed along the birth column, evenly spaced in p2."""

    n_components: PositiveInt = 9
    rate: NonNegativeFloat = 0.01
    x: float = 1000.0
    velocity: tuple[float, float] = (-1.0, 0.0)
    p2_start: float = -1000.0
    p2_spacing: float = 250.0
    cov_diag: tuple[PositiveFloat, PositiveFloat, PositiveFloat, PositiveFloat] = (1.0, 1.0, 125.0**2, 1.0)


class PlannerConfig(_Block):
    eta: NonNegativeFloat = 100.0
    horizon: PositiveInt = 15
    r_pims_threshold: float = Field(0.5, ge=0.0, le=1.0)
    rollout_grid_prediction: bool = False
    pims_margin_sigmas: NonNegativeFloat = Field(
        2.0, description="ideal detections need the mean this many position std inside the FOV"
    )


class FilterConfig(_Block):
    max_hypotheses: PositiveInt | None = 100
    hyp_prune: float = Field(1e-4, ge=0.0, lt=1.0)
    r_prune: float = Field(1e-3, ge=0.0, lt=1.0)
    r_extract: float = Field(0.5, ge=0.0, le=1.0)
    gate_sigmas: PositiveFloat = 4.0
    gm_prune_weight: NonNegativeFloat = 1e-5
    gm_max_components: PositiveInt = 300
    n_scan: PositiveInt | None = Field(
        4, description="N-scan pruning depth for confirmed tracks, in sensor updates; null disables"
    )


class TargetConfig(_Block):
    """Target alive on steps [appear_step, disappear_step).

    Give either ``waypoints`` as (step, p1, p2) rows, replayed piecewise
    linearly, or ``initial_state`` [p1, v1, p2, v2], propagated with the CV
    model (process noise from ``sigma_w``, default the motion block's).
    """

    appear_step: NonNegativeInt
    disappear_step: PositiveInt
    waypoints: list[tuple[float, float, float]] | None = None
    initial_state: tuple[float, float, float, float] | None = None
    sigma_w: NonNegativeFloat | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.disappear_step <= self.appear_step:
            raise ValueError("disappear_step must exceed appear_step")
        if (self.waypoints is None) == (self.initial_state is None):
            raise ValueError("give exactly one of waypoints or initial_state")
        if self.waypoints is not None:
            steps = [w[0] for w in self.waypoints]
            if len(steps) < 2 or any(b <= a for a, b in zip(steps, steps[1:])):
                raise ValueError("waypoint steps must be strictly increasing (at least two)")
            if steps[0] > self.appear_step or steps[-1] < self.disappear_step - 1:
                raise ValueError("waypoints must span the target's lifetime")
        return self


class RunConfig(_Block):
    n_steps: PositiveInt = 400
    n_runs: PositiveInt = 1
    seed: NonNegativeInt = 0


def _default_sensors():
    # reconstruction: both platforms start near the right edge, heading into the area
    return [
        SensorInit(position=(700.0, -300.0), heading=math.pi),
        SensorInit(position=(700.0, 300.0), heading=math.pi),
    ]


def _default_targets():
    # reconstruction of the two-target geometry: enter on the right, drift left
    return [
        TargetConfig(
            appear_step=100, disappear_step=323,
            waypoints=[(100, 1000.0, 200.0), (322, -1000.0, -450.0)],
        ),
        TargetConfig(
            appear_step=300, disappear_step=400,
            waypoints=[(300, 1000.0, -350.0), (399, 10.0, -200.0)],
        ),
    ]


class ScenarioConfig(_Block):
    name: str = "scenario"
    motion: MotionConfig = MotionConfig()
    sensor: SensorConfig = SensorConfig()
    sensors: list[SensorInit] = Field(default_factory=_default_sensors, min_length=1)
    grid: GridConfig = GridConfig()
    gm_birth: GMBirthConfig = GMBirthConfig()
    planner: PlannerConfig = PlannerConfig()
    filter: FilterConfig = FilterConfig()
    run: RunConfig = RunConfig()
    targets: list[TargetConfig] = Field(default_factory=_default_targets)


BirthModel = Literal["grid", "gm"]


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _node_at(node, loc):
    """Walk a composed YAML node along a pydantic error location."""
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    break
            if nxt is None:
                return node
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return node
    return node


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            raise ConfigError(f"{source}: cannot parse YAML: {exc.problem}", line=mark.line + 1, column=mark.column + 1) from exc
        raise ConfigError(f"{source}: cannot parse YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping", line=1, column=1)
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(err["loc"])
        path = ".".join(str(p) for p in loc)
        line = column = None
        if root is not None:
            node = _node_at(root, loc)
            line, column = node.start_mark.line + 1, node.start_mark.column + 1
        raise ConfigError(f"{source}: {err['msg']}", path=path, line=line, column=column) from exc


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("gridpmbm") / "data" / f"{name}.yaml"))


def load_config(path) -> ScenarioConfig:
    """Load a YAML scenario file, or a bundled scenario by name."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        p = bundled_path(str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def json_schema() -> dict:
    return ScenarioConfig.model_json_schema()


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_motion(cfg: ScenarioConfig) -> MotionModel:
    m = cfg.motion
    return cv_model(m.tau, m.sigma_w, m.survival_prob)


def build_sensor(cfg: ScenarioConfig) -> SensorModel:
    s = cfg.sensor
    return cv_sensor_model(s.sigma_p, s.detect_prob, s.fov_side, s.clutter_rate)


def build_grid_spec(cfg: ScenarioConfig) -> GridSpec:
    g = cfg.grid
    return GridSpec(g.origin, g.cell_size, g.counts)


def build_phi_prior(cfg: ScenarioConfig) -> GaussianDensity:
    return GaussianDensity(np.array(cfg.grid.phi_mean, float), np.array(cfg.grid.phi_cov, float))


def build_grid_birth(cfg: ScenarioConfig):
    b = cfg.grid.birth
    return column_birth(build_grid_spec(cfg), build_phi_prior(cfg), b.column_x, b.rate)


def build_gm_birth(cfg: ScenarioConfig) -> GaussianMixtureIntensity:
    g = cfg.gm_birth
    n = g.n_components
    means = np.array(
        [[g.x, g.velocity[0], g.p2_start + g.p2_spacing * i, g.velocity[1]] for i in range(n)]
    )
    covs = np.repeat(np.diag(g.cov_diag)[None], n, axis=0)
    return GaussianMixtureIntensity(np.full(n, g.rate / n), means, covs)


def build_assoc(cfg: ScenarioConfig) -> AssociationParams:
    f = cfg.filter
    return AssociationParams(
        gate_sigmas=f.gate_sigmas,
        max_hypotheses=f.max_hypotheses,
        hyp_prune=f.hyp_prune,
        r_prune=f.r_prune,
        n_scan=f.n_scan,
        supercell_sigmas=cfg.grid.gate_sigmas,
    )


def build_tracker_config(cfg: ScenarioConfig, birth_model: BirthModel = "grid") -> TrackerConfig:
    if birth_model not in ("grid", "gm"):
        raise ValueError(f"unknown birth model {birth_model!r}")
    birth = build_grid_birth(cfg) if birth_model == "grid" else build_gm_birth(cfg)
    return TrackerConfig(
        motion=build_motion(cfg),
        sensor=build_sensor(cfg),
        birth=birth,
        assoc=build_assoc(cfg),
        gm_prune_weight=cfg.filter.gm_prune_weight,
        gm_max_components=cfg.filter.gm_max_components,
        r_extract=cfg.filter.r_extract,
        kernel_sigmas=cfg.grid.trunc_sigmas,
    )


def build_planner(cfg: ScenarioConfig) -> PlannerParams:
    p, s = cfg.planner, cfg.sensor
    return PlannerParams(
        eta=p.eta,
        horizon_T=p.horizon,
        r_pims_threshold=p.r_pims_threshold,
        rollout_grid_prediction=p.rollout_grid_prediction,
        pims_margin_sigmas=p.pims_margin_sigmas,
        heading_steps=s.heading_steps,
        turn_rate=s.turn_rate,
        step=cfg.motion.tau,
    )


def build_planning_context(tcfg: TrackerConfig) -> PlanningContext:
    return PlanningContext(tcfg.motion, tcfg.sensor, tcfg.birth, tcfg.kernel)


def build_sensor_states(cfg: ScenarioConfig) -> list[SensorState]:
    return [SensorState(s.position, s.heading, cfg.sensor.speed) for s in cfg.sensors]
