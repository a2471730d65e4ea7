"""Scenario engine: ground truth, measurements, the closed planning/tracking
loop and a Monte Carlo harness.

Random draws come from a counter-based generator keyed by
(seed, purpose, step, sensor), so results do not depend on evaluation order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import (
    BirthModel,
    ScenarioConfig,
    build_planner,
    build_planning_context,
    build_sensor,
    build_sensor_states,
    build_tracker_config,
)
from .core import SensorModel, SensorState, cv_model
from .metrics import GospaParams, gospa
from .planner import greedy_assign, propagate_sensor
from .tracker import Tracker

PURPOSE_TRUTH, PURPOSE_DETECT, PURPOSE_CLUTTER = 0, 1, 2

COLUMNS = (
    "step", "time_s", "gospa_total", "gospa_loc", "n_missed", "n_false",
    "n_truth", "n_est", "t_track_s", "t_undet_s",
)
TIMING_COLUMNS = ("t_track_s", "t_undet_s")


def rng_for(seed: int, purpose: int, step: int = 0, sensor: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), purpose, step, sensor])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class TargetTruth:
    appear_step: int
    disappear_step: int
    states: np.ndarray  # (disappear - appear, 4), rows [p1, v1, p2, v2]

    def __post_init__(self):
        self.states = np.asarray(self.states, float).reshape(-1, 4)
        if len(self.states) != self.disappear_step - self.appear_step:
            raise ValueError("states length must equal the target's lifetime")

    def alive(self, step: int) -> bool:
        return self.appear_step <= step < self.disappear_step

    def state(self, step: int) -> np.ndarray:
        return self.states[step - self.appear_step]


def _from_waypoints(appear: int, disappear: int, waypoints, tau: float) -> np.ndarray:
    wp = np.asarray(waypoints, float)
    steps = np.arange(appear, disappear)
    p1 = np.interp(steps, wp[:, 0], wp[:, 1])
    p2 = np.interp(steps, wp[:, 0], wp[:, 2])
    seg = np.clip(np.searchsorted(wp[:, 0], steps, side="right") - 1, 0, len(wp) - 2)
    dt = (wp[seg + 1, 0] - wp[seg, 0]) * tau
    v1 = (wp[seg + 1, 1] - wp[seg, 1]) / dt
    v2 = (wp[seg + 1, 2] - wp[seg, 2]) / dt
    return np.column_stack([p1, v1, p2, v2])


def generate_truth(config: ScenarioConfig, seed: int) -> list[TargetTruth]:
    tau = config.motion.tau
    out = []
    for i, t in enumerate(config.targets):
        n = t.disappear_step - t.appear_step
        if t.waypoints is not None:
            states = _from_waypoints(t.appear_step, t.disappear_step, t.waypoints, tau)
        else:
            sigma_w = config.motion.sigma_w if t.sigma_w is None else t.sigma_w
            F = cv_model(tau, sigma_w, 1.0).F
            # Q = sigma_w^2 G G^T is rank deficient, so sample through G
            G = sigma_w * np.kron(np.eye(2), [[tau**2 / 2.0], [tau]])
            rng = rng_for(seed, PURPOSE_TRUTH, 0, i)
            states = np.empty((n, 4))
            states[0] = t.initial_state
            for k in range(1, n):
                states[k] = F @ states[k - 1] + G @ rng.standard_normal(2)
        out.append(TargetTruth(t.appear_step, t.disappear_step, states))
    return out


def truth_at(truth: Sequence[TargetTruth], step: int) -> np.ndarray:
    rows = [t.state(step) for t in truth if t.alive(step)]
    return np.array(rows).reshape(-1, 4)


def generate_measurements(
    truth_states: np.ndarray,
    sensors: Sequence[SensorState],
    sensor_model: SensorModel,
    seed: int,
    step: int,
) -> list[np.ndarray]:
    """One (m, 2) measurement array per sensor: detections followed by clutter."""
    X = np.asarray(truth_states, float).reshape(-1, sensor_model.state_dim)
    theta = X[:, list(sensor_model.theta_idx)]
    half = sensor_model.fov_half_side
    chol = np.linalg.cholesky(sensor_model.R)
    out = []
    for j, s in enumerate(sensors):
        rd = rng_for(seed, PURPOSE_DETECT, step, j)
        rc = rng_for(seed, PURPOSE_CLUTTER, step, j)
        inside = sensor_model.in_fov(s.position, theta) if len(theta) else np.zeros(0, bool)
        u = rd.random(len(theta))
        noise = rd.standard_normal((len(theta), sensor_model.meas_dim))
        hit = inside & (u < sensor_model.detect_prob)
        det = theta[hit] @ sensor_model.H.T + noise[hit] @ chol.T
        n_c = rc.poisson(sensor_model.clutter_rate)
        clutter = np.asarray(s.position) + rc.uniform(-half, half, (n_c, sensor_model.meas_dim))
        out.append(np.vstack([det, clutter]).reshape(-1, sensor_model.meas_dim))
    return out


@dataclass
class RunRecord:
    """Per-step results of one run; columns follow ``COLUMNS``."""

    seed: int
    birth_model: str
    columns: dict[str, np.ndarray]
    sensor_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 2)))
    n_tracks: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    @property
    def n_steps(self) -> int:
        return len(self.columns["step"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]


def run_scenario(config: ScenarioConfig, seed: int, birth_model: BirthModel = "grid") -> RunRecord:
    """Closed loop: plan, move, sense, filter, score, once per step."""
    tcfg = build_tracker_config(config, birth_model)
    params = build_planner(config)
    ctx = build_planning_context(tcfg)
    sensor_model = build_sensor(config)
    tracker = Tracker(tcfg)
    sensors = build_sensor_states(config)
    truth = generate_truth(config, seed)
    gparams = GospaParams()
    tidx = list(sensor_model.theta_idx)

    n = config.run.n_steps
    cols = {c: np.zeros(n) for c in COLUMNS}
    positions = np.zeros((n, len(sensors), 2))
    n_tracks = np.zeros(n, int)
    for k in range(n):
        plan = greedy_assign(tracker.pmbm, sensors, params, ctx)
        sensors = [propagate_sensor(s, plan[j], 1, params.step) for j, s in enumerate(sensors)]
        X = truth_at(truth, k)
        scans = generate_measurements(X, sensors, sensor_model, seed, k)
        timing = tracker.step(list(zip(sensors, scans)))
        est = np.array([d.mean[tidx] for _, d in tracker.estimates()]).reshape(-1, 2)
        g = gospa(X[:, tidx], est, gparams)
        cols["step"][k] = k
        cols["time_s"][k] = k * config.motion.tau
        cols["gospa_total"][k] = g.total
        cols["gospa_loc"][k] = g.localization
        cols["n_missed"][k] = g.missed
        cols["n_false"][k] = g.false
        cols["n_truth"][k] = len(X)
        cols["n_est"][k] = len(est)
        cols["t_track_s"][k] = timing.track
        cols["t_undet_s"][k] = timing.undetected
        positions[k] = [s.position for s in sensors]
        n_tracks[k] = sum(1 for _ in tracker.pmbm.bernoullis()) if tracker.pmbm.hypotheses else 0
    for c in ("step", "n_missed", "n_false", "n_truth", "n_est"):
        cols[c] = cols[c].astype(int)
    return RunRecord(int(seed), birth_model, cols, positions, n_tracks)


@dataclass
class Aggregate:
    """Per-step mean and standard error of every column over runs."""

    n_runs: int
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]


def aggregate(records: Sequence[RunRecord]) -> Aggregate:
    if not records:
        raise ValueError("need at least one run")
    n = len(records)
    mean, se = {}, {}
    for c in COLUMNS:
        a = np.stack([np.asarray(r.columns[c], float) for r in records])
        mean[c] = a.mean(axis=0)
        se[c] = a.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(a.shape[1])
    return Aggregate(n, mean, se)


def default_workers() -> int:
    env = os.environ.get("PMBM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError("PMBM_THREADS must be an integer") from None
    return 1


def _run_one(args):
    config, seed, birth_model = args
    return run_scenario(config, seed, birth_model)


def monte_carlo(
    config: ScenarioConfig,
    n_runs: int,
    base_seed: int,
    birth_model: BirthModel = "grid",
    workers: int | None = None,
) -> tuple[list[RunRecord], Aggregate]:
    """Runs seeds base_seed .. base_seed + n_runs - 1, in processes if ``workers`` > 1."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    workers = default_workers() if workers is None else workers
    jobs = [(config, base_seed + i, birth_model) for i in range(n_runs)]
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_runs)) as ex:
            records = list(ex.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    return records, aggregate(records)
