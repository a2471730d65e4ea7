"""Receding-horizon sensor management on top of the PMBM posterior.

Each candidate control sequence is scored by rolling the posterior forward
with predicted ideal measurement sets (no noise, misses or clutter) and
summing a track-plus-search stage cost. Sensors are assigned one at a time,
each conditioned on the sequences already committed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .core import (
    GaussianMixtureIntensity,
    GridIntensity,
    MotionModel,
    PMBMDensity,
    SensorModel,
    SensorState,
)
from .gaussian import predict_gm_ppp, prune_gm
from .grid import ConvolutionKernel, expected_undetected, fov_slices, predict_grid


@dataclass(frozen=True)
class ControlSequence:
    """One heading change at ``turn_rate``, then straight flight."""

    heading_change: float
    turn_rate: float = math.pi / 10
    horizon: int = 15


@dataclass(frozen=True)
class PlannerParams:
    eta: float = 100.0
    horizon_T: int = 15
    r_pims_threshold: float = 0.5
    rollout_grid_prediction: bool = False
    pims_margin_sigmas: float = 2.0
    heading_steps: int = 6
    turn_rate: float = math.pi / 10
    step: float = 10.0

    def __post_init__(self):
        if self.horizon_T < 1:
            raise ValueError("horizon must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.pims_margin_sigmas < 0:
            raise ValueError("pims_margin_sigmas must be nonnegative")


@dataclass(frozen=True, eq=False)
class PlanningContext:
    """Models the rollouts need besides the posterior itself."""

    motion: MotionModel
    sensor: SensorModel
    birth: GridIntensity | GaussianMixtureIntensity | None = None
    kernel: ConvolutionKernel | None = None


class IdealMeasurement(NamedTuple):
    sensor: int
    track_id: int
    z: np.ndarray


def admissible_sequences(params: PlannerParams) -> list[ControlSequence]:
    """Heading changes n * pi / heading_steps for n in -heading_steps..heading_steps."""
    k = params.heading_steps
    return [
        ControlSequence(n * math.pi / k, params.turn_rate, params.horizon_T)
        for n in range(-k, k + 1)
    ]


def propagate_sensor(s: SensorState, u: ControlSequence, t: float, step: float = 10.0) -> SensorState:
    """Sensor state ``t`` steps after starting sequence ``u``."""
    if t > u.horizon:
        raise ValueError("t exceeds the sequence horizon")
    elapsed = t * step
    x, y = s.position
    h = s.heading
    v = s.speed
    turn_time = abs(u.heading_change) / u.turn_rate if u.heading_change else 0.0
    tt = min(elapsed, turn_time)
    if tt > 0:
        w = math.copysign(u.turn_rate, u.heading_change)
        h1 = h + w * tt
        x += v / w * (math.sin(h1) - math.sin(h))
        y -= v / w * (math.cos(h1) - math.cos(h))
        h = h1
    rest = elapsed - tt
    x += v * rest * math.cos(h)
    y += v * rest * math.sin(h)
    return SensorState((x, y), h, v)


def sensor_trajectory(s: SensorState, u: ControlSequence, T: int, step: float = 10.0) -> np.ndarray:
    """Positions at steps 1..T, shape (T, 2)."""
    return np.array([propagate_sensor(s, u, t, step).position for t in range(1, T + 1)])


def pims(
    pmbm: PMBMDensity,
    sensors: Sequence[SensorState],
    sensor_model: SensorModel,
    r_threshold: float = 0.5,
    margin_sigmas: float = 0.0,
) -> list[IdealMeasurement]:
    """Noise-free detections of confident top-hypothesis tracks inside any FOV.

    With ``margin_sigmas`` > 0 a track only counts as seen when its mean is at
    least that many position standard deviations inside the FOV border.
    """
    out = []
    tidx = list(sensor_model.theta_idx)
    bern = [b for b in pmbm.bernoullis() if b.existence >= r_threshold]
    for si, s in enumerate(sensors):
        for b in bern:
            theta = b.density.mean[tidx]
            sd = np.sqrt(np.diag(b.density.cov)[tidx])
            d = np.abs(theta - np.asarray(s.position))
            if np.all(d <= sensor_model.fov_half_side - margin_sigmas * sd):
                out.append(IdealMeasurement(si, b.track_id, sensor_model.H @ theta))
    return out


def stage_cost(pmbm: PMBMDensity, eta: float, theta_idx: Sequence[int] = (0, 2)) -> float:
    """Sum of r * trace(position covariance) plus eta times the undetected count."""
    t = list(theta_idx)
    track = sum(
        b.existence * float(np.trace(b.density.cov[np.ix_(t, t)])) for b in pmbm.bernoullis()
    )
    u = pmbm.undetected
    search = expected_undetected(u) if isinstance(u, GridIntensity) else u.total_weight
    return track + eta * search


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------


class _RolloutStart:
    """Top-hypothesis Bernoullis stacked into arrays, plus the undetected intensity."""

    def __init__(self, pmbm: PMBMDensity, ctx: PlanningContext):
        bern = list(pmbm.bernoullis())
        n = ctx.motion.dim
        self.r = np.array([b.existence for b in bern], dtype=float)
        self.means = np.array([b.density.mean for b in bern], dtype=float).reshape(-1, n)
        self.covs = np.array([b.density.cov for b in bern], dtype=float).reshape(-1, n, n)
        self.undetected = pmbm.undetected


class _Path:
    """Sensor positions over the horizon and, for a grid, the FOV slices."""

    def __init__(self, positions: np.ndarray, undetected, half_side: float):
        self.positions = positions
        self.slices = None
        if isinstance(undetected, GridIntensity):
            self.slices = [fov_slices(undetected.spec, p, half_side) for p in positions]


def _rollout_cost(
    start: _RolloutStart,
    paths: Mapping[int, _Path],
    params: PlannerParams,
    ctx: PlanningContext,
) -> float:
    """PIMS rollout of one sensor-path combination.

    Ideal measurements have zero innovation, so track means only move by
    prediction. All sensors of a step are applied at once: n detections are one
    information-form update, n misses scale the existence odds by (1-pd)^n.
    Both equal the sequential per-sensor updates.
    """
    motion, sensor = ctx.motion, ctx.sensor
    F, Q, ps = motion.F, motion.Q, motion.survival_prob
    pd = sensor.detect_prob
    info = sensor.H_full.T @ np.linalg.inv(sensor.R) @ sensor.H_full
    half = sensor.fov_half_side
    tidx = list(sensor.theta_idx)
    thr = params.r_pims_threshold
    margin = params.pims_margin_sigmas

    order = sorted(paths)
    pos = np.stack([paths[i].positions for i in order], axis=1)  # (T, S, 2)
    r = start.r.copy()
    means = start.means.copy()
    covs = start.covs.copy()
    has_tracks = r.size > 0
    und = start.undetected
    grid = isinstance(und, GridIntensity)
    if grid:
        weights = und.weights.copy()
    else:
        gm = und
        gm_w = gm.weights.copy()
    total = 0.0
    for t in range(params.horizon_T):
        if params.rollout_grid_prediction:
            if grid:
                und = predict_grid(und.with_weights(weights), ctx.birth, ctx.kernel, ps)
                weights = und.weights.copy()
            else:
                gm = prune_gm(predict_gm_ppp(GaussianMixtureIntensity(gm_w, gm.means, gm.covs), ctx.birth, motion))
                gm_w = gm.weights.copy()
        track = 0.0
        if has_tracks:
            r *= ps
            means = means @ F.T
            covs = F @ covs @ F.T + Q
            theta = means[:, tidx]
            d = np.abs(theta[:, None, :] - pos[t][None, :, :])  # (N, S, 2)
            sd = np.sqrt(np.diagonal(covs, axis1=1, axis2=2)[:, tidx])
            in_fov = (d <= half).all(axis=2)
            inner = (d <= half - margin * sd[:, None, :]).all(axis=2)
            confident = r >= thr
            n_det = np.where(confident, inner.sum(axis=1), 0)
            # confident tracks in the border band get no update at all
            n_miss = np.where(confident, 0, in_fov.sum(axis=1))
            det = n_det > 0
            if det.any():
                post = np.linalg.inv(np.linalg.inv(covs[det]) + n_det[det, None, None] * info)
                covs[det] = 0.5 * (post + post.transpose(0, 2, 1))
                r[det] = 1.0
            miss = n_miss > 0
            if miss.any():
                odds = r[miss] / (1.0 - r[miss]) * (1.0 - pd) ** n_miss[miss]
                r[miss] = odds / (1.0 + odds)
            track = float(r @ (covs[:, tidx[0], tidx[0]] + covs[:, tidx[1], tidx[1]]))
        for i, si in enumerate(order):
            if grid:
                s0, s1 = paths[si].slices[t]
                weights[s0, s1] *= 1.0 - pd
            elif gm_w.size:
                inside = (np.abs(gm.means[:, tidx] - pos[t, i]) <= half).all(axis=1)
                gm_w[inside] *= 1.0 - pd
        search = float(weights.sum()) if grid else float(gm_w.sum())
        total += track + params.eta * search
    return total


def evaluate_sequence(
    pmbm: PMBMDensity,
    sensors_fixed: Sequence[tuple[SensorState, ControlSequence]],
    candidate: tuple[SensorState, ControlSequence],
    params: PlannerParams,
    ctx: PlanningContext,
) -> float:
    """Rollout objective of adding ``candidate`` to the committed sensors.

    Committed sensors update before the candidate within each rollout step.
    """
    half = ctx.sensor.fov_half_side
    pairs = list(sensors_fixed) + [candidate]
    paths = {
        i: _Path(sensor_trajectory(s, u, params.horizon_T, params.step), pmbm.undetected, half)
        for i, (s, u) in enumerate(pairs)
    }
    return _rollout_cost(_RolloutStart(pmbm, ctx), paths, params, ctx)


def sequential_greedy(
    n_sensors: int,
    n_options: int,
    cost_fn: Callable[[Mapping[int, int], int, int], float],
) -> tuple[dict[int, int], float]:
    """Commit the cheapest (sensor, option) pair, condition on it, repeat.

    ``cost_fn(committed, sensor, option)`` scores adding ``option`` for
    ``sensor`` to the ``committed`` map. Ties go to the lowest sensor, then the
    lowest option. Returns the assignment and the final objective value.
    """
    committed: dict[int, int] = {}
    last = 0.0
    while len(committed) < n_sensors:
        best = None
        for s in range(n_sensors):
            if s in committed:
                continue
            for o in range(n_options):
                c = cost_fn(committed, s, o)
                if best is None or c < best[0]:
                    best = (c, s, o)
        last, s, o = best
        committed[s] = o
    return committed, last


def greedy_assign(
    pmbm: PMBMDensity,
    sensors: Sequence[SensorState],
    params: PlannerParams,
    ctx: PlanningContext,
    sequences: Sequence[ControlSequence] | None = None,
) -> dict[int, ControlSequence]:
    """Sequentially greedy choice of one control sequence per sensor."""
    seqs = list(sequences) if sequences is not None else admissible_sequences(params)
    start = _RolloutStart(pmbm, ctx)
    half = ctx.sensor.fov_half_side
    trajs = [
        [
            _Path(sensor_trajectory(s, u, params.horizon_T, params.step), pmbm.undetected, half)
            for u in seqs
        ]
        for s in sensors
    ]

    def cost(committed: Mapping[int, int], s: int, o: int) -> float:
        tr = {i: trajs[i][j] for i, j in committed.items()}
        tr[s] = trajs[s][o]
        return _rollout_cost(start, tr, params, ctx)

    choice, _ = sequential_greedy(len(sensors), len(seqs), cost)
    return {s: seqs[o] for s, o in sorted(choice.items())}
