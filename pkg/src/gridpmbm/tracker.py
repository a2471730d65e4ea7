"""One PMBM filter iteration (predict, then sequential per-sensor updates).

The same code path serves both undetected-intensity representations; only
the PPP handling differs. Wall-clock time is split into two buckets:
maintaining existing tracks, and handling the undetected intensity including
initiation of new tracks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assoc import AssociationParams, new_track_candidates, update_hypotheses
from .core import (
    BernoulliComponent,
    GaussianMixtureIntensity,
    GridIntensity,
    MotionModel,
    PMBMDensity,
    SensorModel,
    SensorState,
)
from .gaussian import (
    extract_estimates,
    gm_detect_probs,
    predict_bernoulli,
    predict_gm_ppp,
    prune_gm,
    update_gm_ppp_missed,
)
from .grid import ConvolutionKernel, build_kernel, fov_slices, predict_grid


@dataclass(frozen=True, eq=False)
class TrackerConfig:
    motion: MotionModel
    sensor: SensorModel
    birth: GridIntensity | GaussianMixtureIntensity
    kernel: ConvolutionKernel | None = None
    assoc: AssociationParams = field(default_factory=AssociationParams)
    gm_prune_weight: float = 1e-5
    gm_max_components: int = 300
    r_extract: float = 0.5
    kernel_sigmas: float = 4.0

    def __post_init__(self):
        if isinstance(self.birth, GridIntensity) and self.kernel is None:
            object.__setattr__(
                self,
                "kernel",
                build_kernel(self.motion, self.birth.phi_prior, self.birth.spec, self.kernel_sigmas),
            )

    @property
    def uses_grid(self) -> bool:
        return isinstance(self.birth, GridIntensity)


@dataclass
class StepTiming:
    track: float = 0.0
    undetected: float = 0.0

    def __iadd__(self, other: "StepTiming") -> "StepTiming":
        self.track += other.track
        self.undetected += other.undetected
        return self


def predict_undetected(undetected, cfg: TrackerConfig):
    if isinstance(undetected, GridIntensity):
        return predict_grid(undetected, cfg.birth, cfg.kernel, cfg.motion.survival_prob)
    gm = predict_gm_ppp(undetected, cfg.birth, cfg.motion)
    return prune_gm(gm, cfg.gm_prune_weight, cfg.gm_max_components)


def missed_undetected(undetected, sensor_state: SensorState, sensor: SensorModel):
    """Missed-detection update of the undetected intensity for one sensor."""
    if isinstance(undetected, GridIntensity):
        s0, s1 = fov_slices(undetected.spec, sensor_state.position, sensor.fov_half_side)
        w = undetected.weights.copy()
        w[s0, s1] *= 1.0 - sensor.detect_prob
        return undetected.with_weights(w)
    if len(undetected) == 0:
        return undetected
    return update_gm_ppp_missed(undetected, gm_detect_probs(undetected, sensor_state, sensor))


def predict_tracks(pmbm: PMBMDensity, motion: MotionModel) -> dict:
    return {
        tid: {lid: predict_bernoulli(b, motion) for lid, b in lhs.items()}
        for tid, lhs in pmbm.tracks.items()
    }


def predict(pmbm: PMBMDensity, cfg: TrackerConfig) -> tuple[PMBMDensity, StepTiming]:
    timing = StepTiming()
    t0 = time.perf_counter()
    undetected = predict_undetected(pmbm.undetected, cfg)
    t1 = time.perf_counter()
    tracks = predict_tracks(pmbm, cfg.motion)
    t2 = time.perf_counter()
    timing.undetected = t1 - t0
    timing.track = t2 - t1
    return pmbm.replace(undetected=undetected, tracks=tracks), timing


def update(
    pmbm: PMBMDensity,
    scans: Sequence[tuple[SensorState, np.ndarray]],
    cfg: TrackerConfig,
) -> tuple[PMBMDensity, StepTiming]:
    """Apply each sensor's measurement set in turn."""
    timing = StepTiming()
    for sensor_state, Z in scans:
        Z = np.asarray(Z, dtype=float).reshape(-1, cfg.sensor.meas_dim)
        t0 = time.perf_counter()
        cands = new_track_candidates(pmbm.undetected, Z, sensor_state, cfg.sensor, cfg.assoc)
        undetected = missed_undetected(pmbm.undetected, sensor_state, cfg.sensor)
        if isinstance(undetected, GaussianMixtureIntensity):
            undetected = prune_gm(undetected, cfg.gm_prune_weight, cfg.gm_max_components)
        t1 = time.perf_counter()
        pmbm = update_hypotheses(pmbm, Z, sensor_state, cfg.sensor, cfg.assoc, new_tracks=cands)
        t2 = time.perf_counter()
        pmbm = pmbm.replace(undetected=undetected)
        timing.undetected += t1 - t0
        timing.track += t2 - t1
    return pmbm, timing


class Tracker:
    """Stateful wrapper: holds the current posterior."""

    def __init__(self, cfg: TrackerConfig, initial: PMBMDensity | None = None):
        self.cfg = cfg
        if initial is None:
            if cfg.uses_grid:
                undetected = cfg.birth.with_weights(np.zeros(cfg.birth.spec.shape))
            else:
                undetected = GaussianMixtureIntensity.empty(cfg.motion.dim)
            initial = PMBMDensity.initial(undetected)
        self.pmbm = initial

    def step(self, scans) -> StepTiming:
        self.pmbm, timing = predict(self.pmbm, self.cfg)
        self.pmbm, t_upd = update(self.pmbm, scans, self.cfg)
        timing += t_upd
        return timing

    def estimates(self):
        return extract_estimates(self.pmbm, self.cfg.r_extract)

    def top_bernoullis(self) -> list[BernoulliComponent]:
        return list(self.pmbm.bernoullis())
