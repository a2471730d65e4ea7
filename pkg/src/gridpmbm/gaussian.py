"""Linear-Gaussian PMBM pieces: Bernoulli prediction/update and the
Gaussian-mixture undetected intensity used as the baseline birth model."""

from __future__ import annotations

import numpy as np

from .core import (
    BernoulliComponent,
    GaussianDensity,
    GaussianMixtureIntensity,
    MotionModel,
    PMBMDensity,
    SensorModel,
    SensorState,
    log_gaussian,
    moment_match,
    symmetrize,
)


def kalman_predict(mean, cov, model: MotionModel):
    F = model.F
    return F @ mean, symmetrize(F @ cov @ F.T + model.Q)


def kalman_update(mean, cov, z, sensor: SensorModel):
    """Return (posterior mean, posterior cov, innovation, S)."""
    H = sensor.H_full
    S = symmetrize(H @ cov @ H.T + sensor.R)
    try:
        S_inv = np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular innovation covariance") from exc
    K = cov @ H.T @ S_inv
    innov = np.asarray(z, float) - H @ mean
    new_mean = mean + K @ innov
    new_cov = symmetrize(cov - K @ H @ cov)
    return new_mean, new_cov, innov, S


def predict_bernoulli(b: BernoulliComponent, model: MotionModel) -> BernoulliComponent:
    m, P = kalman_predict(b.density.mean, b.density.cov, model)
    return BernoulliComponent(
        model.survival_prob * b.existence, GaussianDensity(m, P), b.track_id, b.local_hyp_id,
        b.meas, b.history,
    )


def update_bernoulli_missed(b: BernoulliComponent, pd: float) -> tuple[BernoulliComponent, float]:
    """Misdetection hypothesis: (updated component, likelihood)."""
    if not 0.0 <= pd <= 1.0:
        raise ValueError("pd must lie in [0, 1]")
    r = b.existence
    L = 1.0 - r + r * (1.0 - pd)
    r_new = r * (1.0 - pd) / L if L > 0 else 0.0
    return BernoulliComponent(r_new, b.density, b.track_id, b.local_hyp_id), L


def update_bernoulli_detected(
    b: BernoulliComponent, z, sensor: SensorModel, pd: float | None = None
) -> tuple[BernoulliComponent, float]:
    """Detection hypothesis: existence becomes 1, Kalman-updated density."""
    pd = sensor.detect_prob if pd is None else pd
    m, P, innov, S = kalman_update(b.density.mean, b.density.cov, z, sensor)
    L = b.existence * pd * float(np.exp(log_gaussian(innov, np.zeros_like(innov), S)))
    return BernoulliComponent(1.0, GaussianDensity(m, P), b.track_id, b.local_hyp_id), L


def bernoulli_detect_prob(
    b: BernoulliComponent, sensor_state: SensorState, sensor: SensorModel
) -> float:
    """Detection probability of a Bernoulli, decided by its mean's FOV membership."""
    theta = b.density.mean[list(sensor.theta_idx)]
    return sensor.detect_prob if sensor.in_fov(sensor_state.position, theta) else 0.0


def extract_estimates(
    pmbm: PMBMDensity, r_threshold: float = 0.5
) -> list[tuple[int, GaussianDensity]]:
    """Bernoullis of the most likely global hypothesis with existence >= threshold."""
    if not pmbm.hypotheses:
        return []
    return [
        (b.track_id, b.density)
        for b in pmbm.bernoullis(pmbm.top_hypothesis())
        if b.existence >= r_threshold
    ]


# ---------------------------------------------------------------------------
# Gaussian-mixture undetected intensity
# ---------------------------------------------------------------------------


def predict_gm_ppp(
    gm: GaussianMixtureIntensity, birth: GaussianMixtureIntensity, model: MotionModel
) -> GaussianMixtureIntensity:
    """Survivors scaled by p_S and Kalman-predicted, then birth appended."""
    if len(gm) == 0 or model.survival_prob == 0.0:
        return GaussianMixtureIntensity(birth.weights.copy(), birth.means.copy(), birth.covs.copy())
    F, Q = model.F, model.Q
    means = gm.means @ F.T
    covs = symmetrize(F @ gm.covs @ F.T + Q)
    survived = GaussianMixtureIntensity(model.survival_prob * gm.weights, means, covs)
    return survived.concat(birth)


def gm_detect_probs(
    gm: GaussianMixtureIntensity, sensor_state: SensorState, sensor: SensorModel
) -> np.ndarray:
    """Per-component detection probability by mean containment in the FOV."""
    theta = gm.means[:, list(sensor.theta_idx)]
    return np.where(sensor.in_fov(sensor_state.position, theta), sensor.detect_prob, 0.0)


def update_gm_ppp_missed(gm: GaussianMixtureIntensity, pd) -> GaussianMixtureIntensity:
    """Scale weights by (1 - pd); ``pd`` is a scalar or one value per component."""
    pd = np.broadcast_to(np.asarray(pd, dtype=float), gm.weights.shape)
    if np.any(pd < 0) or np.any(pd > 1):
        raise ValueError("pd must lie in [0, 1]")
    return GaussianMixtureIntensity(gm.weights * (1.0 - pd), gm.means, gm.covs)


def new_track_from_gm(
    gm: GaussianMixtureIntensity, z, sensor: SensorModel, pd=None
) -> tuple[float, GaussianDensity | None, float]:
    """(existence, moment-matched density, likelihood) of a first detection.

    ``pd`` defaults to the sensor's detection probability for every component.
    The density is None when no component can have produced ``z``.
    """
    clutter = sensor.clutter_intensity
    if len(gm) == 0:
        if clutter > 0:
            return 0.0, None, clutter
        raise ValueError("measurement has zero likelihood")
    pd = np.broadcast_to(
        np.asarray(sensor.detect_prob if pd is None else pd, dtype=float), gm.weights.shape
    )
    active = (pd > 0) & (gm.weights > 0)
    if not np.any(active):
        if clutter > 0:
            return 0.0, None, clutter
        raise ValueError("measurement has zero likelihood")
    H = sensor.H_full
    means, covs = gm.means[active], gm.covs[active]
    S = symmetrize(H @ covs @ H.T + sensor.R)
    S_inv = np.linalg.inv(S)
    K = covs @ H.T @ S_inv
    pred_z = means @ H.T
    innov = np.asarray(z, float) - pred_z
    post_means = means + np.einsum("nij,nj->ni", K, innov)
    post_covs = symmetrize(covs - K @ H @ covs)
    logc = np.log(pd[active] * gm.weights[active]) + log_gaussian(innov, np.zeros_like(innov), S)
    c = np.exp(logc)
    e = float(c.sum())
    L = clutter + e
    if not L > 0:
        raise ValueError("measurement has zero likelihood")
    if e == 0.0:
        return 0.0, None, L
    density = moment_match(GaussianMixtureIntensity(c, post_means, post_covs))
    return e / L, density, L


def prune_gm(
    gm: GaussianMixtureIntensity, min_weight: float = 1e-5, max_components: int = 300
) -> GaussianMixtureIntensity:
    """Drop light components and keep at most ``max_components`` of the heaviest."""
    keep = np.flatnonzero(gm.weights >= min_weight)
    if keep.size > max_components:
        order = np.argsort(-gm.weights[keep], kind="stable")[:max_components]
        keep = np.sort(keep[order])
    return gm.select(keep)


def gm_expected_count(gm: GaussianMixtureIntensity) -> float:
    return gm.total_weight
