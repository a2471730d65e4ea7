"""Grid-based intensity of undetected targets.

Prediction uses a simplified Rao-Blackwellised point-mass step. Every cell
shares one velocity prior, so the transition over positions is the same
Gaussian stencil everywhere. Applying it is a 2-D convolution of the
survival-scaled weights. The missed-detection update is elementwise.
First-time detections become Gaussian Bernoulli components by treating the
intensity as locally uniform over a supercell around the measurement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .core import (
    GaussianDensity,
    GridIntensity,
    GridSpec,
    MotionModel,
    SensorModel,
    SensorState,
    symmetrize,
)


class MeasurementOutsideGrid(ValueError):
    pass


class ZeroLikelihood(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConvolutionKernel:
    """Truncated transition stencil: mass moving from cell i to cell i + offset."""

    offsets: np.ndarray
    values: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.int64).reshape(-1, 2)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (offsets.shape[0],):
            raise ValueError("one value per offset")
        if np.any(values < 0):
            raise ValueError("kernel values must be nonnegative")
        if values.sum() > 1 + 1e-6:
            raise ValueError("kernel mass exceeds one")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "values", values)

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in o): float(v) for o, v in zip(self.offsets, self.values)}


@dataclass(frozen=True, eq=False)
class Supercell:
    cell_indices: np.ndarray  # (n, 2) int
    union_box: tuple[np.ndarray, np.ndarray]  # lower / upper corner of the covering rectangle

    def __len__(self) -> int:
        return self.cell_indices.shape[0]


def kernel_moments(model: MotionModel, phi_prior: GaussianDensity) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the position displacement over one step."""
    B = model.F_thetaphi
    mean = B @ phi_prior.mean
    cov = symmetrize(B @ phi_prior.cov @ B.T + model.Q_theta)
    return mean, cov


def build_kernel(
    model: MotionModel,
    phi_prior: GaussianDensity,
    spec: GridSpec,
    trunc_sigmas: float = 4.0,
    renorm_tol: float = 1e-6,
) -> ConvolutionKernel:
    """Discretise the position-transition Gaussian onto grid offsets.

    The value at offset d is N(d * cell_size; mean, cov) * cell_area, kept
    where the Mahalanobis distance is within ``trunc_sigmas``. If the
    truncated lattice sum overshoots one by more than ``renorm_tol`` (coarse
    cells) it is rescaled to one; smaller overshoots are the exact lattice sum.
    """
    if trunc_sigmas <= 0:
        raise ValueError("trunc_sigmas must be positive")
    if not np.allclose(model.F_theta, np.eye(model.F_theta.shape[0]), atol=1e-12):
        raise ValueError("a shift-invariant stencil needs an identity position transition")
    mean, cov = kernel_moments(model, phi_prior)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("degenerate transition kernel") from exc
    if np.linalg.cond(cov) > 1e12:
        raise ValueError("degenerate transition kernel")

    h = np.asarray(spec.cell_size)
    half = trunc_sigmas * np.sqrt(np.diag(cov))
    lo = np.ceil((mean - half) / h - 1e-9).astype(int)
    hi = np.floor((mean + half) / h + 1e-9).astype(int)
    d0, d1 = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    offsets = np.stack([d0.ravel(), d1.ravel()], axis=1)
    disp = offsets * h - mean
    sol = np.linalg.solve(L, disp.T)
    maha2 = np.sum(sol * sol, axis=0)
    keep = maha2 <= trunc_sigmas**2 * (1 + 1e-12)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    pdf = np.exp(-0.5 * (maha2[keep] + logdet + 2 * np.log(2 * np.pi)))
    values = pdf * spec.cell_area
    s = values.sum()
    if s > 1.0 + renorm_tol:
        values = values / s
    return ConvolutionKernel(offsets[keep], values, mean, cov)


def _same_spec(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise ValueError("grid specs do not match")


def predict_grid(
    intensity: GridIntensity,
    birth: GridIntensity,
    kernel: ConvolutionKernel,
    ps_per_cell=1.0,
    backend: str | None = None,
) -> GridIntensity:
    """Birth plus the survival-weighted stencil spread of the posterior weights."""
    _same_spec(intensity.spec, birth.spec)
    ps = np.broadcast_to(np.asarray(ps_per_cell, dtype=float), intensity.spec.shape)
    if np.any(ps < 0) or np.any(ps > 1):
        raise ValueError("survival probabilities must lie in [0, 1]")
    src = ps * intensity.weights
    out = np.array(birth.weights, dtype=float, copy=True)
    kernels.stencil_predict(src, kernel.offsets, kernel.values, out=out, backend=backend)
    return intensity.with_weights(out)


def update_grid_missed(intensity: GridIntensity, pd_per_cell) -> GridIntensity:
    """Scale each cell by its misdetection probability."""
    pd = np.asarray(pd_per_cell, dtype=float)
    if pd.ndim and pd.shape != intensity.spec.shape:
        raise ValueError(f"pd shape {pd.shape} != grid shape {intensity.spec.shape}")
    if np.any(pd < 0) or np.any(pd > 1):
        raise ValueError("detection probabilities must lie in [0, 1]")
    return intensity.with_weights(intensity.weights * (1.0 - pd))


def fov_slices(spec: GridSpec, position, half_side: float) -> tuple[slice, slice]:
    """Index block of cells whose midpoints lie inside a square FOV."""
    x, y = float(position[0]), float(position[1])
    return (
        spec.index_range(0, x - half_side, x + half_side),
        spec.index_range(1, y - half_side, y + half_side),
    )


def detection_mask(
    spec: GridSpec, sensors: Sequence[SensorState], model: SensorModel
) -> np.ndarray:
    """Per-cell detection probability: midpoint containment, max over sensors."""
    pd = np.zeros(spec.shape)
    for s in sensors:
        s0, s1 = fov_slices(spec, s.position, model.fov_half_side)
        block = pd[s0, s1]
        np.maximum(block, model.detect_prob, out=block)
    return pd


def _gate_box(spec: GridSpec, center: np.ndarray, cov: np.ndarray, gate: float):
    half = gate * np.sqrt(np.diag(cov))
    return (
        spec.index_range(0, center[0] - half[0], center[0] + half[0]),
        spec.index_range(1, center[1] - half[1], center[1] + half[1]),
    )


def select_supercell(
    spec: GridSpec, z, sensor: SensorModel, gate_sigmas: float = 3.0
) -> Supercell:
    """Cells whose midpoints fall inside the measurement's Mahalanobis gate.

    Always contains the (clamped) cell holding the back-projected measurement.
    """
    if gate_sigmas <= 0:
        raise ValueError("gate_sigmas must be positive")
    z = np.asarray(z, dtype=float)
    center = sensor.H_inv @ z
    P = sensor.H_inv @ sensor.R @ sensor.H_inv.T
    P_inv = np.linalg.inv(P)

    nearest = np.clip(center, spec.lower, spec.upper)
    d = center - nearest
    if d @ P_inv @ d > gate_sigmas**2:
        raise MeasurementOutsideGrid("measurement outside surveillance region")

    s0, s1 = _gate_box(spec, center, P, gate_sigmas)
    i0 = np.arange(spec.counts[0])[s0]
    i1 = np.arange(spec.counts[1])[s1]
    g0, g1 = np.meshgrid(i0, i1, indexing="ij")
    idx = np.stack([g0.ravel(), g1.ravel()], axis=1)
    if idx.size:
        mids = spec.lower + (idx + 0.5) * np.asarray(spec.cell_size)
        diff = mids - center
        maha2 = np.einsum("ni,ij,nj->n", diff, P_inv, diff)
        idx = idx[maha2 <= gate_sigmas**2]
    home = np.array(spec.cell_of(center))
    if not np.any(np.all(idx == home, axis=1)):
        idx = np.vstack([idx.reshape(-1, 2), home[None, :]])
    h = np.asarray(spec.cell_size)
    box = (spec.lower + idx.min(axis=0) * h, spec.lower + (idx.max(axis=0) + 1) * h)
    return Supercell(idx.astype(int), box)


def supercell_mass(intensity: GridIntensity, supercell: Supercell, pd_per_cell) -> float:
    pd = np.broadcast_to(np.asarray(pd_per_cell, dtype=float), intensity.spec.shape)
    i, j = supercell.cell_indices[:, 0], supercell.cell_indices[:, 1]
    return float(np.sum(pd[i, j] * intensity.weights[i, j]))


def measurement_density(
    z, sensor: SensorModel, phi_prior: GaussianDensity
) -> GaussianDensity:
    """N(theta; H^-1 z, H^-1 R H^-T) x N(phi; phi_prior) over the full state."""
    z = np.asarray(z, dtype=float)
    n = sensor.state_dim
    t = np.asarray(sensor.theta_idx)
    f = np.asarray(sensor.phi_idx)
    mean = np.zeros(n)
    cov = np.zeros((n, n))
    mean[t] = sensor.H_inv @ z
    cov[np.ix_(t, t)] = symmetrize(sensor.H_inv @ sensor.R @ sensor.H_inv.T)
    mean[f] = phi_prior.mean
    cov[np.ix_(f, f)] = phi_prior.cov
    return GaussianDensity(mean, cov)


def new_target_bernoulli(
    intensity: GridIntensity,
    z,
    sensor: SensorModel,
    supercell: Supercell,
    pd_per_cell,
) -> tuple[float, GaussianDensity, float]:
    """Existence, density and likelihood of the Bernoulli a measurement spawns.

    The detected intensity is treated as uniform over the supercell, so the
    integral against the measurement likelihood is the supercell's mean
    intensity times |det H^-1|.
    """
    if len(supercell) == 0:
        raise ValueError("empty supercell")
    clutter = sensor.clutter_intensity
    if clutter < 0:
        raise ValueError("clutter intensity must be nonnegative")
    mass = supercell_mass(intensity, supercell, pd_per_cell)
    area = len(supercell) * intensity.spec.cell_area
    e = mass / area * sensor.abs_det_H_inv
    likelihood = clutter + e
    if not likelihood > 0:
        raise ZeroLikelihood("measurement has zero likelihood")
    density = measurement_density(z, sensor, intensity.phi_prior)
    return e / likelihood, density, likelihood


def supercell_stats(
    intensity: GridIntensity, Z, sensor: SensorModel, pd_per_cell, gate_sigmas: float = 3.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Supercell mass, cell count and an outside-grid flag for every row of ``Z``.

    Selects the same cells as :func:`select_supercell`, for a whole scan at
    once: a fixed window of offsets around each back-projected measurement is
    filtered by the gate, and the clamped home cell is always kept.
    """
    if gate_sigmas <= 0:
        raise ValueError("gate_sigmas must be positive")
    spec = intensity.spec
    Z = np.asarray(Z, dtype=float).reshape(-1, sensor.meas_dim)
    M = Z.shape[0]
    if M == 0:
        return np.zeros(0), np.zeros(0, int), np.zeros(0, bool)
    pdw = np.broadcast_to(np.asarray(pd_per_cell, dtype=float), spec.shape) * intensity.weights
    centers = Z @ sensor.H_inv.T
    P = sensor.H_inv @ sensor.R @ sensor.H_inv.T
    P_inv = np.linalg.inv(P)
    h = np.asarray(spec.cell_size)
    counts = np.asarray(spec.counts)

    d = centers - np.clip(centers, spec.lower, spec.upper)
    outside = np.einsum("mi,ij,mj->m", d, P_inv, d) > gate_sigmas**2

    k = np.ceil(gate_sigmas * np.sqrt(np.diag(P)) / h).astype(int) + 1
    o0, o1 = np.meshgrid(np.arange(-k[0], k[0] + 1), np.arange(-k[1], k[1] + 1), indexing="ij")
    offsets = np.stack([o0.ravel(), o1.ravel()], axis=1)  # (W, 2)
    base = np.floor((centers - spec.lower) / h).astype(int)  # unclamped home cell
    idx = base[:, None, :] + offsets[None, :, :]  # (M, W, 2)
    diff = spec.lower + (idx + 0.5) * h - centers[:, None, :]
    maha2 = np.einsum("mwi,ij,mwj->mw", diff, P_inv, diff)
    in_grid = np.all((idx >= 0) & (idx < counts), axis=2)
    keep = in_grid & (maha2 <= gate_sigmas**2)

    safe = np.where(keep[..., None], idx, 0)
    vals = np.where(keep, pdw[safe[..., 0], safe[..., 1]], 0.0)
    mass = vals.sum(axis=1)
    n = keep.sum(axis=1)

    home = np.clip(base, 0, counts - 1)
    home_kept = np.any(keep & np.all(idx == home[:, None, :], axis=2), axis=1)
    add = ~home_kept
    mass[add] += pdw[home[add, 0], home[add, 1]]
    n[add] += 1
    return mass, n, outside


def new_target_bernoullis(
    intensity: GridIntensity, Z, sensor: SensorModel, pd_per_cell, gate_sigmas: float = 3.0
) -> list[tuple[float, GaussianDensity | None, float]]:
    """:func:`new_target_bernoulli` for every row of ``Z``.

    Measurements outside the grid get (0, None, clutter intensity); zero
    likelihood gives (0, None, 0).
    """
    clutter = sensor.clutter_intensity
    if clutter < 0:
        raise ValueError("clutter intensity must be nonnegative")
    Z = np.asarray(Z, dtype=float).reshape(-1, sensor.meas_dim)
    mass, n, outside = supercell_stats(intensity, Z, sensor, pd_per_cell, gate_sigmas)
    e = mass / (n * intensity.spec.cell_area) * sensor.abs_det_H_inv
    out = []
    template = None
    t = list(sensor.theta_idx)
    for m, z in enumerate(Z):
        L = clutter + e[m]
        if outside[m]:
            out.append((0.0, None, clutter))
        elif not L > 0:
            out.append((0.0, None, 0.0))
        else:
            if template is None:
                template = measurement_density(z, sensor, intensity.phi_prior)
            mean = template.mean.copy()
            mean[t] = sensor.H_inv @ z
            out.append((e[m] / L, GaussianDensity(mean, template.cov.copy()), L))
    return out


def expected_undetected(intensity: GridIntensity, region=None) -> float:
    """Expected number of undetected targets, optionally within a rectangle.

    ``region`` is ((x_lo, y_lo), (x_hi, y_hi)); cells count by midpoint.
    """
    if region is None:
        return intensity.total
    (x0, y0), (x1, y1) = region
    s0 = intensity.spec.index_range(0, x0, x1)
    s1 = intensity.spec.index_range(1, y0, y1)
    return float(intensity.weights[s0, s1].sum())


def column_birth(
    spec: GridSpec, phi_prior: GaussianDensity, x: float, rate: float
) -> GridIntensity:
    """Birth weights spread evenly over the grid column whose midpoint is at ``x``."""
    mids = spec.axis_midpoints(0)
    col = int(np.argmin(np.abs(mids - x)))
    w = np.zeros(spec.shape)
    w[col, :] = rate / spec.counts[1]
    return GridIntensity(spec, w, phi_prior)
