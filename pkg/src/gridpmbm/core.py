"""Densities, motion/sensor models and the PMBM state container.

All types are immutable value objects: operations return new instances and
never mutate their inputs. State vectors use the interleaved layout
``[p1, v1, p2, v2]``; the measured block (positions) and the unmeasured block
(velocities) are located through ``theta_idx`` / ``phi_idx``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


# ---------------------------------------------------------------------------
# Gaussian building blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"mean of shape {mean.shape} incompatible with covariance {cov.shape}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def check(self) -> None:
        """Raise if the covariance is not symmetric positive semidefinite."""
        P = self.cov
        scale = max(np.abs(P).max(), 1.0)
        if not np.allclose(P, P.T, rtol=1e-12, atol=1e-12 * scale):
            raise ValueError("covariance is not symmetric")
        eig = np.linalg.eigvalsh(symmetrize(P))
        if eig.min() < -1e-10 * max(np.trace(P), 1.0):
            raise ValueError("covariance is not positive semidefinite")


def log_gaussian(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log of N(x; mean, cov), broadcasting over leading axes of ``mean``/``cov``.

    ``x`` has shape (..., d). Raises ValueError on a singular covariance.
    """
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = mean.shape[-1]
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular covariance") from exc
    diff = np.broadcast_to(x - mean, np.broadcast_shapes(x.shape, mean.shape))
    sol = np.linalg.solve(L, diff[..., None])[..., 0]
    maha = np.sum(sol * sol, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * (d * LOG_2PI + logdet + maha)


def gaussian_eval(g: GaussianDensity, x) -> float:
    """Evaluate the normal pdf N(x; g.mean, g.cov)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != g.mean.shape:
        raise ValueError(f"point of shape {x.shape} does not match dimension {g.dim}")
    return float(np.exp(log_gaussian(x, g.mean, g.cov)))


@dataclass(frozen=True, eq=False)
class GaussianMixtureIntensity:
    """Weighted Gaussian mixture stored as stacked arrays.

    ``weights`` (N,), ``means`` (N, d), ``covs`` (N, d, d).
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        m = np.asarray(self.means, dtype=float)
        P = np.asarray(self.covs, dtype=float)
        if m.ndim == 1:
            m = m.reshape(w.size, -1)
        if P.ndim == 2 and w.size:
            P = P.reshape(w.size, m.shape[1], m.shape[1])
        if m.shape[0] != w.size or P.shape[0] != w.size or P.shape[1:] != (m.shape[1],) * 2:
            raise ValueError("mixture arrays have inconsistent shapes")
        if np.any(w < 0):
            raise ValueError("mixture weights must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", P)

    @classmethod
    def empty(cls, dim: int) -> "GaussianMixtureIntensity":
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))

    @classmethod
    def from_components(
        cls, components: Sequence[tuple[float, GaussianDensity]]
    ) -> "GaussianMixtureIntensity":
        if not components:
            raise ValueError("use GaussianMixtureIntensity.empty for an empty mixture")
        w = np.array([c[0] for c in components], dtype=float)
        m = np.stack([c[1].mean for c in components])
        P = np.stack([c[1].cov for c in components])
        return cls(w, m, P)

    def __len__(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def components(self) -> list[tuple[float, GaussianDensity]]:
        return [
            (float(w), GaussianDensity(m, P))
            for w, m, P in zip(self.weights, self.means, self.covs)
        ]

    def concat(self, other: "GaussianMixtureIntensity") -> "GaussianMixtureIntensity":
        return GaussianMixtureIntensity(
            np.concatenate([self.weights, other.weights]),
            np.concatenate([self.means, other.means]),
            np.concatenate([self.covs, other.covs]),
        )

    def select(self, mask) -> "GaussianMixtureIntensity":
        return GaussianMixtureIntensity(
            self.weights[mask], self.means[mask], self.covs[mask]
        )


def moment_match(mixture: GaussianMixtureIntensity) -> GaussianDensity:
    """Single Gaussian with the mixture's first two moments."""
    if len(mixture) == 0:
        raise ValueError("cannot moment-match an empty mixture")
    total = mixture.weights.sum()
    if not total > 0:
        raise ValueError("mixture has zero total weight")
    w = mixture.weights / total
    mean = w @ mixture.means
    d = mixture.means - mean
    cov = np.einsum("n,nij->ij", w, mixture.covs) + np.einsum("n,ni,nj->ij", w, d, d)
    return GaussianDensity(mean, symmetrize(cov))


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Regular tiling of the position plane into axis-aligned cells.

    Axis 0 of every weight matrix runs along ``p1`` and axis 1 along ``p2``.
    """

    origin: tuple[float, float]
    cell_size: tuple[float, float]
    counts: tuple[int, int]

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        cell = tuple(float(v) for v in self.cell_size)
        counts = tuple(int(v) for v in self.counts)
        if len(origin) != 2 or len(cell) != 2 or len(counts) != 2:
            raise ValueError("grid origin, cell_size and counts must be 2-vectors")
        if min(cell) <= 0:
            raise ValueError("cell_size must be positive")
        if min(counts) < 1:
            raise ValueError("counts must be at least 1")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cell_size", cell)
        object.__setattr__(self, "counts", counts)

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts

    @property
    def cell_area(self) -> float:
        return self.cell_size[0] * self.cell_size[1]

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.cell_size) * np.asarray(self.counts)

    def axis_midpoints(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.counts[axis]) + 0.5) * self.cell_size[axis]

    def midpoint(self, index) -> np.ndarray:
        i = np.asarray(index, dtype=float)
        return np.asarray(self.origin) + (i + 0.5) * np.asarray(self.cell_size)

    def cell_of(self, point) -> tuple[int, int]:
        """Index of the cell containing ``point``, clamped to the grid."""
        p = np.asarray(point, dtype=float)
        idx = np.floor((p - self.lower) / np.asarray(self.cell_size)).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.counts) - 1)
        return int(idx[0]), int(idx[1])

    def index_range(self, axis: int, lo: float, hi: float) -> slice:
        """Cells along ``axis`` whose midpoints lie in the closed interval [lo, hi]."""
        h = self.cell_size[axis]
        o = self.origin[axis]
        eps = 1e-9 * h
        first = math.ceil((lo - o) / h - 0.5 - eps / h)
        last = math.floor((hi - o) / h - 0.5 + eps / h)
        first = max(first, 0)
        last = min(last, self.counts[axis] - 1)
        if last < first:
            return slice(0, 0)
        return slice(first, last + 1)


@dataclass(frozen=True, eq=False)
class GridIntensity:
    """Undetected-target intensity: per-cell expected counts times a velocity prior."""

    spec: GridSpec
    weights: np.ndarray
    phi_prior: GaussianDensity

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != self.spec.shape:
            raise ValueError(f"weights shape {w.shape} != grid counts {self.spec.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("grid weights must be finite and nonnegative")
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def with_weights(self, weights: np.ndarray) -> "GridIntensity":
        return GridIntensity(self.spec, weights, self.phi_prior)


UndetectedIntensity = Union[GridIntensity, GaussianMixtureIntensity]


# ---------------------------------------------------------------------------
# Bernoulli / hypotheses / PMBM
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BernoulliComponent:
    """A potential target.

    ``meas`` is the measurement index used in the last update; ``history``
    holds the local hypothesis ids of its most recent ancestors, oldest first.
    """

    existence: float
    density: GaussianDensity
    track_id: int
    local_hyp_id: int
    meas: int | None = None
    history: tuple[int, ...] = ()

    def __post_init__(self):
        r = float(self.existence)
        if not (0.0 <= r <= 1.0 + 1e-12):
            raise ValueError(f"existence probability {r} outside [0, 1]")
        object.__setattr__(self, "existence", min(r, 1.0))


@dataclass(frozen=True)
class GlobalHypothesis:
    weight: float
    assignments: Mapping[int, int] = field(default_factory=dict)

    def key(self) -> frozenset:
        return frozenset(self.assignments.items())


def normalize_hypotheses(hyps: Sequence[GlobalHypothesis]) -> list[GlobalHypothesis]:
    """Rescale hypothesis weights to sum to one, keeping order."""
    total = sum(h.weight for h in hyps)
    if not total > 0:
        raise ValueError("degenerate hypothesis set")
    return [GlobalHypothesis(h.weight / total, dict(h.assignments)) for h in hyps]


@dataclass(frozen=True, eq=False)
class PMBMDensity:
    undetected: UndetectedIntensity
    tracks: Mapping[int, Mapping[int, BernoulliComponent]]
    hypotheses: Sequence[GlobalHypothesis]
    next_track_id: int = 0

    @classmethod
    def initial(cls, undetected: UndetectedIntensity) -> "PMBMDensity":
        """No detected targets: a single empty global hypothesis."""
        return cls(undetected, {}, [GlobalHypothesis(1.0, {})], 0)

    def replace(self, **changes) -> "PMBMDensity":
        kw = dict(
            undetected=self.undetected,
            tracks=self.tracks,
            hypotheses=self.hypotheses,
            next_track_id=self.next_track_id,
        )
        kw.update(changes)
        return PMBMDensity(**kw)

    def top_hypothesis(self) -> GlobalHypothesis:
        # max() keeps the first of equal weights
        return max(self.hypotheses, key=lambda h: h.weight)

    def bernoullis(self, hyp: GlobalHypothesis | None = None) -> Iterator[BernoulliComponent]:
        hyp = self.top_hypothesis() if hyp is None else hyp
        for tid in sorted(hyp.assignments):
            yield self.tracks[tid][hyp.assignments[tid]]

    def n_local_hypotheses(self) -> int:
        return sum(len(v) for v in self.tracks.values())

    def check(self) -> None:
        """Raise ValueError if any type invariant is violated."""
        total = sum(h.weight for h in self.hypotheses)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"hypothesis weights sum to {total}")
        for h in self.hypotheses:
            if h.weight < 0:
                raise ValueError("negative hypothesis weight")
            for tid, lid in h.assignments.items():
                if tid not in self.tracks or lid not in self.tracks[tid]:
                    raise ValueError(f"hypothesis references missing ({tid}, {lid})")
        for tid, lhs in self.tracks.items():
            for lid, b in lhs.items():
                if b.track_id != tid or b.local_hyp_id != lid:
                    raise ValueError("track bookkeeping mismatch")
                if not 0.0 <= b.existence <= 1.0:
                    raise ValueError("existence outside [0, 1]")
                b.density.check()
        if isinstance(self.undetected, GridIntensity):
            if np.any(self.undetected.weights < 0):
                raise ValueError("negative grid weight")
        elif np.any(self.undetected.weights < 0):
            raise ValueError("negative mixture weight")


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


def _complement(idx: Sequence[int], n: int) -> tuple[int, ...]:
    return tuple(i for i in range(n) if i not in set(idx))


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Linear-Gaussian transition split into measured (theta) and unmeasured (phi) blocks.

    ``Q_thetaphi`` defaults to zero; the nearly-constant-velocity model fills it
    so Bernoulli prediction uses the exact discretised noise. The grid kernel
    only ever reads ``Q_theta``.
    """

    F_theta: np.ndarray
    F_thetaphi: np.ndarray
    F_phitheta: np.ndarray
    F_phi: np.ndarray
    Q_theta: np.ndarray
    Q_phi: np.ndarray
    survival_prob: float
    step: float
    theta_idx: tuple[int, ...] = (0, 2)
    phi_idx: tuple[int, ...] = (1, 3)
    Q_thetaphi: np.ndarray | None = None

    def __post_init__(self):
        for name in ("F_theta", "F_thetaphi", "F_phitheta", "F_phi", "Q_theta", "Q_phi"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))
        nt, nf = len(self.theta_idx), len(self.phi_idx)
        shapes = {
            "F_theta": (nt, nt),
            "F_thetaphi": (nt, nf),
            "F_phitheta": (nf, nt),
            "F_phi": (nf, nf),
            "Q_theta": (nt, nt),
            "Q_phi": (nf, nf),
        }
        for name, shp in shapes.items():
            if getattr(self, name).shape != shp:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shp}")
        if self.Q_thetaphi is None:
            object.__setattr__(self, "Q_thetaphi", np.zeros((nt, nf)))
        else:
            object.__setattr__(self, "Q_thetaphi", np.asarray(self.Q_thetaphi, float).reshape(nt, nf))
        if not 0.0 <= self.survival_prob <= 1.0:
            raise ValueError("survival_prob must lie in [0, 1]")
        if sorted(self.theta_idx + self.phi_idx) != list(range(nt + nf)):
            raise ValueError("theta_idx and phi_idx must partition the state")

    @property
    def dim(self) -> int:
        return len(self.theta_idx) + len(self.phi_idx)

    def _assemble(self, tt, tf, ft, ff) -> np.ndarray:
        n = self.dim
        M = np.zeros((n, n))
        t, f = np.asarray(self.theta_idx), np.asarray(self.phi_idx)
        M[np.ix_(t, t)] = tt
        M[np.ix_(t, f)] = tf
        M[np.ix_(f, t)] = ft
        M[np.ix_(f, f)] = ff
        return M

    @cached_property
    def F(self) -> np.ndarray:
        return self._assemble(self.F_theta, self.F_thetaphi, self.F_phitheta, self.F_phi)

    @cached_property
    def Q(self) -> np.ndarray:
        return self._assemble(self.Q_theta, self.Q_thetaphi, self.Q_thetaphi.T, self.Q_phi)


def cv_model(
    tau: float = 10.0, sigma_w: float = 0.05, survival_prob: float = 0.99, ndim: int = 2
) -> MotionModel:
    """Nearly-constant-velocity model with Q = sigma_w^2 G G^T, state [p1, v1, p2, v2]."""
    I = np.eye(ndim)
    s2 = sigma_w**2
    return MotionModel(
        F_theta=I,
        F_thetaphi=tau * I,
        F_phitheta=np.zeros((ndim, ndim)),
        F_phi=I,
        Q_theta=s2 * tau**4 / 4.0 * I,
        Q_phi=s2 * tau**2 * I,
        Q_thetaphi=s2 * tau**3 / 2.0 * I,
        survival_prob=survival_prob,
        step=tau,
        theta_idx=tuple(range(0, 2 * ndim, 2)),
        phi_idx=tuple(range(1, 2 * ndim, 2)),
    )


@dataclass(frozen=True, eq=False)
class SensorModel:
    """Position sensor with a square field of view centred on the platform."""

    H: np.ndarray
    R: np.ndarray
    detect_prob: float
    fov_half_side: float
    clutter_rate: float
    theta_idx: tuple[int, ...] = (0, 2)
    state_dim: int = 4

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, float))
        R = np.atleast_2d(np.asarray(self.R, float))
        if H.shape[0] != H.shape[1] or H.shape[0] != len(self.theta_idx):
            raise ValueError("H must be square over the measured state block")
        if np.linalg.cond(H) > 1e12:
            raise ValueError("H must be invertible")
        if R.shape != H.shape:
            raise ValueError("R must match the measurement dimension")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc
        if not 0.0 <= self.detect_prob <= 1.0:
            raise ValueError("detect_prob must lie in [0, 1]")
        if self.fov_half_side <= 0:
            raise ValueError("fov_half_side must be positive")
        if self.clutter_rate < 0:
            raise ValueError("clutter_rate must be nonnegative")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)

    @property
    def meas_dim(self) -> int:
        return self.H.shape[0]

    @property
    def fov_area(self) -> float:
        return (2.0 * self.fov_half_side) ** self.meas_dim

    @property
    def clutter_intensity(self) -> float:
        return self.clutter_rate / self.fov_area

    @cached_property
    def H_inv(self) -> np.ndarray:
        return np.linalg.inv(self.H)

    @cached_property
    def abs_det_H_inv(self) -> float:
        return abs(float(np.linalg.det(self.H_inv)))

    @cached_property
    def H_full(self) -> np.ndarray:
        """Measurement matrix over the full state."""
        Hf = np.zeros((self.meas_dim, self.state_dim))
        Hf[:, list(self.theta_idx)] = self.H
        return Hf

    @property
    def phi_idx(self) -> tuple[int, ...]:
        return _complement(self.theta_idx, self.state_dim)

    def in_fov(self, sensor_position, points) -> np.ndarray:
        """Boolean mask: which ``points`` (..., 2) lie in the closed square FOV."""
        d = np.abs(np.asarray(points, float) - np.asarray(sensor_position, float))
        return np.all(d <= self.fov_half_side, axis=-1)


def cv_sensor_model(
    sigma_p: float = 10.0,
    detect_prob: float = 0.9,
    fov_side: float = 400.0,
    clutter_rate: float = 5.0,
) -> SensorModel:
    return SensorModel(
        H=np.eye(2),
        R=sigma_p**2 * np.eye(2),
        detect_prob=detect_prob,
        fov_half_side=fov_side / 2.0,
        clutter_rate=clutter_rate,
    )


@dataclass(frozen=True)
class SensorState:
    """Platform pose. Heading is kept in (-pi, pi]."""

    position: tuple[float, float]
    heading: float = 0.0
    speed: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))
