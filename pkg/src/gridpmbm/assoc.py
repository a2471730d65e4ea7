"""Data association for the multi-Bernoulli mixture update.

Every prior global hypothesis yields an assignment problem. Rows are
measurements. Columns are the hypothesis' tracks followed by one new-target
column per measurement. An entry is the negative log-likelihood ratio of
detection versus misdetection. Murty's method ranks the assignments and each
one becomes a child global hypothesis.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import (
    BernoulliComponent,
    GaussianDensity,
    GaussianMixtureIntensity,
    GlobalHypothesis,
    GridIntensity,
    PMBMDensity,
    SensorModel,
    SensorState,
    log_gaussian,
)
from .gaussian import (
    bernoulli_detect_prob,
    gm_detect_probs,
    kalman_update,
    new_track_from_gm,
    update_bernoulli_missed,
)
from .grid import detection_mask, new_target_bernoullis

log = logging.getLogger(__name__)

# Floor for a zero misdetection likelihood (r = 1, p_D = 1); keeps costs finite.
_MIN_LOG_LIKELIHOOD = math.log(1e-300)


@dataclass(frozen=True)
class AssociationParams:
    gate_sigmas: float = 4.0
    max_hypotheses: int | None = 100
    hyp_prune: float = 1e-4
    r_prune: float = 1e-3
    supercell_sigmas: float = 3.0
    # N-scan pruning of confirmed tracks, counted in sensor updates; None disables
    n_scan: int | None = None
    n_scan_min_existence: float = 0.5


def gate(track: BernoulliComponent, z, sensor: SensorModel, gate_sigmas: float = 4.0) -> bool:
    """Closed ellipsoidal gate on the innovation."""
    H = sensor.H_full
    S = H @ track.density.cov @ H.T + sensor.R
    v = np.asarray(z, float) - H @ track.density.mean
    return float(v @ np.linalg.solve(S, v)) <= gate_sigmas**2


# ---------------------------------------------------------------------------
# Assignment
# ---------------------------------------------------------------------------


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, float] | None:
    """Minimum-cost assignment of every row to a distinct column.

    Returns (column per row, total cost), or None when no finite assignment
    exists.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.shape[0] == 0:
        return np.zeros(0, dtype=int), 0.0
    if cost.shape[0] > cost.shape[1]:
        return None
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError:
        return None
    total = float(cost[rows, cols].sum())
    if not math.isfinite(total):
        return None
    out = np.empty(cost.shape[0], dtype=int)
    out[rows] = cols
    return out, total


def murty(cost: np.ndarray) -> Iterator[tuple[tuple[int, ...], float]]:
    """Yield assignments (column per row) in nondecreasing total cost.

    Infinite entries are forbidden pairs. Ties come out in discovery order.
    """
    cost = np.asarray(cost, dtype=float)
    first = solve_assignment(cost)
    if first is None:
        return
    n_rows = cost.shape[0]
    tick = itertools.count()
    heap = [(first[1], next(tick), tuple(int(c) for c in first[0]), cost)]
    while heap:
        total, _, sol, mat = heapq.heappop(heap)
        yield sol, total
        fixed = mat.copy()
        for r in range(n_rows):
            child = fixed.copy()
            child[r, sol[r]] = np.inf
            res = solve_assignment(child)
            if res is not None:
                heapq.heappush(heap, (res[1], next(tick), tuple(int(c) for c in res[0]), child))
            # force (r, sol[r]) for the remaining subproblems
            c = sol[r]
            keep = fixed[r, c]
            fixed[r, :] = np.inf
            fixed[:, c] = np.inf
            fixed[r, c] = keep


def k_best_assignments(cost: np.ndarray, k: int) -> list[tuple[tuple[int, ...], float]]:
    if k < 1:
        raise ValueError("k must be at least 1")
    return list(itertools.islice(murty(cost), k))


# ---------------------------------------------------------------------------
# New-target candidates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NewTrackCandidate:
    existence: float
    density: object  # GaussianDensity or None
    likelihood: float


def new_track_candidates(
    undetected, Z, sensor_state: SensorState, sensor: SensorModel, params: AssociationParams
) -> list[NewTrackCandidate]:
    """First-detection Bernoulli and likelihood for each measurement of one scan."""
    Z = np.asarray(Z, dtype=float).reshape(-1, sensor.meas_dim)
    out = []
    if isinstance(undetected, GridIntensity):
        pd = detection_mask(undetected.spec, [sensor_state], sensor)
        for r, dens, L in new_target_bernoullis(undetected, Z, sensor, pd, params.supercell_sigmas):
            out.append(NewTrackCandidate(r, dens, L))
    elif isinstance(undetected, GaussianMixtureIntensity):
        pd = gm_detect_probs(undetected, sensor_state, sensor) if len(undetected) else None
        for z in Z:
            try:
                r, dens, L = new_track_from_gm(undetected, z, sensor, pd)
            except ValueError:
                r, dens, L = 0.0, None, 0.0
            out.append(NewTrackCandidate(r, dens, L))
    else:
        raise TypeError(f"unsupported undetected intensity {type(undetected).__name__}")
    return out


# ---------------------------------------------------------------------------
# Global hypothesis update
# ---------------------------------------------------------------------------


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _merge(entries: Sequence[tuple[float, dict]]) -> list[tuple[float, dict]]:
    """Sum the (linear) weights of hypotheses with identical assignments."""
    merged: dict[frozenset, list] = {}
    for w, amap in entries:
        key = frozenset(amap.items())
        if key in merged:
            merged[key][0] += w
        else:
            merged[key] = [w, amap]
    return [(w, a) for w, a in merged.values()]


def update_hypotheses(
    pmbm: PMBMDensity,
    Z,
    sensor_state: SensorState,
    sensor: SensorModel,
    params: AssociationParams = AssociationParams(),
    new_tracks: Sequence[NewTrackCandidate] | None = None,
) -> PMBMDensity:
    """Measurement update of the multi-Bernoulli mixture for one sensor scan.

    The undetected intensity is passed through unchanged; its missed-detection
    update is done by the caller.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, sensor.meas_dim)
    M = Z.shape[0]
    if new_tracks is None:
        new_tracks = new_track_candidates(pmbm.undetected, Z, sensor_state, sensor, params)
    if len(new_tracks) != M:
        raise ValueError("one new-track candidate per measurement is required")

    log_new = [_safe_log(c.likelihood) for c in new_tracks]
    next_id = pmbm.next_track_id
    new_ids: dict[int, int] = {}
    for m, cand in enumerate(new_tracks):
        if cand.existence > 0 and cand.density is not None:
            new_ids[m] = next_id
            next_id += 1

    children: dict[int, dict[int, BernoulliComponent]] = {}
    miss_cache: dict[tuple[int, int], tuple[int, float]] = {}
    det_cache: dict[tuple[int, int], dict[int, tuple[int, float]]] = {}
    H = sensor.H_full

    keep_hist = params.n_scan or 0

    def add_child(tid: int, existence: float, density, meas, history) -> int:
        lhs = children.setdefault(tid, {})
        lid = len(lhs)
        lhs[lid] = BernoulliComponent(existence, density, tid, lid, meas, history)
        return lid

    def expand(tid: int, lid: int) -> None:
        b = pmbm.tracks[tid][lid]
        hist = (b.history + (lid,))[-keep_hist:] if keep_hist else ()
        pd = bernoulli_detect_prob(b, sensor_state, sensor)
        missed, L_miss = update_bernoulli_missed(b, pd)
        miss_cache[tid, lid] = (
            add_child(tid, missed.existence, missed.density, None, hist),
            max(_safe_log(L_miss), _MIN_LOG_LIKELIHOOD),
        )
        dets: dict[int, tuple[int, float]] = {}
        if pd > 0 and M and b.existence > 0:
            S = H @ b.density.cov @ H.T + sensor.R
            innov = Z - H @ b.density.mean
            maha2 = np.einsum("mi,mi->m", innov, np.linalg.solve(S, innov.T).T)
            log_norm = log_gaussian(innov, np.zeros(sensor.meas_dim), S)
            for m in np.flatnonzero(maha2 <= params.gate_sigmas**2):
                m = int(m)
                mean, cov, _, _ = kalman_update(b.density.mean, b.density.cov, Z[m], sensor)
                lid_d = add_child(tid, 1.0, GaussianDensity(mean, cov), m, hist)
                dets[m] = (lid_d, math.log(b.existence * pd) + float(log_norm[m]))
        det_cache[tid, lid] = dets

    gap = -math.log(params.hyp_prune) if params.hyp_prune > 0 else math.inf
    entries: list[tuple[float, dict]] = []
    for hyp in pmbm.hypotheses:
        if hyp.weight <= 0:
            continue
        items = sorted(hyp.assignments.items())
        n = len(items)
        cost = np.full((M, n + M), np.inf)
        base = math.log(hyp.weight)
        miss_lids = []
        for i, (tid, lid) in enumerate(items):
            if (tid, lid) not in miss_cache:
                expand(tid, lid)
            mlid, lmiss = miss_cache[tid, lid]
            miss_lids.append(mlid)
            base += lmiss
            for m, (_, ldet) in det_cache[tid, lid].items():
                cost[m, i] = lmiss - ldet
        for m in range(M):
            cost[m, n + m] = -log_new[m]

        rows = np.flatnonzero(np.any(np.isfinite(cost), axis=1)) if M else np.zeros(0, int)
        if rows.size < M:
            log.warning("dropping %d measurement(s) with zero likelihood", M - rows.size)
        sub = cost[rows]

        if params.max_hypotheses is None:
            k = math.inf
        else:
            k = max(1, math.ceil(hyp.weight * params.max_hypotheses))
        best = None
        for count, (cols, c) in enumerate(murty(sub)):
            if count >= k:
                break
            if best is None:
                best = c
            elif c - best > gap:
                break
            amap = {}
            taken = {col: int(rows[r]) for r, col in enumerate(cols)}
            for i, (tid, lid) in enumerate(items):
                if i in taken:
                    amap[tid] = det_cache[tid, lid][taken[i]][0]
                else:
                    amap[tid] = miss_lids[i]
            for col, m in taken.items():
                if col >= n and m in new_ids:
                    amap[new_ids[m]] = 0
            entries.append((base - c, amap))

    if not entries:
        raise ValueError("degenerate hypothesis set")

    for m, tid in new_ids.items():
        cand = new_tracks[m]
        children[tid] = {0: BernoulliComponent(cand.existence, cand.density, tid, 0, m)}

    logw = np.array([e[0] for e in entries])
    w = np.exp(logw - logw.max())
    hyps = _merge(list(zip(w / w.sum(), (e[1] for e in entries))))
    hyps = _prune(hyps, params)

    # recycle improbable Bernoullis, then re-merge and re-prune
    if params.r_prune > 0:
        stripped = []
        for wt, amap in hyps:
            amap = {t: l for t, l in amap.items() if children[t][l].existence >= params.r_prune}
            stripped.append((wt, amap))
        hyps = _prune(_merge(stripped), params)

    if params.n_scan:
        hyps = _prune(_n_scan(hyps, children, params), params)

    tracks: dict[int, dict[int, BernoulliComponent]] = {}
    for _, amap in hyps:
        for tid, lid in amap.items():
            tracks.setdefault(tid, {})[lid] = children[tid][lid]
    tracks = {tid: dict(sorted(lhs.items())) for tid, lhs in sorted(tracks.items())}
    return PMBMDensity(
        pmbm.undetected,
        tracks,
        [GlobalHypothesis(float(wt), amap) for wt, amap in hyps],
        next_id,
    )


def _n_scan(hyps, children, params: AssociationParams) -> list[tuple[float, dict]]:
    """Drop hypotheses whose history of a confirmed track split from the best
    hypothesis' history more than ``n_scan`` updates ago."""
    top = max(hyps, key=lambda h: h[0])[1]
    anchors = {}
    for tid, lid in top.items():
        b = children[tid][lid]
        if b.existence >= params.n_scan_min_existence and len(b.history) == params.n_scan:
            anchors[tid] = b.history[0]
    if not anchors:
        return hyps
    kept = []
    for w, amap in hyps:
        ok = all(
            tid not in amap or children[tid][amap[tid]].history[:1] == (anc,)
            for tid, anc in anchors.items()
        )
        if ok:
            kept.append((w, amap))
    return kept


def _prune(hyps: list[tuple[float, dict]], params: AssociationParams) -> list[tuple[float, dict]]:
    total = sum(w for w, _ in hyps)
    hyps = [(w / total, a) for w, a in hyps]
    if params.hyp_prune > 0:
        kept = [(w, a) for w, a in hyps if w >= params.hyp_prune]
        hyps = kept or [max(hyps, key=lambda h: h[0])]
    if params.max_hypotheses is not None and len(hyps) > params.max_hypotheses:
        order = sorted(range(len(hyps)), key=lambda i: -hyps[i][0])[: params.max_hypotheses]
        hyps = [hyps[i] for i in sorted(order)]
    total = sum(w for w, _ in hyps)
    return [(w / total, a) for w, a in hyps]
