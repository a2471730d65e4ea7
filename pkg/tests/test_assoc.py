import itertools
import math

import numpy as np
import pytest

from gridpmbm.assoc import (
    AssociationParams,
    gate,
    k_best_assignments,
    murty,
    new_track_candidates,
    solve_assignment,
    update_hypotheses,
)
from gridpmbm.core import (
    BernoulliComponent,
    GaussianDensity,
    GlobalHypothesis,
    GridIntensity,
    GridSpec,
    PMBMDensity,
    SensorState,
    cv_sensor_model,
)

UNCAPPED = AssociationParams(gate_sigmas=1e3, max_hypotheses=None, hyp_prune=0.0, r_prune=0.0, n_scan=None)


def brute_assignments(cost):
    """Every row-to-distinct-column assignment with a finite cost, sorted."""
    n, m = cost.shape
    out = []
    for cols in itertools.permutations(range(m), n):
        c = sum(cost[r, cols[r]] for r in range(n))
        if math.isfinite(c):
            out.append(c)
    return sorted(out)


@pytest.mark.parametrize("seed", range(20))
def test_murty_enumerates_in_order(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(1, 4)
    m = rng.integers(n, 6)
    cost = rng.normal(size=(n, m))
    cost[rng.uniform(size=(n, m)) < 0.2] = np.inf
    ref = brute_assignments(cost)
    got = [c for _, c in murty(cost)]
    np.testing.assert_allclose(got, ref, atol=1e-12)
    sols = [s for s, _ in murty(cost)]
    assert len(set(sols)) == len(sols)


def test_solve_assignment_infeasible():
    assert solve_assignment(np.full((2, 3), np.inf)) is None
    assert solve_assignment(np.zeros((3, 2))) is None
    cols, c = solve_assignment(np.zeros((0, 4)))
    assert cols.size == 0 and c == 0.0


def test_k_best():
    cost = np.array([[1.0, 2.0], [3.0, 1.0]])
    best = k_best_assignments(cost, 5)
    assert [c for _, c in best] == [2.0, 5.0]
    assert best[0][0] == (0, 1)
    with pytest.raises(ValueError):
        k_best_assignments(cost, 0)


def test_gate(sensor):
    b = BernoulliComponent(0.9, GaussianDensity(np.zeros(4), np.diag([300.0, 1, 300.0, 1])), 0, 0)
    # S = 400 I, so a 4 sigma gate has radius 80 m
    assert gate(b, [79.0, 0.0], sensor)
    assert not gate(b, [81.0, 0.0], sensor)


# ---------------------------------------------------------------------------
# Exhaustive association oracle
# ---------------------------------------------------------------------------


def _random_instance(seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec((-300.0, -300.0), (10.0, 10.0), (60, 60))
    grid = GridIntensity(spec, rng.uniform(0, 2e-3, spec.shape), GaussianDensity(np.zeros(2), np.eye(2)))
    sensor = cv_sensor_model(10.0, 0.85, 1000.0, 3.0)
    n = int(rng.integers(0, 4))
    m = int(rng.integers(0, 4))

    def bern(tid, lid):
        mean = np.array([rng.uniform(-40, 40), rng.normal(), rng.uniform(-40, 40), rng.normal()])
        cov = np.diag([rng.uniform(50, 400), 1.0, rng.uniform(50, 400), 1.0])
        return BernoulliComponent(rng.uniform(0.2, 0.95), GaussianDensity(mean, cov), tid, lid)

    tracks = {t: {0: bern(t, 0)} for t in range(n)}
    hyps = [GlobalHypothesis(1.0, {t: 0 for t in range(n)})]
    # a second prior hypothesis over a strict subset of tracks, with its own local hypotheses
    if n and rng.uniform() < 0.6:
        subset = [t for t in range(n) if rng.uniform() < 0.5][: n - 1]
        for t in subset:
            tracks[t][1] = bern(t, 1)
        w = rng.uniform(0.2, 0.8)
        hyps = [GlobalHypothesis(w, {t: 0 for t in range(n)}), GlobalHypothesis(1 - w, {t: 1 for t in subset})]
    Z = rng.uniform(-50, 50, size=(m, 2))
    return PMBMDensity(grid, tracks, hyps, n), Z, sensor


def _brute_force(pmbm, Z, sensor, s):
    """Normalised weight of every (prior hypothesis, association) pair."""
    H, R, pd = sensor.H_full, sensor.R, sensor.detect_prob
    L_new = [c.likelihood for c in new_track_candidates(pmbm.undetected, Z, s, sensor, UNCAPPED)]
    M = len(Z)
    out = {}
    for hyp in pmbm.hypotheses:
        tids = sorted(hyp.assignments)
        for choice in itertools.product([None, *range(M)], repeat=len(tids)):
            used = [c for c in choice if c is not None]
            if len(set(used)) != len(used):
                continue
            w = hyp.weight
            for tid, c in zip(tids, choice):
                b = pmbm.tracks[tid][hyp.assignments[tid]]
                if c is None:
                    w *= 1 - b.existence * pd
                else:
                    S = H @ b.density.cov @ H.T + R
                    v = Z[c] - H @ b.density.mean
                    w *= b.existence * pd * np.exp(-0.5 * v @ np.linalg.solve(S, v)) / (2 * np.pi * np.sqrt(np.linalg.det(S)))
            for j in range(M):
                if j not in used:
                    w *= L_new[j]
            out[(frozenset(tids), choice)] = w
    total = sum(out.values())
    return {k: v / total for k, v in out.items()}


def association_oracle_error(seed) -> float:
    pmbm, Z, sensor = _random_instance(seed)
    s = SensorState((0.0, 0.0))
    post = update_hypotheses(pmbm, Z, s, sensor, UNCAPPED)
    ref = _brute_force(pmbm, Z, sensor, s)
    got = {}
    for h in post.hypotheses:
        old = sorted(t for t in h.assignments if t < pmbm.next_track_id)
        key = (frozenset(old), tuple(post.tracks[t][h.assignments[t]].meas for t in old))
        got[key] = got.get(key, 0.0) + h.weight
    if set(got) != set(ref):
        return math.inf
    return max(abs(got[k] - ref[k]) for k in ref)


@pytest.mark.parametrize("seed", range(100))
def test_update_matches_enumeration(seed):
    assert association_oracle_error(seed) <= 1e-10


def test_new_track_bookkeeping():
    pmbm, Z, sensor = _random_instance(7)
    post = update_hypotheses(pmbm, Z, SensorState((0.0, 0.0)), sensor, UNCAPPED)
    post.check()
    assert post.next_track_id == pmbm.next_track_id + len(Z)
    for tid in range(pmbm.next_track_id, post.next_track_id):
        b = post.tracks[tid][0]
        assert 0 < b.existence < 1
        assert b.meas == tid - pmbm.next_track_id


def test_capped_update_is_normalised():
    pmbm, Z, sensor = _random_instance(11)
    post = update_hypotheses(pmbm, Z, SensorState((0.0, 0.0)), sensor, AssociationParams(max_hypotheses=2))
    assert len(post.hypotheses) <= 2
    assert sum(h.weight for h in post.hypotheses) == pytest.approx(1.0)


def test_no_measurements_gives_missed_only(sensor):
    b = BernoulliComponent(0.8, GaussianDensity(np.zeros(4), np.eye(4) * 50), 0, 0)
    spec = GridSpec((-100.0, -100.0), (10.0, 10.0), (20, 20))
    pmbm = PMBMDensity(
        GridIntensity(spec, np.zeros(spec.shape), GaussianDensity(np.zeros(2), np.eye(2))),
        {0: {0: b}},
        [GlobalHypothesis(1.0, {0: 0})],
        1,
    )
    post = update_hypotheses(pmbm, np.zeros((0, 2)), SensorState((0.0, 0.0)), sensor, UNCAPPED)
    assert len(post.hypotheses) == 1
    r = post.tracks[0][post.hypotheses[0].assignments[0]].existence
    assert r == pytest.approx(0.8 * 0.1 / (1 - 0.8 * 0.9))


def _confirmed_track_pmbm(n_lids):
    """One track with several equally plausible local hypotheses carrying histories."""
    spec = GridSpec((-100.0, -100.0), (10.0, 10.0), (20, 20))
    grid = GridIntensity(spec, np.zeros(spec.shape), GaussianDensity(np.zeros(2), np.eye(2)))
    tracks = {
        0: {
            lid: BernoulliComponent(
                0.99, GaussianDensity(np.array([lid * 5.0, 0, 0, 0]), np.eye(4) * 50), 0, lid,
                history=(lid, 0, 0),
            )
            for lid in range(n_lids)
        }
    }
    hyps = [GlobalHypothesis(1.0 / n_lids + (0.01 if lid == 0 else 0.0), {0: lid}) for lid in range(n_lids)]
    total = sum(h.weight for h in hyps)
    hyps = [GlobalHypothesis(h.weight / total, dict(h.assignments)) for h in hyps]
    return PMBMDensity(grid, tracks, hyps, 1)


def test_n_scan_keeps_best_branch(sensor):
    pmbm = _confirmed_track_pmbm(3)
    Z = np.array([[1.0, 0.0]])
    params = AssociationParams(max_hypotheses=None, hyp_prune=0.0, r_prune=0.0, n_scan=4)
    post = update_hypotheses(pmbm, Z, SensorState((0.0, 0.0)), sensor, params)
    heads = {post.tracks[0][h.assignments[0]].history[0] for h in post.hypotheses}
    assert len(heads) == 1
    plain = update_hypotheses(pmbm, Z, SensorState((0.0, 0.0)), sensor, UNCAPPED)
    assert len(plain.hypotheses) > len(post.hypotheses)
