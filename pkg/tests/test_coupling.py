import math

import numpy as np
import pytest

from oracles import small_states
from spatial_jsq import _kernels, coupling
from spatial_jsq.coupling import (CoupledState, IntervalGap, OrderingViolation, coupled_arrival,
                                  coupled_departure, coupled_simulate, halving_time, interval_layout,
                                  mixing_experiment, stationary_start)
from spatial_jsq.dynamics import (SimConfig, SystemState, assignment_distribution, replication_seed,
                                  steady_state_estimate)
from spatial_jsq.graphs import build_graph, generate_complete, generate_configuration_regular


def pair_on_star(q1, q2):
    k = len(q1)
    g = build_graph(k, 1, [(v, 0) for v in range(k)])
    return CoupledState(g, SystemState(np.array(q1)), SystemState(np.array(q2)))


def route(q1, q2, u, d=2):
    cs = pair_on_star(q1, q2)
    coupled_arrival(cs, 0, d, u)
    return cs.last_routes


def test_interval_example():
    # X1 = (0, 0), X2 = (0, 1): p1 = (1/2, 1/2), p2 = (3/4, 1/4), shared (1/2, 1/4)
    shared, e1, e2 = interval_layout(np.array([0.5, 0.5]), np.array([0.75, 0.25]))
    assert shared.tolist() == [0.5, 0.75]
    assert e1.tolist() == [0.75, 1.0] and e2.tolist() == [1.0, 1.0]
    for u in (0.0, 0.2, 0.4999):
        assert route([0, 0], [0, 1], u) == (0, 0)
    for u in (0.5, 0.6, 0.7499):
        assert route([0, 0], [0, 1], u) == (1, 1)
    for u in (0.75, 0.9, 0.9999):
        assert route([0, 0], [0, 1], u) == (1, 0)


def test_identical_states_route_together():
    for u in np.linspace(0, 0.999, 37):
        a, b = route([2, 0, 1, 0], [2, 0, 1, 0], u, d=3)
        assert a == b


def test_arrival_preserves_order_and_updates_state():
    cs = pair_on_star([0, 0], [0, 1])
    coupled_arrival(cs, 0, 2, 0.9)
    assert cs.system1.queues.tolist() == [0, 1] and cs.system2.queues.tolist() == [1, 1]
    assert cs.ordered
    cs.system1.check()
    cs.system2.check()


def grid_marginals(q1, q2, d, grid, router):
    hits1 = np.zeros(len(q1))
    hits2 = np.zeros(len(q1))
    for u in grid:
        a, b = router(q1, q2, u, d)
        hits1[a] += 1
        hits2[b] += 1
    return hits1 / grid.size, hits2 / grid.size


def kernel_route(q1, q2, u, d):
    nbrs = np.arange(len(q1), dtype=np.int64)
    cnt = np.zeros(16, dtype=np.int64)
    p1, p2 = np.empty(len(q1)), np.empty(len(q1))
    _kernels.assignment_probs(nbrs, np.asarray(q1, dtype=np.int64), d, cnt, p1)
    _kernels.assignment_probs(nbrs, np.asarray(q2, dtype=np.int64), d, cnt, p2)
    return tuple(_kernels.coupled_route(nbrs, p1, p2, u))


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("router,n_grid,n_states", [(route, 1000, 12), (kernel_route, 20_000, 60)])
def test_marginals_on_uniform_grid(d, router, n_grid, n_states):
    grid = (np.arange(n_grid) + 0.5) / n_grid
    rng = np.random.default_rng(0)
    states = list(small_states(4, 3))
    for idx in rng.choice(len(states), n_states, replace=False):
        q1 = np.array(states[idx])
        q2 = q1 + rng.integers(0, 2, q1.size)
        cs = pair_on_star(q1, q2)
        p1 = assignment_distribution(cs.system1, cs.graph, 0, d)
        p2 = assignment_distribution(cs.system2, cs.graph, 0, d)
        m1, m2 = grid_marginals(q1, q2, d, grid, router)
        assert np.abs(m1 - p1).max() <= 2 / n_grid
        assert np.abs(m2 - p2).max() <= 2 / n_grid


def test_python_and_kernel_routes_agree():
    rng = np.random.default_rng(4)
    cnt = np.zeros(16, dtype=np.int64)
    p1 = np.empty(6)
    p2 = np.empty(6)
    for _ in range(300):
        k = int(rng.integers(1, 7))
        q1 = rng.integers(0, 4, k)
        q2 = q1 + rng.integers(0, 3, k)
        d = int(rng.integers(2, 4))
        nbrs = np.arange(k, dtype=np.int64)
        _kernels.assignment_probs(nbrs, q1.astype(np.int64), d, cnt, p1)
        _kernels.assignment_probs(nbrs, q2.astype(np.int64), d, cnt, p2)
        for u in rng.random(10):
            assert tuple(_kernels.coupled_route(nbrs, p1[:k], p2[:k], u)) == route(q1, q2, u, d)


def test_interval_gap_detection(monkeypatch):
    monkeypatch.setattr(coupling, "assignment_distribution", lambda s, g, w, d: np.array([0.5, 0.4]))
    with pytest.raises(IntervalGap):
        coupled_arrival(pair_on_star([0, 0], [0, 0]), 0, 2, 0.1)


def test_departure_examples():
    cs = coupled_departure(pair_on_star([0, 0], [0, 3]), 0)
    assert cs.system1.queues.tolist() == [0, 0] and cs.system2.queues.tolist() == [0, 3]
    cs = coupled_departure(cs, 1)
    assert cs.system2.queues.tolist() == [0, 2]
    for x in range(4):
        for y in range(x, 5):
            cs = coupled_departure(pair_on_star([x], [y]), 0)
            assert cs.system1.queues[0] <= cs.system2.queues[0]


def test_gap_of_state():
    cs = pair_on_star([0, 0, 1], [1, 2, 1])
    # q(1) = (1/3, 0), q(2) = (1, 1/3): gap = 2/3 + 1/3
    assert cs.gap() == pytest.approx(1.0)


def test_equal_starts_have_zero_gap():
    g = generate_configuration_regular(100, 100, 4, seed=3)
    init = SystemState(np.random.default_rng(1).integers(0, 4, 100))
    cfg = SimConfig(0.9, 2, 30.0, 0.0, np.linspace(0, 30, 31), seed=2, imax=20)
    res = coupled_simulate(g, cfg, init, init)
    assert not res.gaps.any() and res.violations == 0
    assert np.array_equal(res.final.system1.queues, res.final.system2.queues)


def test_ordering_and_local_ordering():
    g = generate_configuration_regular(200, 200, 5, seed=8)
    times = np.linspace(0, 40, 41)
    cfg = SimConfig(0.9, 2, 40.0, 0.0, times, seed=5, imax=12)
    res = coupled_simulate(g, cfg, SystemState.empty(200), SystemState.constant(200, 5),
                           check_every=1, keep_states=True)
    assert res.violations == 0 and res.events > 10_000
    assert np.all(res.snapshots1 <= res.snapshots2)
    levels = np.arange(1, 8)
    for s1, s2 in zip(res.snapshots1, res.snapshots2):
        for w in range(g.n_types):
            nb = g.type_neighbors(w)
            a = (s1[nb][:, None] >= levels).sum(axis=0)
            b = (s2[nb][:, None] >= levels).sum(axis=0)
            assert np.all(a <= b)
    res.final.system1.check()
    res.final.system2.check()
    assert res.gaps[0] == pytest.approx(5.0)


def test_unordered_starts_track_gap_only():
    g = generate_complete(50, 50)
    cfg = SimConfig(0.9, 2, 20.0, 0.0, [0.0, 10.0, 20.0], seed=1, imax=10)
    res = coupled_simulate(g, cfg, SystemState.constant(50, 3), SystemState.empty(50))
    assert res.violations == 0
    assert res.gaps[0] == pytest.approx(3.0)


def test_ordering_violation_raises(monkeypatch):
    def broken(*args):
        out = list(real(*args))
        out[3] = 1
        return tuple(out)
    real = _kernels.run_coupled
    monkeypatch.setattr(_kernels, "run_coupled", broken)
    g = generate_complete(10, 10)
    cfg = SimConfig(0.5, 2, 1.0, 0.0, [0.0], seed=1, imax=5)
    with pytest.raises(OrderingViolation):
        coupled_simulate(g, cfg, SystemState.empty(10), SystemState.constant(10, 1))


def test_gap_decays_on_complete_graph():
    g = generate_complete(500, 500)
    times = np.array([0.0, 5.0, 50.0])
    gaps = []
    for r in range(20):
        cfg = SimConfig(0.9, 2, 50.0, 0.0, times, seed=replication_seed(3, r), imax=30)
        gaps.append(coupled_simulate(g, cfg, SystemState.empty(500), SystemState.constant(500, 5)).gaps)
    gaps = np.array(gaps)
    assert gaps[:, 2].mean() < gaps[:, 1].mean() < gaps[:, 0].mean()


def test_coupled_marginals_match_standalone():
    g = generate_configuration_regular(200, 200, 6, seed=1)
    lam, imax, reps = 0.85, 8, 20
    times = np.arange(100.0, 400.0 + 1e-9, 1.0)
    avg1, avg2 = [], []
    for r in range(reps):
        cfg = SimConfig(lam, 2, 400.0, 0.0, times, seed=replication_seed(17, r), imax=imax)
        res = coupled_simulate(g, cfg, SystemState.empty(200), SystemState.constant(200, 5))
        avg1.append(res.occupancy1.mean(axis=0))
        avg2.append(res.occupancy2.mean(axis=0))
    ref = steady_state_estimate(g, SimConfig(lam, 2, 400.0, 100.0, seed=23, imax=imax), reps)
    for avg in (np.array(avg1), np.array(avg2)):
        m = avg.mean(axis=0)
        se = avg.std(axis=0, ddof=1) / math.sqrt(reps)
        assert np.all(np.abs(m - ref.mean.values) <= 3 * np.hypot(se, ref.stderr.values) + 1e-12)


def test_halving_time():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    assert halving_time(t, np.array([4.0, 3.0, 1.0, 0.5])) == pytest.approx(1.5)
    assert halving_time(t, np.array([4.0, 3.9, 3.8, 3.7])) == math.inf
    assert halving_time(t, np.array([0.0, 0.0, 0.0, 0.0])) == 0.0


def test_mixing_experiment_start_gap_equals_stationary_mass():
    g = generate_configuration_regular(150, 150, 5, seed=2)
    cfg = SimConfig(0.9, 2, 10.0, 0.0, [0.0, 2.0, 5.0, 10.0], seed=4, imax=20)
    res = mixing_experiment(g, cfg, steady_warmup=100.0, replications=4)
    for r in range(4):
        start = stationary_start(g, cfg, 100.0, replication_seed(cfg.seed, r, 0))
        assert res.gaps[r, 0] == pytest.approx(start.total_tasks / 150, abs=1e-12)
    assert res.violations == 0
    assert res.gap_mean[-1] < res.gap_mean[0]
    assert np.all(np.isfinite(res.halving_times)) and res.halving_mean > 0


def test_mixing_reports_inf_halving_without_warnings():
    g = generate_complete(20, 20)
    cfg = SimConfig(0.9, 2, 0.01, 0.0, [0.0, 0.01], seed=1, imax=10)
    with np.errstate(all="raise"):
        res = mixing_experiment(g, cfg, steady_warmup=50.0, replications=3)
        assert res.halving_mean == math.inf and res.halving_stderr == math.inf
