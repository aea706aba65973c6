import math
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numba import njit

from oracles import ctmc_stationary_occupancy, enumerate_jsq, small_states
from spatial_jsq import _kernels
from spatial_jsq.dynamics import (DomainError, SimConfig, SystemState, apply_arrival, apply_departure,
                                  assignment_distribution, default_imax, jsq_d_select, local_occupancy,
                                  rate_ratio, replication_seed, simulate, steady_state_estimate, step,
                                  tail_counts)
from spatial_jsq.graphs import build_graph, generate_complete, generate_configuration_regular


def star(queues):
    """One type connected to len(queues) servers holding the given queues."""
    k = len(queues)
    g = build_graph(k, 1, [(v, 0) for v in range(k)])
    return g, SystemState(np.array(queues))


# ---------------------------------------------------------------------------
# rate_ratio

def test_rate_ratio_examples():
    assert rate_ratio(0.5, 0.5, 2) == pytest.approx(1.0, abs=1e-15)
    for d in (2, 3, 5, 8):
        assert rate_ratio(1.0, 0.0, d) == pytest.approx(1.0, abs=1e-15)
        assert rate_ratio(0.3, 0.3, d) == pytest.approx(d * 0.3 ** (d - 1), rel=1e-14)
    assert rate_ratio(0.75, 0.25, 2) == pytest.approx(1.0, abs=1e-15)


def test_rate_ratio_domain():
    for x, y in ((0.2, 0.3), (1.1, 0.5), (0.5, -0.1)):
        with pytest.raises(DomainError):
            rate_ratio(x, y, 2)


def test_rate_ratio_vectorized_and_kernel_agree():
    rng = np.random.default_rng(0)
    y = rng.random(1000)
    x = y + (1 - y) * rng.random(1000)
    for d in (1, 2, 3, 5):
        vec = rate_ratio(x, y, d)
        kern = np.array([_kernels.rate_ratio_expansion(a, b, d) for a, b in zip(x, y)])
        assert np.allclose(vec, kern, rtol=1e-14, atol=0)
        gap = x - y
        far = gap > 1e-3
        direct = (x[far] ** d - y[far] ** d) / gap[far]
        assert np.allclose(vec[far], direct, rtol=1e-9)


ordered_pairs = st.tuples(st.floats(0, 1), st.floats(0, 1)).map(lambda t: (max(t), min(t)))


@settings(max_examples=500, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.sampled_from([2, 3, 5]))
def test_rate_ratio_monotone(a, b, c, e, d):
    # 0 <= y1 <= y2 <= x2 and y1 <= x1 <= x2
    y1, y2, x2 = sorted((a, b, c))
    x1 = y1 + e * (x2 - y1)
    assert rate_ratio(x1, y1, d) <= rate_ratio(x2, y2, d) + 1e-12


@settings(max_examples=500, deadline=None)
@given(ordered_pairs, ordered_pairs, st.sampled_from([2, 3, 5]))
def test_rate_ratio_lipschitz(p1, p2, d):
    (x1, y1), (x2, y2) = p1, p2
    k = (2 ** d - 1) * (d - 1)
    lhs = abs(rate_ratio(x1, y1, d) - rate_ratio(x2, y2, d))
    assert lhs <= k * (abs(x1 - x2) + abs(y1 - y2)) + 1e-9


# ---------------------------------------------------------------------------
# routing

def test_assignment_distribution_examples():
    g, s = star([0, 1])
    assert assignment_distribution(s, g, 0, 2) == pytest.approx([0.75, 0.25], abs=1e-15)
    g, s = star([0, 0, 1])
    assert assignment_distribution(s, g, 0, 2) == pytest.approx([4 / 9, 4 / 9, 1 / 9], abs=1e-15)
    g, s = star([2, 2, 2, 2])
    assert assignment_distribution(s, g, 0, 3) == pytest.approx([0.25] * 4, abs=1e-15)
    g, s = star([7])
    assert assignment_distribution(s, g, 0, 2) == pytest.approx([1.0])


def test_enumeration_oracle_examples():
    assert enumerate_jsq([0, 1], 2) == [Fraction(3, 4), Fraction(1, 4)]
    assert enumerate_jsq([0, 0, 1], 2) == [Fraction(4, 9), Fraction(4, 9), Fraction(1, 9)]


@pytest.mark.parametrize("d", [2, 3])
def test_assignment_distribution_equals_enumeration(d):
    worst = 0.0
    cnt = np.zeros(8, dtype=np.int64)
    out = np.empty(4)
    for qs in small_states():
        g, s = star(list(qs))
        exact = np.array([float(p) for p in enumerate_jsq(qs, d)])
        p = assignment_distribution(s, g, 0, d)
        nbrs = g.type_neighbors(0)
        total = _kernels.assignment_probs(nbrs, s.queues, d, cnt, out)
        worst = max(worst, np.abs(p - exact).max(), np.abs(out[:len(qs)] - exact).max())
        assert abs(p.sum() - 1.0) <= 1e-12 and abs(total - 1.0) <= 1e-12
        assert not cnt.any()
    assert worst <= 1e-12


def test_jsq_select_monte_carlo():
    g, s = star([0, 1])
    rng = np.random.default_rng(1)
    n = 40_000
    hits = sum(jsq_d_select(s, g, 0, 2, rng) == 0 for _ in range(n))
    se = math.sqrt(0.75 * 0.25 / n)
    assert abs(hits / n - 0.75) < 4 * se


def test_jsq_select_forced_and_symmetric():
    g, s = star([5])
    rng = np.random.default_rng(2)
    assert all(jsq_d_select(s, g, 0, 3, rng) == 0 for _ in range(20))
    g, s = star([1, 1, 1])
    counts = np.bincount([jsq_d_select(s, g, 0, 2, rng) for _ in range(30_000)], minlength=3)
    se = math.sqrt(1 / 3 * 2 / 3 / 30_000)
    assert np.all(np.abs(counts / 30_000 - 1 / 3) < 4 * se)


@njit
def _kernel_choices(nbrs, queues, d, n, seed):
    np.random.seed(seed)
    buf = np.empty(d, dtype=np.int64)
    cand = np.empty(d, dtype=np.int64)
    out = np.zeros(queues.size, dtype=np.int64)
    for _ in range(n):
        out[_kernels.select_server(nbrs, queues, d, buf, cand)] += 1
    return out


@pytest.mark.parametrize("qs,d", [((0, 1), 2), ((0, 0, 1), 2), ((2, 0, 1, 0), 3), ((3, 3, 1), 2)])
def test_kernel_select_matches_law(qs, d):
    n = 200_000
    counts = _kernel_choices(np.arange(len(qs), dtype=np.int64), np.array(qs, dtype=np.int64), d, n, 7)
    exact = np.array([float(p) for p in enumerate_jsq(qs, d)])
    se = np.sqrt(exact * (1 - exact) / n) + 1e-12
    assert np.all(np.abs(counts / n - exact) <= 4 * se)


# ---------------------------------------------------------------------------
# state bookkeeping

def test_local_occupancy_examples():
    g, s = star([0, 0, 0])
    assert local_occupancy(s, g, 0, 4).values.tolist() == [0, 0, 0, 0]
    g, s = star([3, 3])
    assert local_occupancy(s, g, 0, 4).values.tolist() == [1, 1, 1, 0]
    g, s = star([0, 1])
    assert local_occupancy(s, g, 0, 2).values.tolist() == [0.5, 0]


def test_tail_counts_and_growth():
    s = SystemState(np.array([0, 2, 5]))
    assert s.tail[:7].tolist() == [3, 2, 2, 1, 1, 1, 0]
    assert s.total_tasks == 7
    small = SystemState(np.array([1, 1]), tail=tail_counts([1, 1], 3))
    for _ in range(10):
        apply_arrival(small, 0)
    small.check()
    assert small.queues[0] == 11 and small.total_tasks == 12
    assert apply_departure(small, 1) and not apply_departure(small, 1)
    small.check()


def test_python_step_invariants():
    g = generate_configuration_regular(20, 20, 3, seed=4)
    s = SystemState.empty(20)
    rng = np.random.default_rng(3)
    kinds = set()
    for _ in range(3000):
        before_tail, before_t = s.tail.copy(), s.time
        kind = step(s, g, 0.8, 2, rng)
        kinds.add(kind)
        n = max(before_tail.size, s.tail.size)
        diff = np.pad(s.tail, (0, n - s.tail.size)) - np.pad(before_tail, (0, n - before_tail.size))
        assert s.time > before_t
        if kind == "null":
            assert not diff.any()
        else:
            assert np.count_nonzero(diff) == 1 and np.abs(diff).sum() == 1
            assert diff.sum() == (1 if kind == "arrival" else -1)
        q = s.tail[1:]
        assert np.all(q[:-1] >= q[1:])
        assert s.total_tasks == s.queues.sum()
    s.check()
    assert kinds == {"arrival", "departure", "null"}


# ---------------------------------------------------------------------------
# simulation

def test_default_imax():
    assert default_imax(0.9) == math.ceil(math.log(1e-6) / math.log(0.9))
    assert default_imax(1.2) == 200


def test_replication_seed_is_stable():
    assert replication_seed(1, 2, 3) == replication_seed(1, 2, 3)
    assert replication_seed(1, 2, 3) != replication_seed(1, 3, 2)
    assert 0 <= replication_seed(2 ** 64 - 1, 0) < 2 ** 32


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(1.0)
    with pytest.raises(ValueError):
        SimConfig(0.5, warmup=10, horizon=5)
    with pytest.raises(ValueError):
        SimConfig(0.5, horizon=5, warmup=0, sample_times=[6.0])


def test_zero_horizon_trajectory():
    g = generate_complete(5, 5)
    res = simulate(g, SimConfig(0.5, 2, 0.0, 0.0, [0.0], imax=4))
    traj = res.trajectory()
    assert len(traj) == 1 and traj[0][0] == 0.0
    assert traj[0][1].values.tolist() == [0, 0, 0, 0]
    assert res.events == 0


def test_arrival_rate():
    g = generate_configuration_regular(200, 200, 4, seed=1)
    lam, horizon = 0.7, 500.0
    res = simulate(g, SimConfig(lam, 2, horizon, 0.0, seed=5))
    mean = lam * g.n_servers * horizon
    assert abs(res.arrivals - mean) < 3 * math.sqrt(mean)
    assert res.arrivals - res.departures == res.final.total_tasks


def test_recount_mode_and_final_state():
    g = generate_configuration_regular(100, 100, 3, seed=2)
    res = simulate(g, SimConfig(0.8, 2, 50.0, 0.0, np.linspace(0, 50, 11), seed=3, imax=30, check_every=1))
    res.final.check()
    occ = res.occupancy
    assert occ.shape == (11, 30)
    assert np.all(occ[:, :-1] >= occ[:, 1:])
    assert np.allclose(occ * 100, np.round(occ * 100), rtol=0, atol=1e-9)
    assert np.array_equal(occ[-1], res.final.occupancy(30).values)


def test_simulate_continues_from_state():
    g = generate_complete(10, 10)
    init = SystemState.constant(10, 3)
    res = simulate(g, SimConfig(0.5, 2, 1e-9, 0.0, [0.0], seed=1, imax=5), init)
    assert res.occupancy[0].tolist() == [1, 1, 1, 0, 0]
    assert init.queues.tolist() == [3] * 10   # caller's state untouched


def test_warns_when_unstable():
    g = build_graph(2, 2, [(0, 0), (1, 0), (1, 1)])
    with pytest.warns(RuntimeWarning):
        simulate(g, SimConfig(0.9, 2, 1.0, 0.0, seed=0, imax=5))


def test_steady_state_matches_exact_ctmc():
    # three servers, two types; rho = 0.6 so truncating at 12 tasks per server is harmless
    g = build_graph(3, 2, [(0, 0), (1, 0), (1, 1), (2, 1)])
    lam, d, imax = 0.4, 2, 6
    exact = ctmc_stationary_occupancy(g, lam, d, cap=12, imax=imax)
    est = steady_state_estimate(g, SimConfig(lam, d, 20_000.0, 100.0, seed=11, imax=imax), 20)
    se = est.stderr.values
    assert np.all(np.abs(est.mean.values - exact) <= 4 * se + 1e-4)
    assert exact[0] == pytest.approx(lam, abs=1e-6)   # q_1 = total load / N


def test_low_load():
    g = generate_complete(50, 50)
    est = steady_state_estimate(g, SimConfig(0.01, 2, 300.0, 50.0, seed=1), 4)
    assert est.mean[0] <= 0.02


def test_complete_graph_below_power_bound():
    g = generate_complete(200, 200)
    est = steady_state_estimate(g, SimConfig(0.9, 2, 400.0, 100.0, seed=2), 8)
    i = np.arange(1, len(est.mean) + 1)
    assert np.all(est.mean.values <= 0.9 ** i + 3 * est.stderr.values)


def test_steady_state_deterministic_and_thread_invariant():
    g = generate_configuration_regular(60, 60, 4, seed=1)
    cfg = SimConfig(0.8, 2, 60.0, 10.0, seed=9)
    a = steady_state_estimate(g, cfg, 4)
    b = steady_state_estimate(g, cfg, 4)
    c = steady_state_estimate(g, cfg, 4, threads=3)
    assert np.array_equal(a.replicates, b.replicates)
    assert np.array_equal(a.replicates, c.replicates)
    assert a.mean_queue == pytest.approx(a.replicates.sum(axis=1).mean())


def test_steady_state_warns_once_when_unstable():
    g = build_graph(2, 2, [(0, 0), (1, 0), (1, 1)])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        steady_state_estimate(g, SimConfig(0.9, 2, 5.0, 1.0, seed=0, imax=5), 3)
    assert len([w for w in rec if issubclass(w.category, RuntimeWarning)]) == 1
