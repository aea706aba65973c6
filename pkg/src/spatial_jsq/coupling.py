"""Monotone coupling of two JSQ(d) systems on one graph.

Both copies share the Poisson clock, the event type, the arriving task type or
departing server, and one uniform per arrival. The uniform is routed through an
interval layout that first places the probability mass common to both systems
and then each system's residual mass, which keeps X1 <= X2 pathwise whenever it
holds initially.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import (SimConfig, SystemState, _map, _resolve_imax, apply_arrival,
                       apply_departure, assignment_distribution, replication_seed, simulate)
from .graphs import BipartiteGraph


class OrderingViolation(AssertionError):
    pass


class IntervalGap(ArithmeticError):
    pass


@dataclass
class CoupledState:
    graph: BipartiteGraph
    system1: SystemState
    system2: SystemState
    time: float = 0.0
    violation_count: int = 0
    last_routes: tuple[int, int] | None = None

    def __post_init__(self):
        n = self.graph.n_servers
        if self.system1.n_servers != n or self.system2.n_servers != n:
            raise ValueError("both systems must live on the coupling's graph")

    @property
    def ordered(self) -> bool:
        return bool(np.all(self.system1.queues <= self.system2.queues))

    def gap(self) -> float:
        """sum_i |q_i^(2) - q_i^(1)|."""
        t1, t2 = self.system1.tail, self.system2.tail
        size = max(t1.size, t2.size)
        t1 = np.pad(t1, (0, size - t1.size))
        t2 = np.pad(t2, (0, size - t2.size))
        return float(np.abs(t2[1:] - t1[1:]).sum() / self.graph.n_servers)


def interval_layout(p1: np.ndarray, p2: np.ndarray):
    """Interval boundaries for the coupling, per system.

    Returns ``(shared_edges, resid1_edges, resid2_edges)``: cumulative right
    endpoints of the common blocks min(p1, p2) in neighbor order, then of each
    system's residual blocks, offset by the total common mass.
    """
    shared = np.minimum(p1, p2)
    s = shared.sum()
    return np.cumsum(shared), s + np.cumsum(p1 - shared), s + np.cumsum(p2 - shared)


def _locate(u: float, shared_edges, resid_edges, resid) -> int:
    if u < shared_edges[-1]:
        return int(np.searchsorted(shared_edges, u, side="right"))
    j = int(np.searchsorted(resid_edges, u, side="right"))
    # skip empty residual blocks and absorb rounding at the far end
    while j < resid.size and resid[j] <= 0.0:
        j += 1
    if j >= resid.size:
        j = int(np.flatnonzero(resid > 0.0)[-1]) if np.any(resid > 0.0) else resid.size - 1
    return j


def coupled_arrival(cs: CoupledState, w: int, d: int, shared_uniform: float) -> CoupledState:
    """Route one type-``w`` arrival in both systems with a shared uniform in [0, 1)."""
    g = cs.graph
    p1 = assignment_distribution(cs.system1, g, w, d)
    p2 = assignment_distribution(cs.system2, g, w, d)
    for k, p in ((1, p1), (2, p2)):
        if abs(p.sum() - 1.0) > 1e-9:
            raise IntervalGap(f"system {k}: routing probabilities sum to {p.sum()!r}")
    shared_edges, e1, e2 = interval_layout(p1, p2)
    shared = np.minimum(p1, p2)
    j1 = _locate(shared_uniform, shared_edges, e1, p1 - shared)
    j2 = _locate(shared_uniform, shared_edges, e2, p2 - shared)
    nbrs = g.type_neighbors(w)
    v1, v2 = int(nbrs[j1]), int(nbrs[j2])
    apply_arrival(cs.system1, v1)
    apply_arrival(cs.system2, v2)
    cs.last_routes = (v1, v2)
    return cs


def coupled_departure(cs: CoupledState, v: int) -> CoupledState:
    apply_departure(cs.system1, v)
    apply_departure(cs.system2, v)
    return cs


@dataclass
class CoupledResult:
    times: np.ndarray
    gaps: np.ndarray
    occupancy1: np.ndarray
    occupancy2: np.ndarray
    violations: int
    events: int
    final: CoupledState
    snapshots1: np.ndarray | None = None
    snapshots2: np.ndarray | None = None


def coupled_simulate(g: BipartiteGraph, cfg: SimConfig, init1: SystemState, init2: SystemState,
                     check_every: int = 1000, keep_states: bool = False,
                     raise_on_violation: bool = True) -> CoupledResult:
    """Run the coupled pair on [0, cfg.horizon] and record the occupancy gap.

    When ``init1 <= init2`` componentwise the ordering is asserted on the
    touched servers after every event and in full every ``check_every`` events;
    otherwise only the gap is tracked.
    """
    imax = _resolve_imax(g, cfg)
    s1, s2 = init1.copy(), init2.copy()
    ordered = bool(np.all(s1.queues <= s2.queues))
    out = _kernels.run_coupled(
        g.type_ptr, g.type_idx, g.n_servers, g.n_types, float(cfg.lam), int(cfg.d),
        s1.queues, s2.queues, s1.tail.copy(), s2.tail.copy(), float(cfg.horizon),
        cfg.sample_times, int(imax), int(cfg.seed), ordered, int(check_every), bool(keep_states))
    gaps, occ1, occ2, violations, events, tail1, tail2, snap1, snap2 = out
    s1.tail, s2.tail = tail1, tail2
    s1.time = s2.time = float(cfg.horizon)
    cs = CoupledState(g, s1, s2, float(cfg.horizon), int(violations))
    if ordered and violations and raise_on_violation:
        raise OrderingViolation(f"{violations} ordering violations in {events} coupled events")
    return CoupledResult(cfg.sample_times.copy(), gaps, occ1, occ2, int(violations), int(events), cs,
                         snap1 if keep_states else None, snap2 if keep_states else None)


# ---------------------------------------------------------------------------

def halving_time(times: np.ndarray, gaps: np.ndarray) -> float:
    """First time the gap falls to half its initial value (linear interpolation)."""
    target = 0.5 * gaps[0]
    below = np.flatnonzero(gaps <= target)
    if not below.size:
        return math.inf
    k = int(below[0])
    if k == 0:
        return float(times[0])
    t0, t1, g0, g1 = times[k - 1], times[k], gaps[k - 1], gaps[k]
    return float(t0 + (g0 - target) / (g0 - g1) * (t1 - t0))


@dataclass
class MixingResult:
    times: np.ndarray
    gap_mean: np.ndarray
    gap_stderr: np.ndarray
    violations: int
    gaps: np.ndarray = field(repr=False)          # (replications, len(times))
    halving_times: np.ndarray = field(repr=False)

    @property
    def halving_mean(self) -> float:
        """Mean halving time; inf if some replication never halved within the horizon."""
        h = self.halving_times
        return float(h.mean()) if np.all(np.isfinite(h)) else math.inf

    @property
    def halving_stderr(self) -> float:
        h = self.halving_times
        if not np.all(np.isfinite(h)):
            return math.inf
        return float(h.std(ddof=1) / math.sqrt(h.size)) if h.size > 1 else 0.0


def stationary_start(g: BipartiteGraph, cfg: SimConfig, steady_warmup: float, seed: int) -> SystemState:
    """Approximate draw from the stationary law: run from empty for ``steady_warmup``."""
    warm = SimConfig(cfg.lam, cfg.d, steady_warmup, 0.0, np.zeros(0), seed, 1)
    final = simulate(g, warm).final
    final.time = 0.0
    return final


def mixing_experiment(g: BipartiteGraph, cfg: SimConfig, steady_warmup: float = 500.0,
                      replications: int = 20, threads: int = 1) -> MixingResult:
    """Gap decay between an empty start and an (approximately) stationary start.

    The stationary start is a stand-in: an independent run from empty of length
    ``steady_warmup``. The gap is averaged over replications with standard errors.
    """
    if cfg.sample_times.size == 0:
        raise ValueError("mixing_experiment needs sample times")

    def one(r):
        init2 = stationary_start(g, cfg, steady_warmup, replication_seed(cfg.seed, r, 0))
        rc = SimConfig(cfg.lam, cfg.d, cfg.horizon, 0.0, cfg.sample_times,
                       replication_seed(cfg.seed, r, 1), cfg.imax)
        res = coupled_simulate(g, rc, SystemState.empty(g.n_servers), init2)
        return res.gaps, res.violations

    runs = _map(one, range(replications), threads)
    gaps = np.array([r[0] for r in runs])
    violations = int(sum(r[1] for r in runs))
    se = gaps.std(axis=0, ddof=1) / math.sqrt(replications) if replications > 1 else np.zeros(gaps.shape[1])
    halves = np.array([halving_time(cfg.sample_times, row) for row in gaps])
    return MixingResult(cfg.sample_times.copy(), gaps.mean(axis=0), se, violations, gaps, halves)
