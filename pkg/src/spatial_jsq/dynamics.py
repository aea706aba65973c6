"""JSQ(d) queueing dynamics on a compatibility graph.

The continuous-time chain is simulated through a single Poisson clock of rate
(lambda + 1) N: each tick is an arrival at a uniform task type with probability
lambda / (lambda + 1), otherwise a potential departure at a uniform server
(a null event if that server is idle).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import _kernels
from .graphs import BipartiteGraph, metric_rho


class DomainError(ValueError):
    pass


def rate_ratio(x: float, y: float, d: int) -> float:
    """(x^d - y^d) / (x - y) for 0 <= y <= x <= 1, with the limit d x^(d-1) at x == y.

    Accepts scalars or broadcastable arrays. Evaluated through the binomial expansion in (x - y), which has no
    cancellation near the diagonal.
    """
    xa, ya = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if not np.all((0.0 <= ya) & (ya <= xa) & (xa <= 1.0)):
        raise DomainError(f"need 0 <= y <= x <= 1, got x={x}, y={y}")
    h = xa - ya
    out = sum(comb(d, i) * h ** (i - 1) * ya ** (d - i) for i in range(1, d + 1))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# state

@dataclass
class OccupancyVector:
    """Tail fractions (q_1, ..., q_imax)."""

    values: np.ndarray
    n_servers: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self):
        return self.values.size

    def __getitem__(self, i):
        return self.values[i]


@dataclass
class SystemState:
    """Queue lengths plus incrementally maintained global tail counts.

    ``tail[i]`` is the number of servers with at least ``i`` tasks, so
    ``tail[0] == N``; the array is kept at least two entries longer than the
    largest queue.
    """

    queues: np.ndarray
    tail: np.ndarray = None
    time: float = 0.0

    def __post_init__(self):
        self.queues = np.asarray(self.queues, dtype=np.int64)
        if self.queues.size and self.queues.min() < 0:
            raise ValueError("queue lengths must be nonnegative")
        if self.tail is None:
            self.tail = tail_counts(self.queues)

    @classmethod
    def empty(cls, n_servers: int) -> "SystemState":
        return cls(np.zeros(n_servers, dtype=np.int64))

    @classmethod
    def constant(cls, n_servers: int, length: int) -> "SystemState":
        return cls(np.full(n_servers, length, dtype=np.int64))

    @property
    def n_servers(self) -> int:
        return self.queues.size

    @property
    def total_tasks(self) -> int:
        return int(self.tail[1:].sum())

    def occupancy(self, imax: int) -> OccupancyVector:
        vals = np.zeros(imax)
        top = min(imax, self.tail.size - 1)
        vals[:top] = self.tail[1:top + 1] / self.n_servers
        return OccupancyVector(vals, self.n_servers)

    def copy(self) -> "SystemState":
        return SystemState(self.queues.copy(), self.tail.copy(), self.time)

    def check(self) -> None:
        fresh = tail_counts(self.queues, self.tail.size)
        if not np.array_equal(fresh, self.tail):
            raise AssertionError("tail counts out of sync with queues")


def tail_counts(queues: np.ndarray, size: int | None = None) -> np.ndarray:
    queues = np.asarray(queues, dtype=np.int64)
    top = int(queues.max()) if queues.size else 0
    if size is None:
        size = max(64, top + 2)
    hist = np.bincount(queues, minlength=size)[:size]
    return np.cumsum(hist[::-1])[::-1].astype(np.int64)


@dataclass
class SimConfig:
    lam: float
    d: int = 2
    horizon: float = 1200.0
    warmup: float = 200.0
    sample_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seed: int = 0
    imax: int | None = None
    check_every: int = 0

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        if self.d < 1:
            raise ValueError("d must be a positive integer")
        if not 0.0 <= self.warmup < self.horizon and not self.horizon == self.warmup == 0.0:
            raise ValueError("need 0 <= warmup < horizon")
        if self.imax is not None and self.imax < 1:
            raise ValueError("imax must be at least 1")
        self.sample_times = np.sort(np.asarray(self.sample_times, dtype=np.float64))
        if self.sample_times.size and (self.sample_times[0] < 0 or self.sample_times[-1] > self.horizon):
            raise ValueError("sample times must lie in [0, horizon]")


def default_imax(rho0: float, eps: float = 1e-6, cap: int = 200) -> int:
    """Depth beyond which E[q_i] <= rho0^i drops below ``eps``."""
    if not 0.0 < rho0 < 1.0:
        return cap
    return max(1, min(cap, math.ceil(math.log(eps) / math.log(rho0))))


def replication_seed(master_seed: int, *keys: int) -> int:
    """32-bit stream seed for replication ``keys`` under ``master_seed``."""
    entropy = [int(master_seed), *(int(k) for k in keys)]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint32)[0])


# ---------------------------------------------------------------------------
# single-event operations (reference implementations)

def jsq_d_select(state: SystemState, g: BipartiteGraph, w: int, d: int, rng: np.random.Generator) -> int:
    """Sample d compatible servers with replacement; join a shortest one.

    Ties are broken uniformly among the distinct sampled servers with minimal queue.
    """
    nbrs = g.type_neighbors(w)
    picks = nbrs[rng.integers(0, nbrs.size, size=d)]
    lengths = state.queues[picks]
    best = np.unique(picks[lengths == lengths.min()])
    return int(best[rng.integers(0, best.size)])


def local_tail_counts(state: SystemState, g: BipartiteGraph, w: int, imax: int) -> np.ndarray:
    """Q_i^w for i = 0..imax+1 (unscaled)."""
    x = state.queues[g.type_neighbors(w)]
    levels = np.arange(imax + 2)
    return (x[None, :] >= levels[:, None]).sum(axis=1)


def local_occupancy(state: SystemState, g: BipartiteGraph, w: int, imax: int) -> OccupancyVector:
    """Fraction of the neighbors of type ``w`` holding at least i tasks, i = 1..imax."""
    dw = g.type_neighbors(w).size
    return OccupancyVector(local_tail_counts(state, g, w, imax)[1:imax + 1] / dw, g.n_servers)


def assignment_distribution(state: SystemState, g: BipartiteGraph, w: int, d: int) -> np.ndarray:
    """Probability that an arrival of type ``w`` joins each server in its neighborhood.

    A server holding i tasks receives
    ((q_i^w)^d - (q_{i+1}^w)^d) / (Q_i^w - Q_{i+1}^w), in neighbor order.
    """
    nbrs = g.type_neighbors(w)
    dw = nbrs.size
    x = state.queues[nbrs]
    local = local_tail_counts(state, g, w, int(x.max()))
    probs = np.empty(dw)
    for j, xi in enumerate(x):
        hi, lo = local[xi] / dw, local[xi + 1] / dw
        probs[j] = rate_ratio(hi, lo, d) / dw
    return probs


def apply_arrival(state: SystemState, v: int) -> None:
    level = state.queues[v] + 1
    if level + 1 >= state.tail.size:
        state.tail = np.concatenate([state.tail, np.zeros(state.tail.size, dtype=np.int64)])
    state.tail[level] += 1
    state.queues[v] = level


def apply_departure(state: SystemState, v: int) -> bool:
    """Serve one task at ``v`` if it has any; returns whether the queue changed."""
    level = state.queues[v]
    if level == 0:
        return False
    state.tail[level] -= 1
    state.queues[v] = level - 1
    return True


def step(state: SystemState, g: BipartiteGraph, lam: float, d: int, rng: np.random.Generator) -> str:
    """Advance the uniformized chain by one clock tick (pure Python, for checks)."""
    n = g.n_servers
    state.time += rng.exponential(1.0 / ((lam + 1.0) * n))
    if rng.random() < lam / (lam + 1.0):
        w = int(rng.integers(0, g.n_types))
        apply_arrival(state, jsq_d_select(state, g, w, d, rng))
        return "arrival"
    v = int(rng.integers(0, n))
    return "departure" if apply_departure(state, v) else "null"


# ---------------------------------------------------------------------------
# simulation

@dataclass
class SimResult:
    times: np.ndarray
    occupancy: np.ndarray          # (len(times), imax)
    final: SystemState
    time_average: np.ndarray       # (imax,) over (warmup, horizon]
    arrivals: int
    departures: int
    events: int

    def trajectory(self) -> list[tuple[float, OccupancyVector]]:
        n = self.final.n_servers
        return [(float(t), OccupancyVector(row, n)) for t, row in zip(self.times, self.occupancy)]


def _resolve_imax(g: BipartiteGraph, cfg: SimConfig) -> int:
    if cfg.imax is not None:
        return cfg.imax
    return default_imax(metric_rho(g, cfg.lam))


def simulate(g: BipartiteGraph, cfg: SimConfig, init: SystemState | None = None) -> SimResult:
    """Run the chain from ``init`` (empty by default) up to ``cfg.horizon``.

    Occupancy is recorded at ``cfg.sample_times`` (the state holding at that
    instant) and time-averaged exactly over (warmup, horizon].
    """
    rho = metric_rho(g, cfg.lam)
    if rho >= 1.0:
        warnings.warn(f"rho(G) = {rho:.4f} >= 1; the chain may be transient", RuntimeWarning)
    imax = _resolve_imax(g, cfg)
    state = SystemState.empty(g.n_servers) if init is None else init.copy()
    if state.n_servers != g.n_servers:
        raise ValueError("initial state does not match the graph")
    t0 = state.time
    samples, integ, tail, arrivals, departures, events = _kernels.run_chain(
        g.type_ptr, g.type_idx, g.n_servers, g.n_types, float(cfg.lam), int(cfg.d),
        state.queues, state.tail.copy(), float(t0), float(cfg.horizon),
        cfg.sample_times, int(imax), float(max(cfg.warmup, t0)), int(cfg.seed), int(cfg.check_every))
    state.tail = tail
    state.time = float(cfg.horizon)
    span = cfg.horizon - max(cfg.warmup, t0)
    avg = integ[1:] / (g.n_servers * span) if span > 0 else np.zeros(imax)
    return SimResult(cfg.sample_times.copy(), samples, state, avg, arrivals, departures, events)


@dataclass
class SteadyStateEstimate:
    mean: OccupancyVector
    stderr: OccupancyVector
    replicates: np.ndarray         # (replications, imax)

    @property
    def mean_queue(self) -> float:
        return float(self.replicates.sum(axis=1).mean())

    @property
    def mean_queue_stderr(self) -> float:
        totals = self.replicates.sum(axis=1)
        return float(totals.std(ddof=1) / math.sqrt(totals.size)) if totals.size > 1 else 0.0


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def steady_state_estimate(g: BipartiteGraph, cfg: SimConfig, replications: int,
                          threads: int = 1) -> SteadyStateEstimate:
    """Monte Carlo estimate of E[q_i(inf)] from independent replications.

    Each replication starts empty, discards [0, warmup] and time-averages the
    occupancy over (warmup, horizon]. Replication r uses a seed derived from
    (cfg.seed, r); results are reduced in replication order.
    """
    imax = _resolve_imax(g, cfg)
    rho = metric_rho(g, cfg.lam)
    if rho >= 1.0:
        warnings.warn(f"rho(G) = {rho:.4f} >= 1; the chain may be transient", RuntimeWarning)

    def one(r):
        rc = SimConfig(cfg.lam, cfg.d, cfg.horizon, cfg.warmup, np.zeros(0),
                       replication_seed(cfg.seed, r), imax, cfg.check_every)
        return simulate(g, rc).time_average

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        reps = np.array(_map(one, range(replications), threads))
    mean = reps.mean(axis=0)
    se = reps.std(axis=0, ddof=1) / math.sqrt(replications) if replications > 1 else np.zeros(imax)
    return SteadyStateEstimate(OccupancyVector(mean, g.n_servers), OccupancyVector(se, g.n_servers), reps)
