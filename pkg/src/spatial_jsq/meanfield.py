"""Mean-field ODE for JSQ(d) on the fully flexible system, its fixed point and distances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MonotonicityBroken(RuntimeError):
    pass


@dataclass
class MeanFieldState:
    """Truncated occupancy (q_1..q_imax); q_0 = 1 and q_{imax+1} = 0 are implicit."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @classmethod
    def empty(cls, imax: int) -> "MeanFieldState":
        return cls(np.zeros(imax))


@dataclass
class FixedPoint:
    values: np.ndarray
    lam: float
    d: int


@dataclass
class MeanFieldTrajectory:
    times: np.ndarray
    values: np.ndarray   # (len(times), imax)

    def at(self, k: int) -> MeanFieldState:
        return MeanFieldState(self.values[k].copy(), float(self.times[k]))


def fixed_point(lam: float, d: int, imax: int) -> FixedPoint:
    """q*_i = lam^((d^i - 1)/(d - 1)) via q*_1 = lam, q*_{i+1} = lam (q*_i)^d."""
    if not 0.0 < lam < 1.0 or d < 2:
        raise ValueError("need 0 < lam < 1 and d >= 2")
    q = np.empty(imax)
    cur = lam
    for i in range(imax):
        q[i] = cur
        cur = lam * cur ** d
    return FixedPoint(q, lam, d)


def default_imax(lam: float, d: int, floor: int = 20, eps: float = 1e-12) -> int:
    q = fixed_point(lam, d, 200).values
    below = np.flatnonzero(q < eps)
    return max(floor, int(below[0]) + 1 if below.size else 200)


def ode_rhs(q, lam: float, d: int) -> np.ndarray:
    """dq_i/dt = lam (q_{i-1}^d - q_i^d) - (q_i - q_{i+1})."""
    q = q.values if isinstance(q, MeanFieldState) else np.asarray(q, dtype=np.float64)
    qd = q ** d
    prev_d = np.empty_like(qd)
    prev_d[0] = 1.0
    prev_d[1:] = qd[:-1]
    nxt = np.empty_like(q)
    nxt[-1] = 0.0
    nxt[:-1] = q[1:]
    return lam * (prev_d - qd) - (q - nxt)


def _project(q: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    q = np.clip(q, 0.0, 1.0)
    drop = q[1:] - q[:-1]
    if drop.size and drop.max() > tol:
        i = int(np.argmax(drop))
        raise MonotonicityBroken(
            f"q_{i + 2} exceeds q_{i + 1} by {drop[i]:.3e}; reduce dt or raise imax")
    return np.minimum.accumulate(q)


def integrate(q0, lam: float, d: int, t_end: float, dt: float = 0.005,
              sample_every: float | None = None) -> MeanFieldTrajectory:
    """Classical fixed-step RK4 from ``q0`` up to ``t_end``.

    States are recorded at multiples of ``sample_every`` (default: every step).
    After each step components are clipped to [0, 1] and tiny monotonicity
    violations (< 1e-10) are flattened.
    """
    state = q0 if isinstance(q0, MeanFieldState) else MeanFieldState(q0)
    q = _project(state.values.copy())
    n_steps = int(round(t_end / dt))
    if not math.isclose(n_steps * dt, t_end, rel_tol=0, abs_tol=1e-9):
        raise ValueError("t_end must be a multiple of dt")
    every = 1 if sample_every is None else int(round(sample_every / dt))
    if every < 1 or not math.isclose(every * dt, sample_every or dt, abs_tol=1e-9):
        raise ValueError("sample_every must be a positive multiple of dt")

    times = [state.time]
    out = [q.copy()]
    for k in range(1, n_steps + 1):
        k1 = ode_rhs(q, lam, d)
        k2 = ode_rhs(q + 0.5 * dt * k1, lam, d)
        k3 = ode_rhs(q + 0.5 * dt * k2, lam, d)
        k4 = ode_rhs(q + dt * k3, lam, d)
        q = _project(q + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))
        if k % every == 0:
            times.append(state.time + k * dt)
            out.append(q.copy())
    return MeanFieldTrajectory(np.array(times), np.array(out))


def _pad(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n = max(a.size, b.size)
    return np.pad(a, (0, n - a.size)), np.pad(b, (0, n - b.size))


def l2_distance(a, b) -> float:
    """Squared l2 distance sum_i (a_i - b_i)^2; shorter input is zero-padded."""
    a, b = _pad(a, b)
    return float(np.sum((a - b) ** 2))


def l1_distance(a, b) -> float:
    a, b = _pad(a, b)
    return float(np.sum(np.abs(a - b)))


def theorem_bound_rhs(phi: float, gamma: float, t: float, lam: float, d: int, rho0: float,
                      initial_sq: float = 0.0, initial_spread: float = 0.0, c: float = 1.0) -> float:
    """Right-hand side of the finite-N transient bound, for diagnostic curves.

    ``initial_sq`` is E[sum_i q_i(0)^2] and ``initial_spread`` is
    E[sum_i ((1/M) sum_w |q_i^w(0) - qbar_i(0)|)^2]; both vanish from the
    empty state. ``c`` is an unknown constant (>= 1) supplied by the caller.
    """
    first = 2.0 * phi ** 2 * (lam * t + initial_sq)
    second = 12.0 * math.exp(c * t * t) * (
        t * t * d * d * phi ** 2 + initial_spread + 4.0 * t * (rho0 * d + 1.0) * gamma)
    return first + second


def write_trajectory_csv(path, times, values) -> None:
    from .io import write_occupancy_csv
    write_occupancy_csv(path, times, values)
