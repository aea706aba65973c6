"""Experiment runners: build each sweep graph, simulate, write CSVs and figures."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import meanfield
from .config import DegreeRule, ExperimentConfig
from .coupling import mixing_experiment
from .dynamics import SimConfig, _map, replication_seed, simulate, steady_state_estimate
from .graphs import (BipartiteGraph, GraphError, generate_complete, generate_configuration_regular,
                     generate_geometric, graph_metrics, is_regular, radius_for_degree)
from .io import write_gap_csv, write_rows

log = logging.getLogger(__name__)

GRAPH_STREAM = 7


class ExperimentError(RuntimeError):
    pass


@dataclass
class SweepPoint:
    n: int
    m: int
    rule: str
    degree: int | None
    graph: BipartiteGraph
    radius: float | None = None


@dataclass
class ExperimentOutput:
    kind: str
    csv: Path
    rows: list[dict]
    extra_csv: list[Path] = field(default_factory=list)
    figures: list[Path] = field(default_factory=list)
    sidecar: Path | None = None
    summary: list[dict] | None = None


def _rules(cfg: ExperimentConfig):
    return [None] if cfg.graph == "complete" else list(cfg.degree_rules)


def build_graph_for(cfg: ExperimentConfig, n: int, rule: DegreeRule | None, index: int) -> SweepPoint:
    m = cfg.n_types(n)
    seed = replication_seed(cfg.seed, GRAPH_STREAM, n, index)
    try:
        if cfg.graph == "complete":
            return SweepPoint(n, m, "complete", m, generate_complete(n, m))
        k = rule.degree(n)
        if cfg.graph == "regular":
            return SweepPoint(n, m, str(rule), k, generate_configuration_regular(n, m, k, seed))
        radius = cfg.radius if cfg.radius is not None else radius_for_degree(k, n, cfg.p_norm)
        g, _ = generate_geometric(n, m, radius, cfg.p_norm, seed, isolated=cfg.isolated)
        return SweepPoint(n, m, str(rule), k, g, radius)
    except (GraphError, ValueError) as exc:
        raise ExperimentError(f"graph generation failed at N={n}, rule={rule}: {exc}") from exc


def sweep(cfg: ExperimentConfig):
    for n in cfg.n:
        for index, rule in enumerate(_rules(cfg)):
            yield build_graph_for(cfg, n, rule, index)


def _sim_config(cfg: ExperimentConfig, seed: int) -> SimConfig:
    return SimConfig(cfg.lam, cfg.d, cfg.horizon, cfg.warmup, np.zeros(0), seed, cfg.imax)


def _finish(kind: str, cfg: ExperimentConfig, csv_path: Path, rows, extra=(), plot_fn=None):
    out = Path(cfg.out)
    sidecar = out / f"{kind}.meta.cfg"
    sidecar.write_text(cfg.to_text(kind), encoding="utf-8")
    result = ExperimentOutput(kind, csv_path, rows, list(extra), sidecar=sidecar)
    if cfg.plot and plot_fn is not None:
        from . import plotting
        result.figures = getattr(plotting, plot_fn)(rows, out, cfg)
    return result


def _write_dicts(path: Path, rows: list[dict]) -> Path:
    header = list(rows[0].keys())
    return write_rows(path, header, ([r[h] for h in header] for r in rows))


def _stable_rule_seed(cfg: ExperimentConfig, n: int, index: int, stream: int) -> int:
    return replication_seed(cfg.seed, stream, n, index)


def fixed_point_mean_queue(lam: float, d: int) -> float:
    return float(meanfield.fixed_point(lam, d, 200).values.sum())


# ---------------------------------------------------------------------------

def run_mean_queue_sweep(cfg: ExperimentConfig) -> ExperimentOutput:
    """Steady-state mean queue length per server for every (N, degree rule)."""
    rows = []
    reference = fixed_point_mean_queue(cfg.lam, cfg.d)
    for index, point in enumerate(sweep(cfg)):
        gm = graph_metrics(point.graph, cfg.lam)
        sc = _sim_config(cfg, _stable_rule_seed(cfg, point.n, index, 11))
        try:
            est = steady_state_estimate(point.graph, sc, cfg.replications, cfg.threads)
        except Exception as exc:
            raise ExperimentError(f"simulation failed at N={point.n}, rule={point.rule}: {exc}") from exc
        log.info("N=%d rule=%s mean queue %.5f +- %.5f", point.n, point.rule, est.mean_queue,
                 est.mean_queue_stderr)
        rows.append(dict(graph=cfg.graph, rule=point.rule, n=point.n, m=point.m, degree=point.degree,
                         mean_queue=est.mean_queue, stderr=est.mean_queue_stderr,
                         fixed_point_mean_queue=reference, rho=gm.rho, phi=gm.phi, gamma=gm.gamma))
    path = _write_dicts(Path(cfg.out) / "mean_queue_sweep.csv", rows)
    return _finish("mean_queue_sweep", cfg, path, rows, plot_fn="plot_mean_queue")


def transient_point(cfg: ExperimentConfig, point: SweepPoint, seed: int):
    """Mean occupancy path, ODE path, and per-replication l2^2 distances from empty."""
    depth = cfg.imax or meanfield.default_imax(cfg.lam, cfg.d)
    n_steps = int(round(cfg.t_end / cfg.sample_dt))
    times = np.arange(n_steps + 1) * cfg.sample_dt
    ode = meanfield.integrate(meanfield.MeanFieldState.empty(depth), cfg.lam, cfg.d, times[-1],
                              cfg.ode_dt, sample_every=cfg.sample_dt)

    def one(r):
        sc = SimConfig(cfg.lam, cfg.d, float(times[-1]), 0.0, times, replication_seed(seed, r), depth)
        return simulate(point.graph, sc).occupancy

    paths = np.array(_map(one, range(cfg.replications), cfg.threads))   # (R, T, depth)
    dist = ((paths - ode.values[None, :, :]) ** 2).sum(axis=2)           # (R, T)
    return times, paths.mean(axis=0), ode.values, dist


def _mean_se(a: np.ndarray, axis=0):
    r = a.shape[axis]
    se = a.std(axis=axis, ddof=1) / math.sqrt(r) if r > 1 else np.zeros_like(a.mean(axis=axis))
    return a.mean(axis=axis), se


def run_transient(cfg: ExperimentConfig) -> ExperimentOutput:
    """Occupancy from the empty state against the ODE solution on the same time grid."""
    rows, summary = [], []
    for index, point in enumerate(sweep(cfg)):
        gm = graph_metrics(point.graph, cfg.lam)
        try:
            times, sim, ode, dist = transient_point(cfg, point, _stable_rule_seed(cfg, point.n, index, 12))
        except Exception as exc:
            raise ExperimentError(f"simulation failed at N={point.n}, rule={point.rule}: {exc}") from exc
        d_mean, d_se = _mean_se(dist)
        sup_mean, sup_se = _mean_se(dist.max(axis=1))
        for k, t in enumerate(times):
            row = dict(graph=cfg.graph, rule=point.rule, n=point.n, t=t)
            row.update({f"sim_q{i + 1}": sim[k, i] for i in range(sim.shape[1])})
            row.update({f"ode_q{i + 1}": ode[k, i] for i in range(ode.shape[1])})
            row.update(l2sq=d_mean[k], l2sq_stderr=d_se[k])
            rows.append(row)
        summary.append(dict(graph=cfg.graph, rule=point.rule, n=point.n, degree=point.degree,
                            phi=gm.phi, gamma=gm.gamma, rho=gm.rho,
                            sup_l2sq_mean=float(sup_mean), sup_l2sq_stderr=float(sup_se)))
        log.info("N=%d rule=%s sup l2^2 %.3e +- %.1e", point.n, point.rule, sup_mean, sup_se)
    out = Path(cfg.out)
    path = _write_dicts(out / "transient.csv", rows)
    extra = _write_dicts(out / "transient_summary.csv", summary)
    result = _finish("transient", cfg, path, rows, [extra], plot_fn="plot_transient")
    result.summary = summary
    return result


def run_tail(cfg: ExperimentConfig) -> ExperimentOutput:
    """Steady-state q_i against the exponential and double-exponential tails."""
    rows = []
    for index, point in enumerate(sweep(cfg)):
        sc = _sim_config(cfg, _stable_rule_seed(cfg, point.n, index, 13))
        try:
            est = steady_state_estimate(point.graph, sc, cfg.replications, cfg.threads)
        except Exception as exc:
            raise ExperimentError(f"simulation failed at N={point.n}, rule={point.rule}: {exc}") from exc
        depth = len(est.mean)
        fp = meanfield.fixed_point(cfg.lam, cfg.d, depth).values if cfg.d >= 2 else np.full(depth, np.nan)
        for i in range(depth):
            rows.append(dict(graph=cfg.graph, rule=point.rule, n=point.n, i=i + 1,
                             mean_qi=est.mean[i], stderr_qi=est.stderr[i],
                             exponential_ref=cfg.lam ** (i + 1), double_exponential_ref=fp[i]))
    path = _write_dicts(Path(cfg.out) / "tail.csv", rows)
    return _finish("tail", cfg, path, rows, plot_fn="plot_tail")


def run_mixing(cfg: ExperimentConfig) -> ExperimentOutput:
    """Occupancy gap between an empty and a warm-started coupled copy."""
    if cfg.sample_times:
        times = np.array(cfg.sample_times)
    else:
        times = np.arange(int(round(cfg.t_end / cfg.sample_dt)) + 1) * cfg.sample_dt
    rows, extra = [], []
    out = Path(cfg.out)
    for index, point in enumerate(sweep(cfg)):
        sc = SimConfig(cfg.lam, cfg.d, float(times[-1]), 0.0, times,
                       _stable_rule_seed(cfg, point.n, index, 14), cfg.imax)
        try:
            res = mixing_experiment(point.graph, sc, cfg.steady_warmup, cfg.replications, cfg.threads)
        except Exception as exc:
            raise ExperimentError(f"simulation failed at N={point.n}, rule={point.rule}: {exc}") from exc
        extra.append(write_gap_csv(out / f"mixing_gap_n{point.n}_{point.rule}.csv", times,
                                   res.gap_mean, res.gap_stderr, res.violations))
        for t, m, s in zip(times, res.gap_mean, res.gap_stderr):
            rows.append(dict(graph=cfg.graph, rule=point.rule, n=point.n, t=t, gap_mean=m,
                             gap_stderr=s, violations=res.violations,
                             halving_time_mean=res.halving_mean,
                             halving_time_stderr=res.halving_stderr))
    path = _write_dicts(out / "mixing.csv", rows)
    return _finish("mixing", cfg, path, rows, extra, plot_fn="plot_mixing")


def run_metrics(cfg: ExperimentConfig) -> ExperimentOutput:
    """phi, gamma, rho and degree extremes for every sweep graph."""
    rows = []
    for point in sweep(cfg):
        gm = graph_metrics(point.graph, cfg.lam)
        rows.append(dict(graph=cfg.graph, rule=point.rule, n=point.n, m=point.m, degree=point.degree,
                         rho=gm.rho, phi=gm.phi, gamma=gm.gamma,
                         max_phi2_gamma=max(gm.phi ** 2, gm.gamma),
                         min_type_degree=gm.min_type_degree, max_type_degree=gm.max_type_degree,
                         min_server_degree=gm.min_server_degree, max_server_degree=gm.max_server_degree,
                         collapsed_edges=point.graph.collapsed_edges,
                         regular=is_regular(point.graph)))
    path = _write_dicts(Path(cfg.out) / "metrics.csv", rows)
    return _finish("metrics", cfg, path, rows, plot_fn="plot_metrics")


RUNNERS = {
    "mean_queue_sweep": run_mean_queue_sweep,
    "transient": run_transient,
    "tail": run_tail,
    "mixing": run_mixing,
    "metrics": run_metrics,
}


def run(kind: str, cfg: ExperimentConfig) -> ExperimentOutput:
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    return RUNNERS[kind](cfg)
