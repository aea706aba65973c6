"""Report figures written next to each experiment's CSV."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.5, 3.6),
    "savefig.dpi": 150,
}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _group(rows, *keys):
    out = defaultdict(list)
    for r in rows:
        out[tuple(r[k] for k in keys)].append(r)
    return out


def plot_mean_queue(rows, out: Path, cfg) -> list[Path]:
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for (rule,), rs in sorted(_group(rows, "rule").items()):
            n = np.array([r["n"] for r in rs])
            m = np.array([r["mean_queue"] for r in rs])
            s = np.array([r["stderr"] for r in rs])
            ax.errorbar(n, m, yerr=2 * s, marker="o", capsize=3, label=f"degree {rule}")
        ax.axhline(rows[0]["fixed_point_mean_queue"], color="k", ls="--", lw=1, label="fixed point")
        ax.set_xscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel("mean queue length")
        ax.legend()
        return [_save(fig, out / "mean_queue_sweep.png")]


def plot_transient(rows, out: Path, cfg) -> list[Path]:
    paths = []
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for (n, rule), rs in sorted(_group(rows, "n", "rule").items()):
            t = np.array([r["t"] for r in rs])
            for i, color in zip(range(1, 5), ("C0", "C1", "C2", "C3")):
                ax.plot(t, [r[f"sim_q{i}"] for r in rs], color=color, alpha=0.4 + 0.6 * (n == max(cfg.n)),
                        lw=1, label=f"q{i}, N={n}" if n == max(cfg.n) else None)
        last = next(iter(sorted(_group(rows, "n", "rule").items())))[1]
        t = np.array([r["t"] for r in last])
        for i in range(1, 5):
            ax.plot(t, [r[f"ode_q{i}"] for r in last], "k--", lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("occupancy")
        ax.legend(ncol=2)
        paths.append(_save(fig, out / "transient.png"))

        fig, ax = plt.subplots()
        for (n, rule), rs in sorted(_group(rows, "n", "rule").items()):
            ax.plot([r["t"] for r in rs], [r["l2sq"] for r in rs], label=f"N={n}, {rule}")
        ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel("squared l2 distance to ODE")
        ax.legend()
        paths.append(_save(fig, out / "transient_distance.png"))
    return paths


def plot_tail(rows, out: Path, cfg) -> list[Path]:
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        groups = sorted(_group(rows, "n", "rule").items())
        for (n, rule), rs in groups:
            i = np.array([r["i"] for r in rs])
            q = np.array([r["mean_qi"] for r in rs])
            keep = q > 0
            ax.semilogy(i[keep], q[keep], marker="o", ms=3, label=f"N={n}, degree {rule}")
        rs = groups[0][1]
        i = np.array([r["i"] for r in rs])
        ax.semilogy(i, [r["exponential_ref"] for r in rs], "k:", label="exponential")
        dexp = np.array([r["double_exponential_ref"] for r in rs])
        keep = dexp > 1e-12
        ax.semilogy(i[keep], dexp[keep], "k--", label="double exponential")
        ax.set_ylim(1e-6, 1.5)
        ax.set_xlim(0.5, min(20, i.max()) + 0.5)
        ax.set_xlabel("i")
        ax.set_ylabel("q_i")
        ax.legend()
        return [_save(fig, out / "tail.png")]


def plot_mixing(rows, out: Path, cfg) -> list[Path]:
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for (n, rule), rs in sorted(_group(rows, "n", "rule").items()):
            t = np.array([r["t"] for r in rs])
            m = np.array([r["gap_mean"] for r in rs])
            s = np.array([r["gap_stderr"] for r in rs])
            ax.plot(t, m, label=f"N={n}, {rule}")
            ax.fill_between(t, m - 2 * s, m + 2 * s, alpha=0.25)
        ax.set_xlabel("t")
        ax.set_ylabel("sum_i E|q_i(2) - q_i(1)|")
        ax.legend()
        return [_save(fig, out / "mixing.png")]


def plot_metrics(rows, out: Path, cfg) -> list[Path]:
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for (rule,), rs in sorted(_group(rows, "rule").items()):
            ax.loglog([r["n"] for r in rs], [max(r["max_phi2_gamma"], 1e-16) for r in rs],
                      marker="o", label=f"degree {rule}")
        ax.set_xlabel("N")
        ax.set_ylabel("max(phi^2, gamma)")
        ax.legend()
        return [_save(fig, out / "metrics.png")]
