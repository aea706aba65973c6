"""CSV writers. Floats use Python's shortest round-trip repr."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([fmt(x) for x in row])
    return path


def read_rows(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_occupancy_csv(path, times, values) -> Path:
    values = np.asarray(values)
    header = ["t"] + [f"q{i}" for i in range(1, values.shape[1] + 1)]
    return write_rows(path, header, ([t, *row] for t, row in zip(times, values)))


def write_steady_state_csv(path, mean, stderr) -> Path:
    rows = ([i, m, s] for i, (m, s) in enumerate(zip(mean, stderr), start=1))
    return write_rows(path, ["i", "mean_qi", "stderr_qi"], rows)


def write_gap_csv(path, times, gap_mean, gap_stderr, violations) -> Path:
    rows = ([t, m, s, violations] for t, m, s in zip(times, gap_mean, gap_stderr))
    return write_rows(path, ["t", "gap_mean", "gap_stderr", "violations"], rows)
