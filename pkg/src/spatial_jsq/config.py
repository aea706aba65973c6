"""Flat ``key = value`` experiment configuration.

One key per line, ``#`` starts a comment, unknown keys are rejected. Every
value is validated before any simulation starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path


KINDS = ("mean_queue_sweep", "transient", "tail", "mixing", "metrics")
GRAPH_KINDS = ("complete", "regular", "geometric")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DegreeRule:
    """Target degree as a function of N: a constant, ln N, (ln N)^2 or sqrt N."""

    name: str
    constant: int | None = None

    @classmethod
    def parse(cls, text: str) -> "DegreeRule":
        t = text.strip().lower().replace(" ", "")
        aliases = {"ln": "ln", "lnn": "ln", "log": "ln",
                   "ln2": "ln2", "ln^2": "ln2", "(lnn)^2": "ln2", "(ln)^2": "ln2", "log2": "ln2",
                   "sqrt": "sqrt", "sqrtn": "sqrt"}
        if t in aliases:
            return cls(aliases[t])
        if t.startswith("const:"):
            t = t[len("const:"):]
        try:
            k = int(t)
        except ValueError:
            raise ConfigError(f"unknown degree rule {text!r}") from None
        if k < 1:
            raise ConfigError(f"constant degree must be >= 1, got {k}")
        return cls("const", k)

    def degree(self, n: int) -> int:
        if self.name == "const":
            return self.constant
        value = {"ln": math.log(n), "ln2": math.log(n) ** 2, "sqrt": math.sqrt(n)}[self.name]
        return max(1, math.ceil(value - 1e-9))

    def __str__(self):
        return str(self.constant) if self.name == "const" else self.name


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _p_norm(text: str) -> float:
    return math.inf if text.strip().lower() in ("inf", "infinity") else float(text)


@dataclass
class ExperimentConfig:
    graph: str = "complete"
    n: tuple[int, ...] = (250, 1000, 4000)
    m_ratio: float = 1.0
    degree_rules: tuple[DegreeRule, ...] = (DegreeRule("sqrt"),)
    radius: float | None = None
    p_norm: float = 2.0
    isolated: str = "error"
    lam: float = 0.9
    d: int = 2
    warmup: float = 200.0
    horizon: float = 1200.0
    replications: int = 20
    imax: int | None = None
    seed: int = 1
    out: str = "results"
    threads: int = 1
    t_end: float = 10.0
    sample_dt: float = 0.1
    ode_dt: float = 0.005
    steady_warmup: float = 500.0
    sample_times: tuple[float, ...] = ()
    plot: bool = True

    _parsers = {
        "graph": str.strip, "n": _ints, "m_ratio": float,
        "degree_rules": lambda s: tuple(DegreeRule.parse(x) for x in s.split(",") if x.strip()),
        "radius": _opt_float, "p_norm": _p_norm, "isolated": str.strip,
        "lambda": float, "d": int, "warmup": float, "horizon": float,
        "replications": int, "imax": _opt_int, "seed": int, "out": str.strip, "threads": int,
        "t_end": float, "sample_dt": float, "ode_dt": float, "steady_warmup": float,
        "sample_times": _floats, "plot": _bool,
    }

    def n_types(self, n: int) -> int:
        return max(1, round(self.m_ratio * n))

    def validate(self) -> "ExperimentConfig":
        err = []
        if self.graph not in GRAPH_KINDS:
            err.append(f"graph must be one of {GRAPH_KINDS}")
        if not self.n or min(self.n) < 1:
            err.append("n must list positive server counts")
        if self.m_ratio <= 0:
            err.append("m_ratio must be positive")
        if not self.degree_rules and self.graph != "complete":
            err.append("degree_rules must not be empty")
        if self.radius is not None and not 0 < self.radius <= 0.5:
            err.append("radius must lie in (0, 1/2]")
        if not self.p_norm > 0:
            err.append("p_norm must be positive")
        if self.isolated not in ("error", "nearest"):
            err.append("isolated must be 'error' or 'nearest'")
        if not 0 < self.lam < 1:
            err.append("lambda must lie in (0, 1)")
        if self.d < 1:
            err.append("d must be >= 1")
        if not 0 <= self.warmup < self.horizon:
            err.append("need 0 <= warmup < horizon")
        if self.replications < 1:
            err.append("replications must be >= 1")
        if self.imax is not None and self.imax < 1:
            err.append("imax must be >= 1")
        if self.threads < 1:
            err.append("threads must be >= 1")
        if self.t_end <= 0 or self.sample_dt <= 0 or self.ode_dt <= 0:
            err.append("t_end, sample_dt and ode_dt must be positive")
        elif abs(round(self.sample_dt / self.ode_dt) * self.ode_dt - self.sample_dt) > 1e-9:
            err.append("sample_dt must be a multiple of ode_dt")
        if self.steady_warmup < 0:
            err.append("steady_warmup must be >= 0")
        if self.sample_times and (min(self.sample_times) < 0 or list(self.sample_times) != sorted(self.sample_times)):
            err.append("sample_times must be sorted and nonnegative")
        for n in self.n:
            for rule in self.degree_rules:
                if rule.degree(n) < 1:
                    err.append(f"degree rule {rule} gives degree < 1 at N={n}")
        if err:
            raise ConfigError("; ".join(err))
        return self

    def to_text(self, kind: str | None = None) -> str:
        lines = [f"# resolved configuration{f' for {kind}' if kind else ''}"]
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            key = "lambda" if f.name == "lam" else f.name
            if isinstance(v, tuple):
                v = ",".join(str(x) if not isinstance(x, float) else repr(x) for x in v)
            elif v is None:
                v = "auto"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = "inf" if math.isinf(v) else repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ExperimentConfig._parsers:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            parsed = ExperimentConfig._parsers[key](value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        setattr(cfg, "lam" if key == "lambda" else key, parsed)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
