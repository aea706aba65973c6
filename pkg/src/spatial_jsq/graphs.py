"""Bipartite compatibility graphs between servers and task types.

Graphs are stored in compressed sparse form in both directions so that the
simulation kernels can index neighborhoods without Python overhead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np


TORUS_DIM = 2


class GraphError(ValueError):
    pass


class IsolatedVertex(GraphError):
    def __init__(self, side: str, index: int, count: int = 1):
        self.side = side
        self.index = index
        self.count = count
        extra = f" ({count} isolated {side}s in total)" if count > 1 else ""
        super().__init__(f"{side} {index} has degree 0{extra}")


class IdOutOfRange(GraphError):
    pass


class DegreeMismatch(GraphError):
    pass


def _csr(rows: np.ndarray, cols: np.ndarray, n_rows: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((cols, rows))
    counts = np.bincount(rows, minlength=n_rows)
    ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, cols[order].astype(np.int64)


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Immutable server/type compatibility graph.

    ``server_ptr``/``server_idx`` hold the sorted type ids of every server and
    ``type_ptr``/``type_idx`` the sorted server ids of every type (CSR layout).
    Build instances through :func:`build_graph` or one of the generators.
    """

    n_servers: int
    n_types: int
    server_ptr: np.ndarray
    server_idx: np.ndarray
    type_ptr: np.ndarray
    type_idx: np.ndarray
    collapsed_edges: int = 0
    locations: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        for arr in (self.server_ptr, self.server_idx, self.type_ptr, self.type_idx):
            arr.setflags(write=False)

    @property
    def n_edges(self) -> int:
        return int(self.server_idx.size)

    @property
    def server_degrees(self) -> np.ndarray:
        return np.diff(self.server_ptr)

    @property
    def type_degrees(self) -> np.ndarray:
        return np.diff(self.type_ptr)

    def server_neighbors(self, v: int) -> np.ndarray:
        return self.server_idx[self.server_ptr[v]:self.server_ptr[v + 1]]

    def type_neighbors(self, w: int) -> np.ndarray:
        return self.type_idx[self.type_ptr[w]:self.type_ptr[w + 1]]

    def edges(self) -> np.ndarray:
        """Edge list as an (E, 2) array of (server, type), lexicographically sorted."""
        servers = np.repeat(np.arange(self.n_servers, dtype=np.int64), self.server_degrees)
        return np.column_stack((servers, self.server_idx))

    def __eq__(self, other):
        if not isinstance(other, BipartiteGraph):
            return NotImplemented
        return (self.n_servers == other.n_servers and self.n_types == other.n_types
                and np.array_equal(self.server_ptr, other.server_ptr)
                and np.array_equal(self.server_idx, other.server_idx)
                and np.array_equal(self.type_ptr, other.type_ptr)
                and np.array_equal(self.type_idx, other.type_idx))

    __hash__ = None


def build_graph(n_servers: int, n_types: int, edges, *, locations=None) -> BipartiteGraph:
    """Validate an edge list and build a :class:`BipartiteGraph`.

    Duplicate edges are collapsed; the number removed is stored in
    ``collapsed_edges``. Raises :class:`IdOutOfRange` for bad ids and
    :class:`IsolatedVertex` if any server or type ends up with degree 0.
    """
    if n_servers < 1 or n_types < 1:
        raise GraphError("graph needs at least one server and one type")
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.shape[0] == 0:
        raise GraphError("edge list is empty")
    sv, tw = e[:, 0], e[:, 1]
    if sv.min() < 0 or sv.max() >= n_servers:
        raise IdOutOfRange(f"server id out of range [0, {n_servers})")
    if tw.min() < 0 or tw.max() >= n_types:
        raise IdOutOfRange(f"type id out of range [0, {n_types})")

    keys = np.unique(sv * n_types + tw)
    collapsed = e.shape[0] - keys.size
    sv, tw = keys // n_types, keys % n_types

    server_deg = np.bincount(sv, minlength=n_servers)
    type_deg = np.bincount(tw, minlength=n_types)
    for side, deg in (("server", server_deg), ("type", type_deg)):
        isolated = np.flatnonzero(deg == 0)
        if isolated.size:
            raise IsolatedVertex(side, int(isolated[0]), int(isolated.size))

    server_ptr, server_idx = _csr(sv, tw, n_servers)
    type_ptr, type_idx = _csr(tw, sv, n_types)
    return BipartiteGraph(n_servers, n_types, server_ptr, server_idx, type_ptr, type_idx,
                          collapsed_edges=int(collapsed), locations=locations)


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class GraphMetrics:
    rho: float
    phi: float
    gamma: float
    min_type_degree: int
    max_type_degree: int
    min_server_degree: int
    max_server_degree: int


def _inverse_type_degree_sums(g: BipartiteGraph) -> np.ndarray:
    """Per server, the sum over compatible types of 1/d_w (pairwise summation)."""
    inv = 1.0 / g.type_degrees.astype(np.float64)
    terms = inv[g.server_idx]
    # np.add.reduceat sums sequentially; split per server for pairwise summation
    out = np.empty(g.n_servers)
    ptr = g.server_ptr
    for v in range(g.n_servers):
        out[v] = terms[ptr[v]:ptr[v + 1]].sum()
    return out


def metric_rho(g: BipartiteGraph, lam: float) -> float:
    """Worst-case server load under random routing."""
    sums = _inverse_type_degree_sums(g)
    return float(lam * g.n_servers / g.n_types * sums.max())


def metric_phi(g: BipartiteGraph) -> float:
    """Largest deviation of (N/M) * sum_{w ~ v} 1/d_w from one over all servers."""
    sums = _inverse_type_degree_sums(g)
    return float(np.abs(g.n_servers / g.n_types * sums - 1.0).max())


def metric_gamma(g: BipartiteGraph) -> float:
    """Mean inverse type degree.

    Types are grouped by degree first, so a single shared degree k gives 1/k exactly.
    """
    degrees, counts = np.unique(g.type_degrees, return_counts=True)
    return float((counts / degrees.astype(np.float64)).sum() / g.n_types)


def graph_metrics(g: BipartiteGraph, lam: float) -> GraphMetrics:
    sums = _inverse_type_degree_sums(g)
    scale = g.n_servers / g.n_types
    td, sd = g.type_degrees, g.server_degrees
    return GraphMetrics(
        rho=float(lam * scale * sums.max()),
        phi=float(np.abs(scale * sums - 1.0).max()),
        gamma=metric_gamma(g),
        min_type_degree=int(td.min()), max_type_degree=int(td.max()),
        min_server_degree=int(sd.min()), max_server_degree=int(sd.max()),
    )


def is_regular(g: BipartiteGraph) -> bool:
    """True iff N * d_v == M * d_w for every edge (v, w); exact integer test."""
    e = g.edges()
    dv = g.server_degrees[e[:, 0]]
    dw = g.type_degrees[e[:, 1]]
    return bool(np.all(g.n_servers * dv == g.n_types * dw))


def exact_phi(g: BipartiteGraph) -> Fraction:
    """phi computed in rational arithmetic. Slow; meant for checks on small graphs."""
    td = g.type_degrees
    best = Fraction(0)
    for v in range(g.n_servers):
        s = sum((Fraction(1, int(td[w])) for w in g.server_neighbors(v)), Fraction(0))
        best = max(best, abs(Fraction(g.n_servers, g.n_types) * s - 1))
    return best


# ---------------------------------------------------------------------------
# generators

def generate_complete(n_servers: int, n_types: int) -> BipartiteGraph:
    sv, tw = np.meshgrid(np.arange(n_servers), np.arange(n_types), indexing="ij")
    return build_graph(n_servers, n_types, np.column_stack((sv.ravel(), tw.ravel())))


def unit_ball_area(p: float) -> float:
    """Area of the unit p-norm ball in the plane."""
    if math.isinf(p):
        return 4.0
    return 4.0 * math.gamma(1.0 + 1.0 / p) ** 2 / math.gamma(1.0 + 2.0 / p)


def torus_ball_area(radius: float, p: float) -> float:
    """Area of a p-norm ball on the unit torus; exact for radius <= 1/2."""
    if radius > 0.5:
        raise ValueError("closed form only valid for radius <= 1/2")
    return unit_ball_area(p) * radius ** 2


def radius_for_degree(target_degree: float, n_other_side: int, p: float = 2.0) -> float:
    """Radius whose ball holds ``target_degree`` points of the other side in expectation."""
    r = math.sqrt(target_degree / (n_other_side * unit_ball_area(p)))
    if r > 0.5:
        raise ValueError(f"target degree {target_degree} needs radius {r:.4f} > 1/2")
    return r


def _torus_within(a: np.ndarray, b: np.ndarray, radius: float, p: float) -> np.ndarray:
    delta = np.abs(a[:, None, :] - b[None, :, :])
    delta = np.minimum(delta, 1.0 - delta)
    if math.isinf(p):
        return delta.max(axis=2) <= radius
    if p == 2.0:
        return (delta * delta).sum(axis=2) <= radius * radius
    if p == 1.0:
        return delta.sum(axis=2) <= radius
    return (delta ** p).sum(axis=2) <= radius ** p


def geometric_edges(server_xy: np.ndarray, type_xy: np.ndarray, radius: float, p: float,
                    block: int = 256) -> np.ndarray:
    """All (server, type) pairs within torus p-distance ``radius``, brute force in blocks."""
    chunks = []
    for start in range(0, len(server_xy), block):
        hit = _torus_within(server_xy[start:start + block], type_xy, radius, p)
        sv, tw = np.nonzero(hit)
        chunks.append(np.column_stack((sv + start, tw)))
    return np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)


def _attach_isolated(server_xy, type_xy, edges, n_servers, n_types, p):
    """Connect every isolated vertex to its nearest vertex on the other side."""
    extra = []
    sdeg = np.bincount(edges[:, 0], minlength=n_servers) if len(edges) else np.zeros(n_servers, int)
    tdeg = np.bincount(edges[:, 1], minlength=n_types) if len(edges) else np.zeros(n_types, int)
    for v in np.flatnonzero(sdeg == 0):
        extra.append((v, _nearest(server_xy[v], type_xy, p)))
    for w in np.flatnonzero(tdeg == 0):
        extra.append((_nearest(type_xy[w], server_xy, p), w))
    if not extra:
        return edges
    return np.concatenate([edges, np.asarray(extra, dtype=np.int64).reshape(-1, 2)])


def _nearest(x: np.ndarray, others: np.ndarray, p: float) -> int:
    delta = np.abs(others - x)
    delta = np.minimum(delta, 1.0 - delta)
    if math.isinf(p):
        dist = delta.max(axis=1)
    else:
        dist = (delta ** p).sum(axis=1)
    return int(np.argmin(dist))


def generate_geometric(n_servers: int, n_types: int, radius: float, p_norm: float = 2.0,
                       seed=None, isolated: str = "error"):
    """Random bipartite geometric graph on the unit torus [0, 1)^2.

    Server and type locations are i.i.d. uniform; v and w are joined iff their
    wrapped p-norm distance is at most ``radius``. With ``isolated="error"``
    (the default) a degree-0 vertex raises :class:`IsolatedVertex` and the caller
    decides whether to resample. ``isolated="nearest"`` instead joins every
    isolated vertex to its nearest neighbor on the other side, which is what
    fixed small average degrees need.

    Returns ``(graph, (server_xy, type_xy))``.
    """
    if not 0 < radius <= 0.5:
        raise ValueError("radius must lie in (0, 1/2]")
    if not p_norm > 0:
        raise ValueError("p_norm must be positive")
    if isolated not in ("error", "nearest"):
        raise ValueError(f"unknown isolated policy {isolated!r}")
    rng = np.random.default_rng(seed)
    server_xy = rng.random((n_servers, TORUS_DIM))
    type_xy = rng.random((n_types, TORUS_DIM))
    edges = geometric_edges(server_xy, type_xy, radius, p_norm)
    if isolated == "nearest":
        edges = _attach_isolated(server_xy, type_xy, edges, n_servers, n_types, p_norm)
    if len(edges) == 0:
        raise IsolatedVertex("server", 0, n_servers)
    g = build_graph(n_servers, n_types, edges, locations=(server_xy, type_xy))
    return g, (server_xy, type_xy)


def configuration_half_edges(n_servers: int, n_types: int, server_degree: int, seed=None) -> np.ndarray:
    """Pair server and type half-edges uniformly at random; multi-edges are kept."""
    total = n_servers * server_degree
    if server_degree < 1 or total % n_types:
        raise DegreeMismatch(
            f"{n_servers} servers x degree {server_degree} = {total} half-edges "
            f"cannot be split evenly over {n_types} types")
    type_degree = total // n_types
    rng = np.random.default_rng(seed)
    server_stubs = np.repeat(np.arange(n_servers, dtype=np.int64), server_degree)
    type_stubs = np.repeat(np.arange(n_types, dtype=np.int64), type_degree)
    # sequentially drawing a random free stub on each side is a uniform matching
    return np.column_stack((server_stubs, rng.permutation(type_stubs)))


def generate_configuration_regular(n_servers: int, n_types: int, server_degree: int,
                                   seed=None) -> BipartiteGraph:
    """Random regular bipartite graph from the configuration model.

    Multi-edges are collapsed and counted in ``collapsed_edges``; in that case
    the graph is only approximately regular.
    """
    pairs = configuration_half_edges(n_servers, n_types, server_degree, seed)
    return build_graph(n_servers, n_types, pairs)


# ---------------------------------------------------------------------------
# exchange format

def write_graph(g: BipartiteGraph, path) -> None:
    lines = [f"{g.n_servers} {g.n_types}"]
    lines.extend(f"{v} {w}" for v, w in g.edges())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_graph(path) -> BipartiteGraph:
    text = Path(path).read_text(encoding="utf-8").split("\n")
    header = text[0].split()
    if len(header) != 2:
        raise GraphError(f"bad header line {text[0]!r}")
    n, m = int(header[0]), int(header[1])
    edges = [tuple(int(x) for x in line.split()) for line in text[1:] if line.strip()]
    return build_graph(n, m, edges)
