"""Undirected neighbor graphs, Metropolis fusion weights and graph metrics.

Nodes are 0-based internally. The config grammar (see :func:`parse_graph_spec`)
uses 1-based node ids, matching how agents are numbered in experiment files.
"""
from __future__ import annotations

import hashlib
import math
import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "NeighborGraph",
    "WeightMatrix",
    "GraphGenerationError",
    "UNREACHABLE",
    "metropolis_weights",
    "gen_erdos_renyi",
    "builtin_graph",
    "shortest_distances",
    "connected_components",
    "second_eigen_magnitude",
    "consensus_decay_margins",
    "parse_graph_spec",
    "build_graph",
    "GraphSpec",
]

# distance marker for node pairs in different components
UNREACHABLE = -1

DENSE_EIGEN_LIMIT = 64


class GraphGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NeighborGraph:
    """Undirected graph on ``node_count`` nodes; every node is its own neighbor."""

    node_count: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError(f"node_count must be positive, got {self.node_count}")
        canon = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                continue  # self-loops are implicit
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ValueError(f"edge ({i},{j}) outside 0..{self.node_count - 1}")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(canon))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Sorted closed neighborhoods, each including the node itself."""
        nbrs = [{i} for i in range(self.node_count)]
        for i, j in self.edges:
            nbrs[i].add(j)
            nbrs[j].add(i)
        return tuple(tuple(sorted(s)) for s in nbrs)

    def neighborhood_sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.neighbors], dtype=np.int64)

    def is_isolated(self, i: int) -> bool:
        return len(self.neighbors[i]) == 1

    def adjacency(self) -> np.ndarray:
        """Boolean closed-neighborhood matrix (diagonal set)."""
        a = np.eye(self.node_count, dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a

    def is_connected(self) -> bool:
        return len(connected_components(self)) == 1

    def fingerprint(self) -> str:
        h = hashlib.sha256(f"N={self.node_count};".encode())
        for i, j in sorted(self.edges):
            h.update(f"{i}-{j};".encode())
        return h.hexdigest()[:16]

    def relabel(self, offset: int, node_count: int) -> "NeighborGraph":
        return NeighborGraph(node_count, frozenset((i + offset, j + offset) for i, j in self.edges))


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    entries: np.ndarray
    rho2: float


def second_eigen_magnitude(w: np.ndarray, tol: float = 1e-12, max_iter: int = 200_000) -> float:
    """Second-largest eigenvalue magnitude of a symmetric doubly stochastic matrix."""
    n = w.shape[0]
    if n == 1:
        return 0.0
    if n <= DENSE_EIGEN_LIMIT:
        mags = np.sort(np.abs(np.linalg.eigvalsh(w)))[::-1]
        return float(min(mags[1], 1.0))
    # Power iteration on B^2 with B = W - J/N. Squaring makes the operator PSD so
    # a +/- pair of dominant eigenvalues cannot stall the iteration.
    rng = np.random.default_rng(0)
    ones = np.full(n, 1.0 / math.sqrt(n))
    x = rng.standard_normal(n)
    x -= ones * (ones @ x)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = w @ x
        y -= ones * (ones @ y)
        y = w @ y
        y -= ones * (ones @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        new = math.sqrt(norm)
        x = y / norm
        if abs(new - est) <= tol:
            return float(min(new, 1.0))
        est = new
    return float(min(est, 1.0))


def metropolis_weights(g: NeighborGraph) -> WeightMatrix:
    n = g.node_count
    sizes = g.neighborhood_sizes()
    w = np.zeros((n, n))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / max(sizes[i], sizes[j])
    # diagonal excludes j == i so each row sums to one
    for i in range(n):
        w[i, i] = 1.0 - sum(w[i, j] for j in g.neighbors[i] if j != i)
    return WeightMatrix(entries=w, rho2=second_eigen_magnitude(w))


def consensus_decay_margins(w: WeightMatrix, t_max: int, slack: float = 1e-10) -> np.ndarray:
    """rho2^t + slack - max_ij |[W^t]_ij - 1/N| for t = 0..t_max.

    Nonnegative entries mean the geometric decay bound toward uniform averaging
    holds at that t; meaningful for connected graphs only.
    """
    n = w.entries.shape[0]
    power = np.eye(n)
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        out[t] = w.rho2 ** t + slack - np.max(np.abs(power - 1.0 / n))
        power = power @ w.entries
    return out


def gen_erdos_renyi(
    n: int,
    p: float,
    seed=None,
    require_connected: bool = True,
    max_attempts: int = 1000,
) -> NeighborGraph:
    """G(n, p) graph; pairs are drawn in canonical (i<j, row-major) order.

    With ``require_connected`` whole graphs are resampled from the same stream
    until one is connected.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0,1], got {p}")
    if n < 1:
        raise ValueError(f"node count must be positive, got {n}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    attempts = max_attempts if require_connected else 1
    for _ in range(attempts):
        keep = rng.random(iu.size) < p
        g = NeighborGraph(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())))
        if not require_connected or g.is_connected():
            return g
    raise GraphGenerationError(
        f"no connected Erdos-Renyi graph with n={n}, p={p} after {max_attempts} attempts"
    )


def _complete(n: int) -> set[tuple[int, int]]:
    return {(i, j) for i in range(n) for j in range(i + 1, n)}


def _cycle(n: int) -> set[tuple[int, int]]:
    if n < 2:
        return set()
    return {(i, (i + 1) % n) for i in range(n)} - {(i, i) for i in range(n)}


def _path(n: int) -> set[tuple[int, int]]:
    return {(i, i + 1) for i in range(n - 1)}


def builtin_graph(kind: str, n: int | None = None) -> NeighborGraph:
    """``complete``, ``cycle``, ``path`` on ``n`` nodes, or the 12-node ``fig5`` graph.

    ``fig5`` is a 6-node complete graph (nodes 0-5) beside a 6-node cycle
    (nodes 6-11) with no edges between them.
    """
    if kind == "fig5":
        edges = _complete(6) | {(i + 6, j + 6) for i, j in _cycle(6)}
        return NeighborGraph(12, frozenset(edges))
    if n is None or n < 1:
        raise ValueError(f"{kind} graph needs n >= 1, got {n}")
    makers = {"complete": _complete, "cycle": _cycle, "path": _path}
    if kind not in makers:
        raise ValueError(f"unknown builtin graph kind {kind!r}")
    return NeighborGraph(n, frozenset(makers[kind](n)))


def shortest_distances(g: NeighborGraph) -> np.ndarray:
    """All-pairs hop distances by BFS; ``UNREACHABLE`` across components."""
    n = g.node_count
    d = np.full((n, n), UNREACHABLE, dtype=np.int64)
    for s in range(n):
        d[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in g.neighbors[u]:
                if d[s, v] == UNREACHABLE:
                    d[s, v] = d[s, u] + 1
                    queue.append(v)
    return d


def connected_components(g: NeighborGraph) -> list[list[int]]:
    seen = [False] * g.node_count
    comps = []
    for s in range(g.node_count):
        if seen[s]:
            continue
        comp, stack = [], [s]
        seen[s] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in g.neighbors[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(sorted(comp))
    return comps


# --- config grammar -------------------------------------------------------

@dataclass(frozen=True)
class GraphSpec:
    kind: str
    n: int | None = None
    p: float | None = None
    edges: tuple[tuple[int, int], ...] = ()
    text: str = ""


_CALL = re.compile(r"^\s*(er|complete|cycle|path)\s*\(\s*([^)]*)\)\s*$")
_EDGES = re.compile(r"^\s*edges\s*(?:\(\s*(\d+)\s*\))?\s*:\s*\[(.*)\]\s*$", re.S)
_PAIR = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)")


def parse_graph_spec(text: str) -> GraphSpec:
    """Parse ``er(n,p)``, ``complete(n)``, ``cycle(n)``, ``path(n)``, ``fig5`` or
    ``edges:[(i,j),...]`` (1-based ids; ``edges(n):[...]`` fixes the node count)."""
    if not isinstance(text, str):
        raise ValueError(f"graph spec must be a string, got {text!r}")
    s = text.strip()
    if s == "fig5":
        return GraphSpec("fig5", n=12, text=s)
    m = _CALL.match(s)
    if m:
        kind, args = m.group(1), [a.strip() for a in m.group(2).split(",") if a.strip()]
        try:
            if kind == "er":
                if len(args) != 2:
                    raise ValueError
                n, p = int(args[0]), float(args[1])
                if not 0.0 <= p <= 1.0:
                    raise ValueError
                return GraphSpec("er", n=n, p=p, text=s)
            if len(args) != 1:
                raise ValueError
            n = int(args[0])
        except ValueError:
            raise ValueError(f"malformed graph spec {text!r}") from None
        if n < 1:
            raise ValueError(f"graph spec {text!r} needs n >= 1")
        return GraphSpec(kind, n=n, text=s)
    m = _EDGES.match(s)
    if m:
        body = m.group(2)
        pairs = [(int(a), int(b)) for a, b in _PAIR.findall(body)]
        if _PAIR.sub("", body).replace(",", "").strip():
            raise ValueError(f"malformed edge list in {text!r}")
        if any(a < 1 or b < 1 for a, b in pairs):
            raise ValueError(f"edge ids are 1-based in {text!r}")
        top = max([max(a, b) for a, b in pairs], default=1)
        n = int(m.group(1)) if m.group(1) else top
        if n < top:
            raise ValueError(f"edge list in {text!r} references node {top} > n={n}")
        return GraphSpec("edges", n=n, edges=tuple(pairs), text=s)
    raise ValueError(f"unknown graph spec {text!r}")


def build_graph(spec: GraphSpec | str, seed=None, max_attempts: int = 1000) -> NeighborGraph:
    if isinstance(spec, str):
        spec = parse_graph_spec(spec)
    if spec.kind == "er":
        return gen_erdos_renyi(spec.n, spec.p, seed=seed, require_connected=True,
                               max_attempts=max_attempts)
    if spec.kind == "edges":
        return NeighborGraph(spec.n, frozenset((a - 1, b - 1) for a, b in spec.edges))
    return builtin_graph(spec.kind, spec.n)
