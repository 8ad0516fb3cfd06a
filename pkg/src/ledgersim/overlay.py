"""P2P overlay graphs: generation, queries, and edge-list dumps.

Graphs are simple, undirected and connected, with dense node ids ``0..n-1``.
Adjacency is stored in CSR form with each neighbor list sorted ascending,
which gives every node a canonical neighbor order (neighbor "slots").
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .rng import derive_seed

MAX_ATTEMPTS = 1000


class GraphGenerationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Overlay:
    node_count: int
    indptr: np.ndarray
    indices: np.ndarray
    seed: int | None = None
    _edge_keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)
        src = np.repeat(np.arange(self.node_count, dtype=np.int64), np.diff(self.indptr))
        # CSR rows are sorted, so these keys are globally ascending.
        keys = src * self.node_count + self.indices
        keys.setflags(write=False)
        object.__setattr__(self, "_edge_keys", keys)

    @classmethod
    def from_edges(cls, n: int, edges, seed: int | None = None) -> Overlay:
        """Build from an iterable of ``(u, v)`` pairs; rejects loops and duplicates."""
        if n < 1:
            raise ValueError("node_count must be positive")
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValueError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        lo = np.minimum(e[:, 0], e[:, 1])
        hi = np.maximum(e[:, 0], e[:, 1])
        if np.unique(lo * n + hi).size != len(e):
            raise ValueError("duplicate edges are not allowed")
        src = np.concatenate([lo, hi])
        dst = np.concatenate([hi, lo])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(n, indptr, dst.astype(np.int64), seed)

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def edge_keys(self) -> np.ndarray:
        """``u * n + v`` for every directed adjacency entry, ascending."""
        return self._edge_keys

    def edges(self) -> np.ndarray:
        """``(m, 2)`` array of ``u < v`` pairs in ascending order."""
        src = np.repeat(np.arange(self.node_count, dtype=np.int64), self.degrees)
        mask = src < self.indices
        return np.column_stack([src[mask], self.indices[mask]])

    def neighbors(self, v: int) -> list[int]:
        if not 0 <= v < self.node_count:
            raise IndexError(f"node id {v} out of range for {self.node_count} nodes")
        return self.indices[self.indptr[v] : self.indptr[v + 1]].tolist()

    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(v) for v in range(self.node_count)]

    def is_connected(self) -> bool:
        return _is_connected(self.node_count, self.indptr, self.indices)


def neighbors(o: Overlay, v: int) -> list[int]:
    return o.neighbors(v)


def _is_connected(n: int, indptr: np.ndarray, indices: np.ndarray) -> bool:
    if n == 1:
        return True
    mat = csr_matrix((np.ones(len(indices), dtype=np.int8), indices, indptr), shape=(n, n))
    ncomp, _ = connected_components(mat, directed=False)
    return ncomp == 1


def _sample_gnm(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    total = n * (n - 1) // 2
    idx = np.sort(rng.choice(total, size=m, replace=False))
    rows = np.arange(n - 1, dtype=np.int64)
    starts = rows * n - rows * (rows + 1) // 2
    u = np.searchsorted(starts, idx, side="right") - 1
    v = idx - starts[u] + u + 1
    return np.column_stack([u, v])


def generate_random_graph(n: int, m: int, seed: int) -> Overlay:
    """Uniform G(n, m) graph, resampled with an advanced seed until connected."""
    if n < 2:
        raise ValueError("random graph needs n >= 2")
    if m < n - 1:
        raise ValueError(f"m={m} edges cannot connect {n} nodes (need at least {n - 1})")
    if m > n * (n - 1) // 2:
        raise ValueError(f"m={m} exceeds the complete-graph bound {n * (n - 1) // 2}")
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(derive_seed(seed, attempt))
        o = Overlay.from_edges(n, _sample_gnm(n, m, rng), seed=seed)
        if o.is_connected():
            return o
    raise GraphGenerationError(f"no connected G({n},{m}) after {MAX_ATTEMPTS} attempts")


def _ring_rewire(n: int, k: int, beta: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    adj: list[set[int]] = [set() for _ in range(n)]
    for u in range(n):
        for j in range(1, k // 2 + 1):
            w = (u + j) % n
            adj[u].add(w)
            adj[w].add(u)
    if beta > 0:
        # Same sweep order as the classic construction: by lattice distance, then node.
        for j in range(1, k // 2 + 1):
            coins = rng.random(n)
            for u in range(n):
                if coins[u] >= beta:
                    continue
                w = (u + j) % n
                if w not in adj[u] or len(adj[u]) >= n - 1:
                    continue
                while True:
                    x = int(rng.integers(n))
                    if x != u and x not in adj[u]:
                        break
                adj[u].discard(w)
                adj[w].discard(u)
                adj[u].add(x)
                adj[x].add(u)
    return [(u, w) for u in range(n) for w in adj[u] if u < w]


def generate_small_world(n: int, k: int, beta: float, seed: int) -> Overlay:
    """Watts-Strogatz ring lattice with ``n*k/2`` edges, rewired with probability ``beta``."""
    if n < 2:
        raise ValueError("small-world graph needs n >= 2")
    if k % 2 or k < 2:
        raise ValueError(f"k must be an even integer >= 2, got {k}")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than n={n}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0,1], got {beta}")
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng(derive_seed(seed, attempt))
        o = Overlay.from_edges(n, _ring_rewire(n, k, beta, rng), seed=seed)
        if o.is_connected():
            return o
    raise GraphGenerationError(f"no connected small-world graph after {MAX_ATTEMPTS} attempts")


def dump_edge_list(o: Overlay, path: str | Path) -> None:
    e = o.edges()
    lines = [f"# nodes={o.node_count} edges={len(e)} seed={o.seed}"]
    lines += [f"{u} {v}" for u, v in e.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_edge_list(path: str | Path) -> Overlay:
    text = Path(path).read_text().splitlines()
    header = dict(tok.split("=", 1) for tok in text[0].lstrip("# ").split())
    n = int(header["nodes"])
    seed = None if header.get("seed", "None") == "None" else int(header["seed"])
    pairs = [tuple(map(int, line.split())) for line in text[1:] if line.strip()]
    return Overlay.from_edges(n, np.array(pairs, dtype=np.int64).reshape(-1, 2), seed=seed)
