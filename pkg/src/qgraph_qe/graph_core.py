"""Finite (q+1)-regular combinatorial graphs.

Graphs are stored with a fixed directed-edge indexing: undirected edge ``i``
with canonical orientation ``(o, t)`` (``o < t``, except on cycles where the
orientation follows ``v -> v+1``) owns directed edges ``2i`` (``o -> t``) and
``2i+1`` (``t -> o``), so the reversal of ``b`` is ``b ^ 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

GRAPH_KINDS = ("random_regular", "cycle", "complete", "petersen")


class GraphGenerationError(RuntimeError):
    """Raised when the pairing model exhausts its retry budget."""


@dataclass(frozen=True, eq=False)
class Graph:
    """A simple connected regular graph with directed-edge structure.

    Attributes
    ----------
    n_vertices : int
    degree : int
        Common vertex degree ``q + 1``.
    edges : ndarray, shape (n_edges, 2)
        Undirected edges in canonical orientation (origin, terminus).
    """

    n_vertices: int
    degree: int
    edges: np.ndarray
    kind: str = "custom"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def q(self) -> int:
        return self.degree - 1

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_directed(self) -> int:
        return 2 * len(self.edges)

    @cached_property
    def origin(self) -> np.ndarray:
        """Origin vertex of every directed edge."""
        o = np.empty(self.n_directed, dtype=np.int64)
        o[0::2] = self.edges[:, 0]
        o[1::2] = self.edges[:, 1]
        return o

    @cached_property
    def terminus(self) -> np.ndarray:
        t = np.empty(self.n_directed, dtype=np.int64)
        t[0::2] = self.edges[:, 1]
        t[1::2] = self.edges[:, 0]
        return t

    def reverse(self, b):
        """Index of the reversed directed edge (works on arrays)."""
        return np.bitwise_xor(b, 1)

    @cached_property
    def adjacency_lists(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for u, v in self.edges:
            nbrs[u].append(int(v))
            nbrs[v].append(int(u))
        return [sorted(n) for n in nbrs]

    @cached_property
    def out_edges(self) -> np.ndarray:
        """``out_edges[v]`` lists directed edges leaving ``v`` (shape (N, degree))."""
        order = np.argsort(self.origin, kind="stable")
        return order.reshape(self.n_vertices, self.degree)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        """Map ordered vertex pair to directed-edge index."""
        return {(int(o), int(t)): b for b, (o, t) in enumerate(zip(self.origin, self.terminus))}

    def adjacency_matrix(self, dense: bool = True):
        n = self.n_vertices
        data = np.ones(self.n_directed)
        a = sp.csr_matrix((data, (self.origin, self.terminus)), shape=(n, n))
        return a.toarray() if dense else a

    @cached_property
    def nb_matrix(self) -> sp.csr_matrix:
        """Sparse non-backtracking matrix, ``B[b, b+] = 1`` for ``o(b+) = t(b)``, ``b+ != rev(b)``."""
        rows, cols = [], []
        succ = self.out_edges[self.terminus]  # (n_directed, degree)
        rows = np.repeat(np.arange(self.n_directed), self.degree)
        cols = succ.ravel()
        keep = cols != np.bitwise_xor(rows, 1)
        m = self.n_directed
        return sp.csr_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(m, m))

    def check_invariants(self) -> None:
        """Raise ``ValueError`` if the graph is not simple and regular."""
        e = self.edges
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loop present")
        key = np.sort(e, axis=1)
        if len(np.unique(key, axis=0)) != len(key):
            raise ValueError("multi-edge present")
        deg = np.bincount(e.ravel(), minlength=self.n_vertices)
        if np.any(deg != self.degree):
            raise ValueError(f"degrees {set(deg.tolist())} != {self.degree}")
        if self.n_directed != self.n_vertices * self.degree:
            raise ValueError("directed edge count mismatch")

    def is_connected(self) -> bool:
        return _is_connected(self.n_vertices, self.adjacency_lists)

    # serialization: header "n degree", then one "u v" line per undirected edge
    def to_edgelist(self) -> str:
        lines = [f"{self.n_vertices} {self.degree}"]
        lines += [f"{u} {v}" for u, v in self.edges]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_edgelist())

    @classmethod
    def from_edgelist(cls, text: str, kind: str = "custom") -> "Graph":
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        n, degree = int(rows[0][0]), int(rows[0][1])
        edges = np.array([[int(a), int(b)] for a, b in rows[1:]], dtype=np.int64)
        g = cls(n, degree, edges, kind=kind)
        g.check_invariants()
        return g

    @classmethod
    def load(cls, path) -> "Graph":
        return cls.from_edgelist(Path(path).read_text())


def _is_connected(n: int, nbrs) -> bool:
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        v = stack.pop()
        for u in nbrs[v]:
            if not seen[u]:
                seen[u] = True
                stack.append(u)
    return bool(seen.all())


def _canonical(edges) -> np.ndarray:
    e = np.sort(np.asarray(edges, dtype=np.int64), axis=1)
    return e[np.lexsort((e[:, 1], e[:, 0]))]


def _pairing_model(n: int, degree: int, rng: np.random.Generator, max_tries: int) -> np.ndarray:
    stubs = np.repeat(np.arange(n), degree)
    for _ in range(max_tries):
        pairs = rng.permutation(stubs).reshape(-1, 2)
        if np.any(pairs[:, 0] == pairs[:, 1]):
            continue
        key = np.sort(pairs, axis=1)
        code = key[:, 0] * n + key[:, 1]
        if len(np.unique(code)) != len(code):
            continue
        edges = _canonical(pairs)
        nbrs: list[list[int]] = [[] for _ in range(n)]
        for u, v in edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        if not _is_connected(n, nbrs):
            continue
        return edges
    raise GraphGenerationError(
        f"pairing model found no simple connected {degree}-regular graph on {n} vertices "
        f"in {max_tries} attempts"
    )


def generate_graph(kind: str, n: int, degree: int, seed: int = 0) -> Graph:
    """Build a simple connected ``degree``-regular graph.

    ``random_regular`` uses the configuration (pairing) model, rejecting
    loops, multi-edges and disconnected outcomes, with at most ``10 n``
    attempts. The other kinds are deterministic and ignore ``seed``.
    """
    if kind == "random_regular":
        if (n * degree) % 2 or n <= degree or degree < 1:
            raise ValueError(f"infeasible random_regular parameters n={n}, degree={degree}")
        rng = np.random.default_rng(seed)
        edges = _pairing_model(n, degree, rng, max_tries=10 * n)
    elif kind == "cycle":
        if degree != 2 or n < 3:
            raise ValueError("cycle requires degree=2 and n>=3")
        v = np.arange(n)
        edges = np.stack([v, (v + 1) % n], axis=1)
    elif kind == "complete":
        if degree != n - 1 or n < 2:
            raise ValueError("complete graph requires degree = n-1")
        edges = np.array([(u, v) for u in range(n) for v in range(u + 1, n)], dtype=np.int64)
    elif kind == "petersen":
        if n != 10 or degree != 3:
            raise ValueError("petersen requires n=10, degree=3")
        outer = [(i, (i + 1) % 5) for i in range(5)]
        inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
        spokes = [(i, i + 5) for i in range(5)]
        edges = _canonical(outer + inner + spokes)
    else:
        raise ValueError(f"unknown graph kind {kind!r}; expected one of {GRAPH_KINDS}")
    g = Graph(n, degree, edges, kind=kind)
    g.check_invariants()
    return g


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Eigendecomposition of the adjacency matrix, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns


def adjacency_spectrum(g: Graph) -> SpectralData:
    """Full dense symmetric eigendecomposition of the adjacency matrix."""
    if "spectrum" in g._cache:
        return g._cache["spectrum"]
    a = g.adjacency_matrix()
    try:
        vals, vecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    vals, vecs = vals[::-1].copy(), vecs[:, ::-1].copy()
    vals.setflags(write=False)
    vecs.setflags(write=False)
    spec = SpectralData(vals, vecs)
    g._cache["spectrum"] = spec
    return spec


def spectral_gap(g: Graph) -> float:
    """``1 - max_{j>=2} |m_j| / (q+1)``; positive values certify expansion."""
    vals = adjacency_spectrum(g).eigenvalues
    return float(1.0 - np.max(np.abs(vals[1:])) / g.degree)


def injectivity_profile(g: Graph, r_max: int = 10):
    """Injectivity radius of every vertex, capped at ``r_max``.

    ``rho[x]`` is the largest radius whose ball (induced subgraph on the
    vertices within graph distance ``rho``) is a tree.

    Returns
    -------
    rho : ndarray of int
    fraction : ndarray, shape (r_max + 1,)
        ``fraction[r] = #{x : rho[x] < r} / N``.
    """
    nbrs = g.adjacency_lists
    rho = np.empty(g.n_vertices, dtype=np.int64)
    for x in range(g.n_vertices):
        rho[x] = _ball_tree_radius(nbrs, x, r_max)
    fraction = np.array([(rho < r).mean() for r in range(r_max + 1)])
    return rho, fraction


def _ball_tree_radius(nbrs, x: int, r_max: int) -> int:
    # grow BFS layer by layer; the ball of radius r is a tree iff the induced
    # edge count equals vertex count - 1
    dist = {x: 0}
    frontier = [x]
    n_vert, n_edge = 1, 0
    for r in range(1, r_max + 1):
        nxt = []
        for v in frontier:
            for u in nbrs[v]:
                if u not in dist:
                    dist[u] = r
                    nxt.append(u)
        if not nxt:
            return r_max
        n_vert += len(nxt)
        # induced edges gained: edges from new layer to layer r-1 and within layer r
        for u in nxt:
            for w in nbrs[u]:
                dw = dist.get(w, -1)
                if dw == r - 1:
                    n_edge += 1
                elif dw == r and w < u:
                    n_edge += 1
        if n_edge != n_vert - 1:
            return r - 1
        frontier = nxt
    return r_max


def nb_apply(g: Graph, f) -> np.ndarray:
    """Non-backtracking operator: ``(Bf)(b) = sum of f over successors of b``."""
    f = np.asarray(f)
    if f.shape[0] != g.n_directed:
        raise ValueError(f"expected length {g.n_directed}, got {f.shape[0]}")
    return g.nb_matrix @ f


def nb_apply_adjoint(g: Graph, f) -> np.ndarray:
    """Adjoint ``B* = iota B iota`` with ``iota`` the edge reversal."""
    f = np.asarray(f)
    if f.shape[0] != g.n_directed:
        raise ValueError(f"expected length {g.n_directed}, got {f.shape[0]}")
    rev = np.bitwise_xor(np.arange(g.n_directed), 1)
    return nb_apply(g, f[rev])[rev]
