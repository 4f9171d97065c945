"""Finite equilateral quantum graphs built on a regular combinatorial graph.

Band eigenvalues come from the adjacency spectrum: an adjacency eigenpair
``(m, phi)`` with ``m`` inside ``w(band)`` gives the quantum eigenvalue
``lam = w^{-1}(m)`` and the vertex trace ``phi / sqrt(kappa_lam)``. The
metric eigenfunction on an edge ``b = (o, t)`` is then

    psi(x_b) = (S(L - x) psi(o) + S(x) psi(t)) / s.
"""
from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .edge_ode import EdgeBasis, edge_basis, endpoint_data, simpson_weights
from .graph_core import Graph, adjacency_spectrum, nb_apply, nb_apply_adjoint
from .tree_spectral import (
    EDGE_TOL,
    Band,
    BandError,
    TreeModel,
    _roots_from_w,
    invert_w_on_band,
    kappa,
)

DEGENERACY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Eigenpair:
    """One band eigenvalue with its vertex trace (metric L^2 norm 1)."""

    lam: float
    m: float
    psi_ring: np.ndarray
    band_index: int
    kappa: float
    multiplicity_index: int = 0
    basis: EdgeBasis = field(default=None, repr=False)

    @property
    def s(self) -> float:
        return float(self.basis.s)


@dataclass(frozen=True, eq=False)
class BandSpectrum(Sequence):
    """All band eigenpairs of one graph, stored column-wise.

    Indexing yields :class:`Eigenpair` objects; the arrays are available
    directly for vectorized work (``psi`` has one column per eigenvalue).
    """

    graph: Graph
    model: TreeModel
    band: Band
    lam: np.ndarray
    m: np.ndarray
    psi: np.ndarray
    kappa: np.ndarray
    multiplicity_index: np.ndarray
    basis: EdgeBasis = field(repr=False)

    def __len__(self) -> int:
        return len(self.lam)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return Eigenpair(
            lam=float(self.lam[i]), m=float(self.m[i]), psi_ring=self.psi[:, i],
            band_index=self.band.index, kappa=float(self.kappa[i]),
            multiplicity_index=int(self.multiplicity_index[i]), basis=self.basis.take(i),
        )

    @property
    def n_eigen(self) -> int:
        return len(self.lam)

    @property
    def s(self) -> np.ndarray:
        return np.asarray(self.basis.s)

    def with_psi(self, psi) -> "BandSpectrum":
        """Same eigenvalues with replaced vertex traces (for basis re-mixing)."""
        return BandSpectrum(self.graph, self.model, self.band, self.lam, self.m,
                            np.asarray(psi), self.kappa, self.multiplicity_index, self.basis)


def _multiplicity_index(m: np.ndarray, scale: float) -> np.ndarray:
    out = np.zeros(len(m), dtype=np.int64)
    for i in range(1, len(m)):
        if abs(m[i] - m[i - 1]) <= DEGENERACY_TOL * scale:
            out[i] = out[i - 1] + 1
    return out


def _assemble(g, model, band, lam, m, vecs) -> BandSpectrum:
    order = np.argsort(lam, kind="stable")
    lam, m, vecs = lam[order], m[order], vecs[:, order]
    basis = edge_basis(model.potential, lam)
    kap = kappa(model, lam, band) if len(lam) else np.zeros(0)
    psi = vecs / np.sqrt(kap)[None, :]
    mult = _multiplicity_index(m, model.degree)
    return BandSpectrum(g, model, band, lam, m, psi, np.asarray(kap), mult, basis)


def band_spectrum(g: Graph, model: TreeModel, band: Band) -> BandSpectrum:
    """Quantum eigenpairs of ``g`` whose eigenvalue lies in ``band``.

    Adjacency eigenvalues within ``1e-9`` of ``|m| = 2 sqrt(q)`` are dropped.
    """
    if g.degree != model.degree:
        raise ValueError(f"graph degree {g.degree} does not match q+1 = {model.degree}")
    if band.model is not model and band.model.q != model.q:
        raise ValueError("band was computed for a different model")
    if model.q < 2:
        raise ValueError("band_spectrum needs q >= 2; use cycle_eigenpairs for cycles")
    spec = adjacency_spectrum(g)
    vals = spec.eigenvalues
    keep = band.contains_w(vals, margin=EDGE_TOL)
    m = vals[keep]
    lam = np.atleast_1d(invert_w_on_band(band, m)) if m.size else np.zeros(0)
    return _assemble(g, model, band, lam, m, spec.eigenvectors[:, keep])


def cycle_eigenpairs(g: Graph, model: TreeModel, band: Band) -> BandSpectrum:
    """Trigonometric eigenbasis of an N-cycle (``q = 1``, ``U = 0``, ``alpha = 0``).

    Each mode ``cos`` / ``sin`` of ``2 pi j x / (N L)`` with eigenvalue
    inside ``band`` contributes one pair; vertex traces are the exact
    restrictions to the vertices.
    """
    if g.degree != 2 or model.q != 1:
        raise ValueError("cycle_eigenpairs needs a 2-regular graph and q = 1")
    if not model.potential.is_zero or model.alpha != 0:
        raise ValueError("the trigonometric basis needs U = 0 and alpha = 0")
    n, L = g.n_vertices, model.L
    # vertices must be traversed in order v -> v+1 for the explicit modes
    ring = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    if not np.array_equal(g.edges, ring):
        raise ValueError("graph is not the standard cycle with edges (v, v+1 mod N)")
    total = n * L
    j_max = int(math.ceil(math.sqrt(band.hi) * total / (2 * math.pi))) + 1
    lam_list, vec_list = [], []
    v = np.arange(n)
    for j in range(1, j_max + 1):
        lam = (2 * math.pi * j / total) ** 2
        if not band.lo < lam < band.hi:
            continue
        phase = 2 * math.pi * j * v / n
        amp = math.sqrt(2.0 / total)
        for vec in (amp * np.cos(phase), amp * np.sin(phase)):
            lam_list.append(lam)
            vec_list.append(vec)
    lam = np.array(lam_list, dtype=float)
    vecs = np.array(vec_list).T if vec_list else np.zeros((n, 0))
    m = 2 * np.cos(np.sqrt(lam) * L)
    basis = edge_basis(model.potential, lam)
    kap = kappa(model, lam, band) if len(lam) else np.zeros(0)
    mult = _multiplicity_index(m, 2.0)
    # the modes are already metric-normalized; kappa only documents the trace norm
    return BandSpectrum(g, model, band, lam, m, vecs, np.asarray(kap), mult, basis)


# ---------------------------------------------------------------- reconstruction


def edge_samples(g: Graph, pairs: BandSpectrum, which=None):
    """Grid samples of eigenfunctions on every undirected edge.

    Returns an array of shape ``(n_eigen, n_edges, grid_n + 1)``, each edge
    parametrized from its canonical origin.
    """
    idx = np.arange(len(pairs)) if which is None else np.atleast_1d(which)
    psi = pairs.psi[:, idx]
    S = np.asarray(pairs.basis.S_samples)[idx]
    s = pairs.s[idx]
    po = psi[g.edges[:, 0]].T  # (n, E)
    pt = psi[g.edges[:, 1]].T
    return (po[:, :, None] * S[:, None, ::-1] + pt[:, :, None] * S[:, None, :]) / s[:, None, None]


def eval_eigenfunction(g: Graph, pair: Eigenpair, edge: int, x):
    """``psi`` at position(s) ``x`` on undirected edge ``edge`` (from its origin)."""
    o, t = g.edges[edge]
    basis = pair.basis
    x = np.asarray(x, dtype=float)
    _, Sx = basis.at(x)
    _, Sr = basis.at(basis.L - x)
    return (Sr * pair.psi_ring[o] + Sx * pair.psi_ring[t]) / pair.s


def metric_norm(g: Graph, pair: Eigenpair) -> float:
    """Simpson L^2 norm squared of the reconstructed eigenfunction."""
    basis = pair.basis
    psi = pair.psi_ring
    S = basis.S_samples
    vals = (np.outer(psi[g.edges[:, 0]], S[::-1]) + np.outer(psi[g.edges[:, 1]], S)) / pair.s
    return float(np.sum((vals**2) @ simpson_weights(basis.grid_n, basis.L)))


def kirchhoff_from_edges(g: Graph, vertex_values, v0, v1, d0, d1, alpha: float):
    """Continuity and current residuals from per-edge endpoint data.

    ``v0, v1`` are edge values at the origin / terminus, ``d0, d1`` the
    derivatives there, all in canonical edge orientation.
    """
    vertex_values = np.asarray(vertex_values)
    cont = max(
        float(np.max(np.abs(v0 - vertex_values[g.edges[:, 0]]), initial=0.0)),
        float(np.max(np.abs(v1 - vertex_values[g.edges[:, 1]]), initial=0.0)),
    )
    current = np.zeros(g.n_vertices, dtype=np.result_type(d0, float))
    np.add.at(current, g.edges[:, 0], d0)
    np.add.at(current, g.edges[:, 1], -d1)
    return cont, float(np.max(np.abs(current - alpha * vertex_values)))


def kirchhoff_residual(g: Graph, pair: Eigenpair, model: TreeModel, psi_ring=None):
    """``(continuity_max, current_max)`` for the reconstructed eigenfunction.

    Derivatives use ``psi'(x) = (-S'(L-x) psi(o) + S'(x) psi(t)) / s`` with
    ``S'`` taken from the ODE state. ``psi_ring`` overrides the vertex trace
    (negative controls).
    """
    psi = pair.psi_ring if psi_ring is None else np.asarray(psi_ring)
    basis = pair.basis
    Sp = basis.Sp_samples
    S = basis.S_samples
    s = float(basis.s)
    po, pt = psi[g.edges[:, 0]], psi[g.edges[:, 1]]
    v0 = (S[-1] * po + S[0] * pt) / s
    v1 = (S[0] * po + S[-1] * pt) / s
    d0 = (-Sp[-1] * po + Sp[0] * pt) / s
    d1 = (-Sp[0] * po + Sp[-1] * pt) / s
    return kirchhoff_from_edges(g, psi, v0, v1, d0, d1, model.alpha)


@dataclass(frozen=True, eq=False)
class NBLift:
    f: np.ndarray
    f_star: np.ndarray
    mu_minus: complex
    residual: float
    residual_star: float


def mu_minus_of(pair_m, pair_s, q: int):
    """Boundary-value root ``mu-`` for adjacency eigenvalue(s) ``m``."""
    return _roots_from_w(q, np.asarray(pair_m, dtype=float), np.asarray(pair_s, dtype=float))[1]


def nb_lift(g: Graph, pair: Eigenpair, psi_ring=None) -> NBLift:
    """Directed-edge lifts ``f(b) = psi(t_b) - mu- psi(o_b)`` and ``f* = iota f``.

    Residuals are ``||mu- B f - f||`` and ``||mu- B* f* - f*||`` (Euclidean).
    """
    psi = pair.psi_ring if psi_ring is None else np.asarray(psi_ring)
    mu = complex(mu_minus_of(pair.m, pair.s, g.q))
    f = psi[g.terminus] - mu * psi[g.origin]
    f_star = psi[g.origin] - mu * psi[g.terminus]
    r = float(np.linalg.norm(mu * nb_apply(g, f) - f))
    r_star = float(np.linalg.norm(mu * nb_apply_adjoint(g, f_star) - f_star))
    return NBLift(f, f_star, mu, r, r_star)


# ---------------------------------------------------------------- Dirichlet cycle modes


def dirichlet_eigenvalue(model: TreeModel, n: int) -> float:
    """``n``-th root (``n >= 1``) of ``s(lam) = 0``, the Dirichlet eigenvalues of one edge."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u = model.potential
    L = model.L
    lo = float(np.min(u.samples)) - 1.0
    step = 0.05 * (math.pi / L) ** 2
    found = 0
    a, sa = lo, float(endpoint_data(u, lo)[1])
    while True:
        grid = a + step * np.arange(1, 201)
        sv = endpoint_data(u, grid)[1]
        prev_x, prev_s = a, sa
        for x, sx in zip(grid, sv):
            if prev_s * sx < 0:
                found += 1
                if found == n:
                    return float(optimize.brentq(
                        lambda t: float(endpoint_data(u, t)[1]), prev_x, x, xtol=1e-14, rtol=1e-15
                    ))
            prev_x, prev_s = x, sx
        a, sa = prev_x, prev_s


@dataclass(frozen=True, eq=False)
class CycleMode:
    """Eigenfunction ``eps_e S_lam`` supported on a cycle, zero elsewhere.

    ``coeff[e]`` multiplies ``S_lam(x)`` on undirected edge ``e`` in its
    canonical orientation; it is zero off the cycle.
    """

    lam: float
    coeff: np.ndarray
    basis: EdgeBasis = field(repr=False)

    def edge_values(self):
        """Samples on all edges, shape ``(n_edges, grid_n + 1)``."""
        return self.coeff[:, None] * self.basis.S_samples[None, :]

    def edge_derivatives(self):
        return self.coeff[:, None] * self.basis.Sp_samples[None, :]


def dirichlet_cycle_eigenfunction(g: Graph, cycle, model: TreeModel, n: int) -> CycleMode:
    """Eigenfunction at the ``n``-th Dirichlet eigenvalue supported on ``cycle``.

    ``cycle`` lists the vertices of a simple cycle in traversal order. The
    traversal-direction signs obey ``eps_{i+1} = s'(lam) eps_i``, which closes
    up only on even cycles when ``s' = -1``.
    """
    cycle = [int(v) for v in cycle]
    ell = len(cycle)
    if ell < 3 or len(set(cycle)) != ell:
        raise ValueError("cycle must list at least 3 distinct vertices")
    lam = dirichlet_eigenvalue(model, n)
    basis = edge_basis(model.potential, np.asarray(lam))
    s_prime = float(np.sign(basis.s_prime))
    if s_prime < 0 and ell % 2:
        raise ValueError("odd cycle: signs cannot alternate consistently")
    coeff = np.zeros(g.n_edges)
    eps = 1.0
    for i in range(ell):
        a, b = cycle[i], cycle[(i + 1) % ell]
        key = g.edge_index.get((a, b))
        if key is None:
            raise ValueError(f"({a}, {b}) is not an edge of the graph")
        e = key // 2
        # traversal a -> b; reversed canonical orientation gives
        # eps S(L - x) = -eps c S(x) because s = 0 there
        coeff[e] = eps if key % 2 == 0 else -eps * float(basis.c)
        eps *= s_prime
    return CycleMode(lam, coeff, basis)


def cycle_mode_kirchhoff(g: Graph, mode: CycleMode, model: TreeModel):
    """Continuity and current residuals for a :class:`CycleMode` (vertex values 0)."""
    vals = mode.edge_values()
    der = mode.edge_derivatives()
    return kirchhoff_from_edges(
        g, np.zeros(g.n_vertices), vals[:, 0], vals[:, -1], der[:, 0], der[:, -1], model.alpha
    )


# ---------------------------------------------------------------- CSV output


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_spectrum_csv(path, pairs: BandSpectrum, extra: dict | None = None) -> None:
    """Columns ``band, lambda, m, multiplicity_index`` plus optional extra columns."""
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["band", "lambda", "m", "multiplicity_index", *extra])
        for i in range(len(pairs)):
            w.writerow([pairs.band.index, _fmt(pairs.lam[i]), _fmt(pairs.m[i]),
                        int(pairs.multiplicity_index[i]), *(_fmt(v[i]) for v in extra.values())])


def write_eigenfunction_csv(path, g: Graph, pair: Eigenpair) -> None:
    """Columns ``edge, x, psi`` on the shared grid for every undirected edge."""
    grid = pair.basis.grid
    S = pair.basis.S_samples
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge", "x", "psi"])
        for e, (o, t) in enumerate(g.edges):
            vals = (S[::-1] * pair.psi_ring[o] + S * pair.psi_ring[t]) / pair.s
            for xi, vi in zip(grid, vals):
                w.writerow([e, _fmt(xi), _fmt(vi)])


__all__ = [
    "BandError", "BandSpectrum", "CycleMode", "Eigenpair", "NBLift", "band_spectrum",
    "cycle_eigenpairs", "cycle_mode_kirchhoff", "dirichlet_cycle_eigenfunction",
    "dirichlet_eigenvalue", "edge_samples", "eval_eigenfunction", "kirchhoff_residual",
    "metric_norm", "nb_lift", "write_eigenfunction_csv", "write_spectrum_csv",
]
