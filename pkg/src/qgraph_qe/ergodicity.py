"""Observables, eigenfunction expectations, limit averages and quantum variances.

Expectations are assembled from vertex traces through the edge moments of
``S_lam``; direct quadrature of ``|psi|^2`` on the grid is kept alongside as
an independent check. Kernels live on non-backtracking paths
``(x_0; x_k)`` given as sequences of directed edges ``(b_1, ..., b_k)``;
positions on ``b_1`` and ``b_k`` are measured from the origin of each bond.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .edge_ode import edge_basis, simpson_weights
from .graph_core import Graph, generate_graph
from .quantum_graph import (
    BandSpectrum,
    band_spectrum,
    cycle_eigenpairs,
    edge_samples,
    mu_minus_of,
)
from .tree_spectral import (
    Band,
    TreeModel,
    find_bands,
    kappa,
    psi_correlator,
    psi_density,
    spherical,
    w_of_lambda,
)

MAX_KERNEL_ORDER = 4
KERNEL_TABLE_CAP = 50_000_000  # entries of a dense (paths, grid, grid) table
BOUND_TOL = 1e-12


# ---------------------------------------------------------------- paths


def nb_paths(g: Graph, k: int) -> np.ndarray:
    """Non-backtracking ``k``-paths as directed-edge sequences, shape ``(n, k)``.

    ``k = 0`` returns the vertices as a ``(N, 1)`` column. Paths are ordered
    by first edge, then by the successor order of ``g.out_edges``.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return np.arange(g.n_vertices)[:, None]
    succ = g.out_edges[g.terminus]  # (n_directed, degree)
    rev = np.bitwise_xor(np.arange(g.n_directed), 1)
    nb_succ = np.array([s[s != r] for s, r in zip(succ, rev)])  # (n_directed, q)
    paths = np.arange(g.n_directed)[:, None]
    for _ in range(k - 1):
        nxt = nb_succ[paths[:, -1]]  # (n, q)
        paths = np.concatenate(
            [np.repeat(paths, nxt.shape[1], axis=0), nxt.reshape(-1, 1)], axis=1
        )
    return paths


def path_vertices(g: Graph, paths: np.ndarray, k: int) -> np.ndarray:
    """Vertex sequences ``(x_0, ..., x_k)`` of the paths."""
    if k == 0:
        return paths
    return np.concatenate([g.origin[paths[:, :1]], g.terminus[paths]], axis=1)


# ---------------------------------------------------------------- observables


def _check_bound(values, what: str) -> None:
    if np.any(np.abs(values) > 1 + BOUND_TOL):
        raise ValueError(f"{what} must be bounded by 1 in absolute value")


@dataclass(frozen=True, eq=False)
class EdgeConstant:
    """Value ``a_e`` in ``[-1, 1]`` on every undirected edge."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        _check_bound(v, "edge constants")
        object.__setattr__(self, "values", v)

    def samples(self, grid_n: int) -> np.ndarray:
        return np.repeat(self.values[:, None], grid_n + 1, axis=1)


@dataclass(frozen=True, eq=False)
class EdgeFunction:
    """Grid samples ``f_e(x)`` per undirected edge (canonical orientation), ``|f| <= 1``."""

    values: np.ndarray  # (n_edges, grid_n + 1)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("edge function samples must be (n_edges, grid_n + 1)")
        _check_bound(v, "edge functions")
        object.__setattr__(self, "values", v)

    def samples(self, grid_n: int) -> np.ndarray:
        if self.values.shape[1] != grid_n + 1:
            raise ValueError(f"observable has {self.values.shape[1]} samples per edge, "
                             f"grid has {grid_n + 1}")
        return self.values


@dataclass(frozen=True, eq=False)
class PathKernel:
    """Kernel ``K_{b_1, b_k}(x, y)`` on the non-backtracking ``k``-paths of a graph.

    Either a dense ``table`` of shape ``(n_paths, G+1, G+1)`` or the product
    ``weights[p] * profile(x, y)``, which keeps large graphs affordable.
    """

    k: int
    paths: np.ndarray
    table: np.ndarray | None = None
    weights: np.ndarray | None = None
    profile: np.ndarray | None = None

    def __post_init__(self):
        if not 1 <= self.k <= MAX_KERNEL_ORDER:
            raise ValueError(f"kernel order must be in 1..{MAX_KERNEL_ORDER}")
        if self.paths.shape[1] != self.k:
            raise ValueError("paths do not match the kernel order")
        if (self.table is None) == (self.profile is None):
            raise ValueError("give either a dense table or weights and a profile")
        if self.table is not None:
            if self.table.shape[0] != len(self.paths):
                raise ValueError("kernel table does not match the path count")
            if self.table.size > KERNEL_TABLE_CAP:
                raise MemoryError("dense kernel table exceeds the memory guard")
            _check_bound(self.table, "kernels")
        else:
            w = np.ones(len(self.paths)) if self.weights is None else np.asarray(self.weights, float)
            if w.shape != (len(self.paths),):
                raise ValueError("weights do not match the path count")
            object.__setattr__(self, "weights", w)
            _check_bound(np.max(np.abs(w)) * np.max(np.abs(self.profile)), "kernels")

    @classmethod
    def dense(cls, g: Graph, k: int, table) -> "PathKernel":
        paths = nb_paths(g, k)
        n_entries = len(paths) * np.asarray(table).shape[-1] ** 2
        if n_entries > KERNEL_TABLE_CAP:
            raise MemoryError("dense kernel table exceeds the memory guard")
        return cls(k, paths, table=np.asarray(table, dtype=float))

    @classmethod
    def factored(cls, g: Graph, k: int, weights, profile) -> "PathKernel":
        return cls(k, nb_paths(g, k), weights=weights, profile=np.asarray(profile, dtype=float))

    @property
    def grid_n(self) -> int:
        src = self.table if self.table is not None else self.profile
        return src.shape[-1] - 1

    def full_table(self) -> np.ndarray:
        if self.table is not None:
            return self.table
        return self.weights[:, None, None] * self.profile[None]


def _samples_for(obs, grid_n: int) -> np.ndarray:
    return obs.samples(grid_n)


def _check_edges(g: Graph, n: int) -> None:
    if n != g.n_edges:
        raise ValueError(f"observable has {n} edges, graph has {g.n_edges}")


# ---------------------------------------------------------------- edge observables


def _edge_moments(spec: BandSpectrum, f: np.ndarray):
    """``(A, B, C)`` divided by ``s^2``, each of shape ``(n_eigen, n_edges)``."""
    basis = spec.basis
    wts = simpson_weights(basis.grid_n, basis.L)
    S = np.asarray(basis.S_samples)
    Sr = S[:, ::-1]
    s2 = np.asarray(basis.s) ** 2
    A = ((Sr * Sr) * wts) @ f.T
    B = ((Sr * S) * wts) @ f.T
    C = ((S * S) * wts) @ f.T
    return A / s2[:, None], B / s2[:, None], C / s2[:, None]


def edge_discrete_operators(g: Graph, spec: BandSpectrum, obs):
    """Vertex observables ``K, J`` and directed-edge observable ``M`` per eigenvalue.

    Shapes ``(n_eigen, N)``, ``(n_eigen, N)`` and ``(n_eigen, n_directed)``.
    On a reversed bond the observable is read backwards, which swaps the
    roles of ``S(L - t)`` and ``S(t)``.
    """
    f = _samples_for(obs, spec.basis.grid_n)
    _check_edges(g, f.shape[0])
    A, B, C = _edge_moments(spec, f)
    n = len(spec)
    # directed edge 2e runs o -> t, 2e+1 runs t -> o
    k_dir = np.empty((n, g.n_directed))
    j_dir = np.empty((n, g.n_directed))
    k_dir[:, 0::2], k_dir[:, 1::2] = A, C
    j_dir[:, 0::2], j_dir[:, 1::2] = C, A
    M = np.empty((n, g.n_directed))
    M[:, 0::2] = M[:, 1::2] = 2 * B
    K = np.zeros((n, g.n_vertices))
    J = np.zeros((n, g.n_vertices))
    for v in range(g.n_vertices):
        out = g.out_edges[v]
        K[:, v] = k_dir[:, out].sum(axis=1)
        J[:, v] = j_dir[:, np.bitwise_xor(out, 1)].sum(axis=1)
    return K, J, M


def expectation_edge(g: Graph, spec: BandSpectrum, obs) -> np.ndarray:
    """``<psi_n, f psi_n>`` for every eigenpair of ``spec``.

    Computed as half of ``<psi_ring, (K + J + M)_G psi_ring>``.
    """
    K, J, M = edge_discrete_operators(g, spec, obs)
    psi = spec.psi
    vert = np.einsum("nv,vn->n", K + J, psi * psi)
    edge = np.einsum("nb,bn,bn->n", M, psi[g.origin], psi[g.terminus])
    return 0.5 * (vert + edge)


def expectation_edge_quadrature(g: Graph, spec: BandSpectrum, obs) -> np.ndarray:
    """Oracle: Simpson integral of ``f |psi|^2`` from sampled eigenfunctions."""
    f = _samples_for(obs, spec.basis.grid_n)
    _check_edges(g, f.shape[0])
    vals = edge_samples(g, spec)
    wts = simpson_weights(spec.basis.grid_n, spec.basis.L)
    return np.einsum("net,et,t->n", vals * vals, f, wts)


def limit_average(g: Graph, model: TreeModel, lam, obs, band: Band | None = None):
    """Limit value of ``<psi, f psi>`` at eigenvalue(s) ``lam``.

    Edge constants give the plain edge mean (independent of ``lam``); edge
    functions give ``(1/N) sum_e int f_e Psi_lam``.
    """
    lam_a = np.asarray(lam, dtype=float)
    if isinstance(obs, EdgeConstant):
        _check_edges(g, len(obs.values))
        val = np.full(lam_a.shape, float(np.mean(obs.values)))
        return val if lam_a.ndim else float(val)
    f = _samples_for(obs, model.potential.grid_n)
    _check_edges(g, f.shape[0])
    if lam_a.size == 0:
        return np.zeros(lam_a.shape)
    dens = psi_density(model, lam_a, band=band)
    wts = simpson_weights(model.potential.grid_n, model.L)
    out = (dens * wts) @ f.sum(axis=0) / g.n_vertices
    return out if lam_a.ndim else float(out)


# ---------------------------------------------------------------- kernels


def _kernel_integrals(spec: BandSpectrum, obs: PathKernel):
    """``I_LL, I_00, I_L0, I_0L`` per eigenvalue and path, shape ``(n_eigen, n_paths)``.

    ``I_ab = int int K(r, s) S_a(r) S_b(s) / s^2`` with ``S_L(t) = S(L - t)``
    and ``S_0(t) = S(t)``.
    """
    basis = spec.basis
    if obs.grid_n != basis.grid_n:
        raise ValueError("kernel grid does not match the model grid")
    wts = simpson_weights(basis.grid_n, basis.L)
    S = np.asarray(basis.S_samples) * wts
    Sr = np.asarray(basis.S_samples)[:, ::-1] * wts
    s2 = np.asarray(basis.s) ** 2
    out = {}
    if obs.table is None:
        P = obs.profile
        for name, a, b in (("LL", Sr, Sr), ("00", S, S), ("L0", Sr, S), ("0L", S, Sr)):
            core = np.einsum("nr,rs,ns->n", a, P, b) / s2
            out[name] = core[:, None] * obs.weights[None, :]
    else:
        T = obs.table
        for name, a, b in (("LL", Sr, Sr), ("00", S, S), ("L0", Sr, S), ("0L", S, Sr)):
            half = np.einsum("prs,ns->npr", T, b)
            out[name] = np.einsum("npr,nr->np", half, a) / s2[:, None]
    return out["LL"], out["00"], out["L0"], out["0L"]


def expectation_kernel(g: Graph, spec: BandSpectrum, obs: PathKernel) -> np.ndarray:
    """``<psi_n, K_k psi_n>`` through the discrete path observables.

    ``2 <psi, K psi> = <psi_ring, (J + M + P)_G psi_ring>`` where ``J`` lives
    on ``k``-paths, ``M`` on ``(k-1)``-paths and ``P`` on ``(k-2)``-paths;
    each contraction pairs the vertex values at the two path ends.
    """
    k = obs.k
    i_ll, i_00, i_l0, i_0l = _kernel_integrals(spec, obs)
    x = path_vertices(g, obs.paths, k)
    psi = spec.psi
    x0, x1, xk1, xk = x[:, 0], x[:, 1], x[:, k - 1], x[:, k]
    total = (np.einsum("np,pn,pn->n", i_ll, psi[x0], psi[xk1])
             + np.einsum("np,pn,pn->n", i_00, psi[x1], psi[xk])
             + np.einsum("np,pn,pn->n", i_l0, psi[x0], psi[xk])
             + np.einsum("np,pn,pn->n", i_0l, psi[x1], psi[xk1]))
    return 0.5 * total


def expectation_kernel_quadrature(g: Graph, spec: BandSpectrum, obs: PathKernel) -> np.ndarray:
    """Oracle: double Simpson quadrature of ``K psi(x) psi(y)`` over every path."""
    vals = edge_samples(g, spec)  # (n, E, G+1)
    dir_vals = np.empty((len(spec), g.n_directed, vals.shape[-1]))
    dir_vals[:, 0::2] = vals
    dir_vals[:, 1::2] = vals[:, :, ::-1]
    wts = simpson_weights(spec.basis.grid_n, spec.basis.L)
    first = dir_vals[:, obs.paths[:, 0]] * wts
    last = dir_vals[:, obs.paths[:, -1]] * wts
    T = obs.full_table()
    return 0.5 * np.einsum("npr,prs,nps->n", first, T, last)


def _phi(q: int, m, d: int):
    # Phi(-1) = Phi(1) extends the recursion one step down
    return spherical(q, m, abs(d))


def limit_kernel_average(g: Graph, model: TreeModel, lam, obs: PathKernel,
                         band: Band | None = None, route: str = "spherical"):
    """Limit value ``(1/N) sum_paths int int K Psi_{lam,k}`` at eigenvalue(s) ``lam``.

    ``route="spherical"`` contracts the path sums of the four edge integrals
    with ``Phi_{w(lam)}(k), Phi(k-1), Phi(k-2)``; ``route="density"``
    integrates ``psi_correlator`` on the grid directly.
    """
    lam_a = np.atleast_1d(np.asarray(lam, dtype=float))
    if route == "density":
        grid = model.potential.grid
        wts = simpson_weights(model.potential.grid_n, model.L)
        T = obs.full_table()
        out = []
        for lv in lam_a:
            dens = psi_correlator(model, lv, obs.k, grid[:, None], grid[None, :], band=band)
            out.append(np.einsum("prs,rs->", T, dens * np.outer(wts, wts)) / g.n_vertices)
        out = np.array(out)
    elif route == "spherical":
        spec = _limit_spec(g, model, lam_a, band)
        i_ll, i_00, i_l0, i_0l = _kernel_integrals(spec, obs)
        n = g.n_vertices
        mean_j = i_l0.sum(axis=1) / n
        mean_m = (i_ll + i_00).sum(axis=1) / n
        mean_p = i_0l.sum(axis=1) / n
        w = spec.m
        k, q = obs.k, model.q
        out = (mean_j * _phi(q, w, k) + mean_m * _phi(q, w, k - 1)
               + mean_p * _phi(q, w, k - 2)) / (2 * spec.kappa)
    else:
        raise ValueError(f"unknown route {route!r}")
    return out if np.ndim(lam) else float(out[0])


def _limit_spec(g, model, lam_a, band):
    """Eigenvalue-only stand-in carrying the edge basis, kappa and ``w``."""
    basis = edge_basis(model.potential, lam_a)
    kap = np.atleast_1d(kappa(model, lam_a, band))
    w = np.atleast_1d(w_of_lambda(model, lam_a))
    dummy_band = band if band is not None else Band(float(lam_a.min()), float(lam_a.max()),
                                                    "increasing", 0, 0.0, 0.0, model)
    return BandSpectrum(g, model, dummy_band, lam_a, w, np.zeros((g.n_vertices, len(lam_a))),
                        kap, np.zeros(len(lam_a), dtype=np.int64), basis)


# ---------------------------------------------------------------- variances


@dataclass(frozen=True, eq=False)
class VarianceReport:
    """Quantum variance over the band eigenvalues of one graph.

    ``variance`` is ``nan`` when the band holds no eigenvalue.
    """

    band_index: int
    N: int
    N_I: int
    variance: float
    lam: np.ndarray = field(repr=False)
    deviation2: np.ndarray = field(repr=False)

    @property
    def per_eigenvalue(self) -> list[tuple[float, float]]:
        return list(zip(self.lam.tolist(), self.deviation2.tolist()))


def spectrum_for(g: Graph, model: TreeModel, band: Band) -> BandSpectrum:
    """Band eigenpairs; cycles with ``q = 1`` use the explicit trigonometric basis."""
    if model.q == 1:
        return cycle_eigenpairs(g, model, band)
    return band_spectrum(g, model, band)


def expectations(g: Graph, spec: BandSpectrum, obs) -> np.ndarray:
    if isinstance(obs, PathKernel):
        return expectation_kernel(g, spec, obs)
    return expectation_edge(g, spec, obs)


def limit_averages(g: Graph, model: TreeModel, spec: BandSpectrum, obs) -> np.ndarray:
    if len(spec) == 0:
        return np.zeros(0)
    if isinstance(obs, PathKernel):
        return np.atleast_1d(limit_kernel_average(g, model, spec.lam, obs, band=spec.band))
    return np.atleast_1d(limit_average(g, model, spec.lam, obs, band=spec.band))


def quantum_variance(g: Graph, model: TreeModel, band: Band, obs,
                     spectrum: BandSpectrum | None = None) -> VarianceReport:
    """Mean over band eigenvalues of ``|<psi_n, O psi_n> - <O>_{lam_n}|^2``."""
    spec = spectrum if spectrum is not None else spectrum_for(g, model, band)
    if len(spec) == 0:
        return VarianceReport(band.index, g.n_vertices, 0, float("nan"), np.zeros(0), np.zeros(0))
    dev = expectations(g, spec, obs) - limit_averages(g, model, spec, obs)
    dev2 = np.abs(dev) ** 2
    return VarianceReport(band.index, g.n_vertices, len(spec), float(np.mean(dev2)),
                          spec.lam.copy(), dev2)


# ---------------------------------------------------------------- discrete diagnostics


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """Element of the path space ``H_k``: one value per ``k``-path (or per
    eigenvalue and path when ``values`` is two-dimensional)."""

    k: int
    values: np.ndarray


def contract_graph(g: Graph, kern: DiscreteKernel, phi, psi) -> np.ndarray:
    """``sum_paths conj(phi(x_0)) K psi(x_k)`` for matching columns of ``phi, psi``."""
    paths = nb_paths(g, kern.k)
    x = path_vertices(g, paths, kern.k)
    vals = np.asarray(kern.values)
    if vals.shape[-1] != len(paths):
        raise ValueError(f"kernel has {vals.shape[-1]} entries, B_{kern.k} has {len(paths)} paths")
    vals = np.broadcast_to(vals, (phi.shape[1], len(paths)))
    return np.einsum("pn,np,pn->n", np.conj(phi[x[:, 0]]), vals, psi[x[:, -1]])


def contract_nb(g: Graph, kern: DiscreteKernel, f, h) -> np.ndarray:
    """``sum_paths conj(f(x_0, x_1)) K h(x_{k-1}, x_k)``; columns are eigenvalues."""
    if kern.k < 1:
        raise ValueError("the directed-edge contraction needs k >= 1")
    paths = nb_paths(g, kern.k)
    vals = np.asarray(kern.values)
    if vals.shape[-1] != len(paths):
        raise ValueError(f"kernel has {vals.shape[-1]} entries, B_{kern.k} has {len(paths)} paths")
    vals = np.broadcast_to(vals, (f.shape[1], len(paths)))
    return np.einsum("pn,np,pn->n", np.conj(f[paths[:, 0]]), vals, h[paths[:, -1]])


def nb_lifts(g: Graph, spec: BandSpectrum):
    """Columns ``f_j`` and ``f*_j`` for every eigenpair, shape ``(n_directed, n_eigen)``."""
    mu = mu_minus_of(spec.m, spec.s, g.q)
    psi = spec.psi
    f = psi[g.terminus] - mu[None, :] * psi[g.origin]
    f_star = psi[g.origin] - mu[None, :] * psi[g.terminus]
    return f, f_star


def diagnostic_variances(g: Graph, model: TreeModel, band: Band, family: DiscreteKernel,
                         spectrum: BandSpectrum | None = None):
    """Discrete and non-backtracking variances ``(var_I, varnb_I)`` of a kernel family.

    ``varnb_I`` is ``nan`` for ``k = 0`` where no directed-edge lift applies.
    """
    spec = spectrum if spectrum is not None else spectrum_for(g, model, band)
    if len(spec) == 0:
        return float("nan"), float("nan")
    var_i = float(np.mean(np.abs(contract_graph(g, family, spec.psi, spec.psi)) ** 2))
    if family.k == 0:
        return var_i, float("nan")
    f, f_star = nb_lifts(g, spec)
    var_nb = float(np.mean(np.abs(contract_nb(g, family, f_star, f)) ** 2))
    return var_i, var_nb


def constant_family(g: Graph, k: int) -> DiscreteKernel:
    """``S_k``: ``1`` on vertices for ``k = 0``, ``1/((q+1) q^{k-1})`` on ``k``-paths."""
    n = len(nb_paths(g, k))
    val = 1.0 if k == 0 else 1.0 / (g.degree * g.q ** (k - 1))
    return DiscreteKernel(k, np.full(n, val))


def edge_constant_kernels(g: Graph, obs: EdgeConstant):
    """Centered ``K_f - <K_f> S_0`` on vertices and ``M_f - <M_f> S_1`` on directed edges."""
    c = obs.values
    c_dir = np.repeat(c, 2)
    K = np.zeros(g.n_vertices)
    np.add.at(K, g.origin, c_dir)
    n = g.n_vertices
    K = K - K.sum() / n
    M = c_dir - (c_dir.sum() / n) / g.degree
    return DiscreteKernel(0, K), DiscreteKernel(1, M)


def edge_constant_bound_terms(spec: BandSpectrum):
    """Per-eigenvalue ``a_n = int S^2 / s^2`` and ``b_n = 2 int S(L-t) S(t) / s^2``."""
    basis = spec.basis
    wts = simpson_weights(basis.grid_n, basis.L)
    S = np.asarray(basis.S_samples)
    s2 = np.asarray(basis.s) ** 2
    return (S * S) @ wts / s2, 2 * (S * S[:, ::-1]) @ wts / s2


# ---------------------------------------------------------------- observable generators


def random_sign_edge_constant(g: Graph, rng: np.random.Generator, grid_n: int) -> EdgeConstant:
    return EdgeConstant(rng.choice([-1.0, 1.0], size=g.n_edges))


def sign_modulated_sine(g: Graph, rng: np.random.Generator, grid_n: int, L: float = 1.0) -> EdgeFunction:
    """``f_e(x) = eps_e sin(2 pi x / L)`` with random signs ``eps_e``."""
    x = np.linspace(0.0, L, grid_n + 1)
    eps = rng.choice([-1.0, 1.0], size=g.n_edges)
    return EdgeFunction(eps[:, None] * np.sin(2 * np.pi * x / L)[None, :])


def random_sign_path_kernel(g: Graph, rng: np.random.Generator, grid_n: int, k: int = 2,
                            L: float = 1.0) -> PathKernel:
    """Random path signs times the profile ``cos(pi x / L) cos(pi y / L)``."""
    x = np.linspace(0.0, L, grid_n + 1)
    prof = np.outer(np.cos(np.pi * x / L), np.cos(np.pi * x / L))
    paths = nb_paths(g, k)
    return PathKernel(k, paths, weights=rng.choice([-1.0, 1.0], size=len(paths)), profile=prof)


OBSERVABLE_GENERATORS = {
    "edge_constant": random_sign_edge_constant,
    "edge_function": sign_modulated_sine,
    "path_kernel": random_sign_path_kernel,
}


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepRow:
    N: int
    trial: int
    band: int
    N_I: int
    variance: float


@dataclass(frozen=True, eq=False)
class SweepResult:
    rows: list
    summary: list  # (N, mean_variance, stderr, trials)

    @property
    def decay_ratio(self) -> float:
        return self.summary[-1][1] / self.summary[0][1]


def default_lambda_range(model: TreeModel, band_index: int) -> tuple[float, float]:
    u = model.potential.samples
    lo = float(np.min(u)) - (model.alpha**2 + 1.0)
    hi = float(np.max(u)) + ((band_index + 1) * math.pi / model.L) ** 2
    return lo, hi


def select_band(model: TreeModel, band_index: int, lambda_range=None) -> Band:
    rng_ = lambda_range if lambda_range is not None else default_lambda_range(model, band_index)
    bands = find_bands(model, rng_).bands
    if not 1 <= band_index <= len(bands):
        raise ValueError(f"band {band_index} not found in lambda range {rng_} "
                         f"({len(bands)} bands)")
    return bands[band_index - 1]


def trial_streams(seed: int, N: int, trial: int):
    """Independent graph seed and observable generator for one (N, trial)."""
    ss = np.random.SeedSequence([int(seed), int(N), int(trial)])
    graph_ss, obs_ss = ss.spawn(2)
    return int(graph_ss.generate_state(1, dtype=np.uint32)[0]), np.random.default_rng(obs_ss)


def _one_trial(kind, N, degree, model, band, obs_generator, seed, trial):
    graph_seed, rng = trial_streams(seed, N, trial)
    try:
        g = generate_graph(kind, N, degree, seed=graph_seed)
        obs = obs_generator(g, rng, model.potential.grid_n)
        rep = quantum_variance(g, model, band, obs)
    except Exception as exc:
        raise RuntimeError(f"sweep failed at N={N}, trial={trial}: {exc}") from exc
    return SweepRow(N, trial, band.index, rep.N_I, rep.variance)


def convergence_sweep(kind: str, sizes, degree: int, model: TreeModel, band_index: int,
                      obs_generator, trials: int, seed: int, workers: int = 1,
                      lambda_range=None) -> SweepResult:
    """Quantum variance over a family of graphs of growing size.

    Every ``(N, trial)`` draws its graph and observable from its own stream
    derived from ``(seed, N, trial)``, and rows are reduced in a fixed order,
    so the output does not depend on ``workers``.
    """
    sizes = [int(n) for n in sizes]
    if not sizes or sizes != sorted(sizes):
        raise ValueError("sizes must be a non-empty ascending list")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if degree != model.degree:
        raise ValueError(f"degree {degree} does not match q+1 = {model.degree}")
    band = select_band(model, band_index, lambda_range)
    jobs = [(N, t) for N in sizes for t in range(trials)]
    run = lambda job: _one_trial(kind, job[0], degree, model, band, obs_generator, seed, job[1])
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    summary = []
    for N in sizes:
        v = np.array([r.variance for r in rows if r.N == N])
        mean = float(np.mean(v))
        stderr = float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        summary.append((N, mean, stderr, len(v)))
    return SweepResult(rows, summary)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_sweep_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "trial", "band", "N_I", "variance"])
        for r in result.rows:
            w.writerow([r.N, r.trial, r.band, r.N_I, _fmt(r.variance)])


def write_summary_csv(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "mean_variance", "stderr", "trials"])
        for N, mean, se, t in result.summary:
            w.writerow([N, _fmt(mean), _fmt(se), t])


# ---------------------------------------------------------------- observable files


def save_edge_constant(path, obs: EdgeConstant) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge_id", "value"])
        for e, v in enumerate(obs.values):
            w.writerow([e, _fmt(v)])


def load_edge_constant(path) -> EdgeConstant:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    vals = np.zeros(len(rows))
    for r in rows:
        vals[int(r["edge_id"])] = float(r["value"])
    return EdgeConstant(vals)


def save_edge_function(path, obs: EdgeFunction, L: float = 1.0) -> None:
    """One block of ``edge_id, x, value`` rows per edge."""
    grid = np.linspace(0.0, L, obs.values.shape[1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge_id", "x", "value"])
        for e, row in enumerate(obs.values):
            for xi, v in zip(grid, row):
                w.writerow([e, _fmt(xi), _fmt(v)])


def load_edge_function(path) -> EdgeFunction:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    edges = data[:, 0].astype(np.int64)
    n_edges = int(edges.max()) + 1
    per = len(data) // n_edges
    vals = np.zeros((n_edges, per))
    for e in range(n_edges):
        vals[e] = data[edges == e, 2]
    return EdgeFunction(vals)
