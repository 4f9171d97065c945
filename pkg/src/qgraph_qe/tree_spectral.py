"""Spectral quantities of the equilateral (q+1)-regular quantum tree.

Covers the secular map ``w(lam) = (q+1) c(lam) + alpha s(lam)``, the roots
``mu^{+-}`` of ``q x^2 - w x + 1``, the band structure, discrete and metric
Green's functions, spherical functions, the normalization ``kappa`` and the
limit densities ``Psi_lam`` and ``Psi_{lam,k}``.

Boundary values ``lam + i0`` inside a band use the branch with
``sign(Im mu^-) = sign(s(lam))``; that is the choice making
``Im G(o, o) > 0``. For non-real ``gamma`` the decaying root
(``|mu^-| < q^{-1/2}``) is taken.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.optimize import elementwise

from .edge_ode import EdgeBasis, Potential, edge_basis, endpoint_data, simpson_weights

EDGE_TOL = 1e-9
TOL_DIRICHLET_REL = 1e-6


class BandError(ValueError):
    """A real spectral parameter lies outside the absolutely continuous bands."""


class DirichletError(ValueError):
    """The spectral parameter is too close to a root of ``s``."""


class ScanResolutionError(RuntimeError):
    """The band scan was too coarse to separate the features of ``w``."""


@dataclass(frozen=True, eq=False)
class TreeModel:
    """Branching ``q``, coupling ``alpha`` and the edge potential (which fixes ``L``)."""

    q: int
    alpha: float = 0.0
    potential: Potential = field(default_factory=Potential.zero)

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise ValueError("q must be a positive integer")

    @property
    def L(self) -> float:
        return self.potential.L

    @property
    def degree(self) -> int:
        return self.q + 1

    @property
    def edge_threshold(self) -> float:
        return 2.0 * math.sqrt(self.q)

    def with_grid(self, grid_n: int) -> "TreeModel":
        return TreeModel(self.q, self.alpha, self.potential.with_grid(grid_n))

    def basis(self, lam, method: str = "auto") -> EdgeBasis:
        return edge_basis(self.potential, lam, method=method)


@dataclass(frozen=True, eq=False)
class Band:
    """Open interval ``(lo, hi)`` on which ``|w| < 2 sqrt(q)`` and ``w`` is monotone."""

    lo: float
    hi: float
    direction: str
    index: int
    w_lo: float
    w_hi: float
    model: TreeModel = field(repr=False, default=None)

    @property
    def q(self) -> int:
        return self.model.q

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def w_range(self) -> tuple[float, float]:
        return (min(self.w_lo, self.w_hi), max(self.w_lo, self.w_hi))

    def contains_w(self, m, margin: float = EDGE_TOL):
        """Mask of values strictly inside ``w(band)`` and off the band edges."""
        m = np.asarray(m, dtype=float)
        a, b = self.w_range
        thr = self.model.edge_threshold
        return (m > a) & (m < b) & (np.abs(np.abs(m) - thr) > margin)

    def sub_band(self, lo: float, hi: float) -> "Band":
        """Restrict to ``(lo, hi)``; ``w`` stays monotone on the piece."""
        lo, hi = max(lo, self.lo), min(hi, self.hi)
        if not lo < hi:
            raise ValueError("empty sub-band")
        w_lo, w_hi = (float(v) for v in w_of_lambda(self.model, np.array([lo, hi])))
        return Band(lo, hi, self.direction, self.index, w_lo, w_hi, self.model)


@dataclass(frozen=True)
class BandStructure:
    bands: list
    dirichlet: np.ndarray


def w_of_lambda(model: TreeModel, lam):
    """Secular map ``(q+1) c(lam) + alpha s(lam)`` (vectorized, complex allowed)."""
    c, s, _, _ = endpoint_data(model.potential, lam)
    return (model.q + 1) * c + model.alpha * s


def s_of_lambda(model: TreeModel, lam):
    return endpoint_data(model.potential, lam)[1]


def _w_and_s(model: TreeModel, lam):
    c, s, _, _ = endpoint_data(model.potential, lam)
    return (model.q + 1) * c + model.alpha * s, s


def _roots_from_w(q: int, w, s=None):
    """``(mu+, mu-)`` given ``w``; ``s`` selects the real-axis branch."""
    w = np.asarray(w)
    if np.iscomplexobj(w) and np.any(w.imag != 0):
        disc = np.sqrt(w.astype(complex) ** 2 - 4 * q)
        r1 = (w + disc) / (2 * q)
        r2 = (w - disc) / (2 * q)
        big = np.where(np.abs(r1) >= np.abs(r2), r1, r2)
        mu_minus = 1.0 / (q * big)
        return big, mu_minus
    w = np.real(w).astype(float)
    if np.any(w * w >= 4 * q):
        raise BandError("w(lam)^2 >= 4q: lam is outside the absolutely continuous bands")
    root = np.sqrt(4 * q - w * w)
    sign = np.sign(s) if s is not None else np.ones_like(w)
    if np.any(sign == 0):
        raise DirichletError("s(lam) = 0: branch undefined")
    mu_minus = (w + 1j * sign * root) / (2 * q)
    return np.conj(mu_minus), mu_minus


def mu_pm(model: TreeModel, lam):
    """Roots ``(mu+, mu-)`` of ``q x^2 - w(lam) x + 1 = 0``.

    Real ``lam`` must lie in a band; the ``lam + i0`` branch has
    ``sign(Im mu-) = sign(s(lam))``. Non-real ``lam`` takes ``|mu-| < 1/sqrt(q)``.
    """
    w, s = _w_and_s(model, lam)
    return _roots_from_w(model.q, w, s)


# ---------------------------------------------------------------- bands


def _dw(model: TreeModel, lam):
    h = 1e-6 * np.maximum(1.0, np.abs(lam))
    return (w_of_lambda(model, lam + h) - w_of_lambda(model, lam - h)) / (2 * h)


def _bracket_roots(fun, a, b):
    """Vectorized Chandrupatla root solve on brackets ``[a, b]``."""
    a, b = np.atleast_1d(a).astype(float), np.atleast_1d(b).astype(float)
    if a.size == 0:
        return a
    res = elementwise.find_root(
        fun, (a, b), tolerances=dict(xatol=1e-14, xrtol=1e-14, fatol=0.0, frtol=0.0)
    )
    return np.asarray(res.x, dtype=float)


def _sign_change_brackets(x, y):
    y = np.asarray(y)
    exact = np.flatnonzero(y == 0)
    idx = np.flatnonzero(y[:-1] * y[1:] < 0)
    return exact, idx


def find_bands(model: TreeModel, lambda_range, scan_n: int | None = None) -> BandStructure:
    """Locate the fixed bands and the Dirichlet points inside ``lambda_range``.

    ``w`` and ``s`` are scanned on ``scan_n`` points (default 2000 per unit of
    ``lam``, at least 100). Crossings ``|w| = 2 sqrt(q)``, interior extrema of
    ``w`` and zeros of ``s`` are refined by bracketing to ``~1e-14`` and used
    as breakpoints; each breakpoint interval where ``|w| < 2 sqrt(q)`` becomes
    a band, so every band is a fixed band.
    """
    lo, hi = (float(v) for v in lambda_range)
    if hi < lo:
        raise ValueError("lambda_range must be ascending")
    if hi == lo:
        return BandStructure([], np.zeros(0))
    if scan_n is None:
        scan_n = max(100, int(math.ceil(2000 * (hi - lo))))
    if scan_n < 100:
        raise ValueError("scan_n must be at least 100")
    thr = model.edge_threshold
    lam = np.linspace(lo, hi, scan_n + 1)
    w, s = _w_and_s(model, lam)

    def s_fun(x):
        return s_of_lambda(model, x)

    ex, idx = _sign_change_brackets(lam, s)
    dirichlet = np.sort(np.concatenate([lam[ex], _bracket_roots(s_fun, lam[idx], lam[idx + 1])]))

    crossings = []
    for target in (thr, -thr):
        ex, idx = _sign_change_brackets(lam, w - target)
        crossings.append(lam[ex])
        crossings.append(
            _bracket_roots(lambda x, t=target: w_of_lambda(model, x) - t, lam[idx], lam[idx + 1])
        )
    # interior extrema: discrete slope changes sign
    dw = np.diff(w)
    ext = np.flatnonzero(dw[:-1] * dw[1:] < 0) + 1
    extrema = []
    if ext.size:
        a, b = lam[ext - 1], lam[ext + 1]
        da, db = _dw(model, a), _dw(model, b)
        ok = da * db < 0
        extrema.append(_bracket_roots(lambda x: _dw(model, x), a[ok], b[ok]))
        for i in np.flatnonzero(~ok):
            sgn = 1.0 if w[ext[i]] < w[ext[i] - 1] else -1.0
            r = optimize.minimize_scalar(
                lambda x: sgn * float(w_of_lambda(model, x)),
                bounds=(a[i], b[i]), method="bounded", options=dict(xatol=1e-12),
            )
            extrema.append(np.array([r.x]))
    breaks = np.concatenate([[lo, hi], dirichlet, *crossings, *extrema])
    breaks = np.unique(breaks[(breaks >= lo) & (breaks <= hi)])

    bands = []
    if len(breaks) > 1:
        mids = 0.5 * (breaks[:-1] + breaks[1:])
        wm, sm = _w_and_s(model, mids)
        for a, b, wmid, smid in zip(breaks[:-1], breaks[1:], wm, sm):
            if abs(wmid) >= thr or smid == 0 or b - a <= 0:
                continue
            wa, wb = (float(v) for v in w_of_lambda(model, np.array([a, b])))
            band = Band(float(a), float(b), "increasing" if wb > wa else "decreasing",
                        len(bands) + 1, wa, wb, model)
            _check_fixed_band(model, band, scan_n, lo, hi)
            bands.append(band)
    return BandStructure(bands, dirichlet)


def _check_fixed_band(model: TreeModel, band: Band, scan_n: int, lo: float, hi: float) -> None:
    npts = max(64, int(10 * scan_n * band.width / max(hi - lo, 1e-300)))
    npts = min(npts, 200_000)
    x = np.linspace(band.lo, band.hi, npts + 2)[1:-1]
    w, s = _w_and_s(model, x)
    d = np.diff(w)
    mono = np.all(d > 0) if band.direction == "increasing" else np.all(d < 0)
    if not mono or np.any(np.abs(w) >= model.edge_threshold) or np.any(s == 0) or np.any(
        np.sign(s) != np.sign(s[0])
    ):
        raise ScanResolutionError(
            f"band ({band.lo:.6g}, {band.hi:.6g}) failed the fixed-band check; raise scan_n"
        )


def invert_w_on_band(band: Band, m):
    """Unique ``lam`` in ``band`` with ``w(lam) = m`` (vectorized over ``m``)."""
    model = band.model
    m_arr = np.atleast_1d(np.asarray(m, dtype=float))
    if np.any(np.abs(np.abs(m_arr) - model.edge_threshold) <= EDGE_TOL):
        raise BandError("m sits on a band edge |m| = 2 sqrt(q)")
    if not np.all(band.contains_w(m_arr, margin=0.0)):
        raise BandError("m lies outside w(band)")

    def fun(x, target):
        return w_of_lambda(model, x) - target

    res = elementwise.find_root(
        fun, (np.full_like(m_arr, band.lo), np.full_like(m_arr, band.hi)), args=(m_arr,),
        tolerances=dict(xatol=0.0, xrtol=1e-13, fatol=1e-13, frtol=0.0),
    )
    lam = np.asarray(res.x, dtype=float)
    return lam.reshape(np.shape(m)) if np.ndim(m) else float(lam[0])


# ---------------------------------------------------------------- spherical functions


def spherical(q: int, m, d: int):
    """Spherical function ``Phi_m(d)`` via the three-term recursion.

    ``Phi(0) = 1``, ``Phi(1) = m/(q+1)``, ``Phi(d) = (m Phi(d-1) - Phi(d-2))/q``.
    """
    m = np.asarray(m, dtype=float)
    if d < 0:
        raise ValueError("d must be non-negative")
    prev, cur = np.ones_like(m), m / (q + 1)
    if d == 0:
        return prev if m.ndim else float(prev)
    for _ in range(d - 1):
        prev, cur = cur, (m * cur - prev) / q
    return cur if m.ndim else float(cur)


def spherical_closed_form(q: int, m, d: int):
    """Chebyshev form of ``Phi_m(d)`` for ``|m| <= 2 sqrt(q)`` (trigonometric evaluation)."""
    m = np.asarray(m, dtype=float)
    x = m / (2 * math.sqrt(q))
    if np.any(np.abs(x) > 1):
        raise ValueError("trigonometric form needs |m| <= 2 sqrt(q)")
    theta = np.arccos(np.clip(x, -1.0, 1.0))
    sin_t = np.sin(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        cheb_u = np.where(
            np.abs(sin_t) > 1e-12,
            np.sin((d + 1) * theta) / sin_t,
            (d + 1) * np.cos(d * theta) / np.where(np.cos(theta) == 0, 1.0, np.cos(theta)),
        )
    out = q ** (-d / 2) * (2 / (q + 1) * np.cos(d * theta) + (q - 1) / (q + 1) * cheb_u)
    return out if m.ndim else float(out)


# ---------------------------------------------------------------- Green's functions


def adjacency_tree_green_cf(q: int, z, d: int = 0, tol: float = 1e-14, max_iter: int = 1_000_000):
    """Resolvent ``(A_T - z)^{-1}(v, w)`` of the tree adjacency at distance ``d``.

    Solves the rooted self-consistency ``g = -1/(z + q g)`` by fixed-point
    iteration (converges for non-real ``z``), then
    ``G(o, o) = -1/(z + (q+1) g)`` and ``G(d) = G(o, o) (-g)^d``.
    """
    z = complex(z)
    if z.imag == 0:
        raise ValueError("continued fraction needs a non-real z")
    g = 0j
    for _ in range(max_iter):
        g_new = -1.0 / (z + q * g)
        if abs(g_new - g) <= tol * max(1.0, abs(g_new)):
            g = g_new
            break
        g = g_new
    else:  # pragma: no cover
        raise RuntimeError("continued fraction did not converge")
    g00 = -1.0 / (z + (q + 1) * g)
    return g00 * (-g) ** d


def _dirichlet_guard(model: TreeModel, lam, band: Band | None = None) -> None:
    lam = np.asarray(lam, dtype=float)
    scale = band.width if band is not None else (math.pi / model.L) ** 2
    tol = TOL_DIRICHLET_REL * scale
    s0 = s_of_lambda(model, lam)
    sl = s_of_lambda(model, lam - tol)
    sr = s_of_lambda(model, lam + tol)
    bad = (s0 == 0) | (sl * s0 <= 0) | (sr * s0 <= 0)
    if np.any(bad):
        raise DirichletError("lam is within tol_dirichlet of a Dirichlet point s(lam) = 0")


def green_tree_discrete(model: TreeModel, gamma, d: int):
    """Green's function of the quantum tree between vertices at distance ``d``.

    ``G(v, w) = -s(gamma) mu^-(gamma)^d / ((q+1) mu^-(gamma) - w(gamma))``.
    Real ``gamma`` means the boundary value ``gamma + i0`` inside a band.
    """
    gamma = np.asarray(gamma)
    if not np.iscomplexobj(gamma) or np.all(np.imag(gamma) == 0):
        gamma = np.real(gamma).astype(float)
        _dirichlet_guard(model, gamma)
    w, s = _w_and_s(model, gamma)
    _, mu = _roots_from_w(model.q, w, s)
    return -s * mu**d / ((model.q + 1) * mu - w)


def green_tree_metric(model: TreeModel, lam: float, x, y, steps: int = 0):
    """Metric Green's function ``G^{lam+i0}(x, y)`` from the Carlson construction.

    ``x`` lies on a bond ``b0`` and ``y`` on the bond reached from ``b0`` by a
    non-backtracking walk of ``steps`` edges; both are measured from the
    origin of their own bond along the walk direction. For ``steps = 0``
    the order of ``x`` and ``y`` is irrelevant.
    """
    q = model.q
    basis = model.basis(np.asarray(float(lam)))
    c, s = float(basis.c), float(basis.s)
    w = (q + 1) * c + model.alpha * s
    mu_plus, mu_minus = _roots_from_w(q, w, s)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if steps == 0:
        x, y = np.minimum(x, y), np.maximum(x, y)
    L = model.L
    Cx, Sx = basis.at(x)
    Cy_r, Sy_r = basis.at(L - y)
    a = c - q * mu_plus
    u_x = -s * Cx + a * Sx
    v_y = s * Cy_r - a * Sy_r
    wron = s * (1 - (q * mu_plus) ** 2)
    return mu_minus**steps * u_x * v_y / wron


# ---------------------------------------------------------------- normalization & densities


def _check_in_band(model: TreeModel, w) -> None:
    if np.any(np.abs(w) >= model.edge_threshold):
        raise BandError("lam is outside the absolutely continuous bands")


def _edge_integrals(basis: EdgeBasis):
    """Simpson ``int S^2`` and ``int S(L-t) S(t)`` on the basis grid."""
    wts = simpson_weights(basis.grid_n, basis.L)
    S = basis.S_samples
    return (S * S) @ wts, (S * S[..., ::-1]) @ wts


def kappa(model: TreeModel, lam, band: Band | None = None):
    """``(q+1)/s^2 int S^2 + w/s^2 int S(L-t) S(t)``, the vertex-trace normalization."""
    lam_a = np.asarray(lam, dtype=float)
    _dirichlet_guard(model, lam_a, band)
    basis = model.basis(lam_a)
    w = (model.q + 1) * basis.c + model.alpha * basis.s
    _check_in_band(model, w)
    i_ss, i_cross = _edge_integrals(basis)
    k = ((model.q + 1) * i_ss + w * i_cross) / basis.s**2
    return k if lam_a.ndim else float(k)


def psi_density(model: TreeModel, lam, x=None, band: Band | None = None):
    """Limit density ``Psi_lam(x)`` on one edge (grid positions when ``x`` is None).

    ``Psi = (S(L-x)^2 + S(x)^2 + 2w/(q+1) S(L-x) S(x)) / (kappa s^2)``.
    The result has shape ``lam.shape + x.shape``.
    """
    lam_a = np.asarray(lam, dtype=float)
    _dirichlet_guard(model, lam_a, band)
    basis = model.basis(lam_a)
    w = (model.q + 1) * basis.c + model.alpha * basis.s
    _check_in_band(model, w)
    i_ss, i_cross = _edge_integrals(basis)
    s2 = basis.s**2
    kap = ((model.q + 1) * i_ss + w * i_cross) / s2
    if x is None:
        S = basis.S_samples
        Sr = S[..., ::-1]
        ex = (Ellipsis, None)
    else:
        x = np.asarray(x, dtype=float)
        _, S = basis.at(x)
        _, Sr = basis.at(model.L - x)
        ex = (Ellipsis,) + (None,) * x.ndim
    ratio = (Sr**2 + S**2 + (2 * w / (model.q + 1))[ex] * Sr * S) / s2[ex]
    return ratio / kap[ex]


def psi_correlator(model: TreeModel, lam: float, k: int, x, y, band: Band | None = None):
    """Two-point limit density ``Psi_{lam,k}(x, y)``.

    ``x`` is on the first bond of a non-backtracking ``k``-path and ``y`` on
    its last bond, each measured from the origin of its bond. Built from
    ``S_lam`` and the spherical function of ``w(lam)``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    lam = float(lam)
    _dirichlet_guard(model, lam, band)
    basis = model.basis(np.asarray(lam))
    q, L = model.q, model.L
    s = float(basis.s)
    w = (q + 1) * float(basis.c) + model.alpha * s
    _check_in_band(model, w)
    i_ss, i_cross = _edge_integrals(basis)
    kap = ((q + 1) * i_ss + w * i_cross) / s**2
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _, Sx = basis.at(x)
    _, Sxr = basis.at(L - x)
    _, Sy = basis.at(y)
    _, Syr = basis.at(L - y)
    if k == 1:
        val = (Sxr * Syr + Sx * Sy) + (Sxr * Sy + Sx * Syr) * spherical(q, w, 1)
    else:
        val = (Sxr * Sy * spherical(q, w, k)
               + (Sxr * Syr + Sx * Sy) * spherical(q, w, k - 1)
               + Sx * Syr * spherical(q, w, k - 2))
    return val / (2 * kap * s**2)


def psi_correlator_green(model: TreeModel, lam: float, k: int, x, y):
    """``Im G(x~, y~) / (2 kappa Im G(o, o))`` with ``G`` from the Carlson construction."""
    g_oo = green_tree_discrete(model, float(lam), 0)
    g_xy = green_tree_metric(model, lam, x, y, steps=k - 1)
    return np.imag(g_xy) / (2 * kappa(model, lam) * np.imag(g_oo))


def write_density_csv(path, model: TreeModel, bands, n_lambda: int = 5) -> None:
    """Table ``lambda, x, psi`` of ``Psi_lam`` on the grid at interior points of each band."""
    grid = model.potential.grid
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["lambda", "x", "psi"])
        for band in bands:
            lam = np.linspace(band.lo, band.hi, n_lambda + 2)[1:-1]
            dens = psi_density(model, lam, band=band)
            for lv, row in zip(lam, dens):
                for xv, pv in zip(grid, row):
                    out.writerow([format(float(lv), ".17g"), format(float(xv), ".17g"),
                                  format(float(pv), ".17g")])


# ---------------------------------------------------------------- Kesten-McKay


def kesten_mckay_density(q: int, m):
    """Spectral density of the tree adjacency at the root."""
    m = np.asarray(m, dtype=float)
    d = q + 1
    inside = np.abs(m) < 2 * math.sqrt(q)
    with np.errstate(invalid="ignore"):
        val = d * np.sqrt(np.clip(4 * q - m * m, 0.0, None)) / (2 * math.pi * (d * d - m * m))
    return np.where(inside, val, 0.0)


def kesten_mckay_mass(q: int, a: float, b: float) -> float:
    """Kesten-McKay measure of ``(a, b)``."""
    edge = 2 * math.sqrt(q)
    a, b = max(a, -edge), min(b, edge)
    if b <= a:
        return 0.0
    val, _ = integrate.quad(lambda m: float(kesten_mckay_density(q, m)), a, b, limit=200)
    return float(val)
