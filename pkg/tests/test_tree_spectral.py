import math

import numpy as np
import pytest

from qgraph_qe.edge_ode import Potential, edge_basis
from qgraph_qe.tree_spectral import (
    BandError,
    DirichletError,
    TreeModel,
    adjacency_tree_green_cf,
    find_bands,
    green_tree_discrete,
    green_tree_metric,
    invert_w_on_band,
    kappa,
    kesten_mckay_density,
    kesten_mckay_mass,
    mu_pm,
    psi_correlator,
    psi_correlator_green,
    psi_density,
    spherical,
    spherical_closed_form,
    w_of_lambda,
)

PI = math.pi
THETA = math.acos(2 * math.sqrt(2) / 3)


# ---------------------------------------------------------------- secular map and roots


def test_w_examples(free_model):
    assert w_of_lambda(free_model, PI**2 / 4) == pytest.approx(0.0, abs=1e-14)
    assert w_of_lambda(free_model, 0.0) == pytest.approx(3.0, abs=1e-15)
    m = TreeModel(2, alpha=1.0)
    assert w_of_lambda(m, PI**2 / 4) == pytest.approx(2 / PI, abs=1e-14)


def test_mu_quarter_period(free_model):
    mu_plus, mu_minus = mu_pm(free_model, PI**2 / 4)
    assert mu_minus == pytest.approx(1j / math.sqrt(2), abs=1e-14)
    assert mu_plus == pytest.approx(-1j / math.sqrt(2), abs=1e-14)
    assert abs(mu_minus) ** 2 == pytest.approx(0.5, abs=1e-14)


def test_mu_branch_follows_sign_of_s(free_model):
    # in band 2 (pi < sqrt(lam) < 2 pi) s < 0, so Im mu- flips
    lam = (1.5 * PI) ** 2
    _, mu_minus = mu_pm(free_model, lam)
    assert mu_minus.imag < 0


def test_mu_outside_band_raises(free_model):
    with pytest.raises(BandError):
        mu_pm(free_model, 0.0)


def test_mu_complex_gamma(cos_model):
    gamma = np.array([2 + 0.5j, 10 + 1j, -3 + 0.1j])
    mu_plus, mu_minus = mu_pm(cos_model, gamma)
    w = w_of_lambda(cos_model, gamma)
    np.testing.assert_allclose(mu_plus * mu_minus, 1 / cos_model.q, atol=1e-12)
    np.testing.assert_allclose(cos_model.q * (mu_plus + mu_minus), w, atol=1e-12)
    assert np.all(np.abs(mu_minus) < 1 / math.sqrt(cos_model.q))


# ---------------------------------------------------------------- bands


def test_first_band_free(free_model):
    bs = find_bands(free_model, (0.01, 9))
    assert len(bs.bands) == 1
    b = bs.bands[0]
    assert b.lo == pytest.approx(THETA**2, abs=1e-10)
    assert b.hi == pytest.approx((PI - THETA) ** 2, abs=1e-10)
    assert b.lo == pytest.approx(0.11549, abs=1e-5)
    assert b.hi == pytest.approx(7.84984, abs=1e-5)
    assert b.direction == "decreasing"
    assert len(bs.dirichlet) == 0


def test_second_band_free(free_model):
    bs = find_bands(free_model, (9, 40))
    assert len(bs.bands) == 1
    assert bs.bands[0].lo == pytest.approx((PI + THETA) ** 2, abs=1e-9)
    assert bs.bands[0].hi == pytest.approx((2 * PI - THETA) ** 2, abs=1e-9)
    np.testing.assert_allclose(bs.dirichlet, [PI**2, 4 * PI**2], atol=1e-10)


def test_dirichlet_points_free(free_model):
    bs = find_bands(free_model, (1, 100))
    np.testing.assert_allclose(bs.dirichlet, [PI**2, 4 * PI**2, 9 * PI**2], atol=1e-9)
    for b in bs.bands:
        assert not np.any((bs.dirichlet > b.lo) & (bs.dirichlet < b.hi))


def test_bands_split_at_dirichlet_points_with_coupling():
    # with alpha != 0 a band can contain a Dirichlet point; it must be split
    model = TreeModel(2, alpha=4.0)
    bs = find_bands(model, (0.01, 45))
    for b in bs.bands:
        lam = np.linspace(b.lo, b.hi, 2002)[1:-1]
        s = edge_basis(model.potential, lam).s
        assert np.all(np.sign(s) == np.sign(s[0]))


@pytest.mark.parametrize("alpha,name", [(0.0, "zero"), (0.5, "cos"), (-1.0, "well"), (2.0, "cos2")])
def test_bands_survive_tenfold_rescan(alpha, name):
    model = TreeModel(2, alpha, Potential.closed(name))
    bs = find_bands(model, (0.0, 45))
    assert bs.bands
    thr = model.edge_threshold
    for b in bs.bands:
        lam = np.linspace(b.lo, b.hi, 20002)[1:-1]
        w = w_of_lambda(model, lam)
        assert np.all(np.abs(w) < thr)
        d = np.diff(w)
        assert np.all(d < 0) if b.direction == "decreasing" else np.all(d > 0)
        # edges sit on |w| = 2 sqrt(q) or on an extremum of w
        for edge in (b.lo, b.hi):
            if edge in (0.0, 45.0):
                continue
            we = float(w_of_lambda(model, edge))
            h = 1e-5
            slope = (float(w_of_lambda(model, edge + h)) - float(w_of_lambda(model, edge - h))) / (2 * h)
            s = float(edge_basis(model.potential, edge).s)
            assert abs(abs(we) - thr) <= 1e-8 or abs(slope) <= 1e-4 or abs(s) <= 1e-10


def test_band_indices_are_ordinals(cos_model):
    bs = find_bands(cos_model, (0, 45))
    assert [b.index for b in bs.bands] == list(range(1, len(bs.bands) + 1))
    assert all(a.hi <= b.lo for a, b in zip(bs.bands, bs.bands[1:]))


def test_find_bands_arguments(free_model):
    with pytest.raises(ValueError):
        find_bands(free_model, (0, 5), scan_n=50)
    with pytest.raises(ValueError):
        find_bands(free_model, (5, 0))
    empty = find_bands(free_model, (8.0, 9.0))
    assert empty.bands == []


# ---------------------------------------------------------------- inversion


def test_invert_examples(free_band):
    assert invert_w_on_band(free_band, 0.0) == pytest.approx(PI**2 / 4, rel=1e-12)
    assert invert_w_on_band(free_band, 3 * math.cos(1.0)) == pytest.approx(1.0, rel=1e-12)


def test_invert_round_trip(cos_band, rng):
    a, b = cos_band.w_range
    m = rng.uniform(a, b, size=100)
    lam = invert_w_on_band(cos_band, m)
    assert np.all((lam > cos_band.lo) & (lam < cos_band.hi))
    assert np.max(np.abs(w_of_lambda(cos_band.model, lam) - m)) <= 1e-10


def test_invert_rejects_edges_and_outside(free_band):
    with pytest.raises(BandError):
        invert_w_on_band(free_band, 2 * math.sqrt(2))
    with pytest.raises(BandError):
        invert_w_on_band(free_band, 2.9)


# ---------------------------------------------------------------- spherical functions


def test_spherical_examples():
    assert spherical(2, 0.7, 0) == 1.0
    assert spherical(2, 0.7, 1) == pytest.approx(0.7 / 3)
    assert spherical(2, 0.0, 2) == pytest.approx(-0.5, abs=1e-15)
    assert spherical(2, 0.0, 4) == pytest.approx(0.25, abs=1e-15)
    assert spherical_closed_form(2, 0.0, 4) == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("q", [1, 2, 3, 6])
def test_spherical_recursion_matches_chebyshev(q):
    m = np.linspace(-2 * math.sqrt(q) + 0.01, 2 * math.sqrt(q) - 0.01, 301)
    for d in range(31):
        np.testing.assert_allclose(spherical(q, m, d), spherical_closed_form(q, m, d), atol=1e-10)


def test_spherical_is_adjacency_eigenfunction():
    # oracle: sphere averages of A applied to a radial function on the tree
    q, m = 3, 1.3
    phi = [spherical(q, m, d) for d in range(12)]
    assert (q + 1) * phi[1] == pytest.approx(m * phi[0])
    for d in range(1, 11):
        assert phi[d - 1] + q * phi[d + 1] == pytest.approx(m * phi[d], abs=1e-13)


# ---------------------------------------------------------------- Green's functions


def test_green_origin_quarter_period(free_model):
    g = green_tree_discrete(free_model, PI**2 / 4, 0)
    assert g.imag == pytest.approx(2 * math.sqrt(2) / (3 * PI), abs=1e-12)
    assert g.imag == pytest.approx(0.30011, abs=1e-5)


@pytest.mark.parametrize("gamma", [2 + 0.5j, 7.0 + 0.2j, 30 + 3j, -1 + 0.4j])
def test_green_matches_continued_fraction(cos_model, gamma):
    basis = edge_basis(cos_model.potential, np.asarray(gamma))
    w = complex(w_of_lambda(cos_model, np.asarray(gamma)))
    # w(gamma) sits in the upper or lower half plane with gamma; the adjacency
    # resolvent at conj-symmetric points is obtained by conjugation
    for d in range(7):
        ours = complex(green_tree_discrete(cos_model, np.asarray(gamma), d))
        if w.imag > 0:
            ref = adjacency_tree_green_cf(cos_model.q, w, d)
        else:
            ref = np.conj(adjacency_tree_green_cf(cos_model.q, np.conj(w), d))
        assert abs(ours - (-complex(basis.s) * ref)) <= 1e-10


def test_green_on_real_axis_is_limit(free_model):
    # boundary value: approach lam + i eta with eta -> 0
    lam = 3.0
    g0 = complex(green_tree_discrete(free_model, lam, 2))
    g_eta = complex(green_tree_discrete(free_model, np.asarray(lam + 1e-7j), 2))
    assert abs(g0 - g_eta) <= 1e-5


def test_green_ratio_is_spherical(free_model):
    lam = PI**2 / 4
    w = float(w_of_lambda(free_model, lam))
    g00 = green_tree_discrete(free_model, lam, 0).imag
    for d in range(6):
        ratio = green_tree_discrete(free_model, lam, d).imag / g00
        assert ratio == pytest.approx(spherical(2, w, d), abs=1e-10)


def test_green_positive_on_bands(cos_model):
    for b in find_bands(cos_model, (0, 45)).bands:
        lam = np.linspace(b.lo, b.hi, 202)[1:-1]
        assert np.all(green_tree_discrete(cos_model, lam, 0).imag > 0)


def test_green_rejects_dirichlet(free_model):
    with pytest.raises(DirichletError):
        green_tree_discrete(free_model, PI**2, 0)
    with pytest.raises(DirichletError):
        kappa(free_model, PI**2 + 1e-9)


def test_metric_green_at_vertices(cos_model):
    lam = 0.5 * (find_bands(cos_model, (0, 10)).bands[0].lo + find_bands(cos_model, (0, 10)).bands[0].hi)
    for d in range(4):
        metric = complex(green_tree_metric(cos_model, lam, 0.0, 0.0, steps=d))
        assert abs(metric - complex(green_tree_discrete(cos_model, lam, d))) <= 1e-10


def test_metric_green_solves_edge_equation(free_model):
    # away from the diagonal G(., y) solves -u'' = lam u; check with finite differences
    lam, y = 4.0, 0.8
    x = np.linspace(0.1, 0.6, 11)
    h = 1e-4
    g = lambda t: green_tree_metric(free_model, lam, t, y)
    second = (g(x + h) - 2 * g(x) + g(x - h)) / h**2
    np.testing.assert_allclose(-second, lam * g(x), atol=1e-5)
    # unit jump of the derivative at x = y
    jump = (g(y + h) - g(y)) / h - (g(y) - g(y - h)) / h
    assert abs(jump + 1) <= 1e-3


# ---------------------------------------------------------------- kappa and densities


def test_kappa_free(free_model, free_band):
    lam = np.linspace(free_band.lo, free_band.hi, 52)[1:-1]
    np.testing.assert_allclose(kappa(free_model, lam), 1.5, atol=1e-9)
    assert kappa(free_model, PI**2 / 4) == pytest.approx(1.5, abs=1e-12)


def test_kappa_positive_with_lower_bound():
    model = TreeModel(2, 0.0, Potential.closed("cos"))
    band = find_bands(model, (0, 10)).bands[0]
    lam = np.linspace(band.lo, band.hi, 202)[1:-1]
    k = kappa(model, lam)
    basis = edge_basis(model.potential, lam)
    w = w_of_lambda(model, lam)
    assert np.all(k > 0)
    # lower bound, using int S^2 >= 0 and Cauchy-Schwarz on the cross term
    from qgraph_qe.edge_ode import simpson_weights

    i_ss = (basis.S_samples**2) @ simpson_weights(256, 1.0)
    assert np.all(k >= (3 - np.abs(w)) * i_ss / basis.s**2 - 1e-12)


def test_psi_free_is_flat(free_model, free_band):
    lam = np.linspace(free_band.lo, free_band.hi, 12)[1:-1]
    np.testing.assert_allclose(psi_density(free_model, lam), 2 / 3, atol=1e-9)
    np.testing.assert_allclose(psi_density(free_model, 2.0, np.array([0.1, 0.5, 0.93])), 2 / 3, atol=1e-9)


def test_psi_integral_and_symmetry(cos_model, cos_band):
    from qgraph_qe.edge_ode import simpson_weights

    lam = 0.5 * (cos_band.lo + cos_band.hi)
    dens = psi_density(cos_model, lam)
    assert dens @ simpson_weights(256, 1.0) == pytest.approx(2 / 3, abs=1e-8)
    assert np.all(dens > 0)
    a, b = psi_density(cos_model, lam, np.array([0.3, 0.7]))
    assert a == pytest.approx(b, abs=1e-12)


def test_correlator_examples(free_model):
    assert psi_correlator(free_model, 2.0, 1, 0.4, 0.4) == pytest.approx(1 / 3, abs=1e-9)
    assert psi_correlator(free_model, 2.0, 1, 0.2, 0.7) == pytest.approx(
        psi_correlator(free_model, 2.0, 1, 0.7, 0.2), abs=1e-12)


@pytest.mark.parametrize("which", ["free", "cos"])
def test_correlator_diagonal(which, free_model, free_band, cos_model, cos_band, rng):
    model, band = (free_model, free_band) if which == "free" else (cos_model, cos_band)
    for _ in range(50):
        lam = rng.uniform(band.lo + 0.02 * band.width, band.hi - 0.02 * band.width)
        x = rng.uniform(0, model.L)
        lhs = 2 * psi_correlator(model, lam, 1, x, x)
        assert lhs == pytest.approx(float(psi_density(model, lam, np.array(x))), abs=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_correlator_matches_green_route(cos_model, cos_band, k):
    lam = cos_band.lo + 0.37 * cos_band.width
    x = np.array([0.05, 0.3, 0.61, 0.9])
    y = np.array([0.2, 0.77, 0.5, 0.01])
    a = psi_correlator(cos_model, lam, k, x, y)
    b = psi_correlator_green(cos_model, lam, k, x, y)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_density_rejects_outside_band(free_model):
    with pytest.raises(BandError):
        psi_density(free_model, 8.5)
    with pytest.raises(ValueError):
        psi_correlator(free_model, 2.0, 0, 0.1, 0.1)


# ---------------------------------------------------------------- Kesten-McKay


@pytest.mark.parametrize("q", [1, 2, 4])
def test_kesten_mckay_total_mass(q):
    assert kesten_mckay_mass(q, -10, 10) == pytest.approx(1.0, abs=1e-8)
    # oracle: midpoint Riemann sum
    edge = 2 * math.sqrt(q)
    n = 400000
    m = -edge + (np.arange(n) + 0.5) * 2 * edge / n
    assert kesten_mckay_mass(q, -1.0, 0.5) == pytest.approx(
        float(np.sum(kesten_mckay_density(q, m) * ((m > -1.0) & (m < 0.5))) * 2 * edge / n), abs=1e-5)


def test_kesten_mckay_matches_resolvent():
    # Im G(o, o)(m + i eps) / pi is the Poisson smoothing of the density
    from scipy.integrate import quad

    q, eps = 2, 0.05
    edge = 2 * math.sqrt(q)
    for m in (-2.0, 0.0, 1.1, 2.5):
        g = adjacency_tree_green_cf(q, m + 1j * eps)
        smooth, _ = quad(lambda t: float(kesten_mckay_density(q, t)) * eps / ((t - m) ** 2 + eps**2) / PI,
                         -edge, edge, points=[m], limit=400, epsabs=1e-12)
        assert g.imag / PI == pytest.approx(smooth, abs=1e-8)
