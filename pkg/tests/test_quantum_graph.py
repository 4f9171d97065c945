import math

import numpy as np
import pytest

from qgraph_qe.edge_ode import Potential, simpson_weights
from qgraph_qe.graph_core import adjacency_spectrum, generate_graph
from qgraph_qe.quantum_graph import (
    band_spectrum,
    cycle_eigenpairs,
    cycle_mode_kirchhoff,
    dirichlet_cycle_eigenfunction,
    dirichlet_eigenvalue,
    edge_samples,
    eval_eigenfunction,
    kirchhoff_residual,
    metric_norm,
    nb_lift,
    write_eigenfunction_csv,
    write_spectrum_csv,
)
from qgraph_qe.tree_spectral import TreeModel, find_bands, kesten_mckay_mass, w_of_lambda

PI = math.pi


@pytest.fixture(scope="module")
def k4_pairs(k4, free_model, free_band):
    return band_spectrum(k4, free_model, free_band)


@pytest.fixture(scope="module")
def fine_cos():
    model = TreeModel(2, 0.5, Potential.closed("cos", grid_n=1024))
    return model, find_bands(model, (0.01, 9.0)).bands[0]


def fd_endpoint_derivatives(vals, h):
    """Oracle: fourth-order one-sided differences from samples only."""
    c = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    d0 = vals[..., :5] @ c
    d1 = -(vals[..., ::-1][..., :5] @ c)
    return d0, d1


def test_k4_band_spectrum(k4_pairs):
    assert len(k4_pairs) == 3
    expected = math.acos(-1 / 3) ** 2
    np.testing.assert_allclose(k4_pairs.lam, expected, atol=1e-12)
    assert expected == pytest.approx(3.6505, abs=1e-4)
    np.testing.assert_allclose(k4_pairs.m, -1.0, atol=1e-12)
    assert list(k4_pairs.multiplicity_index) == [0, 1, 2]


def test_eigenpair_invariants(k4, k4_pairs):
    a = k4.adjacency_matrix()
    for p in k4_pairs:
        assert np.linalg.norm(a @ p.psi_ring - p.m * p.psi_ring) <= 1e-8
        assert np.dot(p.psi_ring, p.psi_ring) == pytest.approx(1 / p.kappa, abs=1e-8)
        assert abs(float(w_of_lambda(k4_pairs.model, p.lam)) - p.m) <= 1e-10


def test_band_spectrum_rejects_cycles_and_mismatch(free_model, free_band):
    c6 = generate_graph("cycle", 6, 2)
    model1 = TreeModel(1)
    band1 = find_bands(model1, (0.5, 9.0)).bands[0]
    with pytest.raises(ValueError):
        band_spectrum(c6, model1, band1)
    with pytest.raises(ValueError):
        band_spectrum(c6, free_model, free_band)


def test_count_matches_kesten_mckay(free_model, free_band, cos_model, cos_band):
    g = generate_graph("random_regular", 100, 3, seed=1)
    for model, band in ((free_model, free_band), (cos_model, cos_band)):
        pairs = band_spectrum(g, model, band)
        a, b = band.w_range
        # histogram oracle: count adjacency eigenvalues directly
        vals = np.linalg.eigvalsh(g.adjacency_matrix())
        assert len(pairs) == np.sum((vals > a) & (vals < b))
        km = kesten_mckay_mass(2, a, b)
        assert abs(len(pairs) / 100 - km) <= 0.1 * km


def test_eval_endpoints_and_quarter_period(k4, k4_pairs, free_model, free_band):
    p = k4_pairs[0]
    for e, (o, t) in enumerate(k4.edges):
        assert eval_eigenfunction(k4, p, e, 0.0) == pytest.approx(p.psi_ring[o], abs=1e-13)
        assert eval_eigenfunction(k4, p, e, 1.0) == pytest.approx(p.psi_ring[t], abs=1e-13)
    # a single edge carrying psi(o) = 1, psi(t) = 0 at lam = pi^2/4
    from dataclasses import replace

    from qgraph_qe.edge_ode import edge_basis

    fake = replace(p, lam=PI**2 / 4, psi_ring=np.array([1.0, 0.0, 0.0, 0.0]),
                   basis=edge_basis(free_model.potential, np.asarray(PI**2 / 4)))
    assert eval_eigenfunction(k4, fake, 0, 0.5) == pytest.approx(math.sqrt(2) / 2, abs=1e-12)


def test_metric_norm_k4(k4, k4_pairs):
    for p in k4_pairs:
        assert metric_norm(k4, p) == pytest.approx(1.0, abs=1e-6)


def test_metric_norm_fine_grid(fine_cos):
    model, band = fine_cos
    g = generate_graph("random_regular", 60, 3, seed=5)
    pairs = band_spectrum(g, model, band)
    vals = edge_samples(g, pairs)
    norms = np.sum(vals**2 @ simpson_weights(1024, 1.0), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-5)
    for i in (0, len(pairs) // 2, len(pairs) - 1):
        assert metric_norm(g, pairs[i]) == pytest.approx(norms[i], abs=1e-12)


def test_kirchhoff_k4(k4, k4_pairs, free_model):
    for p in k4_pairs:
        cont, cur = kirchhoff_residual(k4, p, free_model)
        assert cont <= 1e-12
        assert cur <= 1e-8


def test_kirchhoff_coupled_random_graph(fine_cos):
    model, band = fine_cos
    g = generate_graph("random_regular", 50, 3, seed=3)
    pairs = band_spectrum(g, model, band)
    assert len(pairs) > 10
    vals = edge_samples(g, pairs)
    d0, d1 = fd_endpoint_derivatives(vals, 1.0 / 1024)
    for i, p in enumerate(pairs):
        cont, cur = kirchhoff_residual(g, p, model)
        assert cont <= 1e-10
        assert cur <= 1e-7
        # brute-force assembly of the current from sampled values only
        current = np.zeros(g.n_vertices)
        np.add.at(current, g.edges[:, 0], d0[i])
        np.add.at(current, g.edges[:, 1], -d1[i])
        assert np.max(np.abs(current - model.alpha * p.psi_ring)) <= 1e-6


def test_kirchhoff_negative_control(fine_cos, rng):
    model, band = fine_cos
    g = generate_graph("random_regular", 50, 3, seed=3)
    p = band_spectrum(g, model, band)[0]
    fake = rng.normal(size=50)
    fake *= np.linalg.norm(p.psi_ring) / np.linalg.norm(fake)
    _, cur = kirchhoff_residual(g, p, model, psi_ring=fake)
    assert cur >= 1e-2


def test_orthogonality_within_band(cos_model, cos_band):
    g = generate_graph("random_regular", 80, 3, seed=11)
    pairs = band_spectrum(g, cos_model, cos_band)
    gram = pairs.psi.T @ pairs.psi
    distinct = np.abs(pairs.lam[:, None] - pairs.lam[None, :]) > 1e-9
    assert np.max(np.abs(gram[distinct])) <= 1e-8
    # metric inner products vanish too (oracle: Simpson over every edge)
    vals = edge_samples(g, pairs)
    w = simpson_weights(256, 1.0)
    metric = np.einsum("iex,jex,x->ij", vals, vals, w)
    np.testing.assert_allclose(metric, np.eye(len(pairs)), atol=1e-5)


def test_nb_lift_k4(k4, k4_pairs):
    for p in k4_pairs:
        lift = nb_lift(k4, p)
        assert lift.residual <= 1e-10
        assert lift.residual_star <= 1e-10
        np.testing.assert_array_equal(lift.f_star, lift.f[np.arange(12) ^ 1])


def test_nb_lift_random_graphs(cos_model, cos_band, rng):
    for seed in range(10):
        g = generate_graph("random_regular", 40, 3, seed=seed)
        pairs = band_spectrum(g, cos_model, cos_band)
        worst = max(max(nb_lift(g, p).residual, nb_lift(g, p).residual_star) for p in pairs)
        assert worst <= 1e-10
    p = pairs[0]
    assert nb_lift(g, p, psi_ring=rng.normal(size=40)).residual >= 0.1


def test_cycle_eigenpairs():
    g = generate_graph("cycle", 20, 2)
    model = TreeModel(1)
    band = find_bands(model, (0.01, 9.0)).bands[0]
    pairs = cycle_eigenpairs(g, model, band)
    assert len(pairs) % 2 == 0 and len(pairs) > 0
    for p in pairs:
        assert metric_norm(g, p) == pytest.approx(1.0, abs=1e-10)
        cont, cur = kirchhoff_residual(g, p, model)
        assert cur <= 1e-10
        assert np.dot(p.psi_ring, p.psi_ring) == pytest.approx(1 / p.kappa, abs=1e-10)
    with pytest.raises(ValueError):
        cycle_eigenpairs(g, TreeModel(1, 0.5), band)


def test_dirichlet_eigenvalues():
    free = TreeModel(2)
    assert dirichlet_eigenvalue(free, 1) == pytest.approx(PI**2, rel=1e-13)
    assert dirichlet_eigenvalue(free, 3) == pytest.approx(9 * PI**2, rel=1e-13)
    model = TreeModel(2, 0.0, Potential.closed("cos"))
    bs = find_bands(model, (0, 45))
    assert dirichlet_eigenvalue(model, 1) == pytest.approx(bs.dirichlet[0], abs=1e-9)


def test_dirichlet_cycle_mode_on_k4(k4, free_model):
    cycle = [0, 1, 2, 3]
    mode = dirichlet_cycle_eigenfunction(k4, cycle, free_model, 1)
    assert mode.lam == pytest.approx(PI**2, rel=1e-13)
    on = {tuple(sorted(p)) for p in zip(cycle, cycle[1:] + cycle[:1])}
    for e, (o, t) in enumerate(k4.edges):
        if (o, t) in on:
            assert abs(mode.coeff[e]) == pytest.approx(1.0)
        else:
            assert mode.coeff[e] == 0.0
    cont, cur = cycle_mode_kirchhoff(k4, mode, free_model)
    assert cont <= 1e-12 and cur <= 1e-8
    # the mode vanishes on the chord (0, 2): its local mass there is zero
    vals = mode.edge_values()
    chord = k4.edge_index[(0, 2)] // 2
    w = simpson_weights(256, 1.0)
    assert (vals[chord] ** 2) @ w == 0.0
    assert np.sum((vals**2) @ w) > 0


def test_dirichlet_cycle_mode_with_potential(k4):
    model = TreeModel(2, 0.7, Potential.closed("well", grid_n=1024))
    for n in (1, 2):
        mode = dirichlet_cycle_eigenfunction(k4, [0, 1, 3, 2], model, n)
        _, cur = cycle_mode_kirchhoff(k4, mode, model)
        assert cur <= 1e-8


def test_dirichlet_cycle_mode_errors(k4, free_model):
    # n = 1: s'(pi^2) = -1, so the 3-cycle cannot carry the mode
    with pytest.raises(ValueError, match="odd"):
        dirichlet_cycle_eigenfunction(k4, [0, 1, 2], free_model, 1)
    with pytest.raises(ValueError):
        dirichlet_cycle_eigenfunction(k4, [0, 1, 1, 2], free_model, 1)
    pet = generate_graph("petersen", 10, 3)
    with pytest.raises(ValueError):
        dirichlet_cycle_eigenfunction(pet, [0, 2, 4, 6], free_model, 1)


def test_odd_cycle_allowed_when_s_prime_positive(k4, free_model):
    # at the second Dirichlet value s' = +1 and the signs close on any cycle
    mode = dirichlet_cycle_eigenfunction(k4, [0, 1, 2], free_model, 2)
    _, cur = cycle_mode_kirchhoff(k4, mode, free_model)
    assert cur <= 1e-8


def test_csv_writers(tmp_path, k4, k4_pairs):
    write_spectrum_csv(tmp_path / "s.csv", k4_pairs, {"extra": np.arange(3.0)})
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "band,lambda,m,multiplicity_index,extra"
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == k4_pairs.lam[0]
    write_eigenfunction_csv(tmp_path / "e.csv", k4, k4_pairs[0])
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "edge,x,psi"
    assert len(rows) == 1 + 6 * 257


def test_spectrum_basis_independence(k4, k4_pairs, free_model, rng):
    # any orthonormal re-mix of a degenerate eigenspace is an equally valid basis
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    mixed = k4_pairs.with_psi(k4_pairs.psi @ q)
    for p in mixed:
        assert kirchhoff_residual(k4, p, free_model)[1] <= 1e-8
        assert metric_norm(k4, p) == pytest.approx(1.0, abs=1e-6)
    spec = adjacency_spectrum(k4)
    assert spec.eigenvalues[0] == pytest.approx(3.0)
