"""Quantum eigenfunctions of a random cubic graph and their vertex conditions.

Run with ``python3 demos/eigenfunctions.py``.
"""
from qgraph_qe import Potential, TreeModel, find_bands, generate_graph
from qgraph_qe.quantum_graph import band_spectrum, kirchhoff_residual, metric_norm, nb_lift
from qgraph_qe.tree_spectral import kesten_mckay_mass

model = TreeModel(2, 0.5, Potential.closed("cos", grid_n=1024))
band = find_bands(model, (0.01, 9.0)).bands[0]
g = generate_graph("random_regular", 200, 3, seed=11)
spec = band_spectrum(g, model, band)
a, b = band.w_range
print(f"{len(spec)} eigenvalues in band 1, Kesten-McKay predicts {200 * kesten_mckay_mass(2, a, b):.1f}")

worst_norm = worst_current = worst_lift = 0.0
for p in spec:
    worst_norm = max(worst_norm, abs(metric_norm(g, p) - 1))
    worst_current = max(worst_current, kirchhoff_residual(g, p, model)[1])
    lift = nb_lift(g, p)
    worst_lift = max(worst_lift, lift.residual, lift.residual_star)
print(f"max |norm - 1|      {worst_norm:.2e}")
print(f"max current defect  {worst_current:.2e}")
print(f"max lift residual   {worst_lift:.2e}")
for p in spec[:5]:
    print(f"  lambda={p.lam:.6f} m={p.m:+.6f} kappa={p.kappa:.4f}")
