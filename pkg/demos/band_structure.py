"""Bands, Dirichlet points and limit densities for a coupled edge potential.

Run with ``python3 demos/band_structure.py``.
"""
import numpy as np

from qgraph_qe import Potential, TreeModel, find_bands, psi_density, w_of_lambda
from qgraph_qe.edge_ode import simpson_weights

for alpha, name in ((0.0, "zero"), (0.5, "cos")):
    model = TreeModel(2, alpha, Potential.closed(name))
    res = find_bands(model, (0.01, 45.0))
    print(f"alpha={alpha} U={name}")
    for b in res.bands:
        print(f"  band {b.index}: [{b.lo:.6f}, {b.hi:.6f}]  w runs {b.direction}")
    print("  Dirichlet points:", ", ".join(f"{d:.6f}" for d in res.dirichlet))

    # the density integrates to 2/(q+1) on one edge at every band energy
    band = res.bands[0]
    lam = np.linspace(band.lo, band.hi, 7)[1:-1]
    dens = psi_density(model, lam)
    mass = dens @ simpson_weights(model.potential.grid_n, model.L)
    for l, m, d in zip(lam, mass, dens):
        print(f"  lambda={l:.4f} w={float(w_of_lambda(model, l)):+.4f} "
              f"mass={m:.12f} min/max={d.min():.4f}/{d.max():.4f}")
