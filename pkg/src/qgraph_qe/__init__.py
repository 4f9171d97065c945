"""Quantum ergodicity experiments on equilateral quantum graphs over regular graphs."""
from .graph_core import Graph, adjacency_spectrum, generate_graph, injectivity_profile, spectral_gap
from .edge_ode import Potential, edge_basis, monodromy, observable_moments
from .tree_spectral import (
    Band,
    TreeModel,
    find_bands,
    green_tree_discrete,
    invert_w_on_band,
    kappa,
    mu_pm,
    psi_correlator,
    psi_density,
    spherical,
    w_of_lambda,
)

__version__ = "0.1.0"
