"""Quantum variance shrinking with graph size for three observable families.

Run with ``python3 demos/variance_decay.py`` (about a minute).
"""
from qgraph_qe import TreeModel
from qgraph_qe.ergodicity import (
    convergence_sweep,
    random_sign_edge_constant,
    random_sign_path_kernel,
    sign_modulated_sine,
)

model = TreeModel(2)
families = {
    "random signs per edge": random_sign_edge_constant,
    "signed sin(2 pi x)": lambda g, rng, n: sign_modulated_sine(g, rng, n, L=model.L),
    "signed two-step kernel": lambda g, rng, n: random_sign_path_kernel(g, rng, n, k=2, L=model.L),
}
for name, gen in families.items():
    res = convergence_sweep("random_regular", [100, 200, 400, 800], 3, model, 1, gen,
                            trials=10, seed=2024)
    print(name)
    for N, mean, err, _ in res.summary:
        print(f"  N={N:4d}  variance {mean:.3e} +- {err:.1e}")
    print(f"  ratio N=800 / N=100: {res.decay_ratio:.3f}")
