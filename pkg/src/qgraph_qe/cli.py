"""Command-line runner: ``bands``, ``spectrum``, ``sweep`` and ``validate``.

Configuration is a flat text file of ``section.key = value`` lines; ``#``
starts a comment. Exit codes: 0 success, 2 configuration error, 3 numerical
failure (including failed identities in ``validate``).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ergodicity as erg
from .edge_ode import (
    CLOSED_FORMS,
    DEFAULT_GRID_N,
    Potential,
    PotentialError,
    edge_basis,
    load_potential_csv,
    simpson_weights,
)
from .graph_core import GRAPH_KINDS, GraphGenerationError, generate_graph
from .quantum_graph import (
    kirchhoff_residual,
    metric_norm,
    nb_lift,
    write_eigenfunction_csv,
    write_spectrum_csv,
)
from .tree_spectral import (
    BandError,
    DirichletError,
    ScanResolutionError,
    TreeModel,
    adjacency_tree_green_cf,
    find_bands,
    green_tree_discrete,
    kesten_mckay_mass,
    psi_density,
    s_of_lambda,
    w_of_lambda,
    write_density_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    """Invalid or inconsistent configuration value."""


DEFAULTS: dict[str, str] = {
    "model.q": "2",
    "model.L": "1.0",
    "model.alpha": "0.0",
    "model.potential": "zero",
    "graph.kind": "random_regular",
    "graph.sizes": "100",
    "graph.degree": "3",
    "graph.seed": "0",
    "band.index": "1",
    "band.lambda_min": "0.0",
    "band.lambda_max": "45.0",
    "band.scan_n": "",
    "observable.kind": "edge_constant",
    "observable.k": "2",
    "run.trials": "10",
    "run.grid_n": str(DEFAULT_GRID_N),
    "run.workers": "1",
    "run.seed": "0",
    "spectrum.dump_eigenfunctions": "0",
    "validate.lambda_points": "100",
    "validate.lambda_min": "0.1",
    "validate.lambda_max": "50.0",
    "validate.green_samples": "20",
}


@dataclass
class ExperimentConfig:
    """Parsed and validated configuration."""

    model: TreeModel
    kind: str
    sizes: list
    degree: int
    graph_seed: int
    band_index: int
    lambda_range: tuple
    scan_n: int | None
    observable: str
    kernel_k: int
    trials: int
    grid_n: int
    workers: int
    seed: int
    dump: int
    raw: dict = field(default_factory=dict)


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = val
    return values


def _get(raw, key, conv, what):
    try:
        return conv(raw[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected {what}, got {raw[key]!r}") from exc


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def build_config(values: dict[str, str], base_dir: Path, grid_n=None, seed=None) -> ExperimentConfig:
    raw = dict(DEFAULTS)
    raw.update(values)
    if grid_n is not None:
        raw["run.grid_n"] = str(grid_n)
    if seed is not None:
        raw["run.seed"] = raw["graph.seed"] = str(seed)
    q = _get(raw, "model.q", int, "integer")
    L = _get(raw, "model.L", float, "real")
    alpha = _get(raw, "model.alpha", float, "real")
    gn = _get(raw, "run.grid_n", int, "integer")
    if q < 1:
        raise ConfigError("model.q: must be >= 1")
    if not L > 0:
        raise ConfigError("model.L: must be positive")
    if gn < 2 or gn % 2:
        raise ConfigError(f"run.grid_n: must be an even integer >= 2, got {gn}")
    pot_spec = raw["model.potential"]
    try:
        if pot_spec.startswith("file:"):
            path = Path(pot_spec[5:])
            path = path if path.is_absolute() else base_dir / path
            if not path.exists():
                raise ConfigError(f"model.potential: file {path} does not exist")
            pot = load_potential_csv(path)
            if abs(pot.L - L) > 1e-12 * L:
                raise ConfigError(f"model.potential: file length {pot.L} differs from model.L={L}")
            pot = pot.with_grid(gn)
        elif pot_spec == "zero" or pot_spec in CLOSED_FORMS:
            pot = Potential.closed(pot_spec, L, gn)
        else:
            raise ConfigError(f"model.potential: unknown potential {pot_spec!r}")
    except PotentialError as exc:
        raise ConfigError(f"model.potential: {exc}") from exc
    kind = raw["graph.kind"]
    if kind not in GRAPH_KINDS:
        raise ConfigError(f"graph.kind: expected one of {GRAPH_KINDS}, got {kind!r}")
    sizes = _get(raw, "graph.sizes", _int_list, "list of integers")
    if not sizes or sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise ConfigError("graph.sizes: must be a non-empty strictly ascending list")
    degree = _get(raw, "graph.degree", int, "integer")
    if degree != q + 1:
        raise ConfigError(f"graph.degree: {degree} must equal model.q + 1 = {q + 1}")
    lam_lo = _get(raw, "band.lambda_min", float, "real")
    lam_hi = _get(raw, "band.lambda_max", float, "real")
    if lam_hi < lam_lo:
        raise ConfigError("band.lambda_max: must be >= band.lambda_min")
    scan_n = None if raw["band.scan_n"] == "" else _get(raw, "band.scan_n", int, "integer")
    obs = raw["observable.kind"]
    if obs not in erg.OBSERVABLE_GENERATORS:
        raise ConfigError(f"observable.kind: expected one of {sorted(erg.OBSERVABLE_GENERATORS)}")
    kk = _get(raw, "observable.k", int, "integer")
    if not 1 <= kk <= erg.MAX_KERNEL_ORDER:
        raise ConfigError(f"observable.k: must be in 1..{erg.MAX_KERNEL_ORDER}")
    trials = _get(raw, "run.trials", int, "integer")
    if trials < 1:
        raise ConfigError("run.trials: must be >= 1")
    workers = _get(raw, "run.workers", int, "integer")
    if workers < 1:
        raise ConfigError("run.workers: must be >= 1")
    return ExperimentConfig(
        model=TreeModel(q, alpha, pot), kind=kind, sizes=sizes, degree=degree,
        graph_seed=_get(raw, "graph.seed", int, "integer"),
        band_index=_get(raw, "band.index", int, "integer"),
        lambda_range=(lam_lo, lam_hi), scan_n=scan_n, observable=obs, kernel_k=kk,
        trials=trials, grid_n=gn, workers=workers, seed=_get(raw, "run.seed", int, "integer"),
        dump=_get(raw, "spectrum.dump_eigenfunctions", int, "integer"), raw=raw,
    )


def load_config(path, grid_n=None, seed=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return build_config(parse_config_text(path.read_text()), path.parent, grid_n, seed)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _select_band(cfg: ExperimentConfig):
    bands = find_bands(cfg.model, cfg.lambda_range, cfg.scan_n).bands
    if not 1 <= cfg.band_index <= len(bands):
        raise ConfigError(f"band.index: {cfg.band_index} not in 1..{len(bands)} for the "
                          f"configured lambda range")
    return bands[cfg.band_index - 1]


def _generator(cfg: ExperimentConfig):
    gen = erg.OBSERVABLE_GENERATORS[cfg.observable]
    L = cfg.model.L
    if cfg.observable == "edge_constant":
        return gen
    if cfg.observable == "edge_function":
        return lambda g, rng, grid_n: gen(g, rng, grid_n, L=L)
    return lambda g, rng, grid_n: gen(g, rng, grid_n, k=cfg.kernel_k, L=L)


# ---------------------------------------------------------------- commands


def cmd_bands(cfg: ExperimentConfig, out: Path) -> int:
    res = find_bands(cfg.model, cfg.lambda_range, cfg.scan_n)
    with open(out / "bands.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "lo", "hi", "w_lo", "w_hi", "direction"])
        for b in res.bands:
            w.writerow([b.index, _fmt(b.lo), _fmt(b.hi), _fmt(b.w_lo), _fmt(b.w_hi), b.direction])
    with open(out / "dirichlet.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda"])
        for d in res.dirichlet:
            w.writerow([_fmt(d)])
    write_density_csv(out / "densities.csv", cfg.model, res.bands)
    print(f"{len(res.bands)} bands, {len(res.dirichlet)} Dirichlet points")
    return EXIT_OK


def cmd_spectrum(cfg: ExperimentConfig, out: Path) -> int:
    if len(cfg.sizes) != 1:
        raise ConfigError("graph.sizes: spectrum needs exactly one size")
    model = cfg.model
    if model.q == 1 and (model.alpha != 0 or not model.potential.is_zero):
        raise ConfigError("model.q = 1 is only supported with U = 0 and alpha = 0 "
                          "(explicit cycle basis); band spectra need q >= 2")
    band = _select_band(cfg)
    g = generate_graph(cfg.kind, cfg.sizes[0], cfg.degree, cfg.graph_seed)
    spec = erg.spectrum_for(g, model, band)
    cont, cur = [], []
    for pair in spec:
        c, j = kirchhoff_residual(g, pair, model)
        cont.append(c)
        cur.append(j)
    write_spectrum_csv(out / "spectrum.csv", spec,
                       {"kirchhoff_continuity": cont, "kirchhoff_current": cur})
    for i in range(min(cfg.dump, len(spec))):
        write_eigenfunction_csv(out / f"psi_{i:04d}.csv", g, spec[i])
    km = kesten_mckay_mass(model.q, *band.w_range) * g.n_vertices
    print(f"N={g.n_vertices} N_I={len(spec)} Kesten-McKay prediction={km:.6g}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    if len(cfg.sizes) < 2:
        raise ConfigError("graph.sizes: sweep needs at least two sizes")
    result = erg.convergence_sweep(
        cfg.kind, cfg.sizes, cfg.degree, cfg.model, cfg.band_index, _generator(cfg),
        cfg.trials, cfg.seed, workers=cfg.workers, lambda_range=cfg.lambda_range,
    )
    erg.write_sweep_csv(out / "sweep.csv", result)
    erg.write_summary_csv(out / "summary.csv", result)
    print(f"decay ratio (N={cfg.sizes[-1]} vs N={cfg.sizes[0]}): {result.decay_ratio:.6g}")
    return EXIT_OK


def _check(name, residual, tol):
    residual = float(residual)
    return {"name": name, "residual": residual, "tolerance": tol,
            "passed": bool(np.isfinite(residual) and residual <= tol)}


def validation_checks(cfg: ExperimentConfig) -> list[dict]:
    """Identity suite at the configured model and grid."""
    raw = cfg.raw
    model = cfg.model
    tol_ode = 1e-8 if cfg.grid_n >= 1024 else 1e-6
    lam = np.linspace(float(raw["validate.lambda_min"]), float(raw["validate.lambda_max"]),
                      int(raw["validate.lambda_points"]))
    basis = edge_basis(model.potential, lam, method="rk4")
    checks = [
        _check("wronskian", np.max(basis.wronskian_error()), tol_ode),
        _check("c_equals_s_prime", np.max(basis.symmetry_error()), tol_ode),
        _check("reflection", np.max(basis.reflection_error()), tol_ode),
    ]
    rng = np.random.default_rng(cfg.seed)
    n_g = int(raw["validate.green_samples"])
    gam = rng.uniform(0.5, 40.0, n_g) + 1j * rng.uniform(0.1, 2.0, n_g)
    err = 0.0
    for gv in gam:
        wv = complex(w_of_lambda(model, gv))
        sv = complex(s_of_lambda(model, gv))
        for d in range(7):
            ref = -sv * adjacency_tree_green_cf(model.q, wv, d)
            err = max(err, abs(complex(green_tree_discrete(model, gv, d)) - ref) / max(1.0, abs(ref)))
    checks.append(_check("tree_green_vs_adjacency", err, 1e-10))

    try:
        band = _select_band(cfg)
    except ConfigError:
        band = None
    if band is not None:
        lam_b = np.linspace(band.lo, band.hi, 22)[1:-1]
        dens = psi_density(model, lam_b, band=band)
        integral = dens @ simpson_weights(cfg.grid_n, model.L)
        checks.append(_check("psi_integral", np.max(np.abs(integral - 2 / (model.q + 1))), 1e-8))
        if model.q >= 2:
            g = generate_graph(cfg.kind, cfg.sizes[0], cfg.degree, cfg.graph_seed)
            spec = erg.spectrum_for(g, model, band)
            a = g.adjacency_matrix()
            eig = max((np.linalg.norm(a @ p.psi_ring - p.m * p.psi_ring) for p in spec), default=0.0)
            lift = max((max(r.residual, r.residual_star) for r in (nb_lift(g, p) for p in spec)),
                       default=0.0)
            norm = max((abs(metric_norm(g, p) - 1) for p in spec), default=0.0)
            cur = max((kirchhoff_residual(g, p, model)[1] for p in spec), default=0.0)
            checks += [
                _check("discrete_eigen", eig, 1e-8),
                _check("nb_lift", lift, 1e-10),
                _check("metric_norm", norm, 1e-5),
                _check("kirchhoff_current", cur, 1e-7),
            ]
    return checks


def cmd_validate(cfg: ExperimentConfig, out: Path) -> int:
    checks = validation_checks(cfg)
    failed = [c for c in checks if not c["passed"]]
    report = {"grid_n": cfg.grid_n, "passed": not failed, "checks": checks}
    (out / "validate.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['name']}: residual={c['residual']:.3e} tol={c['tolerance']:.0e}")
    return EXIT_OK if not failed else EXIT_NUMERIC


COMMANDS = {"bands": cmd_bands, "spectrum": cmd_spectrum, "sweep": cmd_sweep,
            "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qgraph-qe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--grid-n", type=int, default=None, help="override run.grid_n")
        p.add_argument("--seed", type=int, default=None, help="override run.seed and graph.seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, grid_n=args.grid_n, seed=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScanResolutionError, GraphGenerationError, BandError, DirichletError,
            RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
