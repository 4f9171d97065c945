"""Edge eigenproblem ``-y'' + U y = lam y`` on ``[0, L]`` with symmetric ``U``.

The fundamental pair ``C_lam`` (``C(0)=1, C'(0)=0``) and ``S_lam``
(``S(0)=0, S'(0)=1``) is sampled on a shared uniform grid of ``grid_n + 1``
points. For ``U = 0`` closed forms are used; otherwise a fixed-step RK4 is
run on the first-order system. Because the system is linear, one RK4 step
is a 2x2 matrix with explicit entries, so every routine vectorizes over
batches of ``lam``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

DEFAULT_GRID_N = 256
SERIES_CUTOFF = 1e-4


class PotentialError(ValueError):
    """The potential violates ``U(L - x) = U(x)`` or is malformed."""


CLOSED_FORMS: dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
    "zero": lambda x, L: np.zeros_like(x),
    "cos": lambda x, L: np.cos(2 * np.pi * x / L),
    "cos2": lambda x, L: 2.0 * np.cos(4 * np.pi * x / L),
    "well": lambda x, L: -3.0 * np.sin(np.pi * x / L) ** 2,
}


@dataclass(frozen=True, eq=False)
class Potential:
    """Symmetric edge potential sampled on the shared grid.

    ``form`` is ``"zero"``, ``"closed"`` (a named entry of ``CLOSED_FORMS``)
    or ``"sampled"`` (values from a file, interpolated by a cubic spline at
    RK4 half steps).
    """

    form: str
    samples: np.ndarray
    L: float = 1.0
    name: str = ""
    midpoints: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        if s.ndim != 1 or len(s) < 3:
            raise PotentialError("potential needs at least 3 samples")
        if (len(s) - 1) % 2:
            raise PotentialError(f"grid_n must be even, got {len(s) - 1}")
        if not np.all(np.isfinite(s)):
            raise PotentialError("potential must be bounded (finite samples)")
        if self.L <= 0:
            raise PotentialError("edge length L must be positive")
        scale = max(1.0, float(np.max(np.abs(s))))
        if np.max(np.abs(s - s[::-1])) > 1e-12 * scale:
            raise PotentialError("potential is not symmetric: U(L-x) = U(x) violated")
        if self.midpoints is None:
            object.__setattr__(self, "midpoints", self._midpoint_values())

    @property
    def grid_n(self) -> int:
        return len(self.samples) - 1

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.grid_n + 1)

    @property
    def step(self) -> float:
        return self.L / self.grid_n

    @property
    def is_zero(self) -> bool:
        return self.form == "zero"

    def _midpoint_values(self) -> np.ndarray:
        xm = self.grid[:-1] + 0.5 * self.step
        if self.form == "zero":
            return np.zeros_like(xm)
        if self.form == "closed":
            return CLOSED_FORMS[self.name](xm, self.L)
        return CubicSpline(self.grid, self.samples)(xm)

    def with_grid(self, grid_n: int) -> "Potential":
        """The same potential on a different grid."""
        if grid_n == self.grid_n:
            return self
        if self.form == "zero":
            return Potential.zero(self.L, grid_n)
        if self.form == "closed":
            return Potential.closed(self.name, self.L, grid_n)
        x = np.linspace(0.0, self.L, grid_n + 1)
        vals = CubicSpline(self.grid, self.samples)(x)
        vals = 0.5 * (vals + vals[::-1])
        return Potential("sampled", vals, self.L, self.name)

    @classmethod
    def zero(cls, L: float = 1.0, grid_n: int = DEFAULT_GRID_N) -> "Potential":
        return cls("zero", np.zeros(grid_n + 1), L, "zero")

    @classmethod
    def closed(cls, name: str, L: float = 1.0, grid_n: int = DEFAULT_GRID_N) -> "Potential":
        if name == "zero":
            return cls.zero(L, grid_n)
        if name not in CLOSED_FORMS:
            raise PotentialError(f"unknown closed-form potential {name!r}")
        x = np.linspace(0.0, L, grid_n + 1)
        vals = CLOSED_FORMS[name](x, L)
        vals = 0.5 * (vals + vals[::-1])  # exact floating-point symmetry
        return cls("closed", vals, L, name)

    @classmethod
    def sampled(cls, values, L: float = 1.0, name: str = "sampled") -> "Potential":
        return cls("sampled", np.asarray(values, dtype=float), L, name)


def load_potential_csv(path) -> Potential:
    """Read a ``x,u`` CSV with uniform ``x`` covering both endpoints."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header != ["x", "u"]:
            raise PotentialError(f"expected header 'x,u', got {','.join(header)!r}")
        rows = np.array([[float(a), float(b)] for a, b in reader])
    x, u = rows[:, 0], rows[:, 1]
    dx = np.diff(x)
    if x[0] != 0.0 or np.any(dx <= 0) or np.ptp(dx) > 1e-9 * dx.mean():
        raise PotentialError("x column must be uniform, increasing and start at 0")
    return Potential.sampled(u, L=float(x[-1]), name=Path(path).stem)


def save_potential_csv(u: Potential, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "u"])
        for xi, ui in zip(u.grid, u.samples):
            w.writerow([repr(float(xi)), repr(float(ui))])


@dataclass(frozen=True, eq=False)
class EdgeBasis:
    """Fundamental solutions at one ``lam`` or a batch of them.

    Endpoint fields have shape ``lam.shape``; sample fields have shape
    ``lam.shape + (grid_n + 1,)``.
    """

    lam: np.ndarray
    c: np.ndarray
    s: np.ndarray
    c_prime: np.ndarray
    s_prime: np.ndarray
    C_samples: np.ndarray
    S_samples: np.ndarray
    Cp_samples: np.ndarray
    Sp_samples: np.ndarray
    L: float
    grid_n: int
    u_samples: np.ndarray = field(default=None, repr=False)
    closed: bool = False

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.grid_n + 1)

    def at(self, x):
        """``(C(x), S(x))`` at arbitrary positions ``x`` in ``[0, L]``.

        Off-grid values use quintic Hermite interpolation from the sampled
        values, first derivatives and ``y'' = (U - lam) y``.
        """
        x = np.asarray(x, dtype=float)
        if np.any((x < -1e-12 * self.L) | (x > self.L * (1 + 1e-12))):
            raise ValueError("positions must lie in [0, L]")
        x = np.clip(x, 0.0, self.L)
        if self.closed:
            C, S, _, _ = _closed_form(self.lam, x.reshape(-1))
            shape = self.lam.shape + x.shape
            return C.reshape(shape), S.reshape(shape)
        h = self.L / self.grid_n
        i = np.minimum((x / h).astype(np.int64), self.grid_n - 1)
        t = x / h - i
        t2, t3 = t * t, t * t * t
        t4, t5 = t3 * t, t3 * t2
        H0 = 1 - 10 * t3 + 15 * t4 - 6 * t5
        H5 = 10 * t3 - 15 * t4 + 6 * t5
        H1 = t - 6 * t3 + 8 * t4 - 3 * t5
        H4 = -4 * t3 + 7 * t4 - 3 * t5
        H2 = 0.5 * (t2 - 3 * t3 + 3 * t4 - t5)
        H3 = 0.5 * (t3 - 2 * t4 + t5)
        pot = self.u_samples - self.lam[..., None]

        def interp(y, dy):
            ddy = pot * y
            return (y[..., i] * H0 + y[..., i + 1] * H5
                    + h * (dy[..., i] * H1 + dy[..., i + 1] * H4)
                    + h * h * (ddy[..., i] * H2 + ddy[..., i + 1] * H3))

        return interp(self.C_samples, self.Cp_samples), interp(self.S_samples, self.Sp_samples)

    def take(self, idx) -> "EdgeBasis":
        """Select entries of a batched basis along its first axis."""
        pick = lambda a: np.asarray(a)[idx]
        return EdgeBasis(
            lam=pick(self.lam), c=pick(self.c), s=pick(self.s),
            c_prime=pick(self.c_prime), s_prime=pick(self.s_prime),
            C_samples=pick(self.C_samples), S_samples=pick(self.S_samples),
            Cp_samples=pick(self.Cp_samples), Sp_samples=pick(self.Sp_samples),
            L=self.L, grid_n=self.grid_n, u_samples=self.u_samples, closed=self.closed,
        )

    def wronskian_error(self):
        return np.abs(self.c * self.s_prime - self.s * self.c_prime - 1.0)

    def symmetry_error(self):
        return np.abs(self.c - self.s_prime)

    def reflection_error(self):
        """``max_x |s C(x) - c S(x) - S(L-x)|`` over the grid."""
        lhs = self.s[..., None] * self.C_samples - self.c[..., None] * self.S_samples
        return np.max(np.abs(lhs - self.S_samples[..., ::-1]), axis=-1)


def _closed_form(lam: np.ndarray, x: np.ndarray):
    """``cos(sqrt(lam) x)``, ``sin(sqrt(lam) x)/sqrt(lam)`` and derivatives."""
    lam_b = lam[..., None]
    t = lam_b * x**2
    with np.errstate(divide="ignore", invalid="ignore"):
        if np.iscomplexobj(lam):
            r = np.sqrt(lam_b.astype(complex))
            C = np.cos(r * x)
            S = np.sin(r * x) / r
        else:
            r = np.sqrt(np.abs(lam_b))
            pos = lam_b >= 0
            C = np.where(pos, np.cos(r * x), np.cosh(r * x))
            S = np.where(pos, np.sin(r * x), np.sinh(r * x)) / r
    small = np.abs(t) < SERIES_CUTOFF
    if np.any(small):
        C_ser = 1 - t / 2 + t**2 / 24 - t**3 / 720
        S_ser = x * (1 - t / 6 + t**2 / 120 - t**3 / 5040)
        C = np.where(small, C_ser, C)
        S = np.where(small, S_ser, S)
    Cp = -lam_b * S
    Sp = C
    return C, S, Cp, Sp


def _step_entries(u: Potential, lam: np.ndarray, i: int):
    """Entries of the RK4 propagator over grid cell ``i`` (vectorized in ``lam``).

    With ``a, b, c = U - lam`` at the left end, midpoint and right end of the
    cell, one RK4 step of ``(y, y')' = [[0, 1], [U - lam, 0]] (y, y')``
    multiplies the state by this 2x2 matrix (expanded by hand).
    """
    h = u.step
    a = u.samples[i] - lam
    b = u.midpoints[i] - lam
    c = u.samples[i + 1] - lam
    h2 = h * h
    p00 = 1 + h2 / 6 * (a + 2 * b) + h2 * h2 * a * b / 24
    p01 = h + h2 * h * b / 6
    p10 = h / 6 * (a + 4 * b + c + h2 * b * (a + c) / 2)
    p11 = 1 + h2 / 6 * (2 * b + c) + h2 * h2 * b * c / 24
    return p00, p01, p10, p11


def _rk4_states(u: Potential, lam: np.ndarray, keep_samples: bool):
    """Propagate the identity through every cell.

    Returns the four entries ``(C, S, C', S')`` either at ``x = L`` (shape
    ``lam.shape``) or on the whole grid (shape ``lam.shape + (grid_n + 1,)``).
    """
    dtype = np.result_type(lam, float)
    m00 = np.ones(lam.shape, dtype=dtype)
    m01 = np.zeros(lam.shape, dtype=dtype)
    m10 = np.zeros(lam.shape, dtype=dtype)
    m11 = np.ones(lam.shape, dtype=dtype)
    if keep_samples:
        out = np.empty((4,) + lam.shape + (u.grid_n + 1,), dtype=dtype)
        out[0, ..., 0], out[1, ..., 0], out[2, ..., 0], out[3, ..., 0] = m00, m01, m10, m11
    for i in range(u.grid_n):
        p00, p01, p10, p11 = _step_entries(u, lam, i)
        m00, m01, m10, m11 = (p00 * m00 + p01 * m10, p00 * m01 + p01 * m11,
                              p10 * m00 + p11 * m10, p10 * m01 + p11 * m11)
        if keep_samples:
            out[0, ..., i + 1], out[1, ..., i + 1] = m00, m01
            out[2, ..., i + 1], out[3, ..., i + 1] = m10, m11
    if keep_samples:
        return out[0], out[1], out[2], out[3]
    return m00, m01, m10, m11


def _use_closed(u: Potential, method: str) -> bool:
    if method == "auto":
        return u.is_zero
    if method == "closed":
        if not u.is_zero:
            raise ValueError("closed forms are only available for U = 0")
        return True
    if method == "rk4":
        return False
    raise ValueError(f"unknown method {method!r}")


def endpoint_data(u: Potential, lam, method: str = "auto"):
    """``(c, s, c', s')`` at ``lam`` (scalar or array), without grid samples."""
    lam = np.asarray(lam)
    if _use_closed(u, method):
        x = np.array([u.L])
        C, S, Cp, Sp = _closed_form(lam, x)
        return C[..., 0], S[..., 0], Cp[..., 0], Sp[..., 0]
    return _rk4_states(u, lam, keep_samples=False)


def edge_basis(u: Potential, lam, method: str = "auto") -> EdgeBasis:
    """Fundamental pair ``C_lam, S_lam`` with endpoint data and grid samples.

    Parameters
    ----------
    u : Potential
        Symmetric potential; its grid is the shared grid.
    lam : float, complex or array
        Spectral parameter(s). Negative and complex values are supported.
    method : {"auto", "closed", "rk4"}
        ``auto`` uses closed forms for ``U = 0`` and RK4 otherwise.
    """
    if not isinstance(u, Potential):
        raise TypeError("u must be a Potential")
    lam = np.asarray(lam)
    if _use_closed(u, method):
        C, S, Cp, Sp = _closed_form(lam, u.grid)
    else:
        C, S, Cp, Sp = _rk4_states(u, lam, keep_samples=True)
    return EdgeBasis(
        lam=lam,
        c=C[..., -1], s=S[..., -1], c_prime=Cp[..., -1], s_prime=Sp[..., -1],
        C_samples=C, S_samples=S, Cp_samples=Cp, Sp_samples=Sp,
        L=u.L, grid_n=u.grid_n, u_samples=u.samples, closed=_use_closed(u, method),
    )


def monodromy(basis: EdgeBasis) -> np.ndarray:
    """Transfer matrix ``[[c, s], [c', s']]`` mapping ``(y, y')(0)`` to ``(y, y')(L)``."""
    return np.stack(
        [np.stack([basis.c, basis.s], axis=-1), np.stack([basis.c_prime, basis.s_prime], axis=-1)],
        axis=-2,
    )


def simpson_weights(grid_n: int, L: float) -> np.ndarray:
    """Composite Simpson weights on ``grid_n + 1`` uniform points."""
    if grid_n % 2:
        raise ValueError("Simpson's rule needs an even grid_n")
    w = np.ones(grid_n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (L / grid_n) / 3.0


def observable_moments(basis: EdgeBasis, f_samples):
    """Simpson integrals ``(int f S(L-t)^2, int f S(L-t) S(t), int f S(t)^2)``.

    ``f_samples`` must live on the basis grid; it broadcasts against the
    basis batch shape.
    """
    f = np.asarray(f_samples)
    if f.shape[-1] != basis.grid_n + 1:
        raise ValueError(f"f has {f.shape[-1]} samples, grid has {basis.grid_n + 1}")
    w = simpson_weights(basis.grid_n, basis.L)
    S = basis.S_samples
    Sr = S[..., ::-1]
    return (f * Sr * Sr) @ w, (f * Sr * S) @ w, (f * S * S) @ w
