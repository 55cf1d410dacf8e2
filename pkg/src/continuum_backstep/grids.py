"""Grids, weighted inner products and the vector <-> step-function maps.

The discrete state space carries the inner product

    <(u1, v1), (u2, v2)>_E = int_0^1 (1/n) sum_i u1^i u2^i + v1 v2 dx

and its continuum counterpart E_c replaces the 1/n-weighted channel sum by an
integral over the ensemble variable y. ``lift`` maps a channel vector to a
function piecewise constant on the cells ((i-1)/n, i/n] and ``project`` takes
cell means; ``project(lift(b)) == b``.

All integrals use the composite trapezoid rule on uniform closed grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Grid1D",
    "TriGrid",
    "StateN",
    "StepFunction",
    "trapezoid_weights",
    "trapz",
    "inner_product_E",
    "norm_E",
    "lift",
    "project",
    "cell_index",
    "inner_product_Ec",
]


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on [0, 1] including both endpoints."""

    m: int
    points: np.ndarray = field(init=False, repr=False, compare=False)
    h: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"grid needs at least 2 points, got m={self.m!r}")
        object.__setattr__(self, "m", int(self.m))
        pts = np.linspace(0.0, 1.0, self.m)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "h", 1.0 / (self.m - 1))

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.m)


@dataclass(frozen=True)
class TriGrid:
    """Nodes (x_a, xi_b), b <= a, of the triangle 0 <= xi <= x <= 1."""

    m: int
    grid: Grid1D = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "grid", Grid1D(self.m))

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def mask(self) -> np.ndarray:
        """Boolean (m, m) array, True where xi_b <= x_a (row a, column b)."""
        return np.tri(self.m, dtype=bool)

    def nodes(self) -> np.ndarray:
        """All triangle nodes as an (N, 2) array of (x, xi)."""
        a, b = np.nonzero(self.mask)
        return np.column_stack([self.points[a], self.points[b]])


@dataclass(frozen=True)
class StateN:
    """Tabulated state (u^1..u^n, v) of the n+1 system on a Grid1D."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        v = np.array(self.v, dtype=float)
        if u.ndim == 1:
            u = u[None, :]
        if u.ndim != 2 or u.shape[0] < 1:
            raise ValueError(f"u must be an (n, m) array with n >= 1, got shape {u.shape}")
        if v.shape != (u.shape[1],):
            raise ValueError(f"v shape {v.shape} does not match u shape {u.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("state contains non-finite entries")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def __mul__(self, c: float) -> "StateN":
        return StateN(c * self.u, c * self.v)

    __rmul__ = __mul__

    def __add__(self, other: "StateN") -> "StateN":
        return StateN(self.u + other.u, self.v + other.v)

    def __sub__(self, other: "StateN") -> "StateN":
        return StateN(self.u - other.u, self.v - other.v)

    @classmethod
    def zeros(cls, n: int, m: int) -> "StateN":
        return cls(np.zeros((n, m)), np.zeros(m))


def trapezoid_weights(m: int) -> np.ndarray:
    """Composite trapezoid weights for m uniform points on [0, 1]."""
    if m < 2:
        raise ValueError("trapezoid rule needs at least 2 points")
    w = np.full(m, 1.0 / (m - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def trapz(values: np.ndarray, h: float, axis: int = -1) -> np.ndarray:
    """Composite trapezoid rule with spacing h along ``axis``."""
    values = np.asarray(values, dtype=float)
    inner = np.sum(values, axis=axis)
    first = np.take(values, 0, axis=axis)
    last = np.take(values, -1, axis=axis)
    return h * (inner - 0.5 * (first + last))


def _check_pair(a: StateN, b: StateN, g: Grid1D) -> None:
    if a.u.shape != b.u.shape or a.m != g.m:
        raise ValueError(
            f"dimension mismatch: a has u{a.u.shape}, b has u{b.u.shape}, grid m={g.m}"
        )


def inner_product_E(a: StateN, b: StateN, g: Grid1D) -> float:
    """1/n-weighted L2 inner product of two tabulated states."""
    _check_pair(a, b, g)
    integrand = np.mean(a.u * b.u, axis=0) + a.v * b.v
    return float(trapz(integrand, g.h))


def norm_E(a: StateN, g: Grid1D) -> float:
    return float(np.sqrt(max(inner_product_E(a, a, g), 0.0)))


def cell_index(y, n: int) -> np.ndarray:
    """0-based index of the right-closed cell ((i-1)/n, i/n] containing y.

    y = 0 is assigned to the first cell.
    """
    y = np.asarray(y, dtype=float)
    idx = np.ceil(y * n).astype(int) - 1
    # guard against n*y landing a hair above an integer
    near = np.isclose(y * n, np.round(y * n), rtol=0.0, atol=1e-12)
    idx = np.where(near, np.round(y * n).astype(int) - 1, idx)
    return np.clip(idx, 0, n - 1)


@dataclass(frozen=True)
class StepFunction:
    """Function of y in [0, 1], constant on the cells ((i-1)/n, i/n]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("step function needs at least one cell value")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.size

    def __call__(self, y):
        return self.values[cell_index(y, self.n)]

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) / self.n))


def lift(b) -> StepFunction:
    """Map a channel vector to its step function in y."""
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        raise ValueError("cannot lift an empty vector")
    return StepFunction(b.ravel())


def project(gfun: Callable, n: int, q: int = 33) -> np.ndarray:
    """Cell means n * int_{(i-1)/n}^{i/n} g(y) dy, i = 1..n.

    Each cell is integrated with the trapezoid rule on q points. A
    StepFunction argument is averaged exactly from its cell overlaps instead,
    so ``project(lift(b), b.size)`` returns ``b`` bit for bit.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if isinstance(gfun, StepFunction):
        return _step_cell_means(gfun, n)
    s = np.linspace(0.0, 1.0, q)
    lo = np.arange(n)[:, None] / n
    y = lo + s[None, :] / n
    vals = np.asarray(gfun(y), dtype=float)
    vals = np.broadcast_to(vals, y.shape)
    return trapz(vals, 1.0 / (q - 1), axis=1)


def _step_cell_means(sf: StepFunction, n: int) -> np.ndarray:
    N = sf.n
    if N == n:
        return sf.values.copy()
    if N % n == 0:
        return sf.values.reshape(n, N // n).mean(axis=1)
    # overlap matrix of [(i-1)/n, i/n] with [(j-1)/N, j/N], integer arithmetic
    # on the common denominator n*N
    lo_t = np.arange(n)[:, None] * N
    lo_s = np.arange(N)[None, :] * n
    overlap = np.clip(np.minimum(lo_t + N, lo_s + n) - np.maximum(lo_t, lo_s), 0, None)
    return overlap @ sf.values / N


def inner_product_Ec(u_a, v_a, u_b, v_b, gx: Grid1D, gy: Grid1D) -> float:
    """L2([0,1]^2) x L2([0,1]) inner product of tabulated continuum states.

    ``u_*`` are (gy.m, gx.m) arrays indexed [y, x]; ``v_*`` have length gx.m.
    """
    u_a, u_b = np.asarray(u_a, float), np.asarray(u_b, float)
    v_a, v_b = np.asarray(v_a, float), np.asarray(v_b, float)
    if u_a.shape != u_b.shape or u_a.shape != (gy.m, gx.m):
        raise ValueError(
            f"shape mismatch: u_a{u_a.shape}, u_b{u_b.shape}, expected {(gy.m, gx.m)}"
        )
    if v_a.shape != (gx.m,) or v_b.shape != (gx.m,):
        raise ValueError(f"shape mismatch: v_a{v_a.shape}, v_b{v_b.shape}, expected ({gx.m},)")
    inner_y = trapz(u_a * u_b, gy.h, axis=0)
    return float(trapz(inner_y + v_a * v_b, gx.h))
