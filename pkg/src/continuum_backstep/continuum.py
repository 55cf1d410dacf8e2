"""Continuum kernels (k(x, xi, y), kbar(x, xi)) and their sampled gains.

The continuum kernels solve

    mu(x) k_x - lambda(xi, y) k_xi - theta(xi, y) kbar
        = lambda_xi(xi, y) k + int_0^1 sigma(xi, eta, y) k(x, xi, eta) d eta
    mu(x) kbar_x + mu(xi) kbar_xi = -mu'(xi) kbar + int_0^1 W(xi, y) k(x, xi, y) dy

with k(x, x, y) = -theta(x, y) / (lambda(x, y) + mu(x)) and
mu(0) kbar(x, 0) = int_0^1 q(y) lambda(0, y) k(x, 0, y) dy.

A general solution is obtained by sampling the parameters on a fine ensemble
of n_y channels, solving that n_y + 1 system exactly and reading the result as
a step function in y. Sampling k at y = i/n gives the approximate gains of
the n+1 system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grids import Grid1D, TriGrid, cell_index, trapz
from .kernels import KernelsN, solve_exact_kernels
from .params import ContinuumParams, sample_params

__all__ = [
    "ContinuumKernel",
    "DeltaReport",
    "ContinuumResidual",
    "KBAR_EXAMPLE",
    "example_kernel",
    "zero_kernel",
    "continuum_residual",
    "solve_continuum_kernels",
    "sample_kernel",
    "sample_gains",
    "kernel_delta",
    "kernel_distance_y",
]

KBAR_EXAMPLE = 35.0 / (2.0 * math.pi**2)


@dataclass(frozen=True)
class ContinuumKernel:
    """Evaluator pair for the continuum kernels.

    ``k(x, xi, y)`` and ``kbar(x, xi)`` broadcast over numpy arrays.
    ``provenance`` is ``"closed-form"`` or ``"numeric(n_y=.., m=..)"``;
    numeric kernels keep the underlying discrete solution in ``discrete``.
    """

    k: Callable
    kbar: Callable
    provenance: str = "closed-form"
    discrete: Optional[KernelsN] = field(default=None, compare=False, repr=False)


def example_kernel() -> ContinuumKernel:
    """Closed-form kernels of the worked example."""

    def k(x, xi, y):
        x, xi, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, xi, y)))
        return 35.0 * y * (y - 1.0) * np.exp(2.0 * xi * KBAR_EXAMPLE)

    def kbar(x, xi):
        return np.full(np.broadcast(np.asarray(x), np.asarray(xi)).shape, KBAR_EXAMPLE)

    return ContinuumKernel(k=k, kbar=kbar, provenance="closed-form")


def zero_kernel() -> ContinuumKernel:
    def k(x, xi, y):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(xi), np.asarray(y)).shape)

    def kbar(x, xi):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(xi)).shape)

    return ContinuumKernel(k=k, kbar=kbar, provenance="closed-form")


# --- residuals ------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuumResidual:
    """Residuals of the continuum kernel equations on a tabulation grid."""

    max_k: float
    max_kbar: float
    diag_defect: float
    bc_defect: float
    scale: float
    m: int
    n_y: int

    @property
    def max_interior(self) -> float:
        return max(self.max_k, self.max_kbar)

    def as_dict(self) -> dict:
        return {
            "max_k": self.max_k, "max_kbar": self.max_kbar, "diag_defect": self.diag_defect,
            "bc_defect": self.bc_defect, "scale": self.scale, "m": self.m, "n_y": self.n_y,
            "max_interior": self.max_interior,
        }


def continuum_residual(kc: ContinuumKernel, pc: ContinuumParams, m: int = 65,
                       n_y: int = 65) -> ContinuumResidual:
    """Finite-difference residuals of the continuum kernel equations.

    Derivatives in (x, xi) are centered differences on an m x m grid; the
    ensemble integrals use the trapezoid rule on n_y points. Interior nodes
    are those whose four neighbours lie in the triangle. Work proceeds one
    xi column at a time to keep memory at O(m * n_y).
    """
    gx = Grid1D(m)
    gy = Grid1D(n_y)
    x, y = gx.points, gy.points
    h, hy = gx.h, gy.h
    mu = np.broadcast_to(pc.mu(x), x.shape)
    dmu = np.broadcast_to(pc.mu_x(x), x.shape)

    max_k = 0.0
    max_kbar = 0.0
    scale = 0.0
    for b in range(1, m - 2):
        xi3 = x[b - 1 : b + 2]
        rows = np.arange(b + 1, m - 1)  # need (a - 1, b), (a, b + 1) inside
        xa = x[b:m]  # rows b .. m-1 so that a - 1 and a + 1 are available
        X = xa[:, None, None]
        XI = xi3[None, :, None]
        Y = y[None, None, :]
        K = np.broadcast_to(kc.k(X, XI, Y), (xa.size, 3, n_y))
        KB = np.broadcast_to(kc.kbar(xa[:, None], xi3[None, :]), (xa.size, 3))
        scale = max(scale, float(np.max(np.abs(K))), float(np.max(np.abs(KB))))
        # local row index of absolute row a is a - b
        r = rows - b
        kx = (K[r + 1, 1] - K[r - 1, 1]) / (2 * h)
        kxi = (K[r, 2] - K[r, 0]) / (2 * h)
        kk = K[r, 1]  # (rows, n_y)
        kbx = (KB[r + 1, 1] - KB[r - 1, 1]) / (2 * h)
        kbxi = (KB[r, 2] - KB[r, 0]) / (2 * h)
        kb = KB[r, 1]
        xib = x[b]
        lam = np.broadcast_to(pc.lam(xib, y), y.shape)
        dlam = np.broadcast_to(pc.lam_x(xib, y), y.shape)
        theta = np.broadcast_to(pc.theta(xib, y), y.shape)
        w = np.broadcast_to(pc.w(xib, y), y.shape)
        # S[e, j] = sigma(xi, eta_e, y_j); coupling[r, j] = int S[e, j] k[r, e] d eta
        S = np.broadcast_to(pc.sigma(xib, y[:, None], y[None, :]), (n_y, n_y))
        wts = gy.weights
        coupling = kk @ (wts[:, None] * S)
        res_k = (mu[rows, None] * kx - lam[None, :] * kxi - theta[None, :] * kb[:, None]
                 - dlam[None, :] * kk - coupling)
        res_kb = mu[rows] * kbx + mu[b] * kbxi + dmu[b] * kb - trapz(w[None, :] * kk, hy, axis=1)
        if res_k.size:
            max_k = max(max_k, float(np.max(np.abs(res_k))))
            max_kbar = max(max_kbar, float(np.max(np.abs(res_kb))))

    X, Y = np.meshgrid(x, y, indexing="ij")
    kd = np.broadcast_to(kc.k(X, X, Y), X.shape)
    target = -np.broadcast_to(pc.theta(X, Y), X.shape) / (
        np.broadcast_to(pc.lam(X, Y), X.shape) + mu[:, None])
    diag_defect = float(np.max(np.abs(kd - target)))

    k0 = np.broadcast_to(kc.k(X, 0.0 * X, Y), X.shape)
    integrand = np.broadcast_to(pc.q(y), y.shape)[None, :] * \
        np.broadcast_to(pc.lam(0.0, y), y.shape)[None, :] * k0
    bc = mu[0] * np.broadcast_to(kc.kbar(x, 0.0 * x), x.shape) - trapz(integrand, hy, axis=1)
    bc_defect = float(np.max(np.abs(bc)))
    return ContinuumResidual(max_k=max_k, max_kbar=max_kbar, diag_defect=diag_defect,
                             bc_defect=bc_defect, scale=scale, m=m, n_y=n_y)


# --- numeric continuum kernels ------------------------------------------------------


def _extend_triangle(table: np.ndarray) -> np.ndarray:
    """Copy of an (m, m) triangle table with entries above the diagonal set to
    the diagonal value of their row, so bilinear cells straddling the
    diagonal only see triangle data."""
    t = np.array(table, dtype=float)
    m = t.shape[-1]
    upper = np.triu(np.ones((m, m), dtype=bool), k=1)
    diag = np.diagonal(t, axis1=-2, axis2=-1)
    t[..., upper] = np.broadcast_to(diag[..., :, None], t.shape)[..., upper]
    return t


def _grid_coords(s, m: int):
    t = np.clip(np.asarray(s, dtype=float), 0.0, 1.0) * (m - 1)
    ti = np.rint(t)
    t = np.where(np.abs(t - ti) < 1e-9, ti, t)  # snap grid nodes exactly
    i0 = np.clip(np.floor(t).astype(int), 0, m - 2)
    return i0, t - i0


def _bilinear(table: np.ndarray, x, xi, chan=None):
    """Bilinear interpolation of table[..., a, b] at (x, xi) on the unit grid."""
    m = table.shape[-1]
    a0, fa = _grid_coords(x, m)
    b0, fb = _grid_coords(xi, m)
    if chan is None:
        T = table
        v00, v10 = T[a0, b0], T[a0 + 1, b0]
        v01, v11 = T[a0, b0 + 1], T[a0 + 1, b0 + 1]
    else:
        T = table
        v00, v10 = T[chan, a0, b0], T[chan, a0 + 1, b0]
        v01, v11 = T[chan, a0, b0 + 1], T[chan, a0 + 1, b0 + 1]
    out = (1 - fa) * ((1 - fb) * v00 + fb * v01) + fa * ((1 - fb) * v10 + fb * v11)
    # exact node values where both coordinates hit the grid
    exact = (fa == 0) & (fb == 0)
    return np.where(exact, v00, out)


def solve_continuum_kernels(pc: ContinuumParams, n_y: int = 64, m: int = 257) -> ContinuumKernel:
    """Numeric continuum kernels from the exact kernels of an n_y-channel sample.

    ``k(x, xi, y)`` is the kernel of the channel whose cell ((i-1)/n_y, i/n_y]
    contains y, bilinearly interpolated in (x, xi); kbar likewise.
    """
    if n_y < 2:
        raise ValueError(f"n_y must be >= 2, got {n_y}")
    pn = sample_params(pc, n_y, Grid1D(m))
    kn = solve_exact_kernels(pn, m)
    table = _extend_triangle(kn.k)

    def k(x, xi, y):
        x, xi, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, xi, y)))
        return _bilinear(table, x, xi, chan=cell_index(y, n_y))

    def kbar(x, xi):
        x, xi = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
        return _bilinear(table[n_y], x, xi)

    return ContinuumKernel(k=k, kbar=kbar, provenance=f"numeric(n_y={n_y}, m={m})", discrete=kn)


# --- sampling into approximate gains ------------------------------------------------


def sample_kernel(kc: ContinuumKernel, n: int, tri: TriGrid) -> KernelsN:
    """Approximate gains k~^i(x, xi) = k(x, xi, i/n), k~^{n+1} = kbar, on ``tri``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    x = tri.points
    m = tri.m
    ys = np.arange(1, n + 1) / n
    X = x[:, None]
    XI = x[None, :]
    K = np.zeros((n + 1, m, m))
    K[:n] = np.broadcast_to(kc.k(X[None], XI[None], ys[:, None, None]), (n, m, m))
    K[n] = np.broadcast_to(kc.kbar(X, XI), (m, m))
    K[:, ~tri.mask] = 0.0
    return KernelsN(n=n, k=K, tri=tri, meta={"source": "sampled", "provenance": kc.provenance})


def sample_gains(kc: ContinuumKernel, n: int, g: Grid1D) -> np.ndarray:
    """Only the x = 1 row of the sampled gains, shape (n+1, m).

    This is all the feedback law needs.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    xi = g.points
    ys = np.arange(1, n + 1) / n
    out = np.empty((n + 1, g.m))
    out[:n] = np.broadcast_to(kc.k(1.0, xi[None, :], ys[:, None]), (n, g.m))
    out[n] = np.broadcast_to(kc.kbar(1.0, xi), (g.m,))
    return out


# --- approximation error Delta k = k~ - k -------------------------------------------


@dataclass(frozen=True)
class DeltaReport:
    """Size of Delta k^i(1, xi) = k~^i(1, xi) - k^i(1, xi).

    Attributes:
        per_channel: sup over xi of |Delta k^i(1, xi)|, i = 1..n+1.
        aggregate: max over xi of the max-abs-row-sum norm of the stacked
            (n+1)-vector, v-channel included.
        aggregate_u: same without the v-channel.
        aggregate_e: max over xi of (1/sqrt(n)) ||(Delta k^i)_{i<=n}||_2.
        v_channel: sup over xi of |Delta k^{n+1}(1, xi)|.
    """

    per_channel: np.ndarray
    aggregate: float
    aggregate_u: float
    aggregate_e: float
    v_channel: float

    def as_dict(self) -> dict:
        return {
            "per_channel": self.per_channel.tolist(),
            "aggregate": self.aggregate,
            "aggregate_u": self.aggregate_u,
            "aggregate_e": self.aggregate_e,
            "v_channel": self.v_channel,
        }


def kernel_delta(exact: KernelsN, approx: KernelsN) -> DeltaReport:
    if exact.n != approx.n or exact.m != approx.m:
        raise ValueError(
            f"dimension mismatch: exact (n={exact.n}, m={exact.m}) vs "
            f"approx (n={approx.n}, m={approx.m})"
        )
    d = approx.boundary_row() - exact.boundary_row()  # (n+1, m)
    n = exact.n
    absd = np.abs(d)
    per = absd.max(axis=1)
    return DeltaReport(
        per_channel=per,
        aggregate=float(absd.max()),
        aggregate_u=float(absd[:n].max()),
        aggregate_e=float(np.max(np.sqrt(np.sum(d[:n] ** 2, axis=0) / n))),
        v_channel=float(per[n]),
    )


def kernel_distance_y(ka: ContinuumKernel, kb: ContinuumKernel, x: float = 1.0,
                      m_xi: int = 65, n_quad: int = 2048) -> float:
    """max over xi of the L2-in-y distance between two continuum kernels at fixed x.

    The y integral uses the midpoint rule so step-function kernels are never
    evaluated on their cell edges.
    """
    xi = np.linspace(0.0, x, m_xi)
    y = (np.arange(n_quad) + 0.5) / n_quad
    va = np.broadcast_to(ka.k(x, xi[:, None], y[None, :]), (m_xi, n_quad))
    vb = np.broadcast_to(kb.k(x, xi[:, None], y[None, :]), (m_xi, n_quad))
    return float(np.max(np.sqrt(np.mean((va - vb) ** 2, axis=1))))
