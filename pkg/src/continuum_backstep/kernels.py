"""Backstepping gain kernels of the n+1 system on the triangle 0 <= xi <= x <= 1.

The kernels solve

    mu(x) k^i_x - lambda_i(xi) k^i_xi = lambda_i'(xi) k^i
                                        + (1/n) sum_j sigma_{j,i}(xi) k^j
                                        + theta_i(xi) k^{n+1}
    mu(x) k^{n+1}_x + mu(xi) k^{n+1}_xi = -mu'(xi) k^{n+1} + (1/n) sum_j W_j(xi) k^j

with k^i(x, x) = -theta_i(x) / (lambda_i(x) + mu(x)) and
mu(0) k^{n+1}(x, 0) = (1/n) sum_j q_j lambda_j(0) k^j(x, 0).

``solve_exact_kernels`` marches in x one grid row at a time. Every value on a
new row is obtained by following its characteristic back to the previous row
(linear interpolation at the foot) or, when the characteristic leaves the
triangle first, to the diagonal (channels i <= n) or to xi = 0 (channel n+1)
where the boundary data are known. Source terms are integrated with explicit
Euler along the segment. The scheme is first order.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .grids import Grid1D, TriGrid
from .params import ParamsN

__all__ = [
    "KernelSolverError",
    "KernelsN",
    "ResidualReport",
    "solve_exact_kernels",
    "kernel_residual",
    "write_kernels_csv",
    "write_kernels_json",
    "DEFAULT_KERNEL_M",
]

log = logging.getLogger(__name__)

DEFAULT_KERNEL_M = 257


class KernelSolverError(RuntimeError):
    """Kernel marching produced an unusable result."""


@dataclass(frozen=True)
class KernelsN:
    """Kernels k^1..k^{n+1} tabulated on a TriGrid.

    ``k[i, a, b]`` is k^{i+1}(x_a, xi_b); entries with b > a are zero. Channel
    index n (0-based) holds k^{n+1}, the v-kernel.
    """

    n: int
    k: np.ndarray
    tri: TriGrid
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float)
        if k.shape != (self.n + 1, self.tri.m, self.tri.m):
            raise ValueError(
                f"kernel array shape {k.shape} != ({self.n + 1}, {self.tri.m}, {self.tri.m})"
            )
        k.setflags(write=False)
        object.__setattr__(self, "k", k)

    @property
    def m(self) -> int:
        return self.tri.m

    @property
    def grid(self) -> Grid1D:
        return self.tri.grid

    def boundary_row(self) -> np.ndarray:
        """Gains k^i(1, xi) on the grid, shape (n+1, m)."""
        return self.k[:, -1, :]

    def scale(self) -> float:
        return float(np.max(np.abs(self.k))) if self.k.size else 0.0


def _tabulate(pn: ParamsN, x: np.ndarray) -> dict:
    tab = pn.tabulate(x)
    for key in ("lam", "mu"):
        if np.any(tab[key] <= 0):
            raise KernelSolverError(f"{key} must be positive on the kernel grid")
    return tab


def solve_exact_kernels(pn: ParamsN, m: int = DEFAULT_KERNEL_M) -> KernelsN:
    """Solve the n+1 kernel equations on an m x m triangular grid."""
    if m < 3:
        raise ValueError(f"kernel grid needs m >= 3, got {m}")
    tri = TriGrid(m)
    x = tri.points
    h = tri.h
    n = pn.n
    tab = _tabulate(pn, x)
    lam, dlam, mu, dmu = tab["lam"], tab["dlam"], tab["mu"], tab["dmu"]
    sigma, w, theta, q = tab["sigma"], tab["w"], tab["theta"], tab["q"]

    diag = -theta / (lam + mu[None, :])  # (n, m): k^i(x, x)
    bc_weights = q * lam[:, 0] / (n * mu[0])  # k^{n+1}(x,0) = bc_weights . k^{1..n}(x,0)

    K = np.zeros((n + 1, m, m))
    K[:n, 0, 0] = diag[:, 0]
    K[n, 0, 0] = bc_weights @ K[:n, 0, 0]

    for a in range(1, m):
        xa = x[a]
        xi_prev = x[:a]
        prev = K[:, a - 1, :a]
        ds = h / mu[a]
        xi_new = x[:a]  # nodes b < a; the diagonal node b = a is imposed below

        for i in range(n):
            # source on the previous row; the sigma sum runs over j in fixed order
            src = (dlam[i, :a] * prev[i]
                   + np.einsum("jb,jb->b", sigma[:, i, :a], prev[:n]) / n
                   + theta[i, :a] * prev[n])
            speed = lam[i, :a]
            foot = xi_new + ds * speed
            inside = foot <= xi_prev[-1]
            row = np.empty(a)
            row[inside] = (np.interp(foot[inside], xi_prev, prev[i])
                           + ds * np.interp(foot[inside], xi_prev, src))
            out = ~inside
            if np.any(out):
                # characteristic reaches the diagonal before the previous row
                s_d = (xa - xi_new[out]) / (mu[a] + speed[out])
                x_d = xa - mu[a] * s_d
                row[out] = (np.interp(x_d, x, diag[i])
                            + s_d * np.interp(np.minimum(x_d, xi_prev[-1]), xi_prev, src))
            K[i, a, :a] = row
            K[i, a, a] = diag[i, a]

        # v-kernel: data enter through xi = 0 from the current row's k^j(x, 0)
        kb_prev = K[n, a - 1, 0]
        kb_now = bc_weights @ K[:n, a, 0]
        src = -dmu[:a] * prev[n] + (w[:, :a] * prev[:n]).sum(axis=0) / n
        xi_all = x[: a + 1]
        speed = mu[: a + 1]
        foot = xi_all - ds * speed
        inside = foot >= 0.0
        row = np.empty(a + 1)
        row[inside] = (np.interp(foot[inside], xi_prev, prev[n])
                       + ds * np.interp(foot[inside], xi_prev, src))
        out = ~inside
        s0 = xi_all[out] / speed[out]
        x0 = xa - mu[a] * s0
        theta0 = (x0 - x[a - 1]) / h
        row[out] = (1 - theta0) * kb_prev + theta0 * kb_now + s0 * src[0]
        row[0] = kb_now
        K[n, a, : a + 1] = row

        if not np.all(np.isfinite(K[:, a, : a + 1])):
            raise KernelSolverError(f"non-finite kernel values on row x={xa:.6g}")

    kn = KernelsN(n=n, k=K, tri=tri, meta={"source": "exact", "params": pn.name})
    log.debug("solved exact kernels n=%d m=%d, max|k|=%.4g", n, m, kn.scale())
    return kn


@dataclass(frozen=True)
class ResidualReport:
    """Finite-difference residuals of a tabulated kernel solution."""

    max_u: float
    l2_u: float
    max_v: float
    l2_v: float
    diag_defect: float
    bc_defect: float
    scale: float

    @property
    def max_interior(self) -> float:
        return max(self.max_u, self.max_v)

    def as_dict(self) -> dict:
        return {
            "max_u": self.max_u, "l2_u": self.l2_u, "max_v": self.max_v, "l2_v": self.l2_v,
            "diag_defect": self.diag_defect, "bc_defect": self.bc_defect, "scale": self.scale,
            "max_interior": self.max_interior,
        }


def kernel_residual(kn: KernelsN, pn: ParamsN) -> ResidualReport:
    """Residuals of the kernel PDEs by centered differences on interior nodes."""
    if kn.n != pn.n:
        raise ValueError(f"kernels have n={kn.n} but params have n={pn.n}")
    n, m = kn.n, kn.m
    x = kn.tri.points
    h = kn.tri.h
    tab = pn.tabulate(x)
    lam, dlam, mu, dmu = tab["lam"], tab["dlam"], tab["mu"], tab["dmu"]
    K = kn.k

    # interior: 1 <= b and b + 1 <= a - 1 ... a <= m - 2 so that all four
    # neighbours (a +- 1, b), (a, b +- 1) lie in the triangle
    a_idx, b_idx = np.nonzero(np.tri(m, k=-2, dtype=bool))
    keep = (b_idx >= 1) & (a_idx >= 1) & (a_idx <= m - 2)
    a_idx, b_idx = a_idx[keep], b_idx[keep]
    if a_idx.size == 0:
        res_u = np.zeros((n, 0))
        res_v = np.zeros(0)
    else:
        kx = (K[:, a_idx + 1, b_idx] - K[:, a_idx - 1, b_idx]) / (2 * h)
        kxi = (K[:, a_idx, b_idx + 1] - K[:, a_idx, b_idx - 1]) / (2 * h)
        kk = K[:, a_idx, b_idx]
        mu_x = mu[a_idx]
        sig = tab["sigma"][:, :, b_idx]  # (n, n, N)
        coupling = np.einsum("jiN,jN->iN", sig, kk[:n]) / n
        res_u = (mu_x * kx[:n] - lam[:, b_idx] * kxi[:n]
                 - dlam[:, b_idx] * kk[:n] - coupling - tab["theta"][:, b_idx] * kk[n])
        res_v = (mu_x * kx[n] + mu[b_idx] * kxi[n] + dmu[b_idx] * kk[n]
                 - np.einsum("jN,jN->N", tab["w"][:, b_idx], kk[:n]) / n)

    diag = -tab["theta"] / (lam + mu[None, :])
    idx = np.arange(m)
    diag_defect = float(np.max(np.abs(K[:n, idx, idx] - diag))) if n else 0.0
    bc = mu[0] * K[n, :, 0] - (tab["q"] * lam[:, 0]) @ K[:n, :, 0] / n
    bc_defect = float(np.max(np.abs(bc)))

    def _max(r):
        return float(np.max(np.abs(r))) if r.size else 0.0

    def _l2(r):
        # sqrt(h^2 sum r^2) approximates the L2 norm over the triangle
        return float(np.sqrt(h * h * np.sum(r**2))) if r.size else 0.0

    return ResidualReport(
        max_u=_max(res_u), l2_u=_l2(res_u), max_v=_max(res_v), l2_v=_l2(res_v),
        diag_defect=diag_defect, bc_defect=bc_defect, scale=kn.scale(),
    )


def write_kernels_csv(kn: KernelsN, path) -> None:
    """Write kernels as rows (i, x, xi, k), i = 1..n+1, over the triangle."""
    x = kn.tri.points
    a_idx, b_idx = np.nonzero(kn.tri.mask)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["i", "x", "xi", "k"])
        for i in range(kn.n + 1):
            vals = kn.k[i, a_idx, b_idx]
            for xa, xb, kv in zip(x[a_idx], x[b_idx], vals):
                wr.writerow([i + 1, f"{xa:.17g}", f"{xb:.17g}", f"{kv:.17g}"])


def write_kernels_json(kn: KernelsN, path, params_hash: str, residual: dict | None,
                       extra: dict | None = None) -> None:
    """JSON sidecar for a kernel CSV."""
    meta = {"n": kn.n, "m": kn.m, "params_hash": params_hash, "residual": residual}
    meta.update(kn.meta)
    if extra:
        meta.update(extra)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
