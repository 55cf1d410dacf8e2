"""Closed-loop diagnostics: Lyapunov functional, target state, decay fits,
control and solution comparisons, and sup-norm constants of the continuum data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .continuum import ContinuumKernel
from .grids import Grid1D, StateN, trapz
from .kernels import KernelsN
from .params import ContinuumParams, ParamsN
from .simulator import Trajectory

__all__ = [
    "LyapunovConfig",
    "DecayFit",
    "DecayFitError",
    "backstepping_beta",
    "lyapunov_V",
    "lyapunov_bounds",
    "default_lyapunov_config",
    "lyapunov_series",
    "decay_fit",
    "compare_controls",
    "compare_solutions",
    "continuum_constants",
    "traverse_time",
    "write_error_curve_csv",
]


@dataclass(frozen=True)
class LyapunovConfig:
    p: float
    delta1: float

    def __post_init__(self):
        if not (self.p > 0 and self.delta1 > 0):
            raise ValueError(f"p and delta1 must be positive, got p={self.p}, delta1={self.delta1}")


@dataclass(frozen=True)
class DecayFit:
    """||state(t)||_E ~ M ||state(0)||_E exp(-c t) fitted on ``window``."""

    M: float
    c: float
    window: tuple
    rms: float


class DecayFitError(ValueError):
    pass


def backstepping_beta(s: StateN, kn: KernelsN, g: Grid1D) -> np.ndarray:
    """beta(x) = v(x) - int_0^x (1/n) sum_i k^i(x, xi) u^i(xi) + k^{n+1}(x, xi) v(xi) d xi."""
    if kn.m != g.m or s.m != g.m:
        raise ValueError(f"grid mismatch: kernels m={kn.m}, state m={s.m}, grid m={g.m}")
    if kn.n != s.n:
        raise ValueError(f"kernels have n={kn.n} but state has n={s.n}")
    K = kn.k
    n = kn.n
    # F[a, b] = integrand on row a at xi_b (zero above the diagonal)
    F = np.einsum("iab,ib->ab", K[:n], s.u) / n + K[n] * s.v[None, :]
    F = np.where(kn.tri.mask, F, 0.0)
    idx = np.arange(g.m)
    integral = g.h * (F.sum(axis=1) - 0.5 * F[:, 0] - 0.5 * F[idx, idx])
    integral[0] = 0.0
    return s.v - integral


def lyapunov_V(alpha, beta, pn: ParamsN, cfg: LyapunovConfig, g: Grid1D) -> float:
    """V = int p e^{-delta1 x} (1/n) sum_i alpha_i^2 / lambda_i + int (1 + x) beta^2 / mu."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if alpha.shape != (pn.n, g.m) or beta.shape != (g.m,):
        raise ValueError(f"alpha {alpha.shape} / beta {beta.shape} do not match n={pn.n}, m={g.m}")
    x = g.points
    lam = pn.tabulate(x)["lam"]
    mu = np.broadcast_to(pn.mu(x), x.shape)
    first = cfg.p * np.exp(-cfg.delta1 * x) * np.mean(alpha**2 / lam, axis=0)
    second = (1 + x) * beta**2 / mu
    return float(trapz(first + second, g.h))


def lyapunov_bounds(pn: ParamsN, cfg: LyapunovConfig, g: Grid1D) -> tuple:
    """(m_V, M_V): extremes of the diagonal weight of V on the grid."""
    x = g.points
    tab = pn.tabulate(x)
    wa = cfg.p * np.exp(-cfg.delta1 * x)[None, :] / tab["lam"]
    wb = (1 + x) / tab["mu"]
    return float(min(wa.min(), wb.min())), float(max(wa.max(), wb.max()))


def default_lyapunov_config(pn: ParamsN, g: Grid1D | None = None) -> LyapunovConfig:
    """Weights built from grid sup-norms of the plant data.

    delta1 = 1 + M_lam M_sigma + M_lam M_W and
    p = 0.5 min(1 / ((1/n) sum q_i^2), 1 / (M_lam M_W)); terms whose
    denominator vanishes are skipped.
    """
    g = g or Grid1D(257)
    tab = pn.tabulate(g.points)
    M_lam = float(np.max(1.0 / tab["lam"]))
    M_sigma = float(np.max(np.sum(np.abs(tab["sigma"]), axis=1)) / pn.n)
    M_W = float(np.max(np.abs(tab["w"])))
    delta1 = 1.0 + M_lam * M_sigma + M_lam * M_W
    q_term = float(np.mean(tab["q"] ** 2))
    caps = [1.0 / q_term] if q_term > 0 else []
    if M_lam * M_W > 0:
        caps.append(1.0 / (M_lam * M_W))
    p = 0.5 * min(caps) if caps else 1.0
    return LyapunovConfig(p=p, delta1=delta1)


def lyapunov_series(tr: Trajectory, kn: KernelsN, pn: ParamsN,
                    cfg: LyapunovConfig | None = None) -> tuple:
    """V(t_j) and beta(t_j, 1) at every saved sample of ``tr``."""
    g = tr.grid
    cfg = cfg or default_lyapunov_config(pn, g)
    V = np.empty(len(tr))
    b1 = np.empty(len(tr))
    for j in range(len(tr)):
        s = tr.state(j)
        beta = backstepping_beta(s, kn, g)
        V[j] = lyapunov_V(s.u, beta, pn, cfg, g)
        b1[j] = beta[-1]
    return V, b1


def traverse_time(pn: ParamsN, g: Grid1D | None = None) -> float:
    """1/mean(mu) + 1/mean(lambda): time for the input to cross both directions."""
    g = g or Grid1D(257)
    tab = pn.tabulate(g.points)
    mu_bar = float(trapz(tab["mu"], g.h))
    lam_bar = float(np.mean(trapz(tab["lam"], g.h, axis=1)))
    return 1.0 / mu_bar + 1.0 / lam_bar


def decay_fit(tr: Trajectory, t_start: Optional[float] = None,
              pn: ParamsN | None = None) -> DecayFit:
    """Least-squares fit of log ||state||_E against t on [t_start, end].

    With ``t_start=None`` the fit starts after one traverse time (taken from
    ``pn`` if given, else 2).
    """
    if t_start is None:
        t_start = traverse_time(pn, tr.grid) if pn is not None else 2.0
    sel = tr.times >= t_start - 1e-12
    t = tr.times[sel]
    y = tr.norms[sel]
    if t.size < 4:
        raise DecayFitError(f"need at least 4 samples after t={t_start}, got {t.size}")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DecayFitError("norm samples must be strictly positive on the fit window")
    A = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    resid = np.log(y) - A @ coef
    return DecayFit(
        M=float(math.exp(coef[0]) / tr.norms[0]),
        c=float(-coef[1]),
        window=(float(t[0]), float(t[-1])),
        rms=float(np.sqrt(np.mean(resid**2))),
    )


def _check_times(a: Trajectory, b: Trajectory) -> None:
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        raise ValueError(f"time grids differ ({a.times.size} vs {b.times.size} samples)")


def compare_controls(a: Trajectory, b: Trajectory) -> tuple:
    """(sup_t |U_a - U_b|, L2 distance over the common window)."""
    _check_times(a, b)
    d = a.controls - b.controls
    l2 = math.sqrt(float(np.trapezoid(d**2, a.times))) if a.times.size > 1 else 0.0
    return float(np.max(np.abs(d))), l2


def compare_solutions(tr_n: Trajectory, tr_c: Trajectory, n: int) -> np.ndarray:
    """e(t) = ||(u, v) - (cell means of the proxy, v_proxy)||_E at each saved time."""
    n_y = tr_c.n
    if tr_n.n != n:
        raise ValueError(f"trajectory has n={tr_n.n}, expected {n}")
    if n_y % n:
        raise ValueError(f"proxy resolution n_y={n_y} is not a multiple of n={n}")
    _check_times(tr_n, tr_c)
    if tr_n.grid.m != tr_c.grid.m:
        raise ValueError("trajectories use different spatial grids")
    r = n_y // n
    T, _, m = tr_c.u.shape
    u_tilde = tr_c.u.reshape(T, n, r, m).mean(axis=2)
    du = tr_n.u - u_tilde
    dv = tr_n.v - tr_c.v
    integrand = np.mean(du**2, axis=1) + dv**2
    return np.sqrt(np.maximum(trapz(integrand, tr_n.grid.h, axis=1), 0.0))


def continuum_constants(pc: ContinuumParams, kc: ContinuumKernel | None = None,
                        m: int = 65, n_y: int = 65) -> dict:
    """Grid sup-norm estimates of the continuum bounds.

    The target-system and inverse-kernel bounds (kappa, c, l) are not
    computed and reported as None.
    """
    x = np.linspace(0.0, 1.0, m)
    y = np.linspace(0.0, 1.0, n_y)
    X, Y = np.meshgrid(x, y, indexing="ij")
    lam = np.broadcast_to(pc.lam(X, Y), X.shape)
    W = np.broadcast_to(pc.w(X, Y), X.shape)
    sig = np.broadcast_to(pc.sigma(x[:, None, None], y[None, :, None], y[None, None, :]),
                          (m, n_y, n_y))
    out = {
        "M_sigma": float(np.max(np.abs(sig))),
        "M_W": float(np.max(np.abs(W))),
        "M_lambda": float(np.max(1.0 / lam)),
        "m_lambda": float(np.max(lam)),
        "M_k": None,
        "M_kappa": None,
        "M_c": None,
        "M_l": None,
    }
    if kc is not None:
        a, b = np.nonzero(np.tri(m, dtype=bool))
        xa, xb = x[a], x[b]
        kk = np.broadcast_to(kc.k(xa[:, None], xb[:, None], y[None, :]), (a.size, n_y))
        kb = np.broadcast_to(kc.kbar(xa, xb), xa.shape)
        out["M_k"] = float(max(np.max(np.abs(kk)), np.max(np.abs(kb))))
    return out


def write_error_curve_csv(times, e, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "e"])
        for t, ev in zip(times, e):
            wr.writerow([f"{t:.17g}", f"{ev:.17g}"])
