"""Method-of-lines simulation of the n+1 plant.

    u^i_t + lambda_i u^i_x = (1/n) sum_j sigma_ij u^j + W_i v
    v_t - mu v_x = (1/n) sum_j theta_j u^j
    u^i(t, 0) = q_i v(t, 0),   v(t, 1) = U(t)

Space is discretized with first-order upwind differences (backward for the
rightward u^i, forward for the leftward v) and time with classical RK4 at a
fixed step. The boundary nodes u^i(0) and v(1) are algebraic: they are
rebuilt from the interior state at every stage. Under state feedback the
v(1) node enters its own quadrature, which is resolved in closed form.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .grids import Grid1D, StateN, norm_E, trapz
from .kernels import KernelsN
from .params import ContinuumParams, ParamsN, sample_params

__all__ = [
    "SimulationError",
    "Controller",
    "Trajectory",
    "rhs",
    "feedback",
    "feedback_row",
    "default_dt",
    "simulate",
    "simulate_continuum",
    "transport_oracle",
    "travel_time",
    "example_initial_state",
    "write_trajectory_csv",
    "write_snapshots_csv",
    "write_trajectory_meta",
    "CFL",
    "BLOWUP_NORM",
]

log = logging.getLogger(__name__)

CFL = 0.5
BLOWUP_NORM = 1e12


class SimulationError(ValueError):
    """Invalid simulation setup."""


# --- controllers ---------------------------------------------------------------------


@dataclass(frozen=True)
class Controller:
    """Boundary input: open loop U(t), or linear state feedback with gains k^i(1, xi).

    ``gains`` is an (n+1, m) array on the simulation grid.
    """

    tag: str
    u_of_t: Optional[Callable] = None
    gains: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.u_of_t is None) == (self.gains is None):
            raise SimulationError("a controller is either open-loop or a gain, not both/neither")

    @property
    def is_feedback(self) -> bool:
        return self.gains is not None

    @classmethod
    def open_loop(cls, u_of_t: Callable | float = 0.0, tag: str = "open-loop") -> "Controller":
        if not callable(u_of_t):
            value = float(u_of_t)

            def u_of_t(t, _v=value):
                return _v

        return cls(tag=tag, u_of_t=u_of_t)

    @classmethod
    def from_gains(cls, gains, tag: str = "gain") -> "Controller":
        return cls(tag=tag, gains=np.asarray(gains, dtype=float))

    @classmethod
    def from_kernels(cls, kn: KernelsN, g: Grid1D, tag: str | None = None) -> "Controller":
        """Gain controller from the x = 1 row of ``kn``, resampled onto ``g`` if needed."""
        return cls(tag=tag or kn.meta.get("source", "gain"), gains=feedback_row(kn, g))


def feedback_row(kn: KernelsN, g: Grid1D) -> np.ndarray:
    """k^i(1, xi) on the points of ``g`` (linear interpolation when grids differ)."""
    row = kn.boundary_row()
    if kn.m == g.m:
        return np.array(row)
    src = kn.tri.points
    return np.stack([np.interp(g.points, src, r) for r in row])


def feedback(kn: KernelsN, s: StateN, g: Grid1D) -> float:
    """U = int_0^1 (1/n) sum_i k^i(1, xi) u^i(xi) + k^{n+1}(1, xi) v(xi) d xi."""
    if kn.m != g.m or s.m != g.m:
        raise ValueError(f"grid mismatch: kernels m={kn.m}, state m={s.m}, grid m={g.m}")
    if kn.n != s.n:
        raise ValueError(f"kernels have n={kn.n} but state has n={s.n}")
    row = kn.boundary_row()
    return _quad_feedback(row, s.u, s.v, g.h)


def _quad_feedback(row, u, v, h) -> float:
    integrand = np.mean(row[:-1] * u, axis=0) + row[-1] * v
    return float(trapz(integrand, h))


# --- semi-discrete right-hand side -----------------------------------------------------


class _Plant:
    """Parameters tabulated on the simulation grid."""

    def __init__(self, pn: ParamsN, g: Grid1D):
        tab = pn.tabulate(g.points)
        self.n = pn.n
        self.m = g.m
        self.h = g.h
        self.lam = tab["lam"]
        self.mu = tab["mu"]
        self.sigma_n = tab["sigma"] / pn.n
        self.w = tab["w"]
        self.theta_n = tab["theta"] / pn.n
        self.q = tab["q"]

    def apply_boundaries(self, u, v, U):
        u[:, 0] = self.q * v[0]
        v[-1] = U

    def deriv(self, u, v):
        """Time derivative for a state whose boundary nodes are already set."""
        du = np.zeros_like(u)
        dv = np.zeros_like(v)
        coupling = np.einsum("ijx,jx->ix", self.sigma_n, u)
        du[:, 1:] = (-self.lam[:, 1:] * (u[:, 1:] - u[:, :-1]) / self.h
                     + coupling[:, 1:] + self.w[:, 1:] * v[None, 1:])
        dv[:-1] = (self.mu[:-1] * (v[1:] - v[:-1]) / self.h
                   + np.einsum("jx,jx->x", self.theta_n[:, :-1], u[:, :-1]))
        # keep u^i(0) = q_i v(0) along the flow
        du[:, 0] = self.q * dv[0]
        return du, dv


def rhs(pn: ParamsN, s: StateN, g: Grid1D, boundary_v1: float) -> StateN:
    """Upwind semi-discretization evaluated at ``s`` with v(t, 1) = ``boundary_v1``.

    The inflow u^i(0) = q_i v(0) and v(1) = U are imposed before differencing.
    """
    if s.m != g.m or s.n != pn.n:
        raise ValueError(f"state (n={s.n}, m={s.m}) does not match params n={pn.n}, grid m={g.m}")
    plant = _Plant(pn, g)
    u = np.array(s.u)
    v = np.array(s.v)
    plant.apply_boundaries(u, v, boundary_v1)
    du, dv = plant.deriv(u, v)
    return StateN(du, dv)


# --- trajectories ------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Saved samples of a simulation run.

    ``u`` has shape (T, n, m), ``v`` (T, m); ``controls`` and ``norms`` (T,).
    """

    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    controls: np.ndarray
    norms: np.ndarray
    grid: Grid1D
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.times.size

    @property
    def n(self) -> int:
        return self.u.shape[1]

    def state(self, j: int) -> StateN:
        return StateN(self.u[j], self.v[j])

    @property
    def states(self) -> list:
        return [self.state(j) for j in range(len(self))]

    @property
    def blew_up(self) -> bool:
        return bool(self.meta.get("blowup", False))

    def norm_at(self, t: float) -> float:
        j = int(np.argmin(np.abs(self.times - t)))
        return float(self.norms[j])


def default_dt(pn: ParamsN, g: Grid1D, cfl: float = CFL) -> float:
    return cfl * g.h / pn.max_speed(g)


def _resolve_control(ctrl: Controller, plant: _Plant, u, v, t) -> float:
    if not ctrl.is_feedback:
        return float(ctrl.u_of_t(t))
    row = ctrl.gains
    h = plant.h
    # U = A + (h/2) k^{n+1}(1, 1) U with A the quadrature without the v(1) node
    v_end = v[-1]
    v[-1] = 0.0
    A = _quad_feedback(row, u, v, h)
    v[-1] = v_end
    denom = 1.0 - 0.5 * h * row[-1, -1]
    if abs(denom) < 1e-12:
        raise SimulationError("feedback is ill-posed: 1 - (h/2) k^{n+1}(1,1) vanishes")
    return A / denom


def simulate(pn: ParamsN, ctrl: Controller, ic: StateN, t_end: float, g: Grid1D,
             dt: float | None = None, save_stride: int = 1, cfl: float = CFL,
             parallel: bool = False) -> Trajectory:
    """Integrate the closed/open loop with RK4 from ``ic`` up to ``t_end``.

    The step is shortened so that t_end is hit exactly. Runs stop early when the
    E-norm exceeds BLOWUP_NORM; the partial trajectory is returned with
    ``meta["blowup"] = True``. ``parallel`` is accepted for interface
    compatibility; the update is vectorized and always deterministic.
    """
    if t_end <= 0:
        raise SimulationError(f"t_end must be positive, got {t_end}")
    if ic.n != pn.n or ic.m != g.m:
        raise SimulationError(f"initial state (n={ic.n}, m={ic.m}) does not match "
                              f"params n={pn.n}, grid m={g.m}")
    if ctrl.is_feedback and ctrl.gains.shape != (pn.n + 1, g.m):
        raise SimulationError(f"gain shape {ctrl.gains.shape} != {(pn.n + 1, g.m)}")
    dt_max = cfl * g.h / pn.max_speed(g)
    if dt is None:
        dt = dt_max
    if dt <= 0 or dt > dt_max * (1 + 1e-12):
        raise SimulationError(f"dt={dt:.6g} violates the CFL bound {dt_max:.6g} (CFL={cfl})")
    if save_stride < 1:
        raise SimulationError("save_stride must be >= 1")
    steps = int(math.ceil(t_end / dt - 1e-9))
    dt = t_end / steps

    plant = _Plant(pn, g)
    u = np.array(ic.u, dtype=float)
    v = np.array(ic.v, dtype=float)

    def stage(uu, vv, t):
        U = _resolve_control(ctrl, plant, uu, vv, t)
        plant.apply_boundaries(uu, vv, U)
        return plant.deriv(uu, vv)

    U0 = _resolve_control(ctrl, plant, u, v, 0.0)
    plant.apply_boundaries(u, v, U0)

    times, us, vs, controls, norms = [], [], [], [], []

    def record(t, U):
        times.append(t)
        us.append(u.copy())
        vs.append(v.copy())
        controls.append(U)
        norms.append(norm_E(StateN(u, v), g))

    record(0.0, U0)
    blowup = False
    t = 0.0
    for step in range(1, steps + 1):
        k1u, k1v = stage(u, v, t)
        u2, v2 = u + 0.5 * dt * k1u, v + 0.5 * dt * k1v
        k2u, k2v = stage(u2, v2, t + 0.5 * dt)
        u3, v3 = u + 0.5 * dt * k2u, v + 0.5 * dt * k2v
        k3u, k3v = stage(u3, v3, t + 0.5 * dt)
        u4, v4 = u + dt * k3u, v + dt * k3v
        k4u, k4v = stage(u4, v4, t + dt)
        u = u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
        v = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t = step * dt
        U = _resolve_control(ctrl, plant, u, v, t)
        plant.apply_boundaries(u, v, U)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            blowup = True
            log.warning("non-finite state at t=%.4g", t)
            break
        nrm = math.sqrt(max(float(trapz(np.mean(u * u, axis=0) + v * v, g.h)), 0.0))
        if step % save_stride == 0 or step == steps or nrm > BLOWUP_NORM:
            record(t, U)
        if nrm > BLOWUP_NORM:
            blowup = True
            log.info("blow-up detected at t=%.4g (norm %.3g)", t, nrm)
            break

    meta = {
        "n": pn.n, "m": g.m, "dt": dt, "controller": ctrl.tag, "params_hash": pn.digest(),
        "t_end": t_end, "save_stride": save_stride, "blowup": blowup,
    }
    return Trajectory(
        times=np.array(times), u=np.array(us), v=np.array(vs), controls=np.array(controls),
        norms=np.array(norms), grid=g, meta=meta,
    )


def example_initial_state(pn: ParamsN, g: Grid1D) -> StateN:
    """u_0^i(x) = q_i and v_0(x) = 1."""
    return StateN(np.repeat(pn.q[:, None], g.m, axis=1), np.ones(g.m))


def simulate_continuum(pc: ContinuumParams, n_y: int, ctrl: Controller, u0: Callable,
                       v0: Callable, t_end: float, g: Grid1D, dt: float | None = None,
                       save_stride: int = 1) -> Trajectory:
    """Proxy for the continuum system: the n_y-channel sample with u_0^i(x) = u_0(x, i/n_y)."""
    pn = sample_params(pc, n_y, g)
    ys = np.arange(1, n_y + 1) / n_y
    x = g.points
    u_init = np.broadcast_to(u0(x[None, :], ys[:, None]), (n_y, g.m))
    v_init = np.broadcast_to(v0(x), (g.m,))
    tr = simulate(pn, ctrl, StateN(u_init, v_init), t_end, g, dt=dt, save_stride=save_stride)
    tr.meta["continuum_proxy"] = True
    tr.meta["n_y"] = n_y
    return tr


# --- exact solution of pure transport --------------------------------------------------------


def _adaptive_trapezoid(f: Callable, a: float, b: float, tol: float = 1e-10,
                        max_level: int = 24) -> float:
    """Trapezoid rule with repeated interval halving until two levels agree."""
    if a == b:
        return 0.0
    n = 1
    est = 0.5 * (b - a) * (f(a) + f(b))
    for _ in range(max_level):
        n *= 2
        mids = a + (b - a) * (np.arange(1, n, 2) / n)
        new = 0.5 * est + (b - a) / n * float(np.sum(f(mids)))
        if abs(new - est) <= tol * max(1.0, abs(new)):
            return new
        est = new
    return est


def travel_time(speed: Callable, a: float, b: float, tol: float = 1e-10) -> float:
    """int_a^b d xi / speed(xi)."""
    return _adaptive_trapezoid(lambda s: 1.0 / np.asarray(speed(s), dtype=float), a, b, tol)


def transport_oracle(speed: Callable, inflow: Callable, ic: Callable, direction: str,
                     t: float, x: float, tol: float = 1e-10) -> float:
    """Exact solution of w_t + c(x) w_x = 0 (right) or w_t - c(x) w_x = 0 (left).

    ``inflow(t)`` is the boundary value at x = 0 (right) or x = 1 (left). The
    value either comes from the initial profile, traced back along the
    characteristic, or from the inflow delayed by the travel time.
    """
    if direction not in ("left", "right"):
        raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")
    if t == 0:
        return float(ic(x))
    if direction == "right":
        tau = travel_time(speed, 0.0, x, tol)
        if t > tau:
            return float(inflow(t - tau))
        # foot x0 < x with int_{x0}^{x} 1/c = t
        if t == tau:
            return float(ic(0.0))
        x0 = brentq(lambda s: travel_time(speed, s, x, tol) - t, 0.0, x, xtol=1e-14)
        return float(ic(x0))
    tau = travel_time(speed, x, 1.0, tol)
    if t > tau:
        return float(inflow(t - tau))
    if t == tau:
        return float(ic(1.0))
    x0 = brentq(lambda s: travel_time(speed, x, s, tol) - t, x, 1.0, xtol=1e-14)
    return float(ic(x0))


# --- export ----------------------------------------------------------------------------------


def write_trajectory_csv(tr: Trajectory, path) -> None:
    """Columns t, U, E_norm."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "U", "E_norm"])
        for t, U, e in zip(tr.times, tr.controls, tr.norms):
            wr.writerow([f"{t:.17g}", f"{U:.17g}", f"{e:.17g}"])


def write_snapshots_csv(tr: Trajectory, path, at_times) -> None:
    """Full-state rows (t, i, x, value); i = n+1 denotes v."""
    x = tr.grid.points
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "i", "x", "value"])
        for t_req in at_times:
            j = int(np.argmin(np.abs(tr.times - t_req)))
            t = tr.times[j]
            for i in range(tr.n):
                for xv, val in zip(x, tr.u[j, i]):
                    wr.writerow([f"{t:.17g}", i + 1, f"{xv:.17g}", f"{val:.17g}"])
            for xv, val in zip(x, tr.v[j]):
                wr.writerow([f"{t:.17g}", tr.n + 1, f"{xv:.17g}", f"{val:.17g}"])


def write_trajectory_meta(tr: Trajectory, path) -> None:
    with open(path, "w") as fh:
        json.dump(tr.meta, fh, indent=2, sort_keys=True, default=str)
