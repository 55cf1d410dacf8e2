"""Parameter data for the n+1 system and its continuum counterpart.

Fields are plain callables that broadcast over numpy arrays:

* ``ParamsN``: ``lam(x) -> (n, *x.shape)``, ``mu(x) -> x.shape``,
  ``sigma(x) -> (n, n, *x.shape)``, ``w``/``theta`` like ``lam``, ``q`` an
  (n,) array.
* ``ContinuumParams``: ``lam(x, y)``, ``w(x, y)``, ``theta(x, y)``,
  ``sigma(x, y, eta)``, ``q(y)``, ``mu(x)``.

Derivatives of the transport speeds are taken by central differences unless
explicit derivative callables are supplied.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grids import Grid1D, cell_index, trapz

__all__ = [
    "ParameterError",
    "ParamsN",
    "ContinuumParams",
    "StepParams",
    "TabulatedField",
    "sample_params",
    "lift_params",
    "example_params_n",
    "example_params_continuum",
    "interpolate_params",
    "lagrange_bump",
    "param_error",
    "ParamErrorReport",
    "load_params_json",
    "params_to_json",
    "get_params",
    "EXAMPLE_NAME",
]

EXAMPLE_NAME = "allkrs-example"
FD_STEP = 1e-6
EPS_SPEED = 1e-8


class ParameterError(ValueError):
    """Invalid parameter data (e.g. a non-positive transport speed)."""


def _central_diff(f: Callable, x, eps: float = FD_STEP):
    x = np.asarray(x, dtype=float)
    # one-sided at the ends of [0, 1] so fields defined only there still work
    lo = np.clip(x - eps, 0.0, 1.0)
    hi = np.clip(x + eps, 0.0, 1.0)
    return (np.asarray(f(hi)) - np.asarray(f(lo))) / (hi - lo)


def _const(value: float) -> Callable:
    def f(x):
        return np.full(np.shape(x), float(value))

    return f


@dataclass(frozen=True)
class ParamsN:
    """Coefficients of the n+1 system.

    Attributes:
        n: number of rightward channels.
        lam: speeds lambda_i(x), returns shape (n, *x.shape).
        mu: leftward speed mu(x).
        sigma: couplings sigma_{i,j}(x), returns shape (n, n, *x.shape).
        w: v -> u^i couplings W_i(x).
        theta: u^j -> v couplings theta_j(x).
        q: boundary reflections u^i(t,0) = q_i v(t,0).
        dlam, dmu: optional derivatives; central differences otherwise.
        name: label used in file headers and hashes.
    """

    n: int
    lam: Callable
    mu: Callable
    sigma: Callable
    w: Callable
    theta: Callable
    q: np.ndarray
    dlam: Optional[Callable] = None
    dmu: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"n must be a positive integer, got {self.n!r}")
        q = np.array(self.q, dtype=float).ravel()
        if q.shape != (self.n,):
            raise ParameterError(f"q must have length n={self.n}, got {q.shape}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def lam_x(self, x):
        if self.dlam is not None:
            return self.dlam(x)
        return _central_diff(self.lam, x)

    def mu_x(self, x):
        if self.dmu is not None:
            return self.dmu(x)
        return _central_diff(self.mu, x)

    def tabulate(self, x) -> dict:
        """All fields evaluated on the points ``x``."""
        x = np.asarray(x, dtype=float)
        return {
            "lam": np.broadcast_to(self.lam(x), (self.n,) + x.shape).astype(float),
            "dlam": np.broadcast_to(self.lam_x(x), (self.n,) + x.shape).astype(float),
            "mu": np.broadcast_to(self.mu(x), x.shape).astype(float),
            "dmu": np.broadcast_to(self.mu_x(x), x.shape).astype(float),
            "sigma": np.broadcast_to(self.sigma(x), (self.n, self.n) + x.shape).astype(float),
            "w": np.broadcast_to(self.w(x), (self.n,) + x.shape).astype(float),
            "theta": np.broadcast_to(self.theta(x), (self.n,) + x.shape).astype(float),
            "q": self.q.copy(),
        }

    def validate(self, g: Grid1D | None = None, eps: float = EPS_SPEED) -> None:
        """Check positivity and finiteness of the fields on a grid."""
        g = g or Grid1D(257)
        tab = self.tabulate(g.points)
        for key, arr in tab.items():
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"field {key} has non-finite values on the grid")
        bad = np.argwhere(tab["lam"] < eps)
        if bad.size:
            i, j = bad[0]
            raise ParameterError(
                f"lambda_{i + 1}(x={g.points[j]:.6g}) = {tab['lam'][i, j]:.6g} is not positive"
            )
        bad = np.flatnonzero(tab["mu"] < eps)
        if bad.size:
            j = bad[0]
            raise ParameterError(f"mu(x={g.points[j]:.6g}) = {tab['mu'][j]:.6g} is not positive")

    def max_speed(self, g: Grid1D) -> float:
        tab = self.tabulate(g.points)
        return float(max(tab["lam"].max(), tab["mu"].max()))

    def digest(self, m: int = 65) -> str:
        """Short hash of the tabulated fields, for output metadata."""
        tab = self.tabulate(np.linspace(0.0, 1.0, m))
        h = hashlib.sha256()
        h.update(str(self.n).encode())
        for key in sorted(tab):
            h.update(np.ascontiguousarray(tab[key]).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class ContinuumParams:
    """Coefficients of the continuum system, indexed by the ensemble variable y."""

    lam: Callable
    mu: Callable
    sigma: Callable
    w: Callable
    theta: Callable
    q: Callable
    dlam: Optional[Callable] = None
    dmu: Optional[Callable] = None
    name: str = "custom-continuum"

    def lam_x(self, x, y):
        if self.dlam is not None:
            return self.dlam(x, y)
        x = np.asarray(x, dtype=float)
        return _central_diff(lambda s: self.lam(s, y), x)

    def mu_x(self, x):
        if self.dmu is not None:
            return self.dmu(x)
        return _central_diff(self.mu, x)

    def validate(self, gx: Grid1D | None = None, gy: Grid1D | None = None,
                 eps: float = EPS_SPEED) -> None:
        gx = gx or Grid1D(65)
        gy = gy or Grid1D(65)
        X, Y = np.meshgrid(gx.points, gy.points, indexing="ij")
        lam = np.broadcast_to(self.lam(X, Y), X.shape)
        if not np.all(np.isfinite(lam)) or lam.min() < eps:
            a, b = np.unravel_index(np.argmin(lam), lam.shape)
            raise ParameterError(
                f"lambda(x={gx.points[a]:.6g}, y={gy.points[b]:.6g}) = {lam[a, b]:.6g} "
                "is not positive"
            )
        mu = np.broadcast_to(self.mu(gx.points), gx.points.shape)
        if not np.all(np.isfinite(mu)) or mu.min() < eps:
            j = int(np.argmin(mu))
            raise ParameterError(f"mu(x={gx.points[j]:.6g}) = {mu[j]:.6g} is not positive")


@dataclass(frozen=True)
class StepParams(ContinuumParams):
    """Continuum parameters piecewise constant on ((i-1)/n, i/n] in y and eta."""

    source: Optional[ParamsN] = field(default=None, compare=False)


class TabulatedField:
    """Scalar field on [0, 1] given by samples, linearly interpolated."""

    def __init__(self, x, values):
        self.x = np.asarray(x, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.x.ndim != 1 or self.x.shape != self.values.shape or self.x.size < 2:
            raise ParameterError("tabulated field needs matching 1-D x and values (>= 2 samples)")
        if np.any(np.diff(self.x) <= 0):
            raise ParameterError("tabulated field x must be strictly increasing")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.interp(x, self.x, self.values)

    def to_json(self) -> dict:
        return {"x": self.x.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, obj) -> "TabulatedField":
        if isinstance(obj, (int, float)):
            return cls([0.0, 1.0], [float(obj), float(obj)])
        try:
            return cls(obj["x"], obj["values"])
        except (KeyError, TypeError) as exc:
            raise ParameterError(f"malformed tabulated field: {obj!r}") from exc


def _stack(fields) -> Callable:
    fields = list(fields)

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.broadcast_to(fi(x), x.shape) for fi in fields])

    return f


def _stack2(fields) -> Callable:
    rows = [list(r) for r in fields]

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.stack([np.broadcast_to(fij(x), x.shape) for fij in r]) for r in rows])

    return f


# --- sampling and lifting ---------------------------------------------------


def sample_params(pc: ContinuumParams, n: int, g: Grid1D | None = None) -> ParamsN:
    """Discrete parameters lambda_i(x) = lambda(x, i/n), sigma_ij(x) = sigma(x, i/n, j/n), ..."""
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    ys = np.arange(1, n + 1) / n

    def _y_field(f):
        def g_(x):
            x = np.asarray(x, dtype=float)
            yy = ys.reshape((n,) + (1,) * x.ndim)
            return np.broadcast_to(f(x[None, ...], yy), (n,) + x.shape)

        return g_

    def sigma(x):
        x = np.asarray(x, dtype=float)
        yy = ys.reshape((n, 1) + (1,) * x.ndim)
        ee = ys.reshape((1, n) + (1,) * x.ndim)
        return np.broadcast_to(pc.sigma(x[None, None, ...], yy, ee), (n, n) + x.shape)

    dlam = None
    if pc.dlam is not None:
        dlam = _y_field(pc.dlam)
    pn = ParamsN(
        n=n,
        lam=_y_field(pc.lam),
        mu=pc.mu,
        sigma=sigma,
        w=_y_field(pc.w),
        theta=_y_field(pc.theta),
        q=np.broadcast_to(pc.q(ys), (n,)),
        dlam=dlam,
        dmu=pc.dmu,
        name=f"{pc.name}@n={n}",
    )
    pn.validate(g)
    return pn


def _pick(vals: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # vals: (n, N) channel values at flattened x; idx: (N,) channel per point
    return vals[idx, np.arange(idx.size)]


def lift_params(pn: ParamsN) -> StepParams:
    """Step-function extension in y (and eta) of discrete parameters."""
    n = pn.n

    def _lift_xy(f):
        def g_(x, y):
            x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
            shape = x.shape
            vals = np.asarray(f(x.ravel())).reshape(n, -1)
            return _pick(vals, cell_index(y.ravel(), n)).reshape(shape)

        return g_

    def sigma(x, y, eta):
        x, y, eta = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, y, eta)))
        shape = x.shape
        vals = np.asarray(pn.sigma(x.ravel())).reshape(n, n, -1)
        i = cell_index(y.ravel(), n)
        j = cell_index(eta.ravel(), n)
        return vals[i, j, np.arange(i.size)].reshape(shape)

    def q(y):
        return pn.q[cell_index(y, n)]

    return StepParams(
        lam=_lift_xy(pn.lam),
        mu=pn.mu,
        sigma=sigma,
        w=_lift_xy(pn.w),
        theta=_lift_xy(pn.theta),
        q=q,
        dlam=_lift_xy(pn.lam_x),
        dmu=pn.dmu,
        name=f"step({pn.name})",
        source=pn,
    )


# --- the worked example -------------------------------------------------------

_THETA_RATE = 35.0 / math.pi**2


def example_params_n(n: int) -> ParamsN:
    """The n+1 example: lambda_i = mu = 1 and separable couplings in i/n."""
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    s = np.arange(1, n + 1) / n
    c = s - 0.5

    def lam(x):
        x = np.asarray(x, dtype=float)
        return np.ones((n,) + x.shape)

    def dlam(x):
        x = np.asarray(x, dtype=float)
        return np.zeros((n,) + x.shape)

    # products are associated as in example_params_continuum, so sampling
    # the continuum at y = i/n reproduces these fields bit for bit
    def sigma(x):
        x = np.asarray(x, dtype=float)
        pad = (1,) * x.ndim
        return x**3 * (x + 1) * c.reshape((n, 1) + pad) * c.reshape((1, n) + pad)

    def w(x):
        x = np.asarray(x, dtype=float)
        return x * (x + 1) * np.exp(x) * c.reshape((n,) + (1,) * x.ndim)

    def theta(x):
        x = np.asarray(x, dtype=float)
        y = s.reshape((n,) + (1,) * x.ndim)
        return -70.0 * np.exp(_THETA_RATE * x) * y * (y - 1)

    return ParamsN(
        n=n,
        lam=lam,
        mu=_const(1.0),
        sigma=sigma,
        w=w,
        theta=theta,
        q=np.cos(2 * np.pi * s),
        dlam=dlam,
        dmu=_const(0.0),
        name=EXAMPLE_NAME,
    )


def example_params_continuum() -> ContinuumParams:
    """Continuous extension of the example in the ensemble variable y."""

    def lam(x, y):
        return np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def dlam(x, y):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def sigma(x, y, eta):
        x = np.asarray(x, dtype=float)
        return x**3 * (x + 1) * (np.asarray(y) - 0.5) * (np.asarray(eta) - 0.5)

    def w(x, y):
        x = np.asarray(x, dtype=float)
        return x * (x + 1) * np.exp(x) * (np.asarray(y) - 0.5)

    def theta(x, y):
        y = np.asarray(y, dtype=float)
        return -70.0 * np.exp(_THETA_RATE * np.asarray(x, dtype=float)) * y * (y - 1)

    def q(y):
        return np.cos(2 * np.pi * np.asarray(y, dtype=float))

    return ContinuumParams(
        lam=lam, mu=_const(1.0), sigma=sigma, w=w, theta=theta, q=q,
        dlam=dlam, dmu=_const(0.0), name=EXAMPLE_NAME,
    )


# --- interpolation in y ---------------------------------------------------------

MAX_INTERP_N = 12


def lagrange_bump(n: int, b: float = 0.0) -> Callable:
    """Basis p_i(y) with p_i(l/n) = delta_il, returned as y -> (n, *y.shape)."""
    nodes = np.arange(1, n + 1) / n

    def p(y):
        y = np.asarray(y, dtype=float)
        out = np.empty((n,) + y.shape)
        for i in range(n):
            term = np.ones(y.shape)
            for k in range(n):
                if k != i:
                    term = term * (nodes[k] - y) / (nodes[k] - nodes[i])
            out[i] = term + b * np.sin(n * np.pi * y)
        return out

    return p


def interpolate_params(pn: ParamsN, b: float = 0.0) -> ContinuumParams:
    """Smooth-in-y parameters agreeing with ``pn`` at y = i/n.

    Uses sum_i f_i(x) p_i(y) with a Lagrange basis plus b*sin(n*pi*y); the sine
    term vanishes at every match point. Only for n <= 12.
    """
    n = pn.n
    if n > MAX_INTERP_N:
        raise ParameterError(
            f"interpolate_params supports n <= {MAX_INTERP_N} (got n={n}); "
            "supply a ContinuumParams directly for larger systems"
        )
    p = lagrange_bump(n, b)

    def _mix(f):
        def g_(x, y):
            x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
            return np.einsum("i...,i...->...", f(x), p(y))

        return g_

    def sigma(x, y, eta):
        x, y, eta = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, y, eta)))
        return np.einsum("ij...,i...,j...->...", pn.sigma(x), p(y), p(eta))

    def q(y):
        y = np.asarray(y, dtype=float)
        return np.einsum("i,i...->...", pn.q, p(y))

    return ContinuumParams(
        lam=_mix(pn.lam), mu=pn.mu, sigma=sigma, w=_mix(pn.w), theta=_mix(pn.theta),
        q=q, dlam=_mix(pn.lam_x), dmu=pn.dmu, name=f"interp({pn.name}, b={b:g})",
    )


# --- approximation error of step parameters -------------------------------------


@dataclass(frozen=True)
class ParamErrorReport:
    """max_x L2-in-y distances between continuum and step parameters."""

    lam: float
    sigma: float
    theta: float
    w: float
    q: float

    def as_dict(self) -> dict:
        return {"lam": self.lam, "sigma": self.sigma, "theta": self.theta,
                "w": self.w, "q": self.q}

    def max(self) -> float:
        return max(self.as_dict().values())


def _cell_nodes(n: int, per_cell: int):
    """Cell-aligned trapezoid nodes in y and the owning cell of each node."""
    s = np.linspace(0.0, 1.0, per_cell)
    y = (np.arange(n)[:, None] + s[None, :]) / n
    return y, np.repeat(np.arange(n)[:, None], per_cell, axis=1)


def param_error(pc: ContinuumParams, sp: StepParams, g: Grid1D,
                per_cell: int = 9) -> ParamErrorReport:
    """Distances between ``pc`` and the step parameters ``sp`` in L2 over y.

    The y integrals are split on the step cells, so the discontinuities of
    ``sp`` sit on quadrature cell edges and are integrated exactly. The step
    function's value on each cell is read at the cell midpoint.
    """
    if sp.source is None:
        raise ParameterError("param_error needs StepParams produced by lift_params")
    n = sp.source.n
    y, _ = _cell_nodes(n, per_cell)
    hy = 1.0 / (n * (per_cell - 1))
    mid = (np.arange(n) + 0.5) / n
    x = g.points

    def l2_y(diff):
        # diff: (len(x), n, per_cell); integrate each cell, sum cells
        return np.sqrt(np.sum(trapz(diff**2, hy, axis=-1), axis=-1))

    def field_err(fc, fs):
        X = x[:, None, None]
        vc = np.broadcast_to(fc(X, y[None]), (x.size,) + y.shape)
        vs = np.broadcast_to(fs(x[:, None], mid[None, :]), (x.size, n))[:, :, None]
        return float(np.max(l2_y(vc - vs)))

    # sigma: double integral over (y, eta), cell by cell
    X = x[:, None, None, None, None]
    Y = y[None, :, :, None, None]
    E = y[None, None, None, :, :]
    sc = np.broadcast_to(pc.sigma(X, Y, E), (x.size,) + y.shape + y.shape)
    ss = np.broadcast_to(
        sp.sigma(x[:, None, None], mid[None, :, None], mid[None, None, :]), (x.size, n, n)
    )[:, :, None, :, None]
    d2 = (sc - ss) ** 2
    inner = trapz(d2, hy, axis=-1).sum(axis=-1)
    sig = float(np.max(np.sqrt(trapz(inner, hy, axis=-1).sum(axis=-1))))

    qc = np.asarray(pc.q(y))
    qs = np.asarray(sp.q(mid))[:, None]
    qerr = float(np.sqrt(np.sum(trapz((qc - qs) ** 2, hy, axis=-1))))
    return ParamErrorReport(
        lam=field_err(pc.lam, sp.lam),
        sigma=sig,
        theta=field_err(pc.theta, sp.theta),
        w=field_err(pc.w, sp.w),
        q=qerr,
    )


# --- JSON parameter files ----------------------------------------------------------


def load_params_json(obj) -> ParamsN:
    """Build ParamsN from the JSON parameter-file schema (dict or path)."""
    if not isinstance(obj, dict):
        with open(obj) as fh:
            obj = json.load(fh)
    try:
        n = int(obj["n"])
        mu = TabulatedField.from_json(obj["mu"])
        lam = [TabulatedField.from_json(f) for f in obj["lambda"]]
        sigma = [[TabulatedField.from_json(f) for f in row] for row in obj["sigma"]]
        w = [TabulatedField.from_json(f) for f in obj["w"]]
        theta = [TabulatedField.from_json(f) for f in obj["theta"]]
        q = [float(v) for v in obj["q"]]
    except KeyError as exc:
        raise ParameterError(f"parameter file is missing key {exc}") from exc
    if not (len(lam) == len(w) == len(theta) == len(q) == len(sigma) == n):
        raise ParameterError(f"parameter file lists do not all have length n={n}")
    if any(len(row) != n for row in sigma):
        raise ParameterError(f"sigma must be an {n}x{n} array of fields")
    pn = ParamsN(
        n=n, lam=_stack(lam), mu=mu, sigma=_stack2(sigma), w=_stack(w),
        theta=_stack(theta), q=np.array(q), name=str(obj.get("name", "file")),
    )
    pn.validate()
    return pn


def params_to_json(pn: ParamsN, m: int = 257) -> dict:
    """Tabulate ParamsN on m points in the JSON parameter-file schema."""
    x = np.linspace(0.0, 1.0, m)
    tab = pn.tabulate(x)

    def fld(vals):
        return {"x": x.tolist(), "values": np.asarray(vals).tolist()}

    return {
        "name": pn.name,
        "n": pn.n,
        "mu": fld(tab["mu"]),
        "lambda": [fld(v) for v in tab["lam"]],
        "sigma": [[fld(v) for v in row] for row in tab["sigma"]],
        "w": [fld(v) for v in tab["w"]],
        "theta": [fld(v) for v in tab["theta"]],
        "q": tab["q"].tolist(),
    }


def get_params(source: str, n: int) -> ParamsN:
    """Resolve a params source: the built-in example name or a JSON file path."""
    if source == EXAMPLE_NAME:
        return example_params_n(n)
    pn = load_params_json(source)
    if n is not None and pn.n != n:
        raise ParameterError(f"parameter file has n={pn.n}, requested n={n}")
    return pn
