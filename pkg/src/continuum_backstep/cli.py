"""Command-line front end.

    continuum-backstep kernels      exact / continuum / sampled kernels -> CSV + residual JSON
    continuum-backstep simulate     closed or open loop runs -> trajectory CSV + meta JSON (+ SVG)
    continuum-backstep convergence  kernel approximation error and timings over a list of n
    continuum-backstep reproduce    figure bundles fig2..fig7 -> CSV + SVG + manifest

Every command accepts ``--config path.json`` whose keys are the flag names
with dashes replaced by underscores (``t_end``, ``n_list``, ...). Flags given
on the command line override the file. Each output directory receives a
``config.json`` that reproduces the run and a ``manifest.json`` listing the
files written.

Exit codes: 0 success (an unstable run is still a success and is flagged in
its meta file), 2 usage error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .analysis import compare_controls
from .continuum import (
    continuum_residual,
    example_kernel,
    kernel_delta,
    sample_gains,
    sample_kernel,
    solve_continuum_kernels,
)
from .grids import Grid1D, TriGrid
from .kernels import (
    KernelSolverError,
    kernel_residual,
    solve_exact_kernels,
    write_kernels_csv,
    write_kernels_json,
)
from .params import (
    EXAMPLE_NAME,
    ParameterError,
    example_params_continuum,
    example_params_n,
    get_params,
    interpolate_params,
    lift_params,
    param_error,
)
from .simulator import (
    Controller,
    SimulationError,
    example_initial_state,
    simulate,
    write_snapshots_csv,
    write_trajectory_csv,
    write_trajectory_meta,
)
from .svg import line_plot

FIGURES = ("fig2", "fig3", "fig4", "fig5", "fig6", "fig7")

FORMATS_HELP = """\
CSV formats (floats use 17 significant digits):
  kernels_*.csv       i, x, xi, k          (i = n+1 is the v-kernel; lower triangle only)
  trajectory_*.csv    t, U, E_norm
  snapshots_*.csv     t, i, x, value       (i = n+1 is v)
  convergence.csv     n, delta_aggregate, delta_aggregate_u, delta_aggregate_e, delta_v
  timings.csv         n, t_exact_s, t_sampled_s (wall clock, not reproducible)
  param_error.csv     n, lam, sigma, theta, w, q
  fig*_controls.csv   t, one U column per run
  fig*_un.csv         t, one max_x |u^n(t, x)| column per n
See FORMATS.md for details."""


class UsageError(Exception):
    """Invalid configuration; maps to exit code 2."""


def _f(v) -> str:
    return f"{float(v):.17g}"


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([c if isinstance(c, (int, str)) else _f(c) for c in row])


# --- parser ----------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with flag values (keys use underscores)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--parallel", action="store_true",
                   help="allow multi-threaded execution (default: deterministic single thread)")


def _params_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", default=EXAMPLE_NAME,
                   help=f"'{EXAMPLE_NAME}' or a JSON parameter file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="continuum-backstep",
        description="Backstepping kernels and closed-loop simulation for n+1 hyperbolic systems.",
        epilog=FORMATS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    kw = dict(epilog=FORMATS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)

    p = sub.add_parser("kernels", help="compute gain kernels", **kw)
    _common(p)
    _params_flag(p)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--m", type=int, default=257, help="kernel grid points per axis")
    p.add_argument("--mode", choices=("exact", "continuum", "sampled"), default="exact")
    p.add_argument("--n-y", type=int, default=64,
                   help="y resolution of the numeric continuum solve (mode continuum)")

    p = sub.add_parser("simulate", help="simulate closed/open loop", **kw)
    _common(p)
    _params_flag(p)
    p.add_argument("--n", type=int, nargs="+", default=[2, 3, 4, 5, 6])
    p.add_argument("--m", type=int, default=256, help="simulation grid points")
    p.add_argument("--t-end", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=None, help="time step (default: CFL 0.5)")
    p.add_argument("--save-stride", type=int, default=4)
    p.add_argument("--controller", choices=("exact", "sampled", "open"), default="sampled")
    p.add_argument("--u-open", type=float, default=0.0, help="constant input for --controller open")
    p.add_argument("--kernel-m", type=int, default=None,
                   help="grid for exact kernels (default: the simulation grid)")
    p.add_argument("--n-y", type=int, default=64)
    p.add_argument("--snapshots", type=float, nargs="*", default=[],
                   help="times at which to dump the full state")
    p.add_argument("--svg", action="store_true", help="also write SVG plots")

    p = sub.add_parser("convergence", help="kernel approximation error vs n", **kw)
    _common(p)
    _params_flag(p)
    p.add_argument("--n-list", type=int, nargs="*", default=list(range(2, 17)))
    p.add_argument("--m", type=int, default=257)
    p.add_argument("--svg", action="store_true")

    p = sub.add_parser("reproduce", help="regenerate a figure bundle", **kw)
    _common(p)
    p.add_argument("figure", nargs="?", default=None, help="one of " + ", ".join(FIGURES))
    p.add_argument("--m", type=int, default=256, help="simulation grid points")
    p.add_argument("--kernel-m", type=int, default=257, help="kernel grid points (fig5)")
    p.add_argument("--t-end", type=float, default=10.0)
    p.add_argument("--save-stride", type=int, default=4)
    return parser


_META_KEYS = {"config", "command", "func"}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config file must contain a JSON object")
        if cfg.get("command", args.command) != args.command:
            parser.error(f"config is for '{cfg['command']}', not '{args.command}'")
        cfg.pop("command", None)
        allowed = set(vars(args)) - _META_KEYS
        unknown = sorted(set(cfg) - allowed)
        if unknown:
            parser.error(f"unknown config keys for '{args.command}': {', '.join(unknown)}")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    try:
        _validate(args)
    except UsageError as exc:
        parser.error(str(exc))
    return args


def _validate(a: argparse.Namespace) -> None:
    def pos_int(name, v, lo=1):
        if not isinstance(v, int) or isinstance(v, bool) or v < lo:
            raise UsageError(f"{name} must be an integer >= {lo}, got {v!r}")

    if a.command in ("kernels", "simulate"):
        for n in ([a.n] if a.command == "kernels" else a.n):
            pos_int("n", n)
        if a.command == "simulate" and not a.n:
            raise UsageError("--n needs at least one value")
    if a.command == "convergence":
        if not a.n_list:
            raise UsageError("--n-list is empty")
        for n in a.n_list:
            pos_int("n", n)
    if a.command == "reproduce" and a.figure not in FIGURES:
        raise UsageError(f"unknown figure '{a.figure}', choose from {', '.join(FIGURES)}")
    pos_int("m", a.m, 3)
    for key in ("kernel_m", "n_y", "save_stride"):
        if getattr(a, key, None) is not None:
            pos_int(key, getattr(a, key), 3 if key == "kernel_m" else 1)
    for key in ("t_end", "dt"):
        v = getattr(a, key, None)
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise UsageError(f"{key} must be positive, got {v!r}")
    if getattr(a, "params", EXAMPLE_NAME) != EXAMPLE_NAME and not os.path.isfile(a.params):
        raise UsageError(f"params must be '{EXAMPLE_NAME}' or an existing file, got {a.params!r}")
    if a.command == "convergence" and a.params != EXAMPLE_NAME:
        raise UsageError("convergence needs a parameter family; only "
                         f"'{EXAMPLE_NAME}' defines one")


def run_config(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in _META_KEYS}
    cfg["command"] = args.command
    return cfg


# --- helpers -----------------------------------------------------------------------------


def _continuum_kernel(params: str, pn, n_y: int, m: int):
    """Closed form for the example, otherwise a numeric continuum solve."""
    if params == EXAMPLE_NAME:
        return example_kernel()
    return solve_continuum_kernels(interpolate_params(pn), n_y=n_y, m=m)


def _gains(args, pn, g: Grid1D, n: int):
    if args.controller == "exact":
        kn = solve_exact_kernels(pn, m=args.kernel_m or g.m)
        return Controller.from_kernels(kn, g, tag="exact")
    if args.controller == "sampled":
        kc = _continuum_kernel(args.params, pn, args.n_y, args.kernel_m or 257)
        return Controller.from_gains(sample_gains(kc, n, g), tag="sampled")
    return Controller.open_loop(args.u_open, tag="open-loop")


def _finish(out: str, args, files: list) -> None:
    _write_json(os.path.join(out, "config.json"), run_config(args))
    _write_json(os.path.join(out, "manifest.json"), {
        "command": args.command,
        "config": run_config(args),
        "files": sorted(files),
        "version": __version__,
    })


def _is_unstable(tr) -> bool:
    return bool(tr.blew_up or tr.norms[-1] > tr.norms[0])


# --- commands ------------------------------------------------------------------------------


def cmd_kernels(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    pn = get_params(args.params, args.n)
    tri = TriGrid(args.m)
    extra = {"mode": args.mode, "params": args.params}
    if args.mode == "exact":
        kn = solve_exact_kernels(pn, m=args.m)
    else:
        if args.mode == "sampled":
            kc = _continuum_kernel(args.params, pn, args.n_y, args.m)
            pc = example_params_continuum() if args.params == EXAMPLE_NAME else None
        else:
            pc = (example_params_continuum() if args.params == EXAMPLE_NAME
                  else interpolate_params(pn))
            kc = solve_continuum_kernels(pc, n_y=args.n_y, m=args.m)
        kn = sample_kernel(kc, args.n, tri)
        extra["continuum_provenance"] = kc.provenance
        if pc is not None:
            extra["continuum_residual"] = asdict(continuum_residual(kc, pc))
    stem = f"kernels_n{args.n}_{args.mode}"
    write_kernels_csv(kn, os.path.join(args.out, stem + ".csv"))
    write_kernels_json(kn, os.path.join(args.out, stem + ".json"), pn.digest(),
                       asdict(kernel_residual(kn, pn)), extra)
    _finish(args.out, args, [stem + ".csv", stem + ".json"])
    return 0


def cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    g = Grid1D(args.m)
    files = []
    runs = {}
    for n in args.n:
        pn = get_params(args.params, n)
        ctrl = _gains(args, pn, g, n)
        tr = simulate(pn, ctrl, example_initial_state(pn, g), args.t_end, g, dt=args.dt,
                      save_stride=args.save_stride, parallel=args.parallel)
        tr.meta["unstable"] = _is_unstable(tr)
        if tr.meta["unstable"]:
            print(f"n={n}: unstable (E-norm {tr.norms[0]:.3g} -> {tr.norms[-1]:.3g})",
                  file=sys.stderr)
        stem = f"trajectory_n{n}_{ctrl.tag}"
        write_trajectory_csv(tr, os.path.join(args.out, stem + ".csv"))
        write_trajectory_meta(tr, os.path.join(args.out, stem + ".json"))
        files += [stem + ".csv", stem + ".json"]
        if args.snapshots:
            name = f"snapshots_n{n}_{ctrl.tag}.csv"
            write_snapshots_csv(tr, os.path.join(args.out, name), args.snapshots)
            files.append(name)
        runs[n] = tr
    if args.svg:
        tag = args.controller
        line_plot([(f"n={n}", tr.times, tr.controls) for n, tr in runs.items()],
                  os.path.join(args.out, f"controls_{tag}.svg"), title="U(t)",
                  xlabel="t", ylabel="U")
        line_plot([(f"n={n}", tr.times, tr.norms) for n, tr in runs.items()],
                  os.path.join(args.out, f"norms_{tag}.svg"), title="state norm",
                  xlabel="t", ylabel="E-norm", logy=True)
        files += [f"controls_{tag}.svg", f"norms_{tag}.svg"]
    _finish(args.out, args, files)
    return 0


def convergence_rows(n_list, m: int):
    """(n, DeltaReport, t_exact, t_sampled) for each n of the example family."""
    tri = TriGrid(m)
    kc = example_kernel()
    out = []
    for n in n_list:
        pn = example_params_n(n)
        t0 = time.perf_counter()
        kn = solve_exact_kernels(pn, m=m)
        t_exact = time.perf_counter() - t0
        t0 = time.perf_counter()
        sample_gains(kc, n, tri.grid)
        t_sampled = time.perf_counter() - t0
        out.append((n, kernel_delta(kn, sample_kernel(kc, n, tri)), t_exact, t_sampled))
    return out


def _write_convergence(out: str, n_list, m: int, svg: bool, prefix: str = "") -> list:
    rows = convergence_rows(n_list, m)
    names = [prefix + "convergence.csv", prefix + "timings.csv", prefix + "param_error.csv"]
    _write_rows(os.path.join(out, names[0]),
                ["n", "delta_aggregate", "delta_aggregate_u", "delta_aggregate_e", "delta_v"],
                [(n, d.aggregate, d.aggregate_u, d.aggregate_e, d.v_channel)
                 for n, d, _, _ in rows])
    _write_rows(os.path.join(out, names[1]), ["n", "t_exact_s", "t_sampled_s"],
                [(n, te, ts) for n, _, te, ts in rows])
    pc = example_params_continuum()
    g = Grid1D(m)
    err = []
    for n in n_list:
        r = param_error(pc, lift_params(example_params_n(n)), g)
        err.append((n, r.lam, r.sigma, r.theta, r.w, r.q))
    _write_rows(os.path.join(out, names[2]), ["n", "lam", "sigma", "theta", "w", "q"], err)
    if svg:
        ns = [r[0] for r in rows]
        line_plot([("max |dk(1, xi)|", ns, [r[1].aggregate for r in rows])],
                  os.path.join(out, prefix + "convergence.svg"),
                  title="kernel approximation error", xlabel="n", ylabel="error", logy=True)
        line_plot([("exact", ns, [r[2] for r in rows]), ("sampled", ns, [r[3] for r in rows])],
                  os.path.join(out, prefix + "timings.svg"), title="wall time",
                  xlabel="n", ylabel="seconds")
        names += [prefix + "convergence.svg", prefix + "timings.svg"]
    return names


def cmd_convergence(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    files = _write_convergence(args.out, args.n_list, args.m, args.svg)
    _finish(args.out, args, files)
    return 0


def _run_example(n: int, g: Grid1D, t_end: float, stride: int, controller: str):
    pn = example_params_n(n)
    if controller == "exact":
        ctrl = Controller.from_kernels(solve_exact_kernels(pn, m=g.m), g, tag="exact")
    else:
        ctrl = Controller.from_gains(sample_gains(example_kernel(), n, g), tag="sampled")
    return simulate(pn, ctrl, example_initial_state(pn, g), t_end, g, save_stride=stride)


def _columns_csv(path, times, cols: dict) -> None:
    _write_rows(path, ["t"] + list(cols), zip(times, *cols.values()))


def cmd_reproduce(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    fig = args.figure
    g = Grid1D(args.m)
    files = []
    if fig == "fig5":
        files = _write_convergence(args.out, list(range(2, 41)), args.kernel_m, True,
                                   prefix="fig5_")
    elif fig in ("fig2", "fig4", "fig7"):
        ns = {"fig2": [2, 3, 4, 5, 6], "fig4": [6, 10, 15, 20], "fig7": [3, 5, 10, 20]}[fig]
        cols, series, dist = {}, [], []
        for n in ns:
            tr = _run_example(n, g, args.t_end, args.save_stride, "sampled")
            cols[f"U_n{n}"] = tr.controls
            series.append((f"n={n}", tr.times, tr.controls))
            if fig == "fig7":
                ex = _run_example(n, g, args.t_end, args.save_stride, "exact")
                cols[f"U_n{n}_exact"] = ex.controls
                series.append((f"n={n} exact", ex.times, ex.controls))
                dist.append((n, *compare_controls(ex, tr)))
        _columns_csv(os.path.join(args.out, f"{fig}_controls.csv"), tr.times, cols)
        line_plot(series, os.path.join(args.out, f"{fig}_controls.svg"), title="U(t)",
                  xlabel="t", ylabel="U")
        files = [f"{fig}_controls.csv", f"{fig}_controls.svg"]
        if fig == "fig7":
            _write_rows(os.path.join(args.out, "fig7_distance.csv"), ["n", "sup", "l2"], dist)
            files.append("fig7_distance.csv")
    else:
        ns = {"fig3": [2, 3, 4, 5], "fig6": [6, 10, 15, 20]}[fig]
        cols, series = {}, []
        for n in ns:
            tr = _run_example(n, g, args.t_end, args.save_stride, "sampled")
            un = np.max(np.abs(tr.u[:, n - 1, :]), axis=1)
            cols[f"max_un_n{n}"] = un
            series.append((f"n={n}", tr.times, un))
            name = f"{fig}_snapshots_n{n}.csv"
            at = np.arange(0.0, args.t_end + 1e-9, 0.5)
            write_snapshots_csv(tr, os.path.join(args.out, name), at)
            files.append(name)
        _columns_csv(os.path.join(args.out, f"{fig}_un.csv"), tr.times, cols)
        line_plot(series, os.path.join(args.out, f"{fig}_un.svg"), title="max_x |u^n(t, x)|",
                  xlabel="t", ylabel="|u^n|", logy=True)
        files += [f"{fig}_un.csv", f"{fig}_un.svg"]
    _finish(args.out, args, files)
    return 0


COMMANDS = {
    "kernels": cmd_kernels,
    "simulate": cmd_simulate,
    "convergence": cmd_convergence,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KernelSolverError, SimulationError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
