"""Command-line entry points: ``sosm mms`` and ``sosm mix``.

Exit codes: 0 success, 1 a ``--check`` threshold failed, 2 config or usage
error, 3 Picard nonconvergence, 4 numerical failure. ``SOSM_THREADS`` caps
the number of worker processes used for independent MMS levels.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .cases import MixingConfig, run_mixing
from .errors import (ConfigError, DomainError, InvalidArgumentError, NonConvergenceError, SOSMError,
                     SolverError)
from .io import float_list, read_config, write_csv, write_vtk
from .verify import mms_case, rates, run_mms, write_rates_csv, write_records_csv

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_NUMERICAL = 0, 1, 2, 3, 4

# acceptance thresholds checked by ``sosm mms --check``
SLOPE_L2 = 1.8
SLOPE_H1 = 0.9
ITERATION_RANGE = (5, 10)


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def thread_cap():
    raw = os.environ.get("SOSM_THREADS", "1")
    try:
        val = int(raw)
    except ValueError as exc:
        raise ConfigError(f"SOSM_THREADS must be a positive integer, got {raw!r}") from exc
    if val < 1:
        raise ConfigError(f"SOSM_THREADS must be a positive integer, got {raw!r}")
    return val


def _levels(text):
    try:
        vals = [int(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from exc
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("levels must be positive integers")
    return vals


def build_parser():
    p = _Parser(prog="sosm", description="Stokes-Onsager-Stefan-Maxwell mixed finite element solver")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    m = sub.add_parser("mms", help="manufactured-solution convergence study")
    m.add_argument("--family", type=int, choices=(1, 2), default=1)
    m.add_argument("--levels", type=_levels, default=[4, 8, 16, 32])
    m.add_argument("--gamma", type=float, default=0.1)
    m.add_argument("--eps", type=float, default=1e-7)
    m.add_argument("--theta", type=float, default=1.0)
    m.add_argument("--max-iter", type=int, default=50)
    m.add_argument("--diagonal", choices=("right", "left"), default="right")
    m.add_argument("--check", action="store_true", help="exit 1 if a convergence threshold fails")
    m.add_argument("--no-vtk", action="store_true")
    m.add_argument("--out", type=Path, required=True)

    x = sub.add_parser("mix", help="benzene-cyclohexane mixing case")
    x.add_argument("--config", type=Path, required=True)
    x.add_argument("--out", type=Path, required=True)
    x.add_argument("--max-iter", type=int, default=None)
    return p


# ---------------------------------------------------------------- mms


def _mms_level(args):
    n, family, gamma, eps, theta, max_iter, diagonal = args
    run = run_mms(n, family=family, case=mms_case(gamma_aug=gamma), tol=eps, relaxation=theta,
                  max_iter=max_iter, diagonal=diagonal)
    return run


def check_rates(table, records, family):
    """Threshold failures of a rate table as human-readable strings."""
    failures = []
    for name, slope in table.slopes.items():
        base = name.split("_")[0] if name.startswith(("mu_", "vel_", "d_")) else name
        need = {"mu": SLOPE_L2, "p": SLOPE_L2, "tau": SLOPE_L2, "vel": SLOPE_H1, "d": SLOPE_H1}.get(base)
        if need is not None and not slope >= need:
            failures.append(f"slope of {name} is {slope:.3f} < {need}")
    if family == 1:
        lo, hi = ITERATION_RANGE
        for r in records:
            if not lo <= r.iterations <= hi:
                failures.append(f"{r.iterations} Picard iterations at h={r.h:.4g} outside [{lo}, {hi}]")
    return failures


def cmd_mms(args):
    if not (args.gamma > 0 and args.eps > 0 and 0 < args.theta <= 1 and args.max_iter >= 1):
        raise ConfigError("--gamma and --eps must be positive, --theta in (0, 1], --max-iter >= 1")
    if any(b <= a for a, b in zip(args.levels, args.levels[1:])):
        raise ConfigError("--levels must be strictly increasing")
    if args.check and len(args.levels) < 3:
        raise ConfigError("rates need at least 3 levels")
    args.out.mkdir(parents=True, exist_ok=True)
    jobs = [(n, args.family, args.gamma, args.eps, args.theta, args.max_iter, args.diagonal) for n in args.levels]
    workers = min(thread_cap(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_mms_level, jobs))
    else:
        runs = [_mms_level(j) for j in jobs]
    records = [r.record for r in runs]
    write_records_csv(records, args.out / "records.csv")
    if not args.no_vtk:
        for n, run in zip(args.levels, runs):
            write_solution_vtk(args.out / f"mms_n{n}.vtk", run.result.solution, run.result.state)
    if len(records) >= 3:
        table = rates(records)
        write_rates_csv(table, args.out / "rates.csv")
        for name, slope in table.slopes.items():
            print(f"{name:>12s}  slope {slope:6.3f}")
        if args.check:
            failures = check_rates(table, records, args.family)
            for f in failures:
                print(f"CHECK FAILED: {f}", file=sys.stderr)
            if failures:
                return EXIT_CHECK
    for r in records:
        print(f"h={r.h:.5f}  iterations={r.iterations}")
    return EXIT_OK


def write_solution_vtk(path, solution, state, scale=None):
    """VTK of potentials, pressure, concentrations, velocities and stress.

    ``scale`` optionally maps field kinds (``length``, ``potential``,
    ``pressure``, ``concentration``, ``velocity``) to multipliers.
    """
    s = {"length": 1.0, "potential": 1.0, "pressure": 1.0, "concentration": 1.0, "velocity": 1.0}
    s.update(scale or {})
    disc = solution.disc
    mesh = disc.mesh
    V, C = mesh.num_vertices, mesh.num_cells
    n = disc.layout.n
    point = {f"mu_{i + 1}": s["potential"] * np.asarray(solution.mu(i))[:V] for i in range(n)}
    point["p"] = s["pressure"] * np.asarray(solution.p)
    cell = {f"c_{i + 1}": s["concentration"] * state.cell_conc[:, i] for i in range(n)}

    def corners(coeffs):
        return s["velocity"] * np.asarray(coeffs).reshape(C, 2, 3).transpose(0, 2, 1)

    corner = {f"v_{i + 1}": corners(solution.vel(i)) for i in range(n)}
    corner["v"] = corners(solution.v)
    tau, _ = disc.S.evaluate_at(solution.tau, np.arange(C), np.eye(3))
    corner["tau:tensor"] = s["pressure"] * tau
    scaled = mesh if s["length"] == 1.0 else _scaled_mesh(mesh, s["length"])
    write_vtk(path, scaled, point_data=point, cell_data=cell, corner_data=corner)


def _scaled_mesh(mesh, factor):
    return replace(mesh, vertices=mesh.vertices * factor, _cache={})


# ---------------------------------------------------------------- mix

_MIX_SCHEMA = {f.name.lower(): f for f in fields(MixingConfig)}
_CONVERTERS = {"molar_mass": float_list, "c_ref": float_list, "max_iter": int, "diagonal": str}


def mixing_schema():
    schema = {name: _CONVERTERS.get(name, float) for name in _MIX_SCHEMA}
    schema["law"] = str
    return schema


def load_mixing_config(path_or_text, is_text=False):
    """:class:`MixingConfig` from a flat config file.

    ``law`` is ``margules`` (default; needs ``A12`` and ``A21``) or ``ideal``
    (both parameters zero).
    """
    raw = read_config(path_or_text, mixing_schema(), is_text=is_text)
    law = raw.pop("law", "margules").strip().lower()
    if law == "ideal":
        for key in ("a12", "a21"):
            if raw.get(key, 0.0) != 0.0:
                raise ConfigError(f"law = ideal is inconsistent with nonzero {key.upper()}")
            raw[key] = 0.0
    elif law == "margules":
        missing = [k.upper() for k in ("a12", "a21") if k not in raw]
        if missing:
            raise ConfigError(f"law = margules requires Margules parameters: {', '.join(missing)}")
    else:
        raise ConfigError(f"unknown law {law!r}; expected margules or ideal")
    kwargs = {_MIX_SCHEMA[k].name: v for k, v in raw.items()}
    try:
        return MixingConfig(**kwargs)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def _write_history(path, history):
    keys = ["iteration", "diff_norm", "residual", "pivot_ratio", "refactorized", "min_concentration", "floored"]
    write_csv(path, keys, [[h[k] for k in keys] for h in history])


def _diagnostic_rows(diag):
    rows = []
    for key, val in diag.items():
        arr = np.atleast_1d(np.asarray(val, dtype=float))
        if arr.size == 1:
            rows.append([key, float(arr[0])])
        else:
            rows.extend([f"{key}[{i}]", float(v)] for i, v in enumerate(arr))
    return rows


def cmd_mix(args):
    config = load_mixing_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        res = run_mixing(config, max_iter=args.max_iter)
    except NonConvergenceError as exc:
        if exc.history:
            _write_history(args.out / "history.csv", exc.history)
        raise
    _write_history(args.out / "history.csv", res.result.history)
    write_csv(args.out / "diagnostics.csv", ["quantity", "value"], _diagnostic_rows(res.diagnostics))
    sc = res.scales
    write_solution_vtk(
        args.out / "mixing.vtk", res.solution, res.state,
        scale={"length": sc.length, "potential": sc.potential, "pressure": sc.pressure,
               "concentration": sc.concentration, "velocity": sc.velocity},
    )
    d = res.diagnostics
    print(f"converged in {d['iterations']} iterations; benzene inlet speed {d['benzene_inlet_speed']:.4e} m/s")
    return EXIT_OK


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command == "mms":
            return cmd_mms(args)
        return cmd_mix(args)
    except ConfigError as exc:
        print(f"sosm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"sosm: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (SolverError, DomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"sosm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SOSMError as exc:
        print(f"sosm: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
