"""Command line: ``simkit run``, ``simkit preset`` and ``simkit portrait``."""
from __future__ import annotations

import argparse
import sys
from importlib import resources

import numpy as np

from .errors import SimkitError
from .experiments import ExperimentConfig, render_csv, run_checks, run_sweep
from .models import make_model
from .solvers import IvpOptions, integrate


def preset_names():
    root = resources.files("simkit") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def preset_text(name):
    path = resources.files("simkit") / "presets" / f"{name}.ini"
    if not path.is_file():
        raise SimkitError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return path.read_text(encoding="utf-8")


def _write(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def execute(config, out=None, timing=None, stream=None):
    """Run a config, write its CSV and report checks.  Returns the exit code."""
    stream = stream or sys.stderr
    _, rows = run_sweep(config)
    _write(render_csv(config, rows, timing), out or config.section("output").get("path"))
    code = 0
    for r in rows:
        if not r.converged:
            why = r.error or "solver reported no convergence"
            print(f"point sweep_value={r.sweep_value}: FAILED ({why})", file=stream)
            code = 1
            break
    for c in run_checks(config, rows):
        print(f"check {c.name}: {'PASS' if c.passed else 'FAIL'} ({c.detail})", file=stream)
        if not c.passed and code == 0:
            code = 2
    return code


def portrait_csv(model, lo=0.0, hi=3.0, grid=5, t_end=10.0, samples=101, sim_points=201):
    """Trajectories from a ``grid x grid`` box of initial values plus the SIM polyline.

    Columns: ``kind, id, t, z1, z2`` with ``kind`` in {trajectory, sim}.
    """
    if model.n != 2:
        raise SimkitError("phase portraits need a planar model")
    lines = ["kind,id,t,z1,z2"]
    ts = np.linspace(0.0, t_end, samples)
    axis = np.linspace(lo, hi, grid)
    k = 0
    for a in axis:
        for b in axis:
            traj = integrate(model, [a, b], 0.0, t_end, IvpOptions(rel_tol=1e-9, abs_tol=1e-12))
            for t in ts:
                z = traj(t)
                lines.append(f"trajectory,{k},{t:.17g},{z[0]:.17g},{z[1]:.17g}")
            k += 1
    bundle = model.analytic
    if bundle is not None:
        for s in np.linspace(lo, hi, sim_points):
            if bundle.sim_rpv == (1,):
                z = (bundle.sim_map(np.array([s]))[0], s)
            else:
                z = (s, bundle.sim_map(np.array([s]))[0])
            lines.append(f"sim,0,,{z[0]:.17g},{z[1]:.17g}")
    return "\n".join(lines) + "\n"


def build_parser():
    ap = argparse.ArgumentParser(prog="simkit",
                                 description="Slow invariant manifold reconstruction experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                     help="override a config key (repeatable)")
    run.add_argument("--out", help="CSV path (default: [output] path or stdout)")
    run.add_argument("--timing", action="store_true", help="fill the wall_time column")

    pre = sub.add_parser("preset", help="run a bundled experiment")
    pre.add_argument("name", help="preset name, or 'list'")
    pre.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    pre.add_argument("--out")
    pre.add_argument("--timing", action="store_true")
    pre.add_argument("--show", action="store_true", help="print the preset config and exit")

    por = sub.add_parser("portrait", help="emit trajectories and SIM curve as CSV")
    por.add_argument("model", help="linear2d or davis_skodje")
    por.add_argument("--gamma", type=float, required=True)
    por.add_argument("--out")
    por.add_argument("--grid", type=int, default=5)
    por.add_argument("--lo", type=float, default=0.0)
    por.add_argument("--hi", type=float, default=3.0)
    por.add_argument("--t-end", type=float, default=10.0)
    por.add_argument("--samples", type=int, default=101)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = ExperimentConfig.from_file(args.config, args.set)
            return execute(cfg, args.out, args.timing or None)
        if args.command == "preset":
            if args.name == "list":
                print("\n".join(preset_names()))
                return 0
            text = preset_text(args.name)
            if args.show:
                sys.stdout.write(text)
                return 0
            cfg = ExperimentConfig.from_text(text, args.set)
            return execute(cfg, args.out, args.timing or None)
        model = make_model(args.model, gamma=args.gamma)
        _write(portrait_csv(model, args.lo, args.hi, args.grid, args.t_end, args.samples),
               args.out)
        return 0
    except (SimkitError, OSError) as exc:
        print(f"simkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
