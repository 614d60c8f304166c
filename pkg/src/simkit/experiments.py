"""Sweep runner behind the command line: config parsing, solving, checks, CSV.

A config is an INI file::

    [model]
    name = linear2d
    gamma = 0.2

    [method]
    name = bvp             ; see METHODS
    rpv = z2               ; component names z1..zn
    rpv_values = 5.0
    K = 0
    t0 = -2                ; horizon start, when the method needs one

    [sweep]
    variable = t0          ; a [model] parameter, an RPV name or a [method] key
    start = -20
    stop = -2
    num = 10               ; or: values = -20, -10, -2

    [output]
    path = out.csv         ; stdout when absent
    timing = false         ; fill the wall_time column
    workers = 1

    [check]
    oracle = auto          ; auto | none | sim | an oracle function name
    max.abs_error = 1e-6   ; every |value| <= bound
    expect.t0_min = -2.6056 +- 1e-3
    expect_abs.t0_min = 0.8957 +- 1e-3
    approach.z1 = 5.0      ; |z1 - 5| non-increasing (up to 1e-9 noise) as |sweep value| grows
    monotone.sim_error = increasing

``k1``/``k2`` accept arithmetic expressions in ``z1..zn``, the model
parameters and ``exp``, ``log``, ``sqrt``.
"""
from __future__ import annotations

import ast
import configparser
import hashlib
import io
import math
import operator
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import methods as M
from . import oracle as O
from .errors import ModelError, SimkitError
from .models import MODEL_FACTORIES, Polyhedron, RpvSpec, make_model
from .solvers import IvpOptions

METHODS = ("bvp", "zdp_local", "qssa", "zdp_nonlocal", "fcm", "fet", "optimize",
           "local_min", "adjoint", "min_t0")
HORIZON_METHODS = ("bvp", "zdp_nonlocal", "adjoint")
SECTIONS = ("model", "method", "sweep", "output", "check")


# ---------------------------------------------------------------- expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"exp": math.exp, "log": math.log, "sqrt": math.sqrt}


def compile_expression(text, names):
    """Compile ``text`` into ``f(z, params)``; only arithmetic and exp/log/sqrt."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ModelError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name):
            if node.id not in names and node.id not in _FUNCS:
                raise ModelError(f"unknown name {node.id!r} in expression {text!r}")
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            check(node.operand)
            return
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
            check(node.args[0])
            return
        raise ModelError(f"unsupported syntax in expression {text!r}")

    check(tree)

    def evaluate(node, env):
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](evaluate(node.left, env), evaluate(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](evaluate(node.operand, env))
        return _FUNCS[node.func.id](evaluate(node.args[0], env))

    return lambda env: float(evaluate(tree.body, env))


def _coefficient(text, model):
    try:
        return float(text)
    except ValueError:
        pass
    comp = [f"z{i + 1}" for i in range(model.n)]
    expr = compile_expression(text, set(comp) | set(model.params))
    params = dict(model.params)

    def k(z):
        env = dict(params)
        env.update(zip(comp, z))
        return expr(env)

    return k


# --------------------------------------------------------------------- config

def _floats(text):
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _component_index(name, n):
    name = name.strip().lower()
    if not (name.startswith("z") and name[1:].isdigit()):
        raise ModelError(f"components are named z1..z{n}, got {name!r}")
    i = int(name[1:]) - 1
    if not 0 <= i < n:
        raise ModelError(f"component {name!r} outside z1..z{n}")
    return i


@dataclass
class ExperimentConfig:
    """Validated view of a config file plus overrides."""

    parser: configparser.ConfigParser

    @classmethod
    def from_text(cls, text, overrides=()):
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                       interpolation=None)
        cp.optionxform = str
        cp.read_string(text)
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, option = key.strip().partition(".")
            if not sep or not dot or not option:
                raise ModelError(f"override must look like section.key=value, got {item!r}")
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, option, value.strip())
        cfg = cls(cp)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides=()):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), overrides)

    def section(self, name):
        return dict(self.parser.items(name)) if self.parser.has_section(name) else {}

    def canonical_text(self):
        """Sorted sections and keys; the basis of the provenance hash."""
        out = io.StringIO()
        for sec in sorted(self.parser.sections()):
            out.write(f"[{sec}]\n")
            for key, value in sorted(self.parser.items(sec)):
                out.write(f"{key} = {value.strip()}\n")
        return out.getvalue()

    def digest(self):
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def sweep_values(self):
        sw = self.section("sweep")
        if not sw:
            return None, [None]
        var = sw.get("variable")
        if not var:
            raise ModelError("[sweep] needs a variable")
        if "values" in sw:
            values = _floats(sw["values"])
        else:
            try:
                start, stop, num = float(sw["start"]), float(sw["stop"]), int(sw["num"])
            except KeyError as exc:
                raise ModelError(f"[sweep] needs values or start/stop/num ({exc} missing)")
            if num < 1:
                raise ModelError("[sweep] num must be >= 1")
            values = list(np.linspace(start, stop, num))
        if not values or not all(math.isfinite(v) for v in values):
            raise ModelError("sweep values must be finite and non-empty")
        diffs = np.diff(values)
        if len(values) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ModelError("sweep values must be strictly ordered")
        return var, [float(v) for v in values]

    def validate(self):
        for sec in self.parser.sections():
            if sec not in SECTIONS:
                raise ModelError(f"unknown config section [{sec}]")
        model_sec, method_sec = self.section("model"), self.section("method")
        if "name" not in model_sec or "name" not in method_sec:
            raise ModelError("[model] and [method] both need a name")
        method = method_sec["name"]
        if method not in METHODS:
            raise ModelError(f"unknown method {method!r}; choose from {METHODS}")
        var, values = self.sweep_values()
        # build one point to catch model/method incompatibilities early
        point = build_point(self.as_dict(), values[0] if var else None)
        check_compatibility(point)
        oracle_for(point)

    def as_dict(self):
        return {sec: self.section(sec) for sec in SECTIONS}


# ---------------------------------------------------------------------- points

@dataclass
class Point:
    model: object
    method: str
    rpv: RpvSpec
    opts: dict
    oracle: str


def _apply_sweep(cfg, var, value):
    model = dict(cfg["model"])
    method = dict(cfg["method"])
    rpv_names = [s.strip() for s in method.get("rpv", "").split(",") if s.strip()]
    if var is None:
        return model, method
    if var in model and var != "name" or var in MODEL_FACTORIES.get(
            model.get("name", ""), (None, ()))[1]:
        model[var] = repr(value)
    elif var in rpv_names:
        vals = _floats(method.get("rpv_values", ""))
        vals[rpv_names.index(var)] = value
        method["rpv_values"] = ", ".join(repr(v) for v in vals)
    else:
        method[var] = repr(value)
    return model, method


def build_point(cfg, sweep_value, var=None):
    if var is None and cfg.get("sweep"):
        var = cfg["sweep"].get("variable")
    model_sec, meth = _apply_sweep(cfg, var, sweep_value)
    params = {k: float(v) for k, v in model_sec.items() if k != "name"}
    model = make_model(model_sec["name"], **params)
    names = [s.strip() for s in meth.get("rpv", "").split(",") if s.strip()]
    if not names:
        raise ModelError("[method] needs rpv (component names such as z2)")
    idx = tuple(_component_index(s, model.n) for s in names)
    vals = _floats(meth.get("rpv_values", ""))
    t_star = float(meth.get("t_star", 0.0))
    t0 = float(meth["t0"]) if "t0" in meth else None
    rpv = RpvSpec(idx, vals, t_star, t0)
    ivp = IvpOptions(method=meth.get("integrator", "dopri5"),
                     rel_tol=float(meth.get("rel_tol", 1e-10)),
                     abs_tol=float(meth.get("abs_tol", 1e-12)))
    opts = dict(meth)
    opts["ivp"] = ivp
    opts["m"] = int(float(meth.get("m", 2)))
    oracle = dict(cfg.get("check") or {}).get("oracle", "auto")
    return Point(model, meth["name"], rpv, opts, oracle)


def check_compatibility(p):
    n, name = p.model.n, p.method
    if name in HORIZON_METHODS or (name == "optimize" and p.opts.get("mode", "reverse") == "reverse"):
        if p.rpv.horizon_t0 is None:
            raise ModelError(f"method {name} needs a horizon: set [method] t0 or sweep t0")
    if name == "fet" and (n != 2 or p.rpv.fixed_indices != (0,)):
        raise ModelError("fet needs a planar model with rpv = z1")
    if name == "fcm" and len(p.rpv.fixed_indices) != n - 1:
        raise ModelError(f"fcm needs {n - 1} RPVs for n={n}")
    if name == "min_t0":
        if p.model.name != "linear2d" or p.rpv.fixed_indices != (1,):
            raise ModelError("min_t0 needs linear2d with rpv = z2")
        missing = [k for k in ("n1", "b1", "n2", "b2") if k not in p.opts]
        if missing:
            raise ModelError(f"min_t0 needs polyhedron parameters {missing}")
    for key in ("k1", "k2"):
        if key in p.opts:
            _coefficient(p.opts[key], p.model)
    p.rpv.free_indices(n)


def _on_sim_chart(p):
    a = p.model.analytic
    return a is not None and tuple(sorted(p.rpv.fixed_indices)) == tuple(a.sim_rpv)


def oracle_for(p):
    """Name of the reference formula used for the first free component."""
    kind = p.oracle
    if kind == "none":
        return None
    lin = p.model.name == "linear2d" and p.rpv.fixed_indices == (1,)
    ds = p.model.name == "davis_skodje" and p.rpv.fixed_indices == (0,)
    deriv = p.opts.get("objective", "derivative") == "derivative"
    table = {
        ("bvp", True, False): "linear_bvp_poi",
        ("bvp", False, True): "ds_bvp_poi",
        ("zdp_nonlocal", True, False): "zdp_nonlocal_linear_poi",
        ("zdp_local", True, False): "zdp_local_linear_poi",
        ("qssa", True, False): "zdp_local_linear_poi",
        ("qssa", False, True): "ds_qssa_poi",
        ("local_min", True, False): "linear_local_opt_poi",
        ("fet", False, True): "ds_fet_point",
    }
    if deriv and p.opts.get("evaluation", "integral") == "integral":
        table[("optimize", True, False)] = "linear_opt_poi"
        table[("adjoint", True, False)] = "adjoint_poi"
    auto = table.get((p.method, lin, ds))
    if kind == "auto":
        if auto is None and p.method in ("fcm",) and _on_sim_chart(p) and p.model.matrix is not None:
            return "sim"
        if auto is None and p.method == "optimize" and not deriv and _on_sim_chart(p):
            return "sim"
        return auto
    if kind == "sim":
        if not _on_sim_chart(p):
            raise ModelError("oracle=sim needs RPVs matching the model's SIM chart")
        return "sim"
    if kind != auto:
        raise ModelError(f"oracle {kind!r} does not apply to method {p.method} on {p.model.name}")
    return kind


def _oracle_value(p, name):
    g = p.model.params.get("gamma")
    v = p.rpv.fixed_values[0]
    t0, tf, m = p.rpv.horizon_t0, p.rpv.t_star, p.opts["m"]
    K = _floats(p.opts.get("K", "0"))
    if name == "sim":
        return float(M.analytic_sim_point(p.model, p.rpv).free()[0])
    if name == "linear_bvp_poi":
        return O.linear_bvp_poi(g, t0, tf, K[0], v).value
    if name == "ds_bvp_poi":
        return O.ds_bvp_poi(g, t0, tf, K[0], v).value
    if name == "zdp_nonlocal_linear_poi":
        return O.zdp_nonlocal_linear_poi(g, m, t0, tf, v).value
    if name == "zdp_local_linear_poi":
        return O.zdp_local_linear_poi(g, 1 if p.method == "qssa" else m, v).value
    if name == "ds_qssa_poi":
        return O.ds_qssa_poi(g, v).value
    if name == "linear_local_opt_poi":
        return O.linear_local_opt_poi(g, m, v).value
    if name == "ds_fet_point":
        return O.ds_fet_point(g, v)[0]
    if name == "linear_opt_poi":
        return O.linear_opt_poi(g, m, t0, tf, v).value
    if name == "adjoint_poi":
        return O.adjoint_poi(g, m, t0, tf, v).value
    raise ModelError(f"unknown oracle {name!r}")


def _method_config(p):
    o = p.opts
    return M.MethodConfig(
        m=o["m"], mode=o.get("mode", "reverse"), objective=o.get("objective", "derivative"),
        evaluation=o.get("evaluation", "integral"),
        k1=_coefficient(o.get("k1", "1"), p.model), k2=_coefficient(o.get("k2", "1"), p.model),
        initial_guess=o.get("initial_guess", "qssa"), ivp=o["ivp"],
        adjoint_gradient=o.get("adjoint_gradient", "false").lower() == "true")


def solve_point(p):
    """Run the configured method; returns ``(state, extras, iterations, converged)``."""
    name, model, rpv, o = p.method, p.model, p.rpv, p.opts
    extras = {}
    if name == "bvp":
        poi = M.bvp_reconstruct(model, rpv, _floats(o.get("K", "0")), o["ivp"])
    elif name == "zdp_local":
        poi = M.zdp_local(model, rpv, o["m"])
    elif name == "qssa":
        poi = M.qssa(model, rpv)
    elif name == "zdp_nonlocal":
        poi = M.zdp_nonlocal(model, rpv, o["m"], o["ivp"])
    elif name == "fcm":
        poi = M.fcm(model, rpv)
        if "stretching_ratio" in poi.diagnostics:
            extras["stretching_ratio"] = poi.diagnostics["stretching_ratio"]
    elif name == "fet":
        pt = M.fet(model, rpv.fixed_values[0])
        poi = M._poi(model, rpv, [rpv.fixed_values[0], pt.z2], "fet")
        extras["slope"] = pt.slope
    elif name == "optimize":
        poi = M.optimize_trajectory(model, rpv, _method_config(p))
        extras["objective"] = poi.diagnostics["objective"]
    elif name == "local_min":
        poi = M.local_min_derivative(model, rpv, o["m"])
        extras["objective"] = poi.diagnostics["objective"]
    elif name == "adjoint":
        from .adjoint import solve_adjoint_bvp
        phi = M.make_objective(model, _method_config(p))
        sol = solve_adjoint_bvp(model, rpv, phi, o["ivp"])
        poi = sol.poi
        extras["hamiltonian"] = float(sol.hamiltonian[0])
        extras["hamiltonian_drift"] = sol.hamiltonian_drift
        extras["costate_t0"] = float(np.max(np.abs(poi.diagnostics["costate_t0"])))
        if model.name == "linear2d" and rpv.fixed_indices == (1,) and \
                o.get("objective", "derivative") == "derivative":
            ref = O.linear_adjoint_constants(model.params["gamma"], o["m"], rpv.horizon_t0,
                                             rpv.t_star, rpv.fixed_values[0]).hamiltonian
            extras["hamiltonian_ref"] = ref
            extras["hamiltonian_rel_error"] = abs(extras["hamiltonian"] - ref) / max(abs(ref), 1e-300)
    elif name == "min_t0":
        poly = Polyhedron.from_lines(float(o["n1"]), float(o["b1"]), float(o["n2"]), float(o["b2"]))
        res = M.min_feasible_t0(model, o["m"], rpv.fixed_values[0], poly, rpv.t_star,
                                o.get("constraint_time", "start"))
        poi = res.poi
        extras.update(t0_min=res.t0_min, ratio=res.ratio,
                      local_z1=float(res.local_poi.state[0]), local_ratio=res.local_ratio)
    else:  # pragma: no cover - rejected during validation
        raise ModelError(f"unknown method {name!r}")
    if _on_sim_chart(p) and name != "min_t0":
        sim = M.analytic_sim_point(model, rpv).state
        free = list(rpv.free_indices(model.n))
        extras["sim_error"] = float(np.max(np.abs(poi.state[free] - sim[free])))
    d = poi.diagnostics
    iterations = int(d.get("iterations", d.get("evaluations", 0)))
    return poi.state, extras, iterations, bool(poi.converged)


@dataclass
class Row:
    sweep_value: object
    state: np.ndarray
    extras: dict
    oracle_value: float
    abs_error: float
    iterations: int
    converged: bool
    wall_time: float
    error: str = ""


def _run_one(args):
    cfg, var, value = args
    t = time.perf_counter()
    try:
        p = build_point(cfg, value, var)
        state, extras, its, ok = solve_point(p)
        oracle = oracle_for(p)
        free0 = p.rpv.free_indices(p.model.n)[0]
        ref = _oracle_value(p, oracle) if oracle else math.nan
        err = abs(state[free0] - ref) if oracle else math.nan
        return Row(value, state, extras, ref, err, its, ok, time.perf_counter() - t)
    except SimkitError as exc:
        return Row(value, None, {}, math.nan, math.nan, 0, False,
                   time.perf_counter() - t, f"{type(exc).__name__}: {exc}")


def run_sweep(config):
    """Solve every sweep point; rows are ordered by sweep value."""
    var, values = config.sweep_values()
    cfg = config.as_dict()
    jobs = [(cfg, var, v) for v in values]
    workers = int(config.section("output").get("workers", 1))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    if var is not None:
        rows.sort(key=lambda r: r.sweep_value)
    return var, rows


def _fmt(x):
    if x is None or x == "":
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def render_csv(config, rows, timing=None):
    """CSV text with a provenance comment; ``wall_time`` stays empty unless timing."""
    if timing is None:
        timing = config.section("output").get("timing", "false").lower() == "true"
    n = next((len(r.state) for r in rows if r.state is not None), 0)
    extra_keys = []
    for r in rows:
        for k in r.extras:
            if k not in extra_keys:
                extra_keys.append(k)
    header = (["sweep_value"] + [f"z{i + 1}" for i in range(n)] + extra_keys
              + ["oracle_value", "abs_error", "iterations", "converged", "wall_time"])
    lines = [f"# config-sha256: {config.digest()}", ",".join(header)]
    for r in rows:
        state = list(r.state) if r.state is not None else [math.nan] * n
        cells = ([_fmt(r.sweep_value)] + [_fmt(v) for v in state]
                 + [_fmt(r.extras.get(k, math.nan)) for k in extra_keys]
                 + [_fmt(r.oracle_value), _fmt(r.abs_error), _fmt(r.iterations),
                    _fmt(r.converged), _fmt(r.wall_time) if timing else ""])
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------- checks

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _target(text):
    value, _, tol = text.partition("+-")
    return float(value), (float(tol) if tol.strip() else 0.0)


def _column(rows, key, n):
    out = []
    for r in rows:
        if r.state is None:
            out.append(math.nan)
        elif key.startswith("z") and key[1:].isdigit() and int(key[1:]) <= n:
            out.append(float(r.state[int(key[1:]) - 1]))
        elif key in ("abs_error", "oracle_value", "iterations"):
            out.append(float(getattr(r, key)))
        else:
            out.append(float(r.extras.get(key, math.nan)))
    return np.array(out)


def run_checks(config, rows):
    """Evaluate the ``[check]`` assertions against the result rows."""
    results = []
    n = next((len(r.state) for r in rows if r.state is not None), 0)
    slack = 1e-12
    for key, text in config.section("check").items():
        kind, _, col = key.partition(".")
        if kind == "oracle":
            continue
        if not col:
            raise ModelError(f"check key {key!r} must look like kind.column")
        vals = _column(rows, col, n)
        if np.any(np.isnan(vals)):
            results.append(CheckResult(key, False, f"column {col} missing or NaN"))
            continue
        if kind == "max":
            bound = float(text)
            worst = float(np.max(np.abs(vals)))
            results.append(CheckResult(key, worst <= bound, f"max |{col}| = {worst:.3e} (bound {bound:g})"))
        elif kind in ("expect", "expect_abs"):
            target, tol = _target(text)
            got = np.abs(vals) if kind == "expect_abs" else vals
            worst = float(np.max(np.abs(got - target)))
            results.append(CheckResult(key, worst <= tol,
                                       f"{col} = {', '.join(f'{g:.6g}' for g in got)} "
                                       f"(target {target:g} +- {tol:g})"))
        elif kind == "monotone":
            d = np.diff(vals)
            ok = bool(np.all(d >= -slack)) if text.strip() == "increasing" else bool(np.all(d <= slack))
            results.append(CheckResult(key, ok, f"{col} {text.strip()} in sweep order"))
        elif kind == "approach":
            target, tol = _target(text)
            sweep = np.array([abs(r.sweep_value) if r.sweep_value is not None else 0.0 for r in rows])
            dist = np.abs(vals - target)[np.argsort(sweep, kind="stable")]
            # tolerate solver noise once the distance is at round-off level
            ok = bool(np.all(np.diff(dist) <= 1e-9 * (1.0 + abs(target))))
            if tol:
                ok = ok and dist[-1] <= tol
            results.append(CheckResult(key, ok, f"|{col} - {target:g}| from {dist[0]:.3e} to {dist[-1]:.3e}"))
        else:
            raise ModelError(f"unknown check kind {kind!r}")
    return results
