"""``sdskit`` command line: load ``.sds`` documents, run checks, reductions and simulations.

Every command prints a JSON report (sorted keys, no timestamps) and exits
with 0 pass, 1 fail, 2 inconclusive, 3 usage or parse error.
"""
from __future__ import annotations

import argparse
import hashlib
import sys
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import sympy as sp

from . import dsl
from .expr import ZeroStatus, ZeroVerdict, render
from .geometry import SDS, Chart, GroupAction, VectorField
from .integrability import PreconditionError, normal_form, promote_to_p00, verify_sds_integrable, verify_system
from .operators import diffusion_equivalent, generator, strong_first_integral, weak_first_integral
from .reduction import NoSymbolicRewrite, NotProjectable, diffusion_invariance, reduce_sds, strict_invariance
from .sim import RngConfig, default_seed, simulate
from .sim import io as simio
from .sim import stats as simstats
from .sim import tensor as simtensor

REPORT_SCHEMA = "sdskit.report/1"
EXIT = {"pass": 0, "fail": 1, "inconclusive": 2}
USAGE = 3


class UsageError(Exception):
    """Bad arguments or an unreadable document: exit code 3."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --------------------------------------------------------------------------
# documents


def bundled(name: str) -> Path | None:
    base = resources.files("sdskit") / "data"
    for cand in (name, f"{name}.sds"):
        p = base / cand
        if p.is_file():
            return Path(str(p))
    return None


def read_document(path: str) -> tuple[str, str]:
    p = Path(path)
    if not p.is_file():
        alt = bundled(path) if p.parent == Path(".") else None
        if alt is None:
            raise UsageError(f"no such document: {path}")
        p = alt
    try:
        return str(p), p.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


class Loaded:
    def __init__(self, path: str, text: str, doc: dsl.SystemDoc):
        self.path = path
        self.text = text
        self.doc = doc
        self.sha256 = hashlib.sha256(text.encode("utf-8")).hexdigest()


class ParseFailure(Exception):
    def __init__(self, path: str, errors: list[dsl.ParseError]):
        self.path = path
        self.errors = errors


def load(path: str, funcs: Sequence[str] = ()) -> Loaded:
    real, text = read_document(path)
    try:
        bindings = dict(dsl.parse_binding(b) for b in funcs)
    except (ValueError, dsl.DocumentError) as exc:
        raise UsageError(f"bad --func binding: {exc}") from exc
    doc, errors = dsl.try_parse(text, bindings)
    if errors:
        raise ParseFailure(real, errors)
    return Loaded(real, text, doc)


def _lookup(doc: dsl.SystemDoc, getter: str, name: str):
    try:
        return getattr(doc, getter)(name)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def _action(doc: dsl.SystemDoc, name: str) -> tuple[GroupAction, list[str]]:
    """An action by name, or the one-generator action of a field."""
    if name in doc.actions:
        a = doc.actions[name]
        return a.action, list(a.generators)
    if name in doc.fields:
        V = doc.fields[name]
        return GroupAction(V.chart, (V,), name), [name]
    hint = dsl.closest(name, list(doc.actions) + list(doc.fields))
    raise UsageError(f"no action or field named {name!r}" + (f" (did you mean {hint!r}?)" if hint else ""))


def _scalar(doc: dsl.SystemDoc, chart: Chart, text: str) -> sp.Expr:
    if text in doc.scalars:
        return doc.scalars[text].value
    env_names = list(chart.symbols)
    try:
        e = dsl.parse_expression(text, env_names, doc.functions)
    except dsl.DocumentError as exc:
        raise UsageError(f"cannot parse scalar {text!r}: {exc}") from exc
    return e


def _point(chart: Chart, text: str | None, default=None) -> dict[str, float]:
    if text is None:
        if default is None:
            raise UsageError("a starting point is required (--x0)")
        return chart.point(default)
    try:
        if "=" in text:
            vals = {}
            for part in text.split(","):
                k, v = part.split("=")
                vals[k.strip()] = float(v)
            return chart.point(vals)
        return chart.point([float(v) for v in text.split(",")])
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad point {text!r} for chart {chart.name} {chart.names}: {exc}") from None


def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise UsageError(f"expected {n} numbers, got {text!r}")
    return vals


# --------------------------------------------------------------------------
# reports


def verdict_status(v: ZeroVerdict) -> str:
    return {ZeroStatus.SYMBOLIC_ZERO: "pass", ZeroStatus.NUMERIC_ZERO: "inconclusive", ZeroStatus.NONZERO: "fail"}[v.status]


def report(command: str, loaded: Loaded | None, args, status: str, **body) -> dict:
    inputs = {"seed": getattr(args, "seed", None), "params": _params(args)}
    if loaded is not None:
        inputs["document"] = Path(loaded.path).name
        inputs["sha256"] = loaded.sha256
    return {"command": command, "inputs": inputs, "status": status, **body}


def _params(args) -> dict:
    skip = {"func_", "handler", "seed", "out", "output", "doc"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip or k.startswith("_"):
            continue
        out[k] = v
    return out


def _sds_text(name: str, chart_name: str, X: SDS) -> str:
    """DSL text of an SDS with its chart (fields named NAME_0, NAME_1, ...)."""
    doc = dsl.SystemDoc()
    chart = Chart(chart_name, X.chart.coords)
    doc.add_chart(chart_name, chart)
    names = []
    for i, V in enumerate(X.fields):
        nm = f"{name}_{i}"
        doc.add_field(nm, VectorField(chart, V.components))
        names.append(nm)
    doc.add_sds(name, names[0], names[1:])
    return dsl.serialize(doc)


# --------------------------------------------------------------------------
# check


def cmd_check_equivalence(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    Y = _lookup(L.doc, "system", args.Y)
    if X.chart != Y.chart:
        raise UsageError(f"{args.X} and {args.Y} live on different charts")
    v = diffusion_equivalent(X, Y, args.samples).labelled("A_X - A_Y")
    st = verdict_status(v)
    return report("check equivalence", L, args, st, verdict=v.to_dict(), difference=str(generator(X) - generator(Y))), st


def cmd_check_integral(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    F = _scalar(L.doc, X.chart, args.F)
    if args.mode == "strong":
        v = strong_first_integral(X, F, samples=args.samples)
    else:
        v = weak_first_integral(X, F, samples=args.samples)
    st = verdict_status(v)
    return report("check integral", L, args, st, function=render(F), verdict=v.to_dict()), st


def cmd_check_invariance(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    G, gnames = _action(L.doc, args.G)
    if G.chart != X.chart:
        raise UsageError(f"{args.G} acts on chart {G.chart.name}, not {X.chart.name}")
    d = L.doc.sds[args.X]
    fnames = [d.drift or "0"] + list(d.noise)
    if args.mode == "strict":
        rep = strict_invariance(X, G, args.samples, fnames, gnames)
    else:
        rep = diffusion_invariance(X, G, args.samples, gnames)
    st = verdict_status(rep.verdict)
    failures = rep.failures()
    witness = None
    if failures:
        key, v = next(iter(failures.items()))
        witness = {"bracket": key, "value": rep.details[key], "component": v.label, "point": v.witness}
    return report("check invariance", L, args, st, invariance=rep.to_dict(), witness=witness), st


# --------------------------------------------------------------------------
# reduce


def cmd_reduce(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    phi = _lookup(L.doc, "map", args.map)
    if phi.source != X.chart:
        raise UsageError(f"map {args.map} starts on {phi.source.name}, but {args.X} lives on {X.chart.name}")
    try:
        rep = reduce_sds(X, phi, args.samples, args.seed)
    except NotProjectable as exc:
        return report("reduce", L, args, "fail", error=str(exc), witness=exc.witness), "fail"
    except NoSymbolicRewrite as exc:
        return report("reduce", L, args, "inconclusive", error=str(exc)), "inconclusive"
    body = rep.to_dict()
    tgt_name = next(n for n, c in L.doc.charts.items() if c == phi.target)
    body["realized_dsl"] = _sds_text(f"{args.X}_{args.map}", tgt_name, rep.realized)
    return report("reduce", L, args, rep.status, reduction=body), rep.status


# --------------------------------------------------------------------------
# integrability


def cmd_int_verify(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    S = _lookup(L.doc, "integrable", args.SYS)
    if args.sds:
        X = _lookup(L.doc, "system", args.sds)
        rep = verify_sds_integrable(X, S, args.samples, args.seed)
    else:
        rep = verify_system(S, args.samples, args.seed)
    return report("integrability verify", L, args, rep.status, names=list(S.names), integrability=rep.to_dict()), rep.status


def cmd_int_promote(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    S = _lookup(L.doc, "integrable", args.SYS)
    try:
        P = promote_to_p00(S)
    except PreconditionError as exc:
        raise UsageError(str(exc)) from exc
    rep = verify_system(P, args.samples, args.seed)
    ops = {n: str(A) for n, A in zip(P.names, P.lambdas)}
    return report("integrability promote", L, args, rep.status, operators=ops, integrability=rep.to_dict()), rep.status


def cmd_int_normal_form(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    if args.chart and _lookup(L.doc, "chart", args.chart) != X.chart:
        raise UsageError(f"{args.X} does not live on chart {args.chart}")
    section = {}
    for part in args.section.split(","):
        if "=" not in part:
            raise UsageError("--section takes NAME=VALUE pairs, e.g. theta=0")
        k, v = part.split("=", 1)
        section[k.strip()] = _scalar(L.doc, X.chart, v.strip())
    try:
        Y = normal_form(X, section, args.samples, args.seed)
    except PreconditionError as exc:
        return report("integrability normal-form", L, args, "fail", error=str(exc)), "fail"
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    v = diffusion_equivalent(X, Y, args.samples).labelled("A_X - A_Y")
    st = verdict_status(v)
    chart_name = next(n for n, c in L.doc.charts.items() if c == X.chart)
    return report(
        "integrability normal-form",
        L,
        args,
        st,
        drift=str(Y.drift),
        noise=[str(V) for V in Y.noise],
        equivalence=v.to_dict(),
        normal_form_dsl=_sds_text(f"{args.X}_nf", chart_name, Y),
    ), st


# --------------------------------------------------------------------------
# sim


def _rng(args) -> RngConfig:
    return RngConfig(args.seed)


def cmd_sim_run(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    x0 = _point(X.chart, args.x0)
    times = np.linspace(0.0, args.horizon, args.record + 1)
    times = np.round(times / args.dt) * args.dt
    ens = simulate(X, x0, args.dt, args.horizon, args.paths, _rng(args), sample_times=times)
    wrapped = ens.wrapped()
    rows = []
    for k, t in enumerate(ens.times):
        row = {"t": float(t), "alive": int(np.isfinite(wrapped[:, k, 0]).sum())}
        for j, name in enumerate(X.chart.names):
            v = wrapped[:, k, j]
            v = v[np.isfinite(v)]
            row[f"{name}_mean"] = float(v.mean()) if v.size else float("nan")
            row[f"{name}_stderr"] = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
        rows.append(row)
    body = {"rows": rows, "truncated": int(ens.truncated.sum()), "paths": ens.n}
    return report("sim run", L, args, "pass", **body), "pass"


def cmd_sim_generator(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    F = _scalar(L.doc, X.chart, args.f)
    x0 = _point(X.chart, args.x0)
    est = simstats.empirical_generator(X, F, x0, args.t, args.paths, _rng(args), steps=args.steps, bias_constant=args.bias_constant)
    st = "pass" if est.passed else "fail"
    return report("sim generator", L, args, st, function=render(F), estimate=est.to_dict()), st


def cmd_sim_density(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    lo, hi = _floats(args.range, 2)
    lift = None
    chart = X.chart
    if args.lift:
        if not args.map:
            raise UsageError("--lift needs --map")
        Z = _lookup(L.doc, "system", args.lift)
        lift = (Z, _lookup(L.doc, "map", args.map))
        chart = Z.chart
    x0 = _point(chart, args.x0)
    rep = simstats.stationary_density_1d(
        X, lo, hi, x0, bins=args.bins, burn_in=args.burn_in, T=args.horizon, n=args.paths, dt=args.dt,
        sample_every=args.sample_every, rng=_rng(args), lift=lift,
    )
    st = "pass" if rep.sup_distance < args.tolerance else "fail"
    return report("sim density", L, args, st, density=rep.to_dict(), rows=rep.rows()), st


def cmd_sim_martingale(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    x0 = _point(X.chart, args.x0)
    n_steps = int(round(args.horizon / args.dt))
    times = np.arange(n_steps + 1) * args.dt
    ens = simulate(X, x0, args.dt, args.horizon, args.paths, _rng(args), sample_times=times)
    names = args.angle.split(",")
    if len(names) == 1:
        series = ens.coordinate(names[0])
    elif len(names) == 2:
        i, j = (X.chart.index(n) for n in names)
        series = simstats.unwrapped_angle(ens.states, i, j)
    else:
        raise UsageError("--angle takes a periodic coordinate or a pair of Cartesian coordinates")
    rep = simstats.martingale_test(ens.times, series, rate=args.rate, windows=args.windows)
    st = "pass" if rep.passed else "fail"
    return report("sim martingale", L, args, st, martingale=rep.to_dict(), truncated=int(ens.truncated.sum())), st


def cmd_sim_ks(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    Y = _lookup(L.doc, "system", args.Y)
    rng = _rng(args)
    xa = simulate(X, _point(X.chart, args.x0), args.dt, args.t, args.paths, rng).at(args.t)
    xb = simulate(Y, _point(Y.chart, args.y0), args.dt, args.t, args.paths, rng.derive(1)).at(args.t)
    if args.map:
        phi = _lookup(L.doc, "map", args.map)
        if phi.target.dim != 1:
            raise UsageError("--map must end on a one-dimensional chart")
        a = simstats._numpy_fn(X, phi.components[0])(xa)
    else:
        a = xa[:, 0]
    rep = simstats.ks_compare(a, xb[:, 0], args.alpha)
    st = "pass" if rep.passed else "fail"
    return report("sim ks", L, args, st, ks=rep.to_dict()), st


def _omega(text: str, dim: int) -> sp.Matrix:
    if text is None:
        if dim % 2:
            raise UsageError("odd dimension: pass --omega explicitly")
        n = dim // 2
        W = sp.zeros(dim, dim)
        for i in range(n):
            W[i, n + i], W[n + i, i] = 1, -1
        return W
    rows = [r for r in text.split(";")]
    M = sp.Matrix([[sp.Rational(v) for v in r.split(",")] for r in rows])
    if M.shape != (dim, dim):
        raise UsageError(f"--omega must be {dim}x{dim}")
    return M


def cmd_sim_tensor(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    X = _lookup(L.doc, "system", args.X)
    W = _omega(args.omega, X.chart.dim)
    x0 = _point(X.chart, args.x0)
    try:
        if args.study:
            rep = simtensor.symplectic_convergence(X, W, x0, args.horizon, _rng(args), paths=args.paths)
            st = "pass" if rep.passed else "fail"
            return report("sim tensor", L, args, st, convergence=rep.to_dict()), st
        rep = simtensor.tensor_preservation(X, W, x0, args.dt, args.horizon, _rng(args), paths=args.paths)
    except simtensor.NotHamiltonian as exc:
        return report("sim tensor", L, args, "fail", error=str(exc), field=exc.field, witness=exc.verdict.to_dict()), "fail"
    st = "pass" if rep.max_deviation < args.tolerance else "fail"
    return report("sim tensor", L, args, st, tensor=rep.to_dict()), st


# --------------------------------------------------------------------------
# parse


def cmd_parse(args) -> tuple[dict, str]:
    L = load(args.doc, args.func)
    return report("parse", L, args, "pass", summary=L.doc.summary()), "pass"


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (default: $SDS_SEED or 0)")
    common.add_argument("--samples", type=int, default=32, help="sample points for numeric zero tests")
    common.add_argument("--func", action="append", default=[], metavar="NAME=EXPR", help="bind a declared function, e.g. f=u^2")
    common.add_argument("--out", choices=["json", "csv"], default="json")
    common.add_argument("--output", default=None, help="write the report to a file instead of stdout")

    simargs = argparse.ArgumentParser(add_help=False)
    simargs.add_argument("--dt", type=float, default=1e-2)
    simargs.add_argument("--horizon", type=float, default=1.0)
    simargs.add_argument("--paths", type=int, default=1000)

    p = _Parser(prog="sdskit", description="Symbolic and numerical toolkit for stochastic dynamical systems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    check = sub.add_parser("check", help="symbolic checks").add_subparsers(dest="what", required=True, parser_class=_Parser)
    c = check.add_parser("equivalence", parents=[common], help="do two SDS have the same generator?")
    c.add_argument("doc"), c.add_argument("X"), c.add_argument("Y")
    c.set_defaults(handler=cmd_check_equivalence)
    c = check.add_parser("integral", parents=[common], help="is F a strong or weak first integral?")
    c.add_argument("doc"), c.add_argument("X"), c.add_argument("F")
    c.add_argument("--mode", choices=["strong", "weak"], default="strong")
    c.set_defaults(handler=cmd_check_integral)
    c = check.add_parser("invariance", parents=[common], help="is X invariant under an action?")
    c.add_argument("doc"), c.add_argument("X"), c.add_argument("G")
    c.add_argument("--mode", choices=["strict", "diffusion"], default="diffusion")
    c.set_defaults(handler=cmd_check_invariance)

    c = sub.add_parser("reduce", parents=[common], help="project the generator through a map and realize it")
    c.add_argument("doc"), c.add_argument("X")
    c.add_argument("--map", required=True)
    c.set_defaults(handler=cmd_reduce)

    integ = sub.add_parser("integrability", help="integrable systems").add_subparsers(dest="what", required=True, parser_class=_Parser)
    c = integ.add_parser("verify", parents=[common])
    c.add_argument("doc"), c.add_argument("SYS")
    c.add_argument("--sds", default=None, help="also require [A_X, member] = 0")
    c.set_defaults(handler=cmd_int_verify)
    c = integ.add_parser("promote", parents=[common])
    c.add_argument("doc"), c.add_argument("SYS")
    c.set_defaults(handler=cmd_int_promote)
    c = integ.add_parser("normal-form", parents=[common])
    c.add_argument("doc"), c.add_argument("X")
    c.add_argument("--chart", default=None)
    c.add_argument("--section", required=True, help="angle values, e.g. theta=0")
    c.set_defaults(handler=cmd_int_normal_form)

    sim = sub.add_parser("sim", help="simulations").add_subparsers(dest="what", required=True, parser_class=_Parser)
    c = sim.add_parser("run", parents=[common, simargs])
    c.add_argument("doc"), c.add_argument("X")
    c.add_argument("--x0", default=None)
    c.add_argument("--record", type=int, default=10, help="number of recorded intervals")
    c.set_defaults(handler=cmd_sim_run)
    c = sim.add_parser("generator", parents=[common])
    c.add_argument("doc"), c.add_argument("X")
    c.add_argument("--f", required=True, help="scalar name or expression")
    c.add_argument("--x0", required=True)
    c.add_argument("--t", type=float, default=1e-3)
    c.add_argument("--steps", type=int, default=1)
    c.add_argument("--paths", type=int, default=20000)
    c.add_argument("--bias-constant", type=float, default=1.0)
    c.set_defaults(handler=cmd_sim_generator)
    c = sim.add_parser("density", parents=[common, simargs])
    c.add_argument("doc"), c.add_argument("X")
    c.add_argument("--range", required=True, help="lo,hi")
    c.add_argument("--x0", required=True)
    c.add_argument("--lift", default=None, help="simulate this SDS and push it through --map")
    c.add_argument("--map", default=None)
    c.add_argument("--bins", type=int, default=60)
    c.add_argument("--burn-in", type=float, default=5.0)
    c.add_argument("--sample-every", type=float, default=0.5)
    c.add_argument("--tolerance", type=float, default=0.02)
    c.set_defaults(handler=cmd_sim_density)
    c = sim.add_parser("martingale", parents=[common, simargs])
    c.add_argument("doc"), c.add_argument("X")
    c.add_argument("--x0", required=True)
    c.add_argument("--angle", required=True, help="periodic coordinate, or x,y for the polar angle")
    c.add_argument("--rate", type=float, default=1.0)
    c.add_argument("--windows", type=int, default=10)
    c.set_defaults(handler=cmd_sim_martingale)
    c = sim.add_parser("ks", parents=[common])
    c.add_argument("doc"), c.add_argument("X"), c.add_argument("Y")
    c.add_argument("--x0", required=True)
    c.add_argument("--y0", required=True)
    c.add_argument("--t", type=float, default=1.0)
    c.add_argument("--dt", type=float, default=1e-3)
    c.add_argument("--paths", type=int, default=10000)
    c.add_argument("--map", default=None, help="push X through this map first")
    c.add_argument("--alpha", type=float, default=0.01)
    c.set_defaults(handler=cmd_sim_ks)
    c = sim.add_parser("tensor", parents=[common, simargs])
    c.add_argument("doc"), c.add_argument("X")
    c.add_argument("--x0", required=True)
    c.add_argument("--omega", default=None, help="rows separated by ';', e.g. '0,1;-1,0'")
    c.add_argument("--study", action="store_true", help="dt-halving convergence study")
    c.add_argument("--tolerance", type=float, default=1e-6)
    c.set_defaults(handler=cmd_sim_tensor, paths=1)

    c = sub.add_parser("parse", parents=[common], help="parse a document and report diagnostics")
    c.add_argument("doc")
    c.set_defaults(handler=cmd_parse)
    return p


def _emit(body: dict, args, stream) -> None:
    if getattr(args, "out", "json") == "csv":
        rows = body.get("rows")
        if rows is None:
            raise UsageError("this command has no tabular output; use --out json")
        text = simio.to_csv(rows)
    else:
        text = simio.to_json(body, REPORT_SCHEMA) + "\n"
    if getattr(args, "output", None):
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        stream.write(text)


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.seed is None:
            args.seed = default_seed()
        body, status = args.handler(args)
        _emit(body, args, stdout)
        return EXIT[status]
    except ParseFailure as exc:
        for e in exc.errors:
            stderr.write(f"{exc.path}:{e}\n")
        stdout.write(simio.to_json({"command": "parse", "status": "error", "errors": [e.to_dict() for e in exc.errors]}, REPORT_SCHEMA) + "\n")
        return USAGE
    except UsageError as exc:
        stderr.write(f"sdskit: error: {exc}\n")
        return USAGE
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else USAGE
    except (ValueError, simstats.InsufficientSamples) as exc:
        stderr.write(f"sdskit: error: {exc}\n")
        return USAGE
    except (simstats.NonStationary, simstats.TruncatedEnsemble) as exc:
        stdout.write(simio.to_json({"command": " ".join(argv or []), "status": "fail", "error": str(exc)}, REPORT_SCHEMA) + "\n")
        return EXIT["fail"]


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
