"""Command-line entry point: ``hessianlab <subcommand> [options]``.

Exit status is 0 on success, 1 when a check fails or a solve does not
converge, and 2 on usage or input errors. Every run writes ``result.json``
into ``--out``; some subcommands add CSV tables, field files and SVG plots.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field

SCHEMA = "hessianlab.result"
SCHEMA_VERSION = 1

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


# -- field expressions -------------------------------------------------------------

class ExpressionError(ValueError):
    def __init__(self, message: str, position: int, text: str):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.position = position
        self.text = text


_FUNCS = ("sin", "cos", "exp")
_VARS = ("x1", "y1", "x2", "y2")


def _tokenize(text: str):
    out, i = [], 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < len(text) and text[i + 1].isdigit()):
            j = i
            while j < len(text) and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < len(text) and text[j] in "eE":
                k = j + 1
                if k < len(text) and text[k] in "+-":
                    k += 1
                if k < len(text) and text[k].isdigit():
                    j = k
                    while j < len(text) and text[j].isdigit():
                        j += 1
            try:
                out.append(("num", float(text[i:j]), i))
            except ValueError:
                raise ExpressionError("malformed number", i, text) from None
            i = j
        elif ch.isalpha():
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            out.append(("name", text[i:j], i))
            i = j
        elif ch in "+-*/()":
            out.append((ch, ch, i))
            i += 1
        else:
            raise ExpressionError(f"unexpected character {ch!r}", i, text)
    out.append(("end", None, len(text)))
    return out


@dataclass
class _Node:
    kind: str  # num, var, neg, add, sub, mul, div, call
    pos: int
    value: object = None
    args: list = field(default_factory=list)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, kind=None):
        tok = self.toks[self.i]
        if kind is not None and tok[0] != kind:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ExpressionError(f"expected {kind!r}, found {what}", tok[2], self.text)
        self.i += 1
        return tok

    def parse(self) -> _Node:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError(f"unexpected {tok[1]!r}", tok[2], self.text)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in "+-":
            op, _, pos = self.take()
            node = _Node("add" if op == "+" else "sub", pos, args=[node, self.term()])
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in "*/":
            op, _, pos = self.take()
            node = _Node("mul" if op == "*" else "div", pos, args=[node, self.unary()])
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] in "+-":
            self.take()
            inner = self.unary()
            return inner if tok[0] == "+" else _Node("neg", tok[2], args=[inner])
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return _Node("num", pos, val)
        if kind == "(":
            node = self.expr()
            self.take(")")
            return node
        if kind == "name":
            if val == "pi":
                return _Node("num", pos, math.pi)
            if val in _VARS:
                return _Node("var", pos, val)
            if val in _FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return _Node("call", pos, val, [arg])
            raise ExpressionError(f"unknown name {val!r}", pos, self.text)
        what = "end of input" if kind == "end" else repr(val)
        raise ExpressionError(f"unexpected {what}", pos, self.text)


def _linear(node: _Node, text: str):
    """(coefficients by variable, constant) for an affine expression."""
    k = node.kind
    if k == "num":
        return {}, float(node.value)
    if k == "var":
        return {node.value: 1.0}, 0.0
    if k == "neg":
        c, b = _linear(node.args[0], text)
        return {v: -a for v, a in c.items()}, -b
    if k in ("add", "sub"):
        c1, b1 = _linear(node.args[0], text)
        c2, b2 = _linear(node.args[1], text)
        s = 1.0 if k == "add" else -1.0
        out = dict(c1)
        for v, a in c2.items():
            out[v] = out.get(v, 0.0) + s * a
        return out, b1 + s * b2
    if k in ("mul", "div"):
        c1, b1 = _linear(node.args[0], text)
        c2, b2 = _linear(node.args[1], text)
        if k == "div":
            if c2:
                raise ExpressionError("division by a variable", node.pos, text)
            if b2 == 0:
                raise ExpressionError("division by zero", node.pos, text)
            return {v: a / b2 for v, a in c1.items()}, b1 / b2
        if c1 and c2:
            raise ExpressionError("product of variables inside a trigonometric argument", node.pos, text)
        if c2:
            c1, b1, c2, b2 = c2, b2, c1, b1
        return {v: a * b2 for v, a in c1.items()}, b1 * b2
    raise ExpressionError("trigonometric argument must be affine in the coordinates", node.pos, text)


def _frequencies(node: _Node, text: str, allowed):
    coeffs, phase = _linear(node, text)
    freqs = {}
    for v, a in coeffs.items():
        if v not in allowed:
            raise ExpressionError(f"coordinate {v!r} not available on this grid", node.pos, text)
        m = a / (2 * math.pi)
        r = round(m)
        if abs(m - r) > 1e-9 * max(1.0, abs(m)):
            raise ExpressionError(
                f"frequency {a:g} of {v} is not 2*pi times an integer (not periodic)", node.pos, text
            )
        if r:
            freqs[v] = int(r)
    return freqs, phase


def _evaluate(node: _Node, coords: dict, text: str):
    import numpy as np

    k = node.kind
    if k == "num":
        return float(node.value)
    if k == "var":
        raise ExpressionError(
            f"bare coordinate {node.value!r} is not periodic; use sin/cos of it", node.pos, text
        )
    if k == "neg":
        return -_evaluate(node.args[0], coords, text)
    if k == "call":
        arg = node.args[0]
        if node.value == "exp":
            return np.exp(_evaluate(arg, coords, text))
        freqs, phase = _frequencies(arg, text, coords)
        lin = sum(m * coords[v] for v, m in sorted(freqs.items()))
        theta = 2 * np.pi * lin + phase if freqs else phase
        return (np.sin if node.value == "sin" else np.cos)(theta)
    a = _evaluate(node.args[0], coords, text)
    b = _evaluate(node.args[1], coords, text)
    if k == "add":
        return a + b
    if k == "sub":
        return a - b
    if k == "mul":
        return a * b
    if np.any(np.asarray(b) == 0):
        raise ExpressionError("division by zero", node.pos, text)
    return a / b


def parse_field_expression(text: str, grid):
    """Sample an expression over the grid coordinates into a ScalarField.

    Grammar: sums, differences, products and quotients of real literals,
    ``pi``, ``sin(.)``, ``cos(.)`` and ``exp(.)``. Arguments of sin and cos
    must be affine in x1, y1 (and x2, y2 when n = 2) with coefficients in
    2*pi*Z, so every accepted expression is periodic on the torus.
    """
    import numpy as np

    from .torusgrid import ScalarField

    if not text or not text.strip():
        raise ExpressionError("empty expression", 0, text or "")
    tree = _Parser(text).parse()
    coords = grid.named_coords()
    vals = _evaluate(tree, coords, text)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), grid.shape).copy()
    if not np.all(np.isfinite(vals)):
        raise ExpressionError("expression is not finite on the grid", 0, text)
    return ScalarField(grid, vals)


# -- output helpers ------------------------------------------------------------------

def _jsonable(x):
    import numpy as np

    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def result_document(command: str, config: dict, status: str, result: dict) -> dict:
    from . import __version__

    return {
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "command": command,
        "config": _jsonable(config),
        "status": status,
        "result": _jsonable(result),
    }


def write_json(path: str, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


def svg_line_plot(series: dict, title: str = "", xlabel: str = "", ylabel: str = "", logy: bool = False) -> str:
    """A small self-contained SVG with one polyline per named (x, y) series."""
    W, H, L, R, T, B = 480, 320, 64, 16, 32, 44
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")

    def ty(v):
        return math.log10(v) if logy else v

    pts = {}
    for name, (xs, ys) in series.items():
        keep = [(float(x), ty(float(y))) for x, y in zip(xs, ys) if math.isfinite(y) and (not logy or y > 0)]
        pts[name] = keep
    allp = [p for v in pts.values() for p in v]
    if not allp:
        allp = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
    y0, y1 = min(p[1] for p in allp), max(p[1] for p in allp)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(x):
        return L + (x - x0) / (x1 - x0) * (W - L - R)

    def sy(y):
        return H - B - (y - y0) / (y1 - y0) * (H - T - B)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{L}" y1="{H - B}" x2="{W - R}" y2="{H - B}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>',
        f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<text x="{W / 2:.1f}" y="{H - 8}" text-anchor="middle" font-size="11">{_esc(xlabel)}</text>',
        f'<text x="14" y="{H / 2:.1f}" text-anchor="middle" font-size="11" transform="rotate(-90 14 {H / 2:.1f})">'
        f"{_esc(ylabel + (' (log10)' if logy else ''))}</text>",
        f'<text x="{L - 4}" y="{H - B + 4}" text-anchor="end" font-size="10">{y0:.3g}</text>',
        f'<text x="{L - 4}" y="{T + 4}" text-anchor="end" font-size="10">{y1:.3g}</text>',
        f'<text x="{L}" y="{H - B + 14}" text-anchor="middle" font-size="10">{x0:.3g}</text>',
        f'<text x="{W - R}" y="{H - B + 14}" text-anchor="middle" font-size="10">{x1:.3g}</text>',
    ]
    for i, (name, p) in enumerate(pts.items()):
        col = colors[i % len(colors)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in p)
        lines.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{coords}"/>')
        lines.append(f'<text x="{W - R - 4}" y="{T + 14 * (i + 1)}" text-anchor="end" font-size="10" fill="{col}">{_esc(name)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _write_svg(path, *args, **kw):
    with open(path, "w") as fh:
        fh.write(svg_line_plot(*args, **kw))


# -- argument helpers ------------------------------------------------------------------

def _float_list(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _operator(text: str):
    from .symfunc import OperatorSpec

    try:
        return OperatorSpec.parse(text)
    except Exception as exc:
        raise UsageError(f"bad operator {text!r}: {exc}") from None


def _grid(n: int, N: int):
    from .torusgrid import TorusGrid

    try:
        return TorusGrid(n, N)
    except Exception as exc:
        raise UsageError(str(exc)) from None


def _field(grid, expr: str | None, path: str | None, default: str = "0"):
    from .torusgrid import ScalarField, read_field

    if expr is not None and path is not None:
        raise UsageError("give either an expression or a field file, not both")
    if path is not None:
        f = read_field(path)
        if not isinstance(f, ScalarField) or f.grid != grid:
            raise UsageError(f"field file {path} does not hold a scalar field on {grid}")
        return f
    try:
        return parse_field_expression(expr if expr is not None else default, grid)
    except ExpressionError as exc:
        raise UsageError(str(exc)) from None


def _chi(grid, scale: float, source: str = "identity"):
    from .torusgrid import HermitianField, read_field

    if not scale > 0:
        raise UsageError("--chi-scale must be positive")
    if source == "identity":
        return HermitianField.identity(grid, scale)
    f = read_field(source)
    if not isinstance(f, HermitianField) or f.grid != grid:
        raise UsageError(f"chi file {source} does not hold a Hermitian field on {grid}")
    return f * scale


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}


def _emit(args, status: str, result: dict) -> None:
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "result.json"), result_document(args.command, _config(args), status, result))


# -- subcommands ---------------------------------------------------------------------

def cmd_solve(args):
    import numpy as np

    from .solver import ProblemSpec, solve_periodic
    from .torusgrid import integrate, write_field

    op = _operator(args.op)
    grid = _grid(op.n, args.N)
    G = _field(grid, args.G, args.G_file)
    problem = ProblemSpec(op, _chi(grid, args.chi_scale, args.chi), G, beta=args.beta, residual_linf=args.tol, max_newton=args.max_newton)
    res = solve_periodic(problem)
    out = res.to_dict()
    out.pop("wall_time", None)
    if op.n == 1 and not op.is_quotient and args.beta is None and args.chi == "identity" and args.chi_scale == 1.0:
        # closed form for the linear 1-D operator
        out["oracle_c"] = -math.log(integrate(np.exp(G.values)))
    os.makedirs(args.out, exist_ok=True)
    write_field(os.path.join(args.out, "phi.field"), res.phi, binary=args.binary)
    write_csv(os.path.join(args.out, "residuals.csv"), ["iteration", "residual_linf", "damping"],
              [(i, r, d) for i, (r, d) in enumerate(zip(res.residuals, [1.0] + list(res.dampings)))])
    _write_svg(os.path.join(args.out, "residuals.svg"),
               {"residual": (list(range(len(res.residuals))), res.residuals)},
               title="Newton residual", xlabel="iteration", ylabel="L-inf residual", logy=True)
    _emit(args, "ok", out)
    print(f"c = {res.c:.15g}  residual = {res.residual:.3e}  iterations = {res.iterations}")
    return 0


def cmd_subsolution_check(args):
    from .viscosity import check_subsolution, check_supersolution

    op = _operator(args.op)
    grid = _grid(op.n, args.N)
    u = _field(grid, args.u, args.u_file)
    rhs = _field(grid, args.rhs, None, default="1")
    chi = _chi(grid, args.chi_scale, args.chi)
    if args.mode == "super":
        rep = check_supersolution(op, chi, u, rhs, method=args.method, tol=args.tol)
    else:
        rep = check_subsolution(op, args.mode, chi, u, rhs, method=args.method)
    out = rep.to_dict()
    out["passed"] = rep.passed and (args.mode == "super" or rep.worst_margin >= -args.tol)
    _emit(args, "ok" if out["passed"] else "check_failed", out)
    print(f"{args.mode}: worst margin {rep.worst_margin:.6g}, {len(rep.violations)} cone violations")
    return 0 if out["passed"] else 1


def cmd_supconv(args):
    from .torusgrid import write_field
    from .viscosity import inf_convolution, sup_convolution

    grid = _grid(args.n, args.N)
    phi = _field(grid, args.phi, args.phi_file)
    fn = sup_convolution if args.kind == "sup" else inf_convolution
    os.makedirs(args.out, exist_ok=True)
    reports, ok = [], True
    for eps in args.eps:
        rep = fn(phi, eps)
        reports.append(rep.to_dict())
        ok &= rep.semiconvexity >= -1e-10
        write_field(os.path.join(args.out, f"{args.kind}conv_eps{eps:g}.field"), rep.field, binary=args.binary)
    write_csv(os.path.join(args.out, "convolutions.csv"), ["eps", "radius", "semiconvexity", "min", "max"],
              [(r["eps"], r["radius"], r["semiconvexity"], r["min"], r["max"]) for r in reports])
    _emit(args, "ok" if ok else "check_failed", {"convolutions": reports, "semiconvex": ok})
    for r in reports:
        print(f"eps = {r['eps']:g}  semiconvexity certificate = {r['semiconvexity']:.3e}")
    return 0 if ok else 1


def cmd_supslope(args):
    from .solver import ProblemSpec, nested_sup_slope, solve_periodic

    op = _operator(args.op)
    grid = _grid(op.n, args.N)
    G = _field(grid, args.G, args.G_file)
    chi = _chi(grid, args.chi_scale, args.chi)
    ref = solve_periodic(ProblemSpec(op, chi, G))
    runs = nested_sup_slope(op, chi, G, args.modes, budget=args.budget, c_solver=ref.c)
    rows = [r.to_dict() for r in runs]
    bound = math.exp(ref.c)
    ok = all(r.e_c_upper >= bound - 1e-8 for r in runs) and all(
        b.e_c_upper <= a.e_c_upper for a, b in zip(runs, runs[1:])
    )
    write_csv(os.path.join(_mk(args.out), "supslope.csv"), ["modes", "estimate", "exp_c_solver", "relative_gap"],
              [(m, r.e_c_upper, bound, (r.e_c_upper - bound) / bound) for m, r in zip(args.modes, runs)])
    _emit(args, "ok" if ok else "check_failed", {"c_solver": ref.c, "exp_c_solver": bound, "estimates": rows})
    for m, r in zip(args.modes, runs):
        print(f"modes = {m}  estimate = {r.e_c_upper:.10g}  exp(c) = {bound:.10g}")
    return 0 if ok else 1


def _mk(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_stability(args):
    from .stability import fitted_exponent, stability_experiment

    op = _operator(args.op)
    grid = _grid(op.n, args.N)
    G = _field(grid, args.G, args.G_file)
    P = _field(grid, args.perturbation, None, default="cos(2*pi*x1)")
    recs = stability_experiment(op, _chi(grid, args.chi_scale, args.chi), G, P, args.amplitudes, nu=args.nu)
    ok = all(r.c_bound_ok for r in recs) and all(r.C < args.max_constant for r in recs)
    rows = [r.to_dict() for r in recs]
    keys = list(rows[0])
    write_csv(os.path.join(_mk(args.out), "stability.csv"), keys, [[r[k] for k in keys] for r in rows])
    _write_svg(os.path.join(args.out, "stability.svg"),
               {"lhs": ([r.amplitude for r in recs], [r.lhs for r in recs]),
                "rhs1+rhs2": ([r.amplitude for r in recs], [r.rhs1 + r.rhs2 for r in recs])},
               title="Stability sweep", xlabel="amplitude", ylabel="value", logy=True)
    _emit(args, "ok" if ok else "check_failed", {"records": rows, "fitted_exponent": fitted_exponent(recs)})
    for r in recs:
        print(f"a = {r.amplitude:g}  C = {r.C:.4g}  c bound {'ok' if r.c_bound_ok else 'FAILED'}")
    return 0 if ok else 1


def cmd_uniqueness(args):
    import numpy as np

    from .solver import ProblemSpec
    from .stability import random_seed_field, uniqueness_experiment

    op = _operator(args.op)
    grid = _grid(op.n, args.N)
    G = _field(grid, args.G, args.G_file)
    chi = _chi(grid, args.chi_scale, args.chi)
    problem = ProblemSpec(op, chi, G, beta=args.beta, residual_linf=args.tol)
    rng = np.random.default_rng(args.seed)
    seeds = [random_seed_field(grid, rng, op=op, chi=chi) for _ in range(args.seeds)]
    rep = uniqueness_experiment(problem, seeds)
    ok = not rep.failed and rep.max_phi_distance <= 1e-6 and rep.max_c_spread <= 1e-8
    _emit(args, "ok" if ok else "check_failed", rep.to_dict())
    print(f"{rep.converged} converged; max phi distance {rep.max_phi_distance:.3e}; c spread {rep.max_c_spread:.3e}")
    return 0 if ok else 1


def cmd_regmax_demo(args):
    from .regmax import property_table

    rows = property_table(samples=args.samples, seed=args.seed)
    table = []
    ok = True
    for r in rows:
        lower = r["max_t"] <= r["reg_max"] + 1e-8
        upper = r["reg_max"] <= r["max_t_plus_eps"] + 1e-8
        ok &= lower and upper
        table.append((r["m"], r["max_t"], r["reg_max"], r["max_t_plus_eps"], r["grad_sum"], int(lower), int(upper)))
    write_csv(os.path.join(_mk(args.out), "regmax.csv"),
              ["m", "max_t", "reg_max", "max_t_plus_eps", "grad_sum", "lower_ok", "upper_ok"], table)
    _emit(args, "ok" if ok else "check_failed", {"rows": rows, "sandwich_holds": ok})
    print(f"{len(rows)} rows; sandwich {'holds' if ok else 'FAILED'}")
    return 0 if ok else 1


def cmd_convexify_demo(args):
    import numpy as np

    from .convexify import ConvexOracle, sample_table, smooth_convex

    lo, hi = [-1.0, -1.0], [1.0, 1.0]
    oracle = ConvexOracle.paraboloid(lo, hi) if args.function == "square" else ConvexOracle.cone_plus_paraboloid(lo, hi)
    sm = smooth_convex(oracle, args.h)
    tab = sample_table(sm, args.samples)
    sandwich = bool(np.all(tab["diff"] >= 0) and np.all(tab["diff"] <= args.h))
    convex = bool(np.all(tab["min_hessian_eig"] > 0))
    write_csv(os.path.join(_mk(args.out), "convexify.csv"), ["x1", "x2", "u", "u_tilde", "diff", "min_hessian_eig"],
              [(*x, u, ut, df, me) for x, u, ut, df, me in zip(tab["x"].tolist(), tab["u"].tolist(), tab["u_tilde"].tolist(),
                                                              tab["diff"].tolist(), tab["min_hessian_eig"].tolist())])
    ok = sandwich and convex
    _emit(args, "ok" if ok else "check_failed", {
        "seeds": len(sm), "sandwich_holds": sandwich, "hessian_positive": convex,
        "diff_min": float(tab["diff"].min()), "diff_max": float(tab["diff"].max()),
        "min_hessian_eig": float(tab["min_hessian_eig"].min()),
    })
    print(f"{len(sm)} seeds; u~ - u in [{tab['diff'].min():.4g}, {tab['diff'].max():.4g}]; "
          f"min Hessian eigenvalue {tab['min_hessian_eig'].min():.4g}")
    return 0 if ok else 1


def cmd_cones(args):
    import numpy as np

    from .symfunc import (
        GammaInf,
        GammaK,
        cone_margin,
        eval_f,
        eval_f_inf,
        in_cone,
        is_plus_inf,
        operator_cone,
    )

    op = _operator(args.op)
    lam = np.asarray(args.lam, dtype=float)
    if lam.size != op.n:
        raise UsageError(f"--lam needs {op.n} entries for {op}")
    cones = {f"Gamma_{k}": GammaK(k) for k in range(1, op.n + 1)}
    cones["Gamma_inf"] = GammaInf(op)
    report = {}
    for name, cone in cones.items():
        inside = bool(in_cone(cone, lam))
        report[name] = {"member": inside, "margin": float(cone_margin(cone, lam))}
    out = {"lambda": lam.tolist(), "operator_cone": str(operator_cone(op)), "cones": report}
    out["f"] = float(eval_f(op, lam)) if in_cone(operator_cone(op), lam) else None
    if in_cone(GammaInf(op), lam):
        v = eval_f_inf(op, lam)
        out["f_inf"] = "inf" if is_plus_inf(v) else float(v)
    else:
        out["f_inf"] = None
    _emit(args, "ok", out)
    for name, r in report.items():
        print(f"{name:12s} member={r['member']!s:5s} margin={r['margin']:.6g}")
    print(f"f = {out['f']}  f_inf = {out['f_inf']}")
    return 0


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hessianlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    def problem(sp, need_G=True):
        sp.add_argument("--op", required=True, help="operator: sigma:k/n or quot:k:l/n")
        sp.add_argument("--N", type=int, default=64, help="points per real axis")
        sp.add_argument("--chi", default="identity", help="'identity' or a Hermitian field file")
        sp.add_argument("--chi-scale", type=float, default=1.0, help="multiplies chi")
        if need_G:
            sp.add_argument("--G", help="right-hand side expression")
            sp.add_argument("--G-file", help="right-hand side field file")

    sp = common(sub.add_parser("solve", help="solve the periodic equation for (phi, c)"))
    problem(sp)
    sp.add_argument("--beta", "--monotone-beta", dest="beta", type=float, default=None,
                    help="monotone mode: G(x, phi) = G(x) + beta * phi")
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--max-newton", type=int, default=60)
    sp.add_argument("--binary", action="store_true", help="write phi in binary field format")
    sp.set_defaults(func=cmd_solve)

    sp = common(sub.add_parser("subsolution-check", help="discrete sub/supersolution test of a field"))
    problem(sp, need_G=False)
    sp.add_argument("--u", help="field expression")
    sp.add_argument("--u-file", help="field file")
    sp.add_argument("--rhs", default="1", help="right-hand side expression")
    sp.add_argument("--mode", choices=("f", "f_inf", "super"), default="f")
    sp.add_argument("--method", choices=("fd2", "spectral"), default="fd2")
    sp.add_argument("--tol", type=float, default=0.0)
    sp.set_defaults(func=cmd_subsolution_check)

    sp = common(sub.add_parser("supconv", help="sup/inf convolutions of a field"))
    sp.add_argument("--n", type=int, choices=(1, 2), default=1)
    sp.add_argument("--N", type=int, default=64)
    sp.add_argument("--phi", help="field expression")
    sp.add_argument("--phi-file", help="field file")
    sp.add_argument("--eps", type=_float_list, default=[0.1, 0.05, 0.025])
    sp.add_argument("--kind", choices=("sup", "inf"), default="sup")
    sp.add_argument("--binary", action="store_true")
    sp.set_defaults(func=cmd_supconv)

    sp = common(sub.add_parser("supslope", help="upper bounds for exp(c) from trial subsolutions"))
    problem(sp)
    sp.add_argument("--modes", type=_int_list, default=[1, 3, 5])
    sp.add_argument("--budget", type=int, default=4000)
    sp.set_defaults(func=cmd_supslope)

    sp = common(sub.add_parser("stability", help="amplitude sweep of a perturbed right-hand side"))
    problem(sp)
    sp.add_argument("--perturbation", default="cos(2*pi*x1)")
    sp.add_argument("--amplitudes", type=_float_list, default=[1e-3, 1e-2, 1e-1])
    sp.add_argument("--nu", type=float, default=None)
    sp.add_argument("--max-constant", type=float, default=50.0)
    sp.set_defaults(func=cmd_stability)

    sp = common(sub.add_parser("uniqueness", help="solve from several random seeds"))
    problem(sp)
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--beta", type=float, default=None)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.set_defaults(func=cmd_uniqueness)

    sp = common(sub.add_parser("regmax-demo", help="sandwich table for the regularized maximum"))
    sp.add_argument("--samples", type=int, default=50)
    sp.set_defaults(func=cmd_regmax_demo)

    sp = common(sub.add_parser("convexify-demo", help="smooth a convex function on (-1, 1)^2"))
    sp.add_argument("--function", choices=("square", "cone"), default="square")
    sp.add_argument("--h", type=float, default=0.05)
    sp.add_argument("--samples", type=int, default=64)
    sp.set_defaults(func=cmd_convexify_demo)

    sp = common(sub.add_parser("cones", help="cone membership and operator values for one spectrum"))
    sp.add_argument("--op", required=True)
    sp.add_argument("--lam", type=_float_list, required=True, help="comma-separated eigenvalues")
    sp.set_defaults(func=cmd_cones)
    return p


def _apply_threads() -> None:
    raw = os.environ.get("HESSIANLAB_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"HESSIANLAB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"HESSIANLAB_THREADS must be a positive integer, got {raw!r}")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads()
        from .errors import ArgumentError, DataError, DomainError, HessianLabError, NonConvergenceError

        try:
            return args.func(args)
        except (ArgumentError, DataError, DomainError) as exc:
            raise UsageError(str(exc)) from None
        except NonConvergenceError as exc:
            _emit(args, "not_converged", {"error": str(exc), "diagnostics": getattr(exc, "diagnostics", None)})
            print(f"hessianlab: solve did not converge: {exc}", file=sys.stderr)
            return 1
        except HessianLabError as exc:
            print(f"hessianlab: {exc}", file=sys.stderr)
            return 1
    except (UsageError, OSError) as exc:
        print(f"hessianlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
