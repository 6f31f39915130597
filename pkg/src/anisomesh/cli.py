"""Command line interface: ``anisomesh {constant,mesh,error,convergence,selftest}``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import export
from .approx import ConvergenceError, closed_form_constant, equilateral_solution
from .functions import HessianSignError, get_function, predicted_limit
from .integrate import Weights, WeightError
from .mesher import DEFAULT_EPS, BuildParams, build
from .spline import DEFAULT_TOL, assemble, convergence_run, free_spline_error, global_error

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NONCONVERGENCE = 4

CONSTANT_TOL = 1e-10
# the adaptive quadrature may spend up to 1.5 tol; beyond 2 tol the
# requested accuracy was not reached
TOL_SLACK = 2.0

log = logging.getLogger("anisomesh")


class UsageError(Exception):
    pass


def real_or_inf(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        v = float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'inf', got {text!r}") from None
    if math.isnan(v):
        raise argparse.ArgumentTypeError("nan is not allowed")
    return v


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("N list must hold positive integers")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise argparse.ArgumentTypeError("N list must be increasing")
    return vals


def _options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--function", default="sum-squares",
                        help="registry name or poly:[[i,j,c],...] (default sum-squares)")
    common.add_argument("--p", type=real_or_inf, default=2.0, help="norm exponent, number or inf")
    common.add_argument("--alpha", type=real_or_inf, default=1.0, help="weight of the positive part")
    common.add_argument("--beta", type=real_or_inf, default=1.0, help="weight of the negative part")
    common.add_argument("--n", type=positive_int, help="triangle budget N")
    common.add_argument("--n-list", type=int_list, help="increasing budgets, e.g. 256,1024,4096")
    common.add_argument("--eps", type=float, default=DEFAULT_EPS, help="classification parameter")
    common.add_argument("--m", type=positive_int, default=None, help="override the number of cells per side")
    common.add_argument("--full-budget", action="store_true",
                        help="spend the whole budget N instead of the conservative share")
    common.add_argument("--tol", type=float, default=None, help="quadrature / solver tolerance")
    common.add_argument("--out", type=Path, help="write the JSON result (mesh JSON for 'mesh') here")
    common.add_argument("--svg", type=Path, help="write an SVG picture of the mesh")
    common.add_argument("--csv", type=Path, help="write the convergence table as CSV")
    return common


def make_parser() -> argparse.ArgumentParser:
    common = _options()
    parser = argparse.ArgumentParser(prog="anisomesh",
                                     description="Asymptotically optimal anisotropic triangulations "
                                                 "for asymmetric L_p piecewise linear approximation.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("constant", parents=[common], help="optimal error constant C_{p;alpha,beta}")
    sub.add_parser("mesh", parents=[common], help="build a triangulation with N triangles")
    sub.add_parser("error", parents=[common], help="spline error on one triangulation")
    sub.add_parser("convergence", parents=[common], help="scaled error over an increasing N list")
    sub.add_parser("selftest", parents=[common], help="quick consistency checks")
    return parser


def _weights(args) -> Weights:
    try:
        return Weights(args.p, args.alpha, args.beta)
    except WeightError as exc:
        raise UsageError(str(exc)) from None


def _function(args):
    try:
        return get_function(args.function)
    except (KeyError, ValueError) as exc:
        if isinstance(exc, HessianSignError):
            raise
        raise UsageError(exc.args[0] if exc.args else str(exc)) from None


def _params(args, N: int, w: Weights) -> BuildParams:
    if not 0.0 < args.eps < 1.0:
        raise UsageError("--eps must lie in (0, 1)")
    return BuildParams(N, args.eps, w, args.m, args.full_budget)


def _tol(args, default: float) -> float:
    tol = default if args.tol is None else args.tol
    if not tol > 0:
        raise UsageError("--tol must be positive")
    return tol


def _emit(payload, args, to_stdout: bool = True):
    text = export.dumps(payload) + "\n"
    if args.out is not None:
        args.out.write_text(text)
    if to_stdout:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _method(w: Weights) -> str:
    if w.p_inf:
        return "minimax-lp"
    if not w.finite:
        return "penalty-limit"
    return "newton-multistart"


def cmd_constant(args) -> int:
    w = _weights(args)
    tol = _tol(args, CONSTANT_TOL)
    res = equilateral_solution(w.p, w.alpha, w.beta, tol)
    closed = closed_form_constant(w.p, w.alpha, w.beta)
    out = {
        "p": w.p, "alpha": w.alpha, "beta": w.beta,
        "C": res.error,
        "method": _method(w),
        "tol": tol,
        "closed_form_if_known": closed,
    }
    if closed is not None:
        out["relative_difference"] = abs(res.error - closed) / closed
    out["converged"] = res.converged
    _emit(out, args)
    return EXIT_OK if res.converged else EXIT_NONCONVERGENCE


def _need_n(args) -> int:
    if args.n is None:
        raise UsageError("--n is required")
    return args.n


def cmd_mesh(args) -> int:
    f = _function(args)
    w = _weights(args)
    tri = build(f, _params(args, _need_n(args), w))
    summary = {"function": f.name, **tri.summary()}
    if args.out is not None:
        args.out.write_text(export.mesh_json(tri.mesh) + "\n")
    if args.svg is not None:
        args.svg.write_text(export.mesh_svg(tri.mesh))
    sys.stdout.write(export.dumps(summary) + "\n")
    return EXIT_OK if summary["conformity"] == "pass" else EXIT_VALIDATION


def cmd_error(args) -> int:
    f = _function(args)
    w = _weights(args)
    tol = _tol(args, DEFAULT_TOL)
    tri = build(f, _params(args, _need_n(args), w))
    s = assemble(f, tri, w)
    rep = global_error(f, s, w, tol)
    free = free_spline_error(f, tri, w, tol)
    pred = predicted_limit(f, w)
    n = tri.count
    out = {
        "function": f.name, "p": w.p, "alpha": w.alpha, "beta": w.beta,
        "N": args.n, "N_actual": n, "m": tri.m,
        "error": rep.total, "N_times_error": n * rep.total,
        "free_error": free, "N_times_free_error": n * free,
        "predicted": pred,
        "ratio": n * rep.total / pred if pred else None,
        "free_ratio": n * free / pred if pred else None,
        "achieved_tol": rep.achieved_tol,
        "conformity": tri.summary()["conformity"],
    }
    if args.svg is not None:
        args.svg.write_text(export.mesh_svg(tri.mesh))
    _emit(out, args)
    if out["conformity"] != "pass":
        return EXIT_VALIDATION
    return EXIT_NONCONVERGENCE if rep.achieved_tol > TOL_SLACK * tol else EXIT_OK


CSV_COLUMNS = ["N", "N_actual", "m", "error", "N_times_error", "predicted", "ratio",
               "free_error", "free_ratio"]


def cmd_convergence(args) -> int:
    f = _function(args)
    w = _weights(args)
    tol = _tol(args, DEFAULT_TOL)
    if args.n_list is None:
        raise UsageError("--n-list is required")
    if not 0.0 < args.eps < 1.0:
        raise UsageError("--eps must lie in (0, 1)")
    rows: list[dict] = []
    status = EXIT_OK
    failure = None

    def progress(row):
        rows.append(row.as_dict())
        log.info("N=%d: N_actual=%d ratio=%s", row.N, row.N_actual, row.ratio)

    try:
        res = convergence_run(f, w, args.n_list, args.eps, full_budget=args.full_budget,
                              m_override=args.m, tol=tol, free=True, progress=progress)
        summary = {"last_ratio": res.last_ratio, "trend": res.trend}
        notes = res.notes
    except (ConvergenceError, RuntimeError, FloatingPointError) as exc:
        failure = f"{type(exc).__name__}: {exc}"
        ratios = [r["ratio"] for r in rows]
        summary = {"last_ratio": ratios[-1] if ratios else None, "trend": "incomplete"}
        notes = []
        status = EXIT_NONCONVERGENCE
    out = {"function": f.name, "p": w.p, "alpha": w.alpha, "beta": w.beta,
           "rows": rows, "summary": summary, "notes": notes}
    if failure is not None:
        out["failure"] = failure
    if args.csv is not None:
        args.csv.write_text(export.rows_csv(rows, CSV_COLUMNS))
    _emit(out, args)
    return status


def cmd_selftest(args) -> int:
    """Fast end-to-end checks; exit 3 when any fails."""
    checks = []

    def check(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # reported, not raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        checks.append({"check": name, "ok": bool(ok), "detail": detail})

    def constants():
        c = equilateral_solution(math.inf, 1.0, 1.0).error
        c1 = equilateral_solution(1.0, 1.0, 1.0).error
        ref, ref1 = closed_form_constant(math.inf, 1, 1), closed_form_constant(1, 1, 1)
        return abs(c - ref) < 1e-6 and abs(c1 - ref1) < 1e-5, f"C_inf={c:.7f} C_1={c1:.7f}"

    def mesh_and_spline():
        f = get_function("sum-squares")
        w = Weights(2, 1, 1)
        tri = build(f, BuildParams(256, DEFAULT_EPS, w))
        rep = tri.mesh.check_conformity()
        s = assemble(f, tri, w)
        # linear interpolant on each triangle reproduces the vertex values
        abc = s.coefficients()
        X = tri.mesh.coords
        v = s.values[tri.mesh.triangles]
        resid = np.abs(abc[:, None, 0] * X[..., 0] + abc[:, None, 1] * X[..., 1] + abc[:, None, 2] - v).max()
        return rep.ok and tri.count <= 256 and resid < 1e-10, \
            f"count={tri.count} area={rep.total_area:.12f} resid={resid:.1e}"

    def linear_exact():
        f = get_function("linear")
        w = Weights(2, 1, 1)
        tri = build(f, BuildParams(64, DEFAULT_EPS, w))
        e = global_error(f, assemble(f, tri, w), w).total
        return e < 1e-12 and set(tri.group_histogram()) == {4}, f"error={e:.2e}"

    check("closed-form constants", constants)
    check("mesh and spline", mesh_and_spline)
    check("linear reproduction", linear_exact)
    ok = all(c["ok"] for c in checks)
    _emit({"ok": ok, "checks": checks}, args)
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {
    "constant": cmd_constant,
    "mesh": cmd_mesh,
    "error": cmd_error,
    "convergence": cmd_convergence,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"anisomesh: error: {exc}\n")
        return EXIT_USAGE
    except HessianSignError as exc:
        sys.stderr.write(f"anisomesh: validation failed: {exc}\n")
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        sys.stderr.write(f"anisomesh: no convergence: {exc}\n")
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
