"""Best asymmetric linear approximation on triangles, the sharp constants
C_{p;alpha,beta}, and optimal triangle shapes for quadratic forms.

For ``p < inf`` the convex objective ``(a, b, c) -> int_T phi(f - P)`` is
minimised by a damped Newton iteration whose gradient and Hessian come from
the kink-aware quadrature in :mod:`anisomesh.integrate`.  For ``p = inf`` the
asymmetric problem reduces to minimising the oscillation of ``f - a x - b y``
(a linear program on a sample net, refined by exchange of the true extrema)
followed by a closed-form choice of the constant term.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linprog

from .geometry import AffineMap, GeometryError, Triangle, unit_equilateral
from .integrate import (
    RULE8,
    ScalarField,
    Weights,
    WeightError,
    _areas,
    _bary_net,
    _bary_points,
    asym_deviation_batch,
    deviation_integrals,
    global_coef,
    hessian_matrix,
    local_coef,
    sup_extrema,
    uniform_refine,
)

log = logging.getLogger(__name__)

PENALTY_SEQUENCE = (1e2, 1e3, 1e4, 1e6)
# successive penalty errors differ by O(1/weight); the last step of the
# fixed sequence cannot resolve changes below this
PENALTY_RESOLUTION = 1e-4


class LinearPoly(NamedTuple):
    """a*x + b*y + c"""

    a: float
    b: float
    c: float

    def __call__(self, x, y):
        return self.a * np.asarray(x) + self.b * np.asarray(y) + self.c

    def __add__(self, other):  # type: ignore[override]
        return LinearPoly(self.a + other.a, self.b + other.b, self.c + other.c)

    def __sub__(self, other):
        return LinearPoly(self.a - other.a, self.b - other.b, self.c - other.c)

    def shifted(self, dc: float) -> "LinearPoly":
        return LinearPoly(self.a, self.b, self.c + dc)


class QuadForm(NamedTuple):
    """A x^2 + B y^2 + 2 C x y"""

    A: float
    B: float
    C: float

    def __call__(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return self.A * x * x + self.B * y * y + 2.0 * self.C * x * y

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.A, self.C], [self.C, self.B]], dtype=float)

    @property
    def det(self) -> float:
        return self.A * self.B - self.C * self.C

    @property
    def positive_definite(self) -> bool:
        return self.A > 0 and self.det > 0

    def eigen(self):
        """(lam_min, lam_max, e_min, e_max), larger-magnitude root first."""
        return sym2_eigen(self.A, self.B, self.C)


def sym2_eigen(A, B, C):
    """Eigen-decomposition of [[A, C], [C, B]] (scalars or arrays).

    The root of larger magnitude comes from the trace formula, the other from
    det / root, which keeps small eigenvalues accurate.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    mean = 0.5 * (A + B)
    r = np.hypot(0.5 * (A - B), C)
    big = mean + np.where(mean >= 0, r, -r)
    det = A * B - C * C
    with np.errstate(divide="ignore", invalid="ignore"):
        other = np.where(big != 0, det / np.where(big != 0, big, 1.0), 0.0)
    lam_max = np.maximum(big, other)
    lam_min = np.minimum(big, other)
    theta = 0.5 * np.arctan2(2.0 * C, A - B)
    e_max = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    e_min = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    if lam_min.ndim == 0:
        return float(lam_min), float(lam_max), e_min, e_max
    return lam_min, lam_max, e_min, e_max


@dataclass(frozen=True)
class ApproxResult:
    poly: LinearPoly
    error: float
    converged: bool
    evaluations: int


class ConvergenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# p < inf: damped Newton on the p-th power integral
# --------------------------------------------------------------------------

def _interp_local(fv: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Local coefficients of the vertex interpolant."""
    center = tris.mean(axis=1)
    s = np.sqrt(np.maximum(_areas(tris), 1e-300))
    xi = (tris[..., 0] - center[:, 0, None]) / s[:, None]
    eta = (tris[..., 1] - center[:, 1, None]) / s[:, None]
    M = np.stack([np.ones_like(xi), xi, eta], axis=2)
    return np.linalg.solve(M, fv[..., None])[..., 0]


def _starts(f: ScalarField, tris: np.ndarray, w: Weights, count: int) -> list[np.ndarray]:
    """Deterministic start points: vertex interpolant, centroid-shifted
    variants of it, and the L2 projection on a fixed rule."""
    fv = f(tris[..., 0], tris[..., 1])
    interp = _interp_local(fv, tris)
    cen = tris.mean(axis=1)
    dc = f(cen[:, 0], cen[:, 1]) - interp[:, 0]
    a, b = (w.alpha, w.beta) if w.finite else (1.0, 1.0)
    shifted_w = interp.copy()
    shifted_w[:, 0] += dc * b / (a + b)
    shifted_full = interp.copy()
    shifted_full[:, 0] += dc
    # L2 projection with a level-1 composite degree-8 rule
    sub = uniform_refine(tris, 1).reshape(len(tris), 4, 3, 2)
    pts = np.einsum("kj,nsjd->nskd", RULE8.nodes, sub).reshape(len(tris), -1, 2)
    wts = np.tile(RULE8.weights, 4)
    s = np.sqrt(np.maximum(_areas(tris), 1e-300))
    xi = (pts[..., 0] - cen[:, 0, None]) / s[:, None]
    eta = (pts[..., 1] - cen[:, 1, None]) / s[:, None]
    basis = np.stack([np.ones_like(xi), xi, eta], axis=2)
    fvals = f(pts[..., 0], pts[..., 1])
    G = np.einsum("nki,nkj,k->nij", basis, basis, wts)
    rhs = np.einsum("nki,nk,k->ni", basis, fvals, wts)
    l2 = np.linalg.solve(G, rhs[..., None])[..., 0]
    return [interp, shifted_w, shifted_full, l2][:count]


def _newton(f: ScalarField, tris: np.ndarray, coef0: np.ndarray, w: Weights, rtol: float,
            max_iter: int = 80):
    """Minimise int phi(f - P) per triangle.  Returns (coef, F, converged, evals).

    Inexact Newton: the quadrature tolerance follows the Newton decrement
    down to ``0.1 * rtol * F``; steps are capped in the sup norm of P - P_old
    on the triangle so that flat Hessians cannot throw the iterate away.
    """
    n = len(tris)
    coef = coef0.copy()
    F0, _ = deviation_integrals(f, tris, coef, w, 1e-3, order=0)
    scale = np.maximum(F0[:, 0], 1e-300)
    floor = 0.1 * rtol * scale
    acc = np.maximum(1e-4 * scale, floor)
    # sup |xi|, |eta| over the vertices and a step cap in value units
    cen = tris.mean(axis=1)
    s = np.sqrt(np.maximum(_areas(tris), 1e-300))
    rho = (np.abs(tris - cen[:, None, :]).max(axis=1) / s[:, None]).max(axis=1)
    fv = f(tris[..., 0], tris[..., 1])
    cap = 2.0 * np.maximum(np.ptp(fv, axis=1), (scale / s ** 2) ** (1.0 / w.p))
    active = np.ones(n, dtype=bool)
    conv = np.zeros(n, dtype=bool)
    F = np.full(n, np.inf)
    evals = 1
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if not len(idx):
            break
        vals, _ = deviation_integrals(f, tris[idx], coef[idx], w, acc[idx], order=2)
        evals += 1
        Fi = vals[:, 0]
        g = vals[:, 1:4]
        H = hessian_matrix(vals[:, 4:])
        F[idx] = Fi
        tr = np.trace(H, axis1=1, axis2=2)
        H = H + (1e-10 * np.maximum(tr, 1e-300))[:, None, None] * np.eye(3)
        d = -np.linalg.solve(H, g[..., None])[..., 0]
        slope = np.einsum("ij,ij->i", g, d)
        bad = ~(slope < 0) | ~np.isfinite(slope)
        d[bad] = -g[bad]
        with np.errstate(over="ignore", invalid="ignore"):
            size = np.abs(d[:, 0]) + (np.abs(d[:, 1]) + np.abs(d[:, 2])) * rho[idx]
        # a vanishing model Hessian (p = 1 with no sign change) gives no usable
        # Newton step; descend along the gradient instead
        flat = ~np.isfinite(size)
        if flat.any():
            d[flat] = -g[flat]
            size[flat] = np.abs(d[flat, 0]) + (np.abs(d[flat, 1]) + np.abs(d[flat, 2])) * rho[idx[flat]]
        shrink = np.minimum(1.0, cap[idx] / np.maximum(size, 1e-300))
        d *= shrink[:, None]
        slope = np.einsum("ij,ij->i", g, d)
        at_floor = acc[idx] <= floor[idx]
        small = -slope <= rtol * np.maximum(Fi, 1e-300)
        done = small & at_floor
        step = np.ones(len(idx))
        pending = ~small
        accepted = np.zeros(len(idx), dtype=bool)
        newF = Fi.copy()
        for _ls in range(24):
            if not pending.any():
                break
            j = np.flatnonzero(pending)
            trial = coef[idx[j]] + step[j, None] * d[j]
            Ft, _ = deviation_integrals(f, tris[idx[j]], trial, w, acc[idx[j]], order=0)
            evals += 1
            ok = Ft[:, 0] <= Fi[j] + 1e-4 * step[j] * slope[j] + 2.0 * acc[idx[j]]
            hit = j[ok]
            coef[idx[hit]] += step[hit, None] * d[hit]
            newF[hit] = Ft[ok, 0]
            accepted[hit] = True
            pending[hit] = False
            step[j[~ok]] *= 0.5
        # line search exhausted at full accuracy: we sit at the noise level
        stalled = pending & at_floor
        stagnant = accepted & at_floor & (Fi - newF <= 0.1 * rtol * Fi)
        F[idx[accepted]] = newF[accepted]
        finished = done | stalled | stagnant
        conv[idx[finished]] = True
        active[idx[finished]] = False
        # tighten the quadrature as the decrement shrinks
        acc[idx] = np.maximum(floor[idx], np.minimum(acc[idx], 0.01 * np.abs(slope)))
        acc[idx[small | pending]] = floor[idx[small | pending]]
        # heavy backtracking means the model and the coarse values disagree
        rough = accepted & (step < 0.25)
        acc[idx[rough]] = np.maximum(floor[idx[rough]], 0.01 * acc[idx[rough]])
    return coef, F, conv, evals


def _final_errors(f, tris, coef, w, rtol, F):
    vals, _ = deviation_integrals(f, tris, coef, w, 0.01 * rtol * np.maximum(F, 1e-300))
    return np.maximum(vals[:, 0], 0.0) ** (1.0 / w.p)


# --------------------------------------------------------------------------
# p = inf: oscillation minimisation
# --------------------------------------------------------------------------

def _minimax_one(f: ScalarField, tri: np.ndarray, tol: float, divisions: int = 16):
    """min over (a, b) of osc_T (f - a xi - b eta) in local coordinates.

    Returns (a, b, gmax, gmin) with extrema of g = f - a xi - b eta.
    """
    cen = tri.mean(axis=0)
    s = math.sqrt(max(abs(_areas(tri[None])[0]), 1e-300))
    net = _bary_net(divisions)
    pts = net @ tri
    xs, ys = list(pts[:, 0]), list(pts[:, 1])
    a = b = 0.0
    gmax = gmin = None
    for _ in range(30):
        X = np.array(xs)
        Y = np.array(ys)
        fv = f(X, Y)
        xi = (X - cen[0]) / s
        eta = (Y - cen[1]) / s
        k = len(X)
        # variables a, b, u, l ; minimise u - l
        A_ub = np.block([[-xi[:, None], -eta[:, None], -np.ones((k, 1)), np.zeros((k, 1))],
                         [xi[:, None], eta[:, None], np.zeros((k, 1)), np.ones((k, 1))]])
        b_ub = np.concatenate([-fv, fv])
        res = linprog([0, 0, 1, -1], A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * 4, method="highs")
        if res.status != 0:
            raise ConvergenceError(f"minimax LP failed: {res.message}")
        a, b, u, l = res.x
        lp_osc = u - l

        def g(idx, x, y, a=a, b=b):
            return f(x, y) - a * (x - cen[0]) / s - b * (y - cen[1]) / s

        hi, lo, amax, amin = sup_extrema(g, tri[None], tol)
        gmax, gmin = float(hi[0]), float(lo[0])
        if (gmax - gmin) - lp_osc <= tol * max(1.0, abs(gmax - gmin)):
            break
        xs += [amax[0, 0], amin[0, 0]]
        ys += [amax[0, 1], amin[0, 1]]
    return a, b, gmax, gmin


def _minimax_batch(f, tris, w: Weights, tol: float):
    n = len(tris)
    coef = np.zeros((n, 3))
    err = np.zeros(n)
    for i in range(n):
        a, b, gmax, gmin = _minimax_one(f, tris[i], tol)
        alpha, beta = w.alpha, w.beta
        if math.isinf(alpha):
            c0, e = gmax, beta * (gmax - gmin)
        elif math.isinf(beta):
            c0, e = gmin, alpha * (gmax - gmin)
        else:
            c0 = (alpha * gmax + beta * gmin) / (alpha + beta)
            e = alpha * beta * (gmax - gmin) / (alpha + beta)
        coef[i] = (c0, a, b)
        err[i] = e
    return coef, err


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------

def best_linear_batch(f: ScalarField, tris: np.ndarray, w: Weights, tol: float = 1e-9,
                      starts: int = 4):
    """Best (alpha, beta)-approximation on many triangles at once.

    Returns ``(abc, errors, converged, evaluations)`` with global coefficients.
    Multistart runs are batched; agreement of their errors within
    ``tol * (1 + error)`` certifies convergence.
    """
    tris = np.asarray(tris, dtype=float).reshape(-1, 3, 2)
    n = len(tris)
    if w.p_inf:
        coef, err = _minimax_batch(f, tris, w, tol)
        return global_coef(tris, coef), err, np.ones(n, dtype=bool), n
    if not w.finite:
        raise WeightError("use one_sided_best for infinite weights with p < inf")
    st = _starts(f, tris, w, max(1, min(starts, 4)))
    k = len(st)
    rep = np.tile(tris, (k, 1, 1))
    coef, F, conv, evals = _newton(f, rep, np.concatenate(st), w, tol)
    err = _final_errors(f, rep, coef, w, tol, F).reshape(k, n)
    conv = conv.reshape(k, n)
    coef = coef.reshape(k, n, 3)
    best = np.argmin(err, axis=0)
    ar = np.arange(n)
    e_best = err[best, ar]
    agree = (err.max(axis=0) - e_best) <= tol * (1.0 + e_best)
    ok = conv.all(axis=0) & agree
    return global_coef(tris, coef[best, ar]), e_best, ok, evals


def best_linear(f: ScalarField, t: Triangle, w: Weights, tol: float = 1e-9, starts: int = 4) -> ApproxResult:
    """Best linear (alpha, beta)-approximation of ``f`` on ``t``.

    Infinite weights are delegated to :func:`one_sided_best` when ``p < inf``.
    """
    if not w.finite and not w.p_inf:
        side = "above" if math.isinf(w.alpha) else "below"
        return one_sided_best(f, t, w.p, side, tol)
    abc, err, ok, ev = best_linear_batch(f, t.array[None], w, tol, starts)
    if not ok[0]:
        log.warning("best_linear: multistart disagreement or non-convergence on %s", t)
    return ApproxResult(LinearPoly(*abc[0]), float(err[0]), bool(ok[0]), int(ev))


def _check_nodes(tri: np.ndarray) -> np.ndarray:
    net = _bary_points(tri[None], _bary_net(16))[0]
    sub = uniform_refine(tri[None], 2)
    q = _bary_points(sub, RULE8.nodes).reshape(-1, 2)
    return np.concatenate([net, q])


def one_sided_best(f: ScalarField, t: Triangle, p: float, side: str = "above",
                   tol: float = 1e-9) -> ApproxResult:
    """Best one-sided approximation from ``above`` (P >= f) or ``below`` (P <= f).

    For p < inf the weight on the forbidden side escalates through
    ``PENALTY_SEQUENCE``; the final polynomial is shifted so the sign
    constraint holds at every check node.
    """
    if side not in ("above", "below"):
        raise ValueError("side must be 'above' or 'below'")
    if math.isinf(p):
        w = Weights(p, math.inf, 1.0) if side == "above" else Weights(p, 1.0, math.inf)
        abc, err, ok, ev = best_linear_batch(f, t.array[None], w, tol)
        return ApproxResult(LinearPoly(*abc[0]), float(err[0]), bool(ok[0]), int(ev))
    tri = t.array
    prev = None
    poly = None
    evals = 0
    converged = False
    coef_start = None
    for pen in PENALTY_SEQUENCE:
        w = Weights(p, pen, 1.0) if side == "above" else Weights(p, 1.0, pen)
        if coef_start is None:
            res = best_linear(f, t, w, tol)
            poly = res.poly
            evals += res.evaluations
        else:
            coef, _, _, ev = _newton(f, tri[None], coef_start, w, tol)
            evals += ev
            poly = LinearPoly(*global_coef(tri[None], coef)[0])
        err = float(asym_deviation_batch(f, tri[None], np.array([poly]), w, 1e-3 * tol)[0][0])
        coef_start = local_coef(tri[None], np.array([poly]))
        if prev is not None and abs(err - prev) < max(tol, PENALTY_RESOLUTION) * (1 + err):
            converged = True
        prev = err
    nodes = _check_nodes(tri)
    gap = f(nodes[:, 0], nodes[:, 1]) - poly(nodes[:, 0], nodes[:, 1])
    if side == "above":
        poly = poly.shifted(max(0.0, float(gap.max())))
    else:
        poly = poly.shifted(-max(0.0, float(-gap.min())))
    err = float(asym_deviation_batch(f, tri[None], np.array([poly]), Weights(p, 1.0, 1.0), 1e-3 * tol)[0][0])
    return ApproxResult(poly, err, converged, evals)


def closed_form_constant(p: float, alpha: float, beta: float) -> float | None:
    """Known closed forms: every (inf, alpha, beta); p = 1 when
    3^{3/2} alpha / pi <= alpha + beta."""
    if math.isinf(p):
        if math.isinf(alpha):
            return 4 * 3 ** -1.5 * beta
        if math.isinf(beta):
            return 4 * 3 ** -1.5 * alpha
        return 4 * 3 ** -1.5 * alpha * beta / (alpha + beta)
    if p == 1:
        if math.isinf(alpha):
            return None
        if math.isinf(beta):
            return 3 ** -1.5 * alpha
        if 3 ** 1.5 / math.pi * alpha <= alpha + beta:
            return 3 ** -1.5 * alpha - alpha ** 2 / (2 * math.pi * (alpha + beta))
    return None


_CACHE: dict[tuple, ApproxResult] = {}
_CACHE_LOCK = threading.Lock()


def _key(p, alpha, beta):
    def r(v):
        return v if math.isinf(v) else round(v, 12)
    return (r(float(p)), r(float(alpha)), r(float(beta)))


def equilateral_solution(p: float, alpha: float, beta: float, tol: float = 1e-10) -> ApproxResult:
    """Best approximation of x^2 + y^2 on the unit-area equilateral triangle."""
    key = _key(p, alpha, beta)
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
        if hit is not None:
            return hit
        w = Weights(p, alpha, beta)
        res = best_linear(_q, unit_equilateral(), w, tol)
        _CACHE[key] = res
        return res


def _q(x, y):
    return x * x + y * y


def constant_C(p: float, alpha: float = 1.0, beta: float = 1.0, tol: float = 1e-10) -> float:
    """C_{p;alpha,beta}: best deviation of x^2 + y^2 on the unit equilateral."""
    return equilateral_solution(p, alpha, beta, tol).error


def vertex_offset(p: float, alpha: float, beta: float) -> float:
    """Common value of q - P at the vertices of the unit equilateral triangle
    for the best approximation P of q = x^2 + y^2."""
    res = equilateral_solution(p, alpha, beta)
    v = unit_equilateral().array
    return float(np.mean(_q(v[:, 0], v[:, 1]) - res.poly(v[:, 0], v[:, 1])))


_JAC_CACHE: dict[tuple, np.ndarray] = {}
JAC_STEP = 0.02


def offset_jacobian(p: float, alpha: float, beta: float, tol: float = 1e-8) -> np.ndarray:
    """Derivatives of the vertex values of q + h D - P (P the best
    approximation on the unit equilateral) at h = 0, for the traceless
    directions D = x^2 - y^2 and D = 2xy.  Returns a (2, 3) array."""
    key = _key(p, alpha, beta)
    with _CACHE_LOCK:
        hit = _JAC_CACHE.get(key)
    if hit is not None:
        return hit
    w = Weights(p, alpha, beta)
    E = unit_equilateral()
    v = E.array
    out = np.zeros((2, 3))
    for k, (a, b, c) in enumerate(((1.0, -1.0, 0.0), (0.0, 0.0, 1.0))):
        vals = []
        for h in (JAC_STEP, -JAC_STEP):
            def fh(x, y, h=h):
                return x * x + y * y + h * (a * x * x + b * y * y + 2 * c * x * y)
            res = best_linear(fh, E, w, tol)
            vals.append(fh(v[:, 0], v[:, 1]) - res.poly(v[:, 0], v[:, 1]))
        out[k] = (vals[0] - vals[1]) / (2 * JAC_STEP)
    with _CACHE_LOCK:
        _JAC_CACHE[key] = out
    return out


def optimal_map(Q: QuadForm) -> AffineMap:
    """Linear map U diag(lam^{-1/2}) taking q(u, v) to Q(x, y)."""
    if not Q.positive_definite:
        raise GeometryError(f"quadratic form {Q} is not positive definite")
    lmin, lmax, emin, emax = Q.eigen()
    U = np.column_stack([emin, emax])
    return AffineMap(U @ np.diag([lmin ** -0.5, lmax ** -0.5]))


def optimal_triangle(Q: QuadForm, target_area: float) -> Triangle:
    """Optimal triangle for ``Q``: image of the unit equilateral triangle under
    the map that turns q into Q, rescaled to ``target_area``."""
    if target_area <= 0:
        raise ValueError("target_area must be positive")
    M = optimal_map(Q)
    t = M.apply(unit_equilateral())
    return t.scaled(math.sqrt(target_area / t.area), about=(0.0, 0.0))


def form_error_floor(Q: QuadForm, w: Weights, area: float) -> float:
    """Minimal deviation of Q over triangles of the given area."""
    if not Q.positive_definite:
        raise GeometryError(f"quadratic form {Q} is not positive definite")
    expo = 1.0 if w.p_inf else 1.0 + 1.0 / w.p
    return constant_C(w.p, w.alpha, w.beta) * math.sqrt(Q.det) * area ** expo


def aspect_ratio(t: Triangle) -> float:
    """diam^2 / area."""
    return t.diameter ** 2 / t.area


def random_unit_triangles(count: int, seed: int = 0, spread: float = 1.0) -> list[Triangle]:
    """Random triangles rescaled to unit area (used by optimality checks)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        v = rng.normal(scale=spread, size=(3, 2))
        t = Triangle.from_array(v).normalized()
        if t.area < 1e-3 or aspect_ratio(t) > 200:
            continue
        out.append(Triangle.from_array((v - v.mean(axis=0)) / math.sqrt(t.area)).normalized())
    return out


def quadform_from_points(values: Sequence[float]) -> QuadForm:
    A, B, C = values
    return QuadForm(float(A), float(B), float(C))
