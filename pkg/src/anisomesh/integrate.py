"""Quadrature on triangles and asymmetric L_p deviations.

The deviation integrand ``(alpha*g_+ + beta*g_-)**p`` has a kink on the zero
set of ``g = f - P``.  Elements whose vertex values of ``g`` change sign are
split along the zero line of the linear interpolant of ``g`` and each piece is
integrated with the smooth one-signed branch; adaptivity then only has to
resolve the curvature of the zero set, which is cheap.

Everything here is vectorised over many ``(triangle, linear polynomial)``
items at once so that whole meshes are processed in a few numpy passes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Triangle

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]

MAX_LEVEL = 12
START_LEVEL = 2
ROUNDOFF_ULPS = 64
# elements per quadrature pass; bounds the (elements x points x components) temporaries
ELEMENT_CHUNK = 20000
P_INF_DIVISIONS = 16


class QuadratureBudgetError(RuntimeError):
    """Subdivision budget exhausted before the tolerance was met."""

    def __init__(self, estimate, achieved_tol):
        super().__init__(f"quadrature budget exhausted (achieved tol {achieved_tol:.3g})")
        self.estimate = estimate
        self.achieved_tol = achieved_tol


class WeightError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray  # barycentric, (k, 3)
    weights: np.ndarray  # sum to 1
    degree: int


def _orbit3(a):
    return [(a, a, 1 - 2 * a), (a, 1 - 2 * a, a), (1 - 2 * a, a, a)]


def _orbit6(a, b):
    c = 1 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _radon7() -> QuadratureRule:
    s = math.sqrt(15.0)
    a1, a2 = (6 - s) / 21, (6 + s) / 21
    w1, w2 = (155 - s) / 1200, (155 + s) / 1200
    nodes = [(1 / 3, 1 / 3, 1 / 3)] + _orbit3(a1) + _orbit3(a2)
    weights = [9 / 40] + [w1] * 3 + [w2] * 3
    return QuadratureRule(np.array(nodes), np.array(weights), 5)


def _dunavant16() -> QuadratureRule:
    nodes = [(1 / 3, 1 / 3, 1 / 3)]
    weights = [0.144315607677787]
    for w, a in ((0.095091634267285, 0.459292588292723),
                 (0.103217370534718, 0.170569307751760),
                 (0.032458497623198, 0.050547228317031)):
        nodes += _orbit3(a)
        weights += [w] * 3
    nodes += _orbit6(0.008394777409958, 0.263112829634638)
    weights += [0.027230314174435] * 6
    w = np.array(weights)
    return QuadratureRule(np.array(nodes), w / w.sum(), 8)


RULE5 = _radon7()
RULE8 = _dunavant16()


@dataclass(frozen=True)
class Weights:
    """Asymmetric norm parameters; ``math.inf`` encodes one-sided limits."""

    p: float = 2.0
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        p, a, b = float(self.p), float(self.alpha), float(self.beta)
        if not (p >= 1) or math.isnan(p):
            raise WeightError(f"p must be >= 1, got {p}")
        if not (a > 0 and b > 0):
            raise WeightError("alpha and beta must be positive")
        if math.isinf(a) and math.isinf(b):
            raise WeightError("alpha and beta cannot both be infinite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.alpha) and math.isfinite(self.beta)

    @property
    def p_inf(self) -> bool:
        return math.isinf(self.p)

    def swapped(self) -> "Weights":
        return Weights(self.p, self.beta, self.alpha)

    def with_weights(self, alpha: float, beta: float) -> "Weights":
        return Weights(self.p, alpha, beta)


# --------------------------------------------------------------------------
# element helpers
# --------------------------------------------------------------------------

def _bary_points(tris: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """(E,3,2) x (k,3) -> (E,k,2)."""
    bt = np.ascontiguousarray(bary.T)
    return np.stack([tris[..., 0] @ bt, tris[..., 1] @ bt], axis=-1)


def _children(tris: np.ndarray) -> np.ndarray:
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    kids = np.stack([
        np.stack([a, ab, ca], axis=1),
        np.stack([ab, b, bc], axis=1),
        np.stack([ca, bc, c], axis=1),
        np.stack([bc, ca, ab], axis=1),
    ], axis=1)
    return kids.reshape(-1, 3, 2)


def uniform_refine(tris: np.ndarray, levels: int) -> np.ndarray:
    out = np.asarray(tris, dtype=float).reshape(-1, 3, 2)
    for _ in range(levels):
        out = _children(out)
    return out


def _areas(tris: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs((tris[:, 1, 0] - tris[:, 0, 0]) * (tris[:, 2, 1] - tris[:, 0, 1])
                        - (tris[:, 2, 0] - tris[:, 0, 0]) * (tris[:, 1, 1] - tris[:, 0, 1]))


# --------------------------------------------------------------------------
# plain adaptive integration
# --------------------------------------------------------------------------

def _adaptive_plain(g: ScalarField, tris: np.ndarray, tol: np.ndarray, max_level: int):
    n = len(tris)
    owner = np.repeat(np.arange(n), 4 ** START_LEVEL)
    elems = uniform_refine(tris, START_LEVEL)
    owner_area = np.maximum(_areas(tris), 1e-300)
    total = np.zeros(n)
    residual = np.zeros(n)
    level = START_LEVEL
    while len(elems):
        ar = _areas(elems)
        vals = []
        for rule in (RULE5, RULE8):
            pts = _bary_points(elems, rule.nodes)
            v = np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float)
            vals.append(ar * (v @ rule.weights))
        err = np.abs(vals[1] - vals[0])
        pending = np.bincount(owner, minlength=n)[owner]
        allowed = np.maximum(tol[owner] * ar / owner_area[owner], tol[owner] / (2 * max_level * pending))
        ok = err <= allowed
        if level >= max_level:
            np.add.at(residual, owner[~ok], err[~ok])
            ok[:] = True
        np.add.at(total, owner[ok], vals[1][ok])
        elems = _children(elems[~ok])
        owner = np.repeat(owner[~ok], 4)
        level += 1
    return total, residual


def integrate_on_triangle(g: ScalarField, t: Triangle, tol: float = 1e-10,
                          max_level: int = MAX_LEVEL) -> float:
    """Adaptive integral of ``g(x, y)`` over ``t``.

    Error is estimated by comparing the degree-5 and degree-8 rules on each
    element; failing elements are split 4-way at edge midpoints.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    total, residual = _adaptive_plain(g, t.array[None], np.array([tol]), max_level)
    if residual[0] > tol:
        raise QuadratureBudgetError(float(total[0]), float(residual[0]))
    return float(total[0])


# --------------------------------------------------------------------------
# kink-aware deviation integrals
# --------------------------------------------------------------------------

_GAUSS3_T = np.array([0.5 - math.sqrt(0.15), 0.5, 0.5 + math.sqrt(0.15)])
_GAUSS3_W = np.array([5 / 18, 8 / 18, 5 / 18])
_HESS_IDX = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _phi_branch(g: np.ndarray, weight: float, p: float, sign: float, order: int):
    """Smooth one-signed branch of (alpha g_+ + beta g_-)^p and its first two
    g-derivatives (``order`` of them).

    ``sign=+1`` is the branch valid for g >= 0 (weight alpha), ``-1`` for g <= 0.
    """
    u = sign * g
    wp = weight ** p
    out = []
    if float(p).is_integer():
        ip = int(p)
        out.append(wp * u ** ip)
        if order >= 1:
            out.append(wp * ip * u ** (ip - 1) * sign)
        if order >= 2:
            out.append(wp * ip * (ip - 1) * u ** max(ip - 2, 0) if ip >= 2 else np.zeros_like(u))
    else:
        au = np.abs(u)
        out.append(wp * au ** p)
        if order >= 1:
            out.append(wp * p * au ** (p - 1) * np.sign(u) * sign)
        if order >= 2:
            # singular at 0 for p < 2; floored, only used as a Newton model
            out.append(wp * p * (p - 1) * np.maximum(au, 1e-8) ** (p - 2))
    return out


def _phi(g: np.ndarray, w: Weights, order: int):
    pos = g > 0
    bp = _phi_branch(np.where(pos, g, 0.0), w.alpha, w.p, 1.0, order)
    bn = _phi_branch(np.where(pos, 0.0, g), w.beta, w.p, -1.0, order)
    return [np.where(pos, a, b) for a, b in zip(bp, bn)]


def _ncomp(order: int) -> int:
    return (1, 4, 10)[order]


class _Items:
    """Per-item data: linear polynomial in local coordinates."""

    def __init__(self, tris: np.ndarray, coef: np.ndarray):
        self.tris = tris
        self.center = tris.mean(axis=1)
        self.scale = np.sqrt(np.maximum(_areas(tris), 1e-300))
        self.coef = coef  # (n,3): c0 + c1*xi + c2*eta
        inv = 1.0 / self.scale
        # packed per-item data so that each call does a single gather
        self._frame = np.column_stack([self.center, inv])
        a = coef[:, 1] * inv
        b = coef[:, 2] * inv
        self._glob = np.column_stack([a, b, coef[:, 0] - a * self.center[:, 0] - b * self.center[:, 1]])

    def local(self, idx, x, y):
        fr = self._frame[idx]
        inv = fr[:, 2, None]
        return (x - fr[:, 0, None]) * inv, (y - fr[:, 1, None]) * inv

    def poly(self, idx, x, y):
        g = self._glob[idx]
        return g[:, 0, None] * x + g[:, 1, None] * y + g[:, 2, None]


def _moments(items, owner, x, y, derivs, weights, scale):
    """Assemble [phi, grad (3), hess (6)] integrals from node values."""
    out = [scale * (derivs[0] @ weights)]
    if len(derivs) > 1:
        xi, eta = items.local(owner, x, y)
        basis = (np.ones_like(xi), xi, eta)
        d1 = derivs[1]
        out += [-scale * ((d1 * b) @ weights) for b in basis]
        if len(derivs) > 2:
            d2 = derivs[2]
            out += [scale * ((d2 * basis[i] * basis[j]) @ weights) for i, j in _HESS_IDX]
    return np.stack(out, axis=1)


def _rule_integrals(f, items: _Items, owner, elems, rule, w: Weights, order: int, branch=None,
                    want_g: bool = False):
    """Integrals over elements with one rule.

    ``branch`` (array of +-1 per element) selects a fixed smooth branch;
    ``None`` evaluates the true piecewise integrand.
    """
    pts = _bary_points(elems, rule.nodes)
    x, y = pts[..., 0], pts[..., 1]
    g = f(x, y) - items.poly(owner, x, y)
    if branch is None:
        derivs = _phi(g, w, order)
    else:
        pos = branch[:, None] > 0
        bp = _phi_branch(g, w.alpha, w.p, 1.0, order)
        bn = _phi_branch(g, w.beta, w.p, -1.0, order)
        derivs = [np.where(pos, a, b) for a, b in zip(bp, bn)]
    out = _moments(items, owner, x, y, derivs, rule.weights, _areas(elems))
    return (out, g) if want_g else out


def _split_geometry(elems: np.ndarray, gv: np.ndarray):
    """Cut elements along the zero line of the vertex interpolant of g.

    Returns pieces (3 per element: lone-vertex triangle then the quad as two
    triangles), parent index, branch sign and the cut segment endpoints.
    """
    b = gv > 0
    cnt = b.sum(axis=1)
    lone = np.where(cnt == 1, np.argmax(b, axis=1), np.argmin(b, axis=1))
    lone_sign = np.where(cnt == 1, 1.0, -1.0)
    e = np.arange(len(elems))
    k = lone
    i = (k + 1) % 3
    j = (k + 2) % 3
    Pk, Pi, Pj = elems[e, k], elems[e, i], elems[e, j]
    gk, gi, gj = gv[e, k], gv[e, i], gv[e, j]
    ti = gk / (gk - gi)
    tj = gk / (gk - gj)
    Xi = Pk + ti[:, None] * (Pi - Pk)
    Xj = Pk + tj[:, None] * (Pj - Pk)
    pieces = np.concatenate([np.stack([Pk, Xi, Xj], axis=1),
                             np.stack([Xi, Pi, Pj], axis=1),
                             np.stack([Xi, Pj, Xj], axis=1)])
    parent = np.concatenate([e, e, e])
    sign = np.concatenate([lone_sign, -lone_sign, -lone_sign])
    return pieces, parent, sign, Xi, Xj


def _linear_gradient(elems: np.ndarray, gv: np.ndarray) -> np.ndarray:
    """|grad| of the linear interpolant of vertex values."""
    d1 = elems[:, 1] - elems[:, 0]
    d2 = elems[:, 2] - elems[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    g1 = gv[:, 1] - gv[:, 0]
    g2 = gv[:, 2] - gv[:, 0]
    gx = (g1 * d2[:, 1] - g2 * d1[:, 1]) / det
    gy = (g2 * d1[:, 0] - g1 * d2[:, 0]) / det
    return np.hypot(gx, gy)


def _kink_line_term(items, owner, Xi, Xj, grad_norm, jump):
    """jump * integral over the cut segment of b b^T / |grad g| (Hessian part
    produced by the jump of phi' across g = 0)."""
    seg = Xj - Xi
    length = np.hypot(seg[:, 0], seg[:, 1])
    pts = Xi[:, None, :] + _GAUSS3_T[None, :, None] * seg[:, None, :]
    xi, eta = items.local(owner, pts[..., 0], pts[..., 1])
    basis = (np.ones_like(xi), xi, eta)
    scale = jump * length / np.maximum(grad_norm, 1e-300)
    return np.stack([scale * ((basis[i] * basis[j]) @ _GAUSS3_W) for i, j in _HESS_IDX], axis=1)


def _element_estimates(f, items, owner, elems, w, order):
    """(estimate, error) per element, splitting kinked elements."""
    ncomp = _ncomp(order)
    est = np.zeros((len(elems), ncomp))
    err = np.zeros(len(elems))
    x, y = elems[..., 0], elems[..., 1]
    gv = f(x, y) - items.poly(owner, x, y)
    split = (gv > 0).any(axis=1) & (gv <= 0).any(axis=1)

    smooth = ~split
    if smooth.any():
        el, ow = elems[smooth], owner[smooth]
        i5 = _rule_integrals(f, items, ow, el, RULE5, w, order)
        i8, g8 = _rule_integrals(f, items, ow, el, RULE8, w, order, want_g=True)
        est[smooth] = i8
        # the zero curve may cross an edge twice and hide between vertices:
        # look at the rule nodes and at the parabola through each edge's
        # endpoints and midpoint
        gs = gv[smooth]
        vs = np.where(gs[:, :1] > 0, 1.0, -1.0)
        mids = 0.5 * (el + el[:, [1, 2, 0]])
        gm = f(mids[..., 0], mids[..., 1]) - items.poly(ow, mids[..., 0], mids[..., 1])
        u0, u1, um = vs * gs, vs * gs[:, [1, 2, 0]], vs * gm
        curv = 4.0 * (um - 0.5 * (u0 + u1))  # g(t) = u0 (1-t) + u1 t + curv t (1-t)
        with np.errstate(divide="ignore", invalid="ignore"):
            tstar = np.clip(0.5 + (u1 - u0) / (2.0 * curv), 0.0, 1.0)
        tstar = np.where(curv < 0, tstar, 0.0)
        edge_min = u0 * (1 - tstar) + u1 * tstar + curv * tstar * (1 - tstar)
        hidden = np.maximum(np.maximum(-vs * g8, 0.0).max(axis=1), np.maximum(-edge_min, 0.0).max(axis=1))
        kink = _areas(el) * (w.alpha ** w.p + w.beta ** w.p) * hidden ** w.p
        err[smooth] = np.abs(i8[:, 0] - i5[:, 0]) + kink
    if split.any():
        el, ow, gs = elems[split], owner[split], gv[split]
        pieces, parent, sign, Xi, Xj = _split_geometry(el, gs)
        pow_ = ow[parent]
        i8 = _rule_integrals(f, items, pow_, pieces, RULE8, w, order, branch=sign)
        i5 = _rule_integrals(f, items, pow_, pieces, RULE5, w, order, branch=sign)
        e8 = np.zeros((len(el), ncomp))
        e5 = np.zeros((len(el), ncomp))
        np.add.at(e8, parent, i8)
        np.add.at(e5, parent, i5)
        # the true zero curve deviates from the straight cut by |g|/|grad g|;
        # in that band the wrong branch was used.  Add the leading-order
        # correction and charge its size, damped by band/diam, as error.
        gnorm = _linear_gradient(el, gs)
        diam = np.sqrt(((el - el[:, [1, 2, 0]]) ** 2).sum(axis=2)).max(axis=1)
        seg = Xj - Xi
        length = np.hypot(seg[:, 0], seg[:, 1])
        cp = Xi[:, None, :] + _GAUSS3_T[None, :, None] * seg[:, None, :]
        gc = f(cp[..., 0], cp[..., 1]) - items.poly(ow, cp[..., 0], cp[..., 1])
        band = np.minimum(np.abs(gc) / np.maximum(gnorm, 1e-300)[:, None], diam[:, None])
        ap, bp = w.alpha ** w.p, w.beta ** w.p
        if float(w.p).is_integer() and int(w.p) % 2 == 1:
            K = np.full_like(gc, ap + bp)
        else:
            K = np.sign(gc) * (ap - bp)
        dens = K * np.abs(gc) ** w.p * band / (w.p + 1.0)
        corr = length * (dens @ _GAUSS3_W)
        e8[:, 0] += corr
        e5[:, 0] += corr
        if order >= 1:
            # derivative of the correction with respect to the coefficients
            xi, eta = items.local(ow, cp[..., 0], cp[..., 1])
            gd = -K * np.sign(gc) * np.abs(gc) ** (w.p - 1.0) * band
            gcorr = np.stack([length * ((gd * b) @ _GAUSS3_W) for b in (np.ones_like(xi), xi, eta)], axis=1)
            e8[:, 1:4] += gcorr
            e5[:, 1:4] += gcorr
        maxband = band.max(axis=1)
        # |g|^p is not smooth across the true curve for non-integer p even
        # when the branches coincide
        kerr = np.abs(K) + (0.0 if float(w.p).is_integer() else ap + bp)
        dens_err = kerr * np.abs(gc) ** w.p * band / (w.p + 1.0)
        kink_val = np.abs(length * (dens_err @ _GAUSS3_W)) * np.minimum(1.0, 20.0 * maxband / diam) \
            + diam * maxband * (max(ap, bp) * np.abs(gc).max(axis=1) ** w.p) * (maxband >= diam)
        if order >= 2:
            jump = (w.alpha + w.beta) if w.p == 1 else 0.0
            if jump:
                e8[:, 4:] += _kink_line_term(items, ow, Xi, Xj, gnorm, jump)
        est[split] = e8
        # refinement is driven by the value; derivatives ride along
        err[split] = np.abs(e8[:, 0] - e5[:, 0]) + kink_val
    return est, err


def _chunked_estimates(f, items, owner, elems, w, order):
    if len(elems) <= ELEMENT_CHUNK:
        return _element_estimates(f, items, owner, elems, w, order)
    parts = [_element_estimates(f, items, owner[i:i + ELEMENT_CHUNK], elems[i:i + ELEMENT_CHUNK], w, order)
             for i in range(0, len(elems), ELEMENT_CHUNK)]
    return np.concatenate([a for a, _ in parts]), np.concatenate([b for _, b in parts])


def deviation_integrals(f: ScalarField, tris: np.ndarray, coef: np.ndarray, w: Weights,
                        tol: np.ndarray | float, order: int = 0, max_level: int = MAX_LEVEL):
    """Integral of (alpha g_+ + beta g_-)^p with g = f - P over each triangle.

    ``coef`` holds P in local coordinates ``c0 + c1*xi + c2*eta`` where
    ``xi = (x - xc)/sqrt|T|`` (centroid ``xc``).  ``order`` 1 adds the gradient
    with respect to ``coef`` (columns 1..3), order 2 also the upper triangle of
    the Hessian (columns 4..9, used as a Newton model only).  Returns
    ``(values, residual_error)``.
    """
    if not w.finite:
        raise WeightError("deviation integrals need finite weights")
    tris = np.asarray(tris, dtype=float).reshape(-1, 3, 2)
    n = len(tris)
    items = _Items(tris, np.asarray(coef, dtype=float).reshape(n, 3))
    tol = np.broadcast_to(np.asarray(tol, dtype=float), (n,)).copy()
    owner = np.repeat(np.arange(n), 4 ** START_LEVEL)
    elems = uniform_refine(tris, START_LEVEL)
    owner_area = np.maximum(_areas(tris), 1e-300)
    # absolute rounding level of g = f - P, from |f| at the vertices
    fv = np.abs(f(tris[..., 0], tris[..., 1])).max(axis=1)
    delta = ROUNDOFF_ULPS * np.finfo(float).eps * np.maximum(fv, np.abs(items.poly(np.arange(n), tris[..., 0], tris[..., 1])).max(axis=1))
    wmax = max(w.alpha, w.beta) ** w.p
    total = np.zeros((n, _ncomp(order)))
    residual = np.zeros(n)
    spent = np.zeros(n)
    level = START_LEVEL
    while len(elems):
        est, err = _chunked_estimates(f, items, owner, elems, w, order)
        allowed = tol[owner] * _areas(elems) / owner_area[owner]
        # localized errors: each level may also spend tol/(2 MAX_LEVEL) split
        # evenly over its pending elements, so the total stays below 1.5 tol
        pending = np.bincount(owner, minlength=n)[owner]
        allowed = np.maximum(allowed, tol[owner] / (2 * max_level * pending))
        # roundoff floor of the rule comparison on tiny pieces
        ok = err <= np.maximum(allowed, 1e-12 * np.abs(est[:, 0]))
        # below the rounding level of g itself refinement cannot help:
        # perturbing |g| by delta moves the integrand by p |g|^(p-1) delta
        ea = np.maximum(_areas(elems), 1e-300)
        gmag = (np.abs(est[:, 0]) / (ea * wmax)) ** (1.0 / w.p)
        d = delta[owner]
        noise = err <= ea * wmax * w.p * (gmag + d) ** (w.p - 1.0) * d
        # an item whose spent plus current error already fits in tol is done,
        # however the error is spread (kinks concentrate it on few elements)
        counted = np.where(noise & ~ok, 0.0, err)
        fits = spent + np.bincount(owner, weights=counted, minlength=n) <= tol
        ok |= noise | fits[owner]
        spent += np.bincount(owner, weights=np.where(ok, counted, 0.0), minlength=n)
        if level >= max_level:
            np.add.at(residual, owner[~ok], err[~ok])
            ok[:] = True
        np.add.at(total, owner[ok], est[ok])
        elems = _children(elems[~ok])
        owner = np.repeat(owner[~ok], 4)
        level += 1
    return total, residual


def hessian_matrix(cols: np.ndarray) -> np.ndarray:
    """(n, 6) upper-triangle columns -> (n, 3, 3) symmetric matrices."""
    H = np.zeros((len(cols), 3, 3))
    for k, (i, j) in enumerate(_HESS_IDX):
        H[:, i, j] = cols[:, k]
        H[:, j, i] = cols[:, k]
    return H


# --------------------------------------------------------------------------
# sup-norm deviation
# --------------------------------------------------------------------------

def _bary_net(div: int) -> np.ndarray:
    pts = [(i / div, j / div) for i in range(div + 1) for j in range(div + 1 - i)]
    b = np.array(pts)
    return np.column_stack([1 - b.sum(axis=1), b])


def sup_extrema(g_of_points, tris: np.ndarray, tol: float = 1e-12, divisions: int = P_INF_DIVISIONS,
                polish: int = 40):
    """Max and min of ``g`` over each triangle via a barycentric sample net
    refined locally around the running extrema.

    ``g_of_points(idx, x, y)`` evaluates g for items ``idx`` at (idx-aligned)
    coordinates.  Returns (gmax, gmin, argmax_xy, argmin_xy).
    """
    tris = np.asarray(tris, dtype=float).reshape(-1, 3, 2)
    n = len(tris)
    net = _bary_net(divisions)
    pts = _bary_points(tris, net)
    idx = np.arange(n)
    vals = g_of_points(idx, pts[..., 0], pts[..., 1])
    results = []
    for sgn in (1.0, -1.0):
        v = sgn * vals
        k = np.argmax(v, axis=1)
        best = v[idx, k]
        bbest = net[k].copy()
        radius = 1.0 / divisions
        offs = np.array([(a, b) for a in np.linspace(-1, 1, 5) for b in np.linspace(-1, 1, 5)])
        for _ in range(polish):
            if radius < 1e-10:
                break
            cand = bbest[:, None, 1:] + radius * offs[None]
            cand = np.clip(cand, 0.0, 1.0)
            s = cand.sum(axis=2)
            over = s > 1
            cand[over] /= s[over][:, None]
            b3 = np.concatenate([1 - cand.sum(axis=2, keepdims=True), cand], axis=2)
            xy = np.einsum("ekj,ejd->ekd", b3, tris)
            cv = sgn * g_of_points(idx, xy[..., 0], xy[..., 1])
            kk = np.argmax(cv, axis=1)
            cbest = cv[idx, kk]
            better = cbest > best
            best = np.where(better, cbest, best)
            bbest = np.where(better[:, None], b3[idx, kk], bbest)
            radius *= 0.6
        xy = np.einsum("ej,ejd->ed", bbest, tris)
        results.append((sgn * best, xy))
    (gmax, amax), (gmin, amin) = results
    return gmax, gmin, amax, amin


def _poly_global(items: _Items):
    """Convert local coefficients to global (a, b, c)."""
    return items._glob.copy()


def local_coef(tris: np.ndarray, abc: np.ndarray) -> np.ndarray:
    """Global ``a x + b y + c`` -> local ``c0 + c1 xi + c2 eta`` coefficients."""
    tris = np.asarray(tris, dtype=float).reshape(-1, 3, 2)
    abc = np.asarray(abc, dtype=float).reshape(-1, 3)
    center = tris.mean(axis=1)
    s = np.sqrt(np.maximum(_areas(tris), 1e-300))
    c0 = abc[:, 0] * center[:, 0] + abc[:, 1] * center[:, 1] + abc[:, 2]
    return np.column_stack([c0, abc[:, 0] * s, abc[:, 1] * s])


def global_coef(tris: np.ndarray, coef: np.ndarray) -> np.ndarray:
    return _poly_global(_Items(np.asarray(tris, dtype=float).reshape(-1, 3, 2),
                               np.asarray(coef, dtype=float).reshape(-1, 3)))


def sup_deviation(f: ScalarField, tris: np.ndarray, abc: np.ndarray, w: Weights, tol: float = 1e-12):
    """max over each triangle of alpha (f-P)_+ + beta (f-P)_- (finite weights)."""
    tris = np.asarray(tris, dtype=float).reshape(-1, 3, 2)
    abc = np.asarray(abc, dtype=float).reshape(-1, 3)

    def g(idx, x, y):
        return f(x, y) - (abc[idx, 0, None] * x + abc[idx, 1, None] * y + abc[idx, 2, None])

    gmax, gmin, _, _ = sup_extrema(g, tris, tol)
    return np.maximum(w.alpha * np.maximum(gmax, 0.0), w.beta * np.maximum(-gmin, 0.0))


def asym_deviation_batch(f: ScalarField, tris: np.ndarray, abc: np.ndarray, w: Weights,
                         tol: float = 1e-10, raise_on_budget: bool = False):
    """Per-triangle ||f - P||_{p;alpha,beta}; returns (values, achieved_tol).

    For p < inf the tolerance is on each triangle's integral of the p-th power,
    scaled by its share of the total area.
    """
    if not w.finite:
        raise WeightError("asymmetric deviation needs finite weights; one-sided "
                          "problems are handled by the approximation routines")
    tris = np.asarray(tris, dtype=float).reshape(-1, 3, 2)
    abc = np.asarray(abc, dtype=float).reshape(-1, 3)
    if w.p_inf:
        return sup_deviation(f, tris, abc, w, tol), np.zeros(len(tris))
    ar = _areas(tris)
    share = ar / max(ar.sum(), 1e-300)
    vals, res = deviation_integrals(f, tris, local_coef(tris, abc), w, tol * share)
    if raise_on_budget and (res > tol * share).any():
        raise QuadratureBudgetError(vals[:, 0] ** (1 / w.p), float(res.max()))
    return np.maximum(vals[:, 0], 0.0) ** (1.0 / w.p), res


def asym_deviation(f: ScalarField, P, t: Triangle, w: Weights, tol: float = 1e-10) -> float:
    """||f - P||_{L_{p;alpha,beta}(t)} for a linear polynomial ``P``.

    ``P`` is anything with ``a, b, c`` attributes or an ``(a, b, c)`` triple.
    """
    abc = _abc(P)
    vals, _ = asym_deviation_batch(f, t.array[None], np.array([abc]), w, tol, raise_on_budget=True)
    return float(vals[0])


def _abc(P) -> tuple[float, float, float]:
    if hasattr(P, "a"):
        return (float(P.a), float(P.b), float(P.c))
    if np.isscalar(P):
        return (0.0, 0.0, float(P))
    a, b, c = P
    return (float(a), float(b), float(c))
