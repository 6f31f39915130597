"""Continuous piecewise linear splines on cell-grid triangulations, their
global asymmetric error, and convergence studies."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .approx import best_linear_batch, offset_jacobian, one_sided_best, vertex_offset
from .functions import Field, predicted_limit
from .geometry import GeometryError, Triangle, unit_equilateral
from .integrate import Weights, asym_deviation_batch, deviation_integrals, local_coef, sup_extrema
from .mesher import BuildParams, Triangulation, build

log = logging.getLogger(__name__)

LOCATE_TOL = 1e-12
DEFAULT_TOL = 1e-6
# triangles per batched best-approximation solve (bounds memory)
FREE_CHUNK = 256


@dataclass(frozen=True, eq=False)
class Spline:
    tri: Triangulation
    values: np.ndarray        # one value per mesh vertex

    @property
    def mesh(self):
        return self.tri.mesh

    def coefficients(self) -> np.ndarray:
        """(n, 3) global (a, b, c) of the linear interpolant on each triangle."""
        X = self.mesh.coords
        v = self.values[self.mesh.triangles]
        M = np.concatenate([X, np.ones(X.shape[:2] + (1,))], axis=2)
        return np.linalg.solve(M, v[..., None])[..., 0]

    def locate(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates of each point."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if (pts < -LOCATE_TOL).any() or (pts > 1 + LOCATE_TOL).any():
            raise GeometryError("point outside the unit square")
        m = self.tri.m
        X = self.mesh.coords
        idx = np.full(len(pts), -1)
        bary = np.zeros((len(pts), 3))
        cell = (np.clip(np.floor(pts[:, 1] * m), 0, m - 1) * m
                + np.clip(np.floor(pts[:, 0] * m), 0, m - 1)).astype(int)
        todo = np.arange(len(pts))
        # points on a cell border may sit in a neighbour's triangle
        for shift in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (1, 1), (-1, 1), (1, -1)):
            if not len(todo):
                break
            ci, cj = cell[todo] % m + shift[0], cell[todo] // m + shift[1]
            valid = (ci >= 0) & (ci < m) & (cj >= 0) & (cj < m)
            cid = np.where(valid, cj * m + ci, -1)
            for c in np.unique(cid[cid >= 0]):
                sel = todo[cid == c]
                lo, hi = self.tri.cell_ranges[c]
                T = X[lo:hi]
                b = _barycentric(T, pts[sel])
                inside = (b >= -1e-10).all(axis=2)
                hit = inside.any(axis=0)
                first = np.argmax(inside, axis=0)
                idx[sel[hit]] = lo + first[hit]
                bary[sel[hit]] = b[first[hit], np.flatnonzero(hit)]
            todo = todo[idx[todo] < 0]
        if len(todo):
            raise GeometryError(f"could not locate {len(todo)} points")
        return idx, bary

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        pts = np.stack(np.broadcast_arrays(x, y), axis=-1).reshape(-1, 2)
        idx, bary = self.locate(pts)
        v = self.values[self.mesh.triangles[idx]]
        return (bary * v).sum(axis=1).reshape(shape)


def _barycentric(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """(k, n, 3) barycentric coordinates of n points in k triangles."""
    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    det = ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
    dx = pts[None, :, 0] - a[:, None, 0]
    dy = pts[None, :, 1] - a[:, None, 1]
    l1 = ((c[:, None, 1] - a[:, None, 1]) * dx - (c[:, None, 0] - a[:, None, 0]) * dy) / det[:, None]
    l2 = (-(b[:, None, 1] - a[:, None, 1]) * dx + (b[:, None, 0] - a[:, None, 0]) * dy) / det[:, None]
    return np.stack([1 - l1 - l2, l1, l2], axis=2)


def evaluate(s: Spline, pt) -> float:
    return float(s(np.float64(pt[0]), np.float64(pt[1])))


_E = unit_equilateral().array
_E_EDGES_INV = np.linalg.inv(np.column_stack([_E[1] - _E[0], _E[2] - _E[0]]))
SHAPE_TOL = 1e-9


def tile_offsets(g: Field, tiles: np.ndarray, w: Weights) -> tuple[np.ndarray, np.ndarray]:
    """Model offsets (g - P) at the vertices of each tile, P being the best
    approximation of the local quadratic model of g on that tile.

    The model form is the halved Hessian at the tile centroid.  Each tile is
    the affine image of the unit equilateral triangle; the pulled-back form is
    split into a scale (handled exactly) and a traceless shape mismatch
    (handled to first order).  Returns (offsets (k, 3), forms (k, 2, 2)).
    """
    c = tiles.mean(axis=1)
    fxx, fxy, fyy = g.hessian(c[:, 0], c[:, 1])
    Q = 0.5 * np.stack([np.stack([fxx, fxy], -1), np.stack([fxy, fyy], -1)], -2)
    A = np.stack([tiles[:, 1] - tiles[:, 0], tiles[:, 2] - tiles[:, 0]], axis=-1) @ _E_EDGES_INV
    R = np.swapaxes(A, 1, 2) @ Q @ A
    det = R[:, 0, 0] * R[:, 1, 1] - R[:, 0, 1] ** 2
    s2 = np.sqrt(np.maximum(det, 0.0))
    safe = np.where(s2 > 0, s2, 1.0)
    Nf = R / safe[:, None, None]
    tau = 0.5 * (Nf[:, 0, 0] + Nf[:, 1, 1]) - 1.0
    da = 0.5 * (Nf[:, 0, 0] - Nf[:, 1, 1])
    db = Nf[:, 0, 1]
    d0 = vertex_offset(w.p, w.alpha, w.beta)
    off = np.repeat((d0 * (1.0 + tau))[:, None], 3, axis=1)
    if max(np.abs(da).max(initial=0.0), np.abs(db).max(initial=0.0)) > SHAPE_TOL:
        J = offset_jacobian(w.p, w.alpha, w.beta)
        off = off + da[:, None] * J[0] + db[:, None] * J[1]
    off = off * s2[:, None]
    off[det <= 0] = 0.0
    return off, Q


def _model_offset_at(points: np.ndarray, tiles: np.ndarray, off: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """(model - P)(point) for the tile polynomial P fixed by the vertex offsets."""
    lam = _barycentric_each(tiles, points)
    c = tiles.mean(axis=1)

    def form(z):
        return np.einsum("ni,nij,nj->n", z, Q, z)

    vert = np.stack([form(tiles[:, i] - c) for i in range(3)], axis=1)
    return (lam * off).sum(axis=1) + form(points - c) - (lam * vert).sum(axis=1)


def _barycentric_each(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of pts[k] in T[k]."""
    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    M = np.stack([b - a, c - a], axis=-1)
    l12 = np.linalg.solve(M, (pts - a)[..., None])[..., 0]
    return np.column_stack([1.0 - l12.sum(axis=1), l12])


def assemble(f: Field, tri: Triangulation, w: Weights) -> Spline:
    """Continuous spline from vertex values ``f(v) - mean offset``.

    Every triangle cut from a group-1 tile proposes, at each of its vertices,
    the deviation of the tile's best approximation of the local quadratic
    model; vertex values subtract the mean proposal over incident triangles
    (zero for triangles of groups 2-4, which interpolate f).  For a quadratic
    f inside a group-1 cell all proposals agree, so the spline coincides with
    the per-tile best approximation, clipped pieces included.
    """
    mesh = tri.mesh
    if len(tri.parent) != len(mesh):
        raise ValueError("triangulation does not match its parent tiles")
    g = f.flipped() if tri.sign < 0 else f
    wg = w.swapped() if tri.sign < 0 else w
    nv = len(mesh.vertices)
    prop = np.zeros((len(mesh), 3))
    has = ~np.isnan(tri.parent[:, 0, 0])
    if has.any():
        tiles = tri.parent[has]
        uniq, inv = np.unique(tiles.reshape(len(tiles), -1), axis=0, return_inverse=True)
        uniq = uniq.reshape(-1, 3, 2)
        off, Q = tile_offsets(g, uniq, wg)
        X = mesh.coords[has]
        inv = inv.ravel()
        prop[has] = np.column_stack([
            _model_offset_at(X[:, i], uniq[inv], off[inv], Q[inv]) for i in range(3)])
    shift = np.bincount(mesh.triangles.ravel(), weights=prop.ravel(), minlength=nv)
    cnt = np.bincount(mesh.triangles.ravel(), minlength=nv)
    shift = shift / np.maximum(cnt, 1)
    V = mesh.vertices
    vals = np.asarray(f(V[:, 0], V[:, 1]), dtype=float) - tri.sign * shift
    return Spline(tri, vals)


# --------------------------------------------------------------------------
# errors
# --------------------------------------------------------------------------

@dataclass
class ErrorReport:
    total: float
    per_triangle: np.ndarray
    achieved_tol: float

    def combined(self, p: float) -> float:
        if math.isinf(p):
            return float(self.per_triangle.max(initial=0.0))
        return float(np.sum(self.per_triangle ** p) ** (1.0 / p))


def _scale(f, tris, abc, w):
    """Cheap first-level estimate of the p-th power integrals."""
    vals, _ = deviation_integrals(f, tris, local_coef(tris, abc), w, np.inf)
    return float(np.maximum(vals[:, 0], 0.0).sum())


def _finite_part(w: Weights) -> Weights:
    a = w.alpha if math.isfinite(w.alpha) else w.beta
    b = w.beta if math.isfinite(w.beta) else w.alpha
    return Weights(w.p, a, b)


def polynomial_error(f, tris: np.ndarray, abc: np.ndarray, w: Weights,
                     tol: float = DEFAULT_TOL) -> ErrorReport:
    """Error of a piecewise linear function given by per-triangle
    coefficients; ``tol`` is relative to the total p-th power integral."""
    tris = np.asarray(tris, dtype=float).reshape(-1, 3, 2)
    abc = np.asarray(abc, dtype=float).reshape(-1, 3)
    wf = _finite_part(w)
    violated = False
    if not w.finite:
        # one-sided norm: infinite unless the forbidden side is untouched
        def g(idx, x, y):
            return f(x, y) - (abc[idx, 0, None] * x + abc[idx, 1, None] * y + abc[idx, 2, None])
        gmax, gmin, _, _ = sup_extrema(g, tris, 1e-12)
        bad = gmax if math.isinf(w.alpha) else -gmin
        violated = bool((bad > 1e-12).any())
    if wf.p_inf:
        per, _ = asym_deviation_batch(f, tris, abc, wf, 1e-12)
        res = 0.0
    else:
        scale = _scale(f, tris, abc, wf)
        if scale == 0.0:
            return ErrorReport(0.0 if not violated else math.inf, np.zeros(len(tris)), 0.0)
        per, r = asym_deviation_batch(f, tris, abc, wf, tol * scale)
        res = float(r.sum()) / scale
    rep = ErrorReport(0.0, np.asarray(per, dtype=float), res)
    rep.total = math.inf if violated else rep.combined(w.p)
    return rep


def global_error(f: Field, s: Spline, w: Weights, tol: float = DEFAULT_TOL) -> ErrorReport:
    """||f - s||_{p;alpha,beta} over the unit square, assembled triangle by triangle."""
    return polynomial_error(f, s.mesh.coords, s.coefficients(), w, tol)


def free_spline_error(f: Field, tri: Triangulation, w: Weights, tol: float = DEFAULT_TOL) -> float:
    """Error of the best discontinuous piecewise linear approximation."""
    tris = tri.mesh.coords
    if w.finite or w.p_inf:
        err = np.empty(len(tris))
        ok = np.empty(len(tris), dtype=bool)
        for lo in range(0, len(tris), FREE_CHUNK):
            sl = slice(lo, lo + FREE_CHUNK)
            _, err[sl], ok[sl], _ = best_linear_batch(f, tris[sl], w, tol)
        if not ok.all():
            log.warning("free spline: %d triangles without certified convergence", int((~ok).sum()))
    else:
        side = "above" if math.isinf(w.alpha) else "below"
        err = np.array([one_sided_best(f, Triangle.from_array(t), w.p, side, tol).error for t in tris])
    if w.p_inf:
        return float(err.max(initial=0.0))
    return float(np.sum(err ** w.p) ** (1.0 / w.p))


# --------------------------------------------------------------------------
# convergence studies
# --------------------------------------------------------------------------

@dataclass
class ConvergenceRow:
    N: int
    N_actual: int
    error: float
    N_times_error: float
    predicted: float
    ratio: float | None
    free_error: float | None = None
    free_ratio: float | None = None
    m: int = 1

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConvergenceResult:
    rows: list[ConvergenceRow]
    trend: str
    last_ratio: float | None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"rows": [r.as_dict() for r in self.rows], "summary": {
            "last_ratio": self.last_ratio, "trend": self.trend, "notes": list(self.notes)}}


def _ratio(value: float, predicted: float) -> float | None:
    if predicted == 0.0:
        return None
    return value / predicted


def trend_of(ratios: list[float | None], slack: float = 0.02) -> str:
    """'exact' when no ratio is defined, 'decreasing' when the sequence is
    non-increasing up to ``slack`` relative noise, otherwise 'irregular'."""
    r = [x for x in ratios if x is not None]
    if not r:
        return "exact"
    ok = all(b <= a * (1 + slack) for a, b in zip(r, r[1:]))
    return "decreasing" if ok else "irregular"


def convergence_run(f: Field, w: Weights, N_list, eps: float = 0.05, *, full_budget: bool = False,
                    m_override: int | None = None, tol: float = DEFAULT_TOL,
                    free: bool = False, progress=None) -> ConvergenceResult:
    N_list = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N list must be increasing")
    predicted = predicted_limit(f, w)
    rows = []
    notes = []
    for N in N_list:
        tri = build(f, BuildParams(N, eps, w, m_override, full_budget))
        s = assemble(f, tri, w)
        rep = global_error(f, s, w, tol)
        n = tri.count
        row = ConvergenceRow(N, n, rep.total, n * rep.total, predicted,
                             _ratio(n * rep.total, predicted), m=tri.m)
        if free:
            fe = free_spline_error(f, tri, w, tol)
            row.free_error = fe
            row.free_ratio = _ratio(n * fe, predicted)
        rows.append(row)
        notes.extend(f"N={N}: {d}" for d in tri.diagnostics)
        if progress is not None:
            progress(row)
    trend = trend_of([r.ratio for r in rows])
    return ConvergenceResult(rows, trend, rows[-1].ratio if rows else None, notes)
