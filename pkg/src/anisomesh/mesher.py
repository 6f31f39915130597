"""Cell-grid construction of asymptotically optimal triangulations.

The unit square is cut into m x m cells.  Each cell is classified by the
smallest eigenvalue of the halved Hessian at its centre, receives a triangle
budget, and is meshed independently: elliptic cells by a periodic tiling with
the optimal triangle of the local quadratic form, the rest by uniform grids or
by thin rectangles aligned with the Hessian eigenvectors.  Cells are finally
glued by splitting border triangles at the neighbours' border vertices.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .approx import QuadForm, optimal_map, optimal_triangle
from .functions import (
    Field,
    SpectralData,
    TaylorQuadratic,
    modulus,
    mu_G,
    omega2,
    spectral,
    spectral_arrays,
    taylor2,
)
from .geometry import (
    CLIP_TOL,
    Mesh,
    MeshBuilder,
    Square,
    Triangle,
    clip_to_square,
    signed_areas,
    unit_equilateral,
    split_edge_conform_array,
    tile_cover_array,
    triangulate_convex,
)
from .integrate import Weights
from .parallel import ordered_map

log = logging.getLogger(__name__)

DEFAULT_EPS = 0.05
M_CAP = 64
# the default m cap keeps at least this many triangles per cell, so that
# clipping along cell borders does not push the count past N
CELL_MIN_TRIANGLES = 128
FULL_BUDGET_ROUNDS = 14
FULL_BUDGET_SLACK = 0.005
BORDER_TOL = 1e-10


@dataclass(frozen=True)
class BuildParams:
    N: int
    eps: float = DEFAULT_EPS
    weights: Weights = field(default_factory=lambda: Weights(2.0, 1.0, 1.0))
    m_override: int | None = None
    full_budget: bool = False
    m_cap: int | None = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if self.m_override is not None and self.m_override < 1:
            raise ValueError("m_override must be a positive integer")


@dataclass
class SquareCell:
    index: int
    square: Square
    spectral: SpectralData
    taylor: TaylorQuadratic
    group: int = 0
    budget: int = 0
    base_triangle: Triangle | None = None

    @property
    def center(self):
        return self.square.center

    @property
    def quad(self) -> QuadForm:
        return self.taylor.quad


@dataclass(frozen=True, eq=False)
class CellMesh:
    tris: np.ndarray          # (k, 3, 2)
    interior: np.ndarray      # (k,) bool, unclipped by the cell border
    parent: np.ndarray | None = None  # (k, 3, 2) tile each piece was cut from
    note: str | None = None


@dataclass(eq=False)
class Triangulation:
    mesh: Mesh
    params: BuildParams
    m: int
    eps: float                # effective eps after clamping
    mu: float
    sign: int                 # +1 convex, -1 concave (meshed as -f)
    cells: list[SquareCell]
    cell_ranges: np.ndarray   # (m*m, 2) start/stop into mesh triangles
    planned: int              # triangles before gluing
    parent: np.ndarray        # (n, 3, 2) group-1 tile of each triangle, NaN elsewhere
    diagnostics: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.mesh)

    @property
    def within_budget(self) -> bool:
        return self.count <= self.params.N

    def group_histogram(self) -> dict[int, int]:
        g, c = np.unique(self.mesh.group, return_counts=True)
        return {int(a): int(b) for a, b in zip(g, c)}

    def cell_histogram(self) -> dict[int, int]:
        out = {k: 0 for k in (1, 2, 3, 4)}
        for c in self.cells:
            out[c.group] += 1
        return out

    def summary(self) -> dict:
        rep = self.mesh.check_conformity()
        return {
            "N": self.params.N,
            "triangles": self.count,
            "within_budget": self.within_budget,
            "m": self.m,
            "eps": self.eps,
            "mu": self.mu,
            "cells_by_group": {str(k): v for k, v in self.cell_histogram().items()},
            "triangles_by_group": {str(k): v for k, v in self.group_histogram().items()},
            "conformity": "pass" if rep.ok else "fail",
            "total_area": rep.total_area,
            "diagnostics": list(self.diagnostics),
        }


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

def _oriented(f: Field) -> tuple[Field, int]:
    s = f.sign
    return (f.flipped(), -1) if s < 0 else (f, 1)


def effective_eps(f: Field, eps: float) -> tuple[float, float]:
    """Halve eps until 23 eps + 2 mu(2 eps) < 1; returns (eps, mu)."""
    g, _ = _oriented(f)
    for _ in range(60):
        mu = mu_G(g, 2 * eps)
        if 23 * eps + 2 * mu < 1:
            return eps, mu
        eps *= 0.5
    raise ValueError("could not satisfy the eps restriction")


def default_cap(N: int) -> int:
    """m cap keeping at least CELL_MIN_TRIANGLES triangles per cell."""
    return max(1, min(M_CAP, int(math.isqrt(max(1, N // CELL_MIN_TRIANGLES)))))


def _lam_min_grid(f: Field, n: int):
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="ij")
    a, c, b = f.hessian(X, Y)
    return spectral_arrays(a, c, b)[0]


def compute_m(f: Field, eps: float, N: int, cap: int | None = None,
              weights: Weights | None = None) -> tuple[int, bool]:
    """Smallest m <= cap with 2 m^-2 max(alpha, beta) omega2(f, 1/m) <= eps/N and
    omega(lam_min, 1/m) <= eps.  Returns (m, satisfied)."""
    g, _ = _oriented(f)
    cap = default_cap(N) if cap is None else int(cap)
    w = weights or Weights(2.0, 1.0, 1.0)
    finite = [v for v in (w.alpha, w.beta) if math.isfinite(v)]
    wmax = max(finite) if finite else 1.0
    lam = _lam_min_grid(g, 256)
    for m in range(1, cap + 1):
        if 2.0 * wmax * omega2(g, 1.0 / m) / m ** 2 <= eps / N and modulus(lam, 1.0 / m) <= eps:
            return m, True
    return cap, False


# --------------------------------------------------------------------------
# classification and budgets
# --------------------------------------------------------------------------

def make_cells(f: Field, m: int) -> list[SquareCell]:
    cells = []
    for j in range(m):
        for i in range(m):
            sq = Square.grid_cell(i, j, m)
            c = sq.center
            cells.append(SquareCell(j * m + i, sq, spectral(f, c), taylor2(f, c)))
    return cells


def classify(cell: SquareCell, eps: float, omega_lam: float) -> int:
    """Group 1..4 from the centre eigenvalues and omega(lam_min, 1/m)."""
    lmin, lmax = cell.spectral.lam_min, cell.spectral.lam_max
    if lmin >= eps:
        return 1
    if omega_lam < lmin < eps:
        return 2
    if lmin <= omega_lam and lmax >= eps * eps:
        return 3
    return 4


def allocate_budgets(cells: list[SquareCell], total: float, p: float) -> None:
    """n_i = floor(total H_i^e / sum H^e) + 1 on group-1 cells, e = p/(2(p+1))."""
    g1 = [c for c in cells if c.group == 1]
    if not g1:
        return
    e = 0.5 if math.isinf(p) else p / (2.0 * (p + 1.0))
    # H = 4 det of the halved Hessian
    h = np.array([4.0 * c.quad.det for c in g1]) ** e
    share = total * h / h.sum()
    for c, s in zip(g1, share):
        c.budget = int(math.floor(s)) + 1


def grid_sizes(N: int, eps: float, m: int) -> tuple[int, int]:
    """r1, r2: largest integers with r1^2 <= N/m^2 and r2^2 <= eps N/m^2 (at least 1)."""
    r1 = max(1, math.isqrt(int(math.floor(N / m ** 2))))
    r2 = max(1, math.isqrt(int(math.floor(eps * N / m ** 2))))
    return r1, r2


# --------------------------------------------------------------------------
# cell meshes
# --------------------------------------------------------------------------

def _snap(tris: np.ndarray, sq: Square) -> np.ndarray:
    out = tris.copy()
    for axis, lo, hi in ((0, sq.xmin, sq.xmax), (1, sq.ymin, sq.ymax)):
        v = out[..., axis]
        v[np.abs(v - lo) <= CLIP_TOL] = lo
        v[np.abs(v - hi) <= CLIP_TOL] = hi
    return out


def _uniform_grid(sq: Square, r: int) -> np.ndarray:
    xs = np.linspace(sq.xmin, sq.xmax, r + 1)
    ys = np.linspace(sq.ymin, sq.ymax, r + 1)
    I, J = np.meshgrid(np.arange(r), np.arange(r), indexing="ij")
    I, J = I.ravel(), J.ravel()

    def P(di, dj):
        return np.stack([xs[I + di], ys[J + dj]], axis=-1)

    lower = np.stack([P(0, 0), P(1, 0), P(1, 1)], axis=1)
    upper = np.stack([P(0, 0), P(1, 1), P(0, 1)], axis=1)
    return np.concatenate([lower, upper])


def _tiled(base: np.ndarray, sq: Square) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tiles of Til(base) inside ``sq`` plus triangulated clipped pieces;
    returns (triangles, interior flags, parent tiles)."""
    raw = tile_cover_array(base, sq)
    tiles = _snap(raw, sq)
    inside = sq.contains(tiles.reshape(-1, 2), tol=0.0).reshape(-1, 3).all(axis=1)
    parts = [tiles[inside]]
    flags = [np.ones(int(inside.sum()), dtype=bool)]
    parents = [raw[inside]]
    for t in raw[~inside]:
        poly = clip_to_square(t, sq)
        if poly is None:
            continue
        pieces = triangulate_convex(poly.vertices)
        parts.append(_snap(np.array(pieces), sq))
        flags.append(np.zeros(len(pieces), dtype=bool))
        parents.append(np.repeat(t[None], len(pieces), axis=0))
    return np.concatenate(parts), np.concatenate(flags), np.concatenate(parents)


def aligned_optimal_triangle(Q: QuadForm, area: float, axis: int, side: float) -> np.ndarray:
    """Optimal triangle for Q with one edge parallel to coordinate ``axis``,
    uniformly rescaled (area changes slightly) so that a whole number of
    tiling rows fits into ``side``."""
    M = optimal_map(Q).linear
    u = np.zeros(2)
    u[axis] = 1.0
    z = np.linalg.solve(M, u)
    phi = math.atan2(z[1], z[0])
    rot = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    E = unit_equilateral().array
    t = (E - E[0]) @ (M @ rot).T
    if signed_areas(t[None])[0] < 0:
        # keep the aligned edge first while restoring counter-clockwise order
        t = t[[1, 0, 2]] - t[1]
    t *= math.sqrt(area / abs(signed_areas(t[None])[0]))
    base_len = abs(t[1, axis] - t[0, axis])
    h = 2.0 * area / base_len
    k = max(1, round(side / h))
    return t * (side / (k * h))


def build_cell_mesh(cell: SquareCell, m: int, r1: int, r2: int, align: bool = False) -> CellMesh:
    sq = cell.square
    if cell.group == 1:
        area = sq.side ** 2 / cell.budget
        base = optimal_triangle(cell.quad, area)
        if align:
            best = None
            for axis in (0, 1):
                cand = aligned_optimal_triangle(cell.quad, area, axis, sq.side)
                cm = CellMesh(*_tiled(cand, sq))
                if best is None or len(cm.tris) < len(best[1].tris):
                    best = (cand, cm)
            cell.base_triangle = Triangle.from_array(best[0])
            return best[1]
        ext = np.ptp(base.array, axis=0)
        if (ext > sq.side).all():
            cell.base_triangle = None
            return CellMesh(_uniform_grid(sq, 1), np.ones(2, dtype=bool),
                            note=f"cell {cell.index}: base triangle larger than the cell, two-triangle fallback")
        cell.base_triangle = base
        return CellMesh(*_tiled(base.array, sq))
    if cell.group == 2:
        tris = _uniform_grid(sq, r1)
        return CellMesh(tris, np.ones(len(tris), dtype=bool))
    if cell.group == 3:
        L = 1.0 / m
        W = 1.0 / (m * r2 ** 2)
        e_min, e_max = cell.spectral.e_min, cell.spectral.e_max
        base = np.array([[0.0, 0.0], L * e_min, W * e_max])
        tris, interior, _ = _tiled(base, sq)
        cell.base_triangle = Triangle.from_array(base).normalized()
        return CellMesh(tris, interior)
    tris = _uniform_grid(sq, r2)
    return CellMesh(tris, np.ones(len(tris), dtype=bool))


# --------------------------------------------------------------------------
# gluing
# --------------------------------------------------------------------------

# side k of a cell: 0 left (x = xmin), 1 right, 2 bottom, 3 top
_SIDES = ((0, "xmin"), (0, "xmax"), (1, "ymin"), (1, "ymax"))
_OPPOSITE = (1, 0, 3, 2)


def _side_points(cm: CellMesh, sq: Square) -> list[np.ndarray]:
    pts = np.unique(cm.tris.reshape(-1, 2), axis=0)
    out = []
    for axis, name in _SIDES:
        on = pts[np.abs(pts[:, axis] - getattr(sq, name)) <= BORDER_TOL]
        on = on[np.argsort(on[:, 1 - axis])]
        keep = np.ones(len(on), dtype=bool)
        keep[1:] = np.diff(on[:, 1 - axis]) > BORDER_TOL
        out.append(on[keep])
    return out


def _neighbour(index: int, side: int, m: int) -> int | None:
    i, j = index % m, index // m
    di, dj = ((-1, 0), (1, 0), (0, -1), (0, 1))[side]
    i, j = i + di, j + dj
    if 0 <= i < m and 0 <= j < m:
        return j * m + i
    return None


def glue(cells: list[SquareCell], meshes: list[CellMesh], m: int):
    """Make the union of cell meshes conforming and assemble the global mesh.

    Returns (mesh, per-cell triangle ranges, parent tile per triangle).
    """
    sides = [_side_points(cm, c.square) for c, cm in zip(cells, meshes)]
    builder = MeshBuilder()
    ranges = np.zeros((len(cells), 2), dtype=np.int64)
    parents = []
    none = np.full((3, 2), np.nan)
    for c, cm in zip(cells, meshes):
        sq = c.square
        start = len(builder._tris)
        foreign = []
        for k, (axis, name) in enumerate(_SIDES):
            nb = _neighbour(c.index, k, m)
            foreign.append(None if nb is None else sides[nb][_OPPOSITE[k]])
        par = cm.parent if cm.parent is not None else [none] * len(cm.tris)
        for t, inner, tp in zip(cm.tris, cm.interior, par):
            extra = []
            for k, (axis, name) in enumerate(_SIDES):
                pts = foreign[k]
                if pts is None or not len(pts):
                    continue
                on = np.abs(t[:, axis] - getattr(sq, name)) <= BORDER_TOL
                if on.sum() < 2:
                    continue
                lo, hi = np.sort(t[on, 1 - axis])[[0, -1]]
                s = pts[:, 1 - axis]
                extra.extend(pts[(s > lo + BORDER_TOL) & (s < hi - BORDER_TOL)])
            pieces = split_edge_conform_array(t, extra, BORDER_TOL) if extra else [t]
            for piece in pieces:
                if builder.add(piece, c.group, c.index, bool(inner) and len(pieces) == 1):
                    parents.append(tp)
        ranges[c.index] = (start, len(builder._tris))
    return builder.build(), ranges, np.array(parents).reshape(-1, 3, 2)


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

def build(f: Field, params: BuildParams) -> Triangulation:
    """Deterministic pipeline: m, cells, classes, budgets, cell meshes, glue."""
    g, sign = _oriented(f)
    w = params.weights
    N = int(params.N)
    diagnostics = []
    eps, mu = effective_eps(g, params.eps)
    if eps != params.eps:
        diagnostics.append(f"eps clamped from {params.eps} to {eps}")
    if params.m_override is not None:
        return _build_at(g, sign, params, eps, mu, int(params.m_override), diagnostics)
    m, ok = compute_m(g, eps, N, params.m_cap, w)
    if not ok:
        diagnostics.append(f"m condition not met below the cap; using m = {m}")
    while True:
        tri = _build_at(g, sign, params, eps, mu, m, list(diagnostics))
        if tri.count <= N or m == 1:
            return tri
        # border clipping overhead grows with m; trade resolution of the
        # Hessian for staying inside the budget
        diagnostics.append(f"m = {m} gives {tri.count} > N triangles; retrying with m = {m - 1}")
        m -= 1


def _build_at(g: Field, sign: int, params: BuildParams, eps: float, mu: float, m: int,
              diagnostics: list[str]) -> Triangulation:
    w = params.weights
    N = int(params.N)
    cells = make_cells(g, m)
    omega_lam = modulus(_lam_min_grid(g, 256), 1.0 / m)
    for c in cells:
        c.group = classify(c, eps, omega_lam)
    r1, r2 = grid_sizes(N, eps, m)

    others = [c for c in cells if c.group != 1]
    other_meshes = dict(zip((c.index for c in others),
                            ordered_map(lambda c: build_cell_mesh(c, m, r1, r2), others)))
    g1 = [c for c in cells if c.group == 1]

    def assemble(total):
        allocate_budgets(cells, total, w.p)
        g1_meshes = dict(zip((c.index for c in g1), ordered_map(
            lambda c: build_cell_mesh(c, m, r1, r2, params.full_budget), g1)))
        meshes = [other_meshes[c.index] if c.index in other_meshes else g1_meshes[c.index]
                  for c in cells]
        return meshes, glue(cells, meshes, m)

    if params.full_budget and g1:
        # search the group-1 total so the glued count is as close to N as
        # possible without exceeding it; counts are not monotone in the total,
        # so the best admissible build seen is kept
        total = float(max(len(g1), N - sum(len(cm.tris) for cm in other_meshes.values())))
        best = None
        lo = hi = None
        for _ in range(FULL_BUDGET_ROUNDS):
            meshes, (mesh, ranges, parent) = assemble(total)
            n = len(mesh)
            if n <= N:
                lo = total
                if best is None or n > len(best[1]):
                    best = (meshes, mesh, ranges, parent, [(c.budget, c.base_triangle) for c in cells])
                if n >= N - FULL_BUDGET_SLACK * N:
                    break
            else:
                hi = total
            if lo is not None and hi is not None:
                total = math.sqrt(lo * hi)
            else:
                g1_now = max(1, int((mesh.group == 1).sum()))
                room = max(1.0, N - (n - g1_now))
                step = room / g1_now
                # row counts are discrete: insist on a visible step
                step = min(step, 0.97) if n > N else max(step, 1.03)
                total = max(float(len(g1)), total * min(2.0, max(0.5, step)))
        if best is not None:
            meshes, mesh, ranges, parent, state = best
            for c, (budget, base) in zip(cells, state):
                c.budget, c.base_triangle = budget, base
    else:
        meshes, (mesh, ranges, parent) = assemble(N * (1.0 - 23.0 * eps - 2.0 * mu))
    diagnostics.extend(cm.note for cm in meshes if cm.note)
    planned = sum(len(cm.tris) for cm in meshes)
    rep = mesh.check_conformity()
    if not rep.ok:
        raise RuntimeError(f"gluing produced a non-conforming mesh: {rep}")
    if len(mesh) > N:
        diagnostics.append(f"triangle count {len(mesh)} exceeds N = {N}")
    return Triangulation(mesh, params, m, eps, mu, sign, cells, ranges, planned, parent, diagnostics)
