"""Planar primitives: triangles, affine maps, lattice tilings, clipping and
conforming mesh bookkeeping.

Triangles are stored counterclockwise.  Bulk operations work on ``(n, 3, 2)``
coordinate arrays; the :class:`Triangle` value type wraps a single one.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

WELD_QUANTUM = 1e-12
CLIP_TOL = 1e-12
SLIVER_AREA = 1e-14


class GeometryError(ValueError):
    """Raised for degenerate input geometry."""


class Point2(NamedTuple):
    x: float
    y: float


class Square(NamedTuple):
    """Axis-aligned square ``[xmin, xmax] x [ymin, ymax]``.

    Bounds are stored explicitly (not as corner + side) so that neighbouring
    cells built from the same grid formula share bit-identical border lines.
    """

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @classmethod
    def unit(cls) -> "Square":
        return cls(0.0, 0.0, 1.0, 1.0)

    @classmethod
    def grid_cell(cls, i: int, j: int, m: int) -> "Square":
        return cls(i / m, j / m, (i + 1) / m, (j + 1) / m)

    @property
    def side(self) -> float:
        return self.xmax - self.xmin

    @property
    def center(self) -> Point2:
        return Point2(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def contains(self, pts: np.ndarray, tol: float = CLIP_TOL) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return ((pts[..., 0] >= self.xmin - tol) & (pts[..., 0] <= self.xmax + tol)
                & (pts[..., 1] >= self.ymin - tol) & (pts[..., 1] <= self.ymax + tol))


def _signed_area2(v: np.ndarray) -> np.ndarray:
    """Twice the signed area of triangles given as ``(..., 3, 2)``."""
    return ((v[..., 1, 0] - v[..., 0, 0]) * (v[..., 2, 1] - v[..., 0, 1])
            - (v[..., 2, 0] - v[..., 0, 0]) * (v[..., 1, 1] - v[..., 0, 1]))


def signed_areas(v: np.ndarray) -> np.ndarray:
    return 0.5 * _signed_area2(np.asarray(v, dtype=float))


@dataclass(frozen=True)
class Triangle:
    v0: Point2
    v1: Point2
    v2: Point2

    def __post_init__(self):
        for name in ("v0", "v1", "v2"):
            p = Point2(*map(float, getattr(self, name)))
            if not (math.isfinite(p.x) and math.isfinite(p.y)):
                raise GeometryError(f"non-finite vertex {p}")
            object.__setattr__(self, name, p)

    @classmethod
    def from_array(cls, a: np.ndarray) -> "Triangle":
        a = np.asarray(a, dtype=float)
        return cls(Point2(*a[0]), Point2(*a[1]), Point2(*a[2]))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.v0, self.v1, self.v2], dtype=float)

    @property
    def signed_area(self) -> float:
        return float(signed_areas(self.array))

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    @property
    def diameter(self) -> float:
        a = self.array
        return float(max(np.hypot(*(a[i] - a[(i + 1) % 3])) for i in range(3)))

    @property
    def side_lengths(self) -> np.ndarray:
        a = self.array
        return np.array([np.hypot(*(a[(i + 1) % 3] - a[i])) for i in range(3)])

    @property
    def centroid(self) -> Point2:
        return Point2(*self.array.mean(axis=0))

    def normalized(self) -> "Triangle":
        """Counterclockwise copy (vertex order v0, v2, v1 if needed)."""
        if self.signed_area < 0:
            return Triangle(self.v0, self.v2, self.v1)
        return self

    def scaled(self, factor: float, about: Sequence[float] | None = None) -> "Triangle":
        a = self.array
        c = a.mean(axis=0) if about is None else np.asarray(about, dtype=float)
        return Triangle.from_array(c + factor * (a - c))

    def translated(self, shift: Sequence[float]) -> "Triangle":
        return Triangle.from_array(self.array + np.asarray(shift, dtype=float))


def area(t: Triangle) -> float:
    """Half the absolute cross product of the edge vectors."""
    return t.area


def unit_equilateral() -> Triangle:
    """Equilateral triangle of area 1, centroid at the origin, apex on +y."""
    side = 2.0 * 3.0 ** -0.25
    r = side / math.sqrt(3.0)
    return Triangle(Point2(-side / 2, -r / 2), Point2(side / 2, -r / 2), Point2(0.0, r))


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x -> linear @ x + shift``."""

    linear: np.ndarray
    shift: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(2, 2))
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=float).reshape(2))

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.linear.T + self.shift

    def apply(self, t: Triangle) -> Triangle:
        return Triangle.from_array(self(t.array)).normalized()

    def inverse(self) -> "AffineMap":
        if abs(self.det) == 0.0:
            raise GeometryError("singular affine map")
        inv = np.linalg.inv(self.linear)
        return AffineMap(inv, -inv @ self.shift)


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "vertices", v)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


# --------------------------------------------------------------------------
# tiling and clipping
# --------------------------------------------------------------------------

def _lattice_triangles(t: np.ndarray, anchor: np.ndarray, box: Square) -> np.ndarray:
    """All triangles of Til(t) anchored at ``anchor`` whose lattice cell can
    touch ``box``.  Returns ``(n, 3, 2)``; lower (shift of t) and upper (point
    reflection of t through the midpoint of v0-v1, shifted) triangles."""
    e1 = t[1] - t[0]
    e2 = t[2] - t[0]
    basis = np.column_stack([e1, e2])
    inv = np.linalg.inv(basis)
    corners = np.array([[box.xmin, box.ymin], [box.xmax, box.ymin],
                        [box.xmin, box.ymax], [box.xmax, box.ymax]]) - anchor
    uv = corners @ inv.T
    lo = np.floor(uv.min(axis=0) - 1e-9).astype(int) - 1
    hi = np.ceil(uv.max(axis=0) + 1e-9).astype(int) + 1
    ii, jj = np.meshgrid(np.arange(lo[0], hi[0]), np.arange(lo[1], hi[1]), indexing="ij")
    ii = ii.ravel()
    jj = jj.ravel()
    # every vertex comes from the same expression in its integer lattice
    # coordinates, so shared vertices are bit-identical across tiles
    def node(di, dj):
        return np.outer(ii + di, e1) + np.outer(jj + dj, e2) + anchor
    lower = np.stack([node(0, 0), node(1, 0), node(0, 1)], axis=1)
    # reflection of (v0, v1, v2) through midpoint of v0-v1 is (v1, v0, v0+v1-v2);
    # shifted by +e2 it is (v1+e2, v2, v1) relative to the lattice origin
    upper = np.stack([node(1, 1), node(0, 1), node(1, 0)], axis=1)
    return np.concatenate([lower, upper], axis=0)


def _overlaps_box(tris: np.ndarray, box: Square, tol: float = CLIP_TOL) -> np.ndarray:
    """Separating-axis test for positive-area overlap of triangles and box."""
    mn = tris.min(axis=1)
    mx = tris.max(axis=1)
    keep = ((mx[:, 0] > box.xmin + tol) & (mn[:, 0] < box.xmax - tol)
            & (mx[:, 1] > box.ymin + tol) & (mn[:, 1] < box.ymax - tol))
    corners = np.array([[box.xmin, box.ymin], [box.xmax, box.ymin],
                        [box.xmax, box.ymax], [box.xmin, box.ymax]])
    for k in range(3):
        a = tris[:, k]
        b = tris[:, (k + 1) % 3]
        c = tris[:, (k + 2) % 3]
        d = b - a
        nrm = np.stack([d[:, 1], -d[:, 0]], axis=1)  # outward for ccw
        scale = np.hypot(d[:, 0], d[:, 1])
        side_c = np.einsum("ij,ij->i", c - a, nrm)
        sgn = np.sign(side_c)
        proj = np.einsum("kj,ij->ik", corners, nrm) - np.einsum("ij,ij->i", a, nrm)[:, None]
        proj *= sgn[:, None]
        keep &= (proj.max(axis=1) > tol * scale)
    return keep


def tile_cover(t: Triangle, square: Square) -> list[Triangle]:
    """Triangles of the periodic tiling Til(t) meeting ``square`` in positive area.

    The lattice is anchored so that v0 sits on the square's lower-left corner.
    """
    arr = t.normalized().array
    if abs(_signed_area2(arr)) <= 2 * SLIVER_AREA:
        raise GeometryError("degenerate triangle")
    tris = tile_cover_array(arr, square)
    return [Triangle.from_array(a) for a in tris]


def tile_cover_array(t: np.ndarray, square: Square) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if _signed_area2(t) < 0:
        t = t[[0, 2, 1]]
    anchor = np.array([square.xmin, square.ymin])
    tris = _lattice_triangles(t, anchor, square)
    return tris[_overlaps_box(tris, square)]


def _clip_halfplane(pts: list, axis: int, bound: float, keep_below: bool) -> list:
    if not pts:
        return pts

    def dist(p):
        return (bound - p[axis]) if keep_below else (p[axis] - bound)

    out = []
    n = len(pts)
    for i in range(n):
        p = pts[i]
        q = pts[(i + 1) % n]
        dp, dq = dist(p), dist(q)
        if dp >= -CLIP_TOL:
            if abs(dp) <= CLIP_TOL:
                p = (bound, p[1]) if axis == 0 else (p[0], bound)
            out.append(p)
        if (dp > CLIP_TOL and dq < -CLIP_TOL) or (dp < -CLIP_TOL and dq > CLIP_TOL):
            s = dp / (dp - dq)
            x = p[0] + s * (q[0] - p[0])
            y = p[1] + s * (q[1] - p[1])
            out.append((bound, y) if axis == 0 else (x, bound))
    return out


def _dedupe(pts: list) -> list:
    out = []
    for p in pts:
        if not out or abs(p[0] - out[-1][0]) > CLIP_TOL or abs(p[1] - out[-1][1]) > CLIP_TOL:
            out.append(p)
    while len(out) > 1 and abs(out[0][0] - out[-1][0]) <= CLIP_TOL and abs(out[0][1] - out[-1][1]) <= CLIP_TOL:
        out.pop()
    return out


def clip_to_square(t: Triangle | np.ndarray, square: Square) -> ConvexPolygon | None:
    """Intersection of a triangle with a square (Sutherland-Hodgman).

    Returns ``None`` when the intersection has measure zero.  Points within
    ``CLIP_TOL`` of a square side are snapped onto it.
    """
    arr = t.array if isinstance(t, Triangle) else np.asarray(t, dtype=float)
    if _signed_area2(arr) < 0:
        arr = arr[[0, 2, 1]]
    pts = [tuple(p) for p in arr]
    pts = _clip_halfplane(pts, 0, square.xmin, keep_below=False)
    pts = _clip_halfplane(pts, 0, square.xmax, keep_below=True)
    pts = _clip_halfplane(pts, 1, square.ymin, keep_below=False)
    pts = _clip_halfplane(pts, 1, square.ymax, keep_below=True)
    pts = _dedupe(pts)
    if len(pts) < 3:
        return None
    poly = ConvexPolygon(np.array(pts))
    if poly.area < SLIVER_AREA:
        return None
    return poly


def _tri_area2(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])


def _min_angle_cos(a, b, c) -> float:
    """Largest cosine among the three angles (smaller is better shaped)."""
    pts = (np.asarray(a), np.asarray(b), np.asarray(c))
    worst = -1.0
    for i in range(3):
        u = pts[(i + 1) % 3] - pts[i]
        v = pts[(i + 2) % 3] - pts[i]
        nu, nv = np.hypot(*u), np.hypot(*v)
        if nu == 0 or nv == 0:
            return 1.0
        worst = max(worst, float(u @ v) / (nu * nv))
    return worst


def triangulate_convex(pts: np.ndarray, tol: float = SLIVER_AREA) -> list[np.ndarray]:
    """Triangulate a weakly convex ccw polygon using only its vertices.

    Collinear boundary vertices are allowed; every output triangle has area
    above ``tol``.  Uses a fan when one exists, otherwise clips ears at
    strictly convex vertices.
    """
    pts = [np.asarray(p, dtype=float) for p in pts]
    k = len(pts)
    if k < 3:
        raise GeometryError("polygon needs at least 3 vertices")
    for apex in range(k):
        fan = [(pts[apex], pts[(apex + i) % k], pts[(apex + i + 1) % k]) for i in range(1, k - 1)]
        if all(0.5 * _tri_area2(*f) > tol for f in fan):
            return [np.array(f) for f in fan]
    # ear clipping with backtracking: greedy choices can strand a run of
    # collinear vertices, so failed branches are retried in score order
    dead: set[tuple[int, ...]] = set()

    def clip(ring: tuple[int, ...]):
        if len(ring) == 3:
            return [ring] if 0.5 * _tri_area2(*(pts[i] for i in ring)) > tol else None
        if ring in dead:
            return None
        ears = []
        for i in range(len(ring)):
            a, b, c = ring[i - 1], ring[i], ring[(i + 1) % len(ring)]
            if 0.5 * _tri_area2(pts[a], pts[b], pts[c]) > tol:
                ears.append((_min_angle_cos(pts[a], pts[b], pts[c]), i))
        for _, i in sorted(ears):
            rest = clip(ring[:i] + ring[i + 1:])
            if rest is not None:
                return [(ring[i - 1], ring[i], ring[(i + 1) % len(ring)])] + rest
        dead.add(ring)
        return None

    found = clip(tuple(range(k)))
    if found is None:
        raise GeometryError("degenerate polygon")
    return [np.array([pts[i] for i in tri]) for tri in found]


def fan_triangulate(poly: ConvexPolygon) -> list[Triangle]:
    if not 3 <= len(poly) <= 7:
        raise GeometryError(f"expected 3..7 vertices, got {len(poly)}")
    return [Triangle.from_array(a) for a in triangulate_convex(poly.vertices)]


def _edge_param(p, a, b, tol):
    """Parameter of ``p`` along segment a-b, or None if off the segment."""
    d = b - a
    L2 = float(d @ d)
    s = float((p - a) @ d) / L2
    dist = abs(float(d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0]))) / math.sqrt(L2)
    if dist <= tol and -tol < s * math.sqrt(L2) and (s - 1) * math.sqrt(L2) < tol:
        return s
    return None


def split_edge_conform_array(t: np.ndarray, pts: Iterable, tol: float = 1e-10) -> list[np.ndarray]:
    t = np.asarray(t, dtype=float)
    if _signed_area2(t) < 0:
        t = t[[0, 2, 1]]
    per_edge: list[list] = [[], [], []]
    for p in pts:
        p = np.asarray(p, dtype=float)
        if min(np.hypot(*(p - v)) for v in t) <= tol:
            continue
        for e in range(3):
            s = _edge_param(p, t[e], t[(e + 1) % 3], tol)
            if s is not None:
                per_edge[e].append((s, p))
                break
        else:
            raise GeometryError(f"point {tuple(p)} is not on the triangle boundary")
    if not any(per_edge):
        return [t]
    ring = []
    for e in range(3):
        ring.append(t[e])
        for _, p in sorted(per_edge[e], key=lambda sp: sp[0]):
            # near-duplicates (the same point computed twice) collapse to one
            if np.hypot(*(p - ring[-1])) > tol:
                ring.append(p)
    return triangulate_convex(np.array(ring))


def split_edge_conform(t: Triangle, pts: Sequence[Sequence[float]]) -> list[Triangle]:
    """Subdivide ``t`` so that every point of ``pts`` (on its boundary) becomes
    a vertex, without adding interior vertices."""
    return [Triangle.from_array(a) for a in split_edge_conform_array(t.array, pts)]


# --------------------------------------------------------------------------
# meshes
# --------------------------------------------------------------------------

def weld_key(p) -> tuple[int, int]:
    return (int(round(p[0] / WELD_QUANTUM)), int(round(p[1] / WELD_QUANTUM)))


@dataclass(frozen=True)
class ConformityReport:
    conforming: bool
    positive: bool
    total_area: float
    unpaired_edges: int
    overused_edges: int

    @property
    def ok(self) -> bool:
        return self.conforming and self.positive and abs(self.total_area - 1.0) <= 1e-9


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    group: np.ndarray
    cell: np.ndarray
    interior: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        n = len(self.triangles)
        for name, dt in (("group", np.int64), ("cell", np.int64), ("interior", bool)):
            a = np.asarray(getattr(self, name), dtype=dt).reshape(-1)
            if len(a) != n:
                raise ValueError(f"{name} has {len(a)} entries for {n} triangles")
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def coords(self) -> np.ndarray:
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        return signed_areas(self.coords)

    def triangle(self, k: int) -> Triangle:
        return Triangle.from_array(self.coords[k])

    def check_conformity(self, domain: Square = Square.unit(), tol: float = 1e-12) -> ConformityReport:
        """Edge-to-edge check: every edge is shared by exactly two triangles
        unless it lies on the domain boundary."""
        tri = self.triangles
        edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        over = int((counts > 2).sum())
        single = uniq[counts == 1]
        unpaired = 0
        if len(single):
            a = self.vertices[single[:, 0]]
            b = self.vertices[single[:, 1]]
            on_boundary = np.zeros(len(single), dtype=bool)
            for axis, bound in ((0, domain.xmin), (0, domain.xmax), (1, domain.ymin), (1, domain.ymax)):
                on_boundary |= (np.abs(a[:, axis] - bound) <= tol) & (np.abs(b[:, axis] - bound) <= tol)
            unpaired = int((~on_boundary).sum())
        ar = self.areas()
        return ConformityReport(
            conforming=(over == 0 and unpaired == 0),
            positive=bool((ar > 0).all()),
            total_area=float(ar.sum()),
            unpaired_edges=unpaired,
            overused_edges=over,
        )

    def to_json_dict(self) -> dict:
        return {
            "vertices": [[float(x), float(y)] for x, y in self.vertices],
            "triangles": self.triangles.tolist(),
            "group": self.group.tolist(),
            "cell": self.cell.tolist(),
            "interior": [bool(b) for b in self.interior],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str | dict) -> "Mesh":
        d = json.loads(text) if isinstance(text, str) else text
        return cls(np.array(d["vertices"], dtype=float), np.array(d["triangles"], dtype=np.int64),
                   d["group"], d["cell"], d["interior"])


class MeshBuilder:
    """Accumulates tagged triangles with welded vertices."""

    def __init__(self):
        self._index: dict[tuple[int, int], int] = {}
        self._verts: list[tuple[float, float]] = []
        self._tris: list[tuple[int, int, int]] = []
        self._group: list[int] = []
        self._cell: list[int] = []
        self._interior: list[bool] = []

    def vertex(self, p) -> int:
        key = weld_key(p)
        idx = self._index.get(key)
        if idx is None:
            # a point a rounding error away may have landed in a neighbouring bin
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    idx = self._index.get((key[0] + di, key[1] + dj))
                    if idx is not None:
                        return idx
            idx = len(self._verts)
            self._index[key] = idx
            self._verts.append((float(p[0]), float(p[1])))
        return idx

    def add(self, tri: np.ndarray, group: int, cell: int, interior: bool) -> bool:
        """Append a triangle; returns False if welding collapsed it."""
        ids = [self.vertex(p) for p in tri]
        if len(set(ids)) < 3:
            return False
        if _signed_area2(np.asarray([self._verts[i] for i in ids])) < 0:
            ids = [ids[0], ids[2], ids[1]]
        self._tris.append(tuple(ids))
        self._group.append(group)
        self._cell.append(cell)
        self._interior.append(interior)
        return True

    def build(self) -> Mesh:
        return Mesh(np.array(self._verts, dtype=float).reshape(-1, 2),
                    np.array(self._tris, dtype=np.int64).reshape(-1, 3),
                    self._group, self._cell, self._interior)
