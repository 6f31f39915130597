import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisomesh.geometry import (AffineMap, ConvexPolygon, GeometryError, Mesh, MeshBuilder, Square,
                                Triangle, area, clip_to_square, fan_triangulate, split_edge_conform,
                                tile_cover, unit_equilateral)

coord = st.floats(-2.0, 3.0, allow_nan=False)
tri_st = st.tuples(coord, coord, coord, coord, coord, coord)


def tri(*xy):
    return Triangle.from_array(np.array(xy, dtype=float).reshape(3, 2))


def mc_area_in_square(t: Triangle, sq: Square, n=400_000, seed=3):
    """Monte Carlo estimate of |t ∩ sq| by sampling the square."""
    rng = np.random.default_rng(seed)
    p = rng.uniform([sq.xmin, sq.ymin], [sq.xmax, sq.ymax], size=(n, 2))
    a = t.normalized().array
    inside = np.ones(n, dtype=bool)
    for i in range(3):
        u, v = a[i], a[(i + 1) % 3]
        inside &= (v[0] - u[0]) * (p[:, 1] - u[1]) - (v[1] - u[1]) * (p[:, 0] - u[0]) >= 0
    return inside.mean() * sq.side ** 2


# -- area / equilateral -----------------------------------------------------

def test_area_examples():
    assert area(tri(0, 0, 1, 0, 0, 1)) == pytest.approx(0.5, abs=1e-15)
    s = 2 * 3 ** -0.25
    eq = tri(0, 0, s, 0, s / 2, s * math.sqrt(3) / 2)
    assert area(eq) == pytest.approx(1.0, abs=1e-14)
    assert area(tri(0, 0, 1, 1, 2, 2)) == 0.0


def test_unit_equilateral_pose():
    t = unit_equilateral()
    assert t.area == pytest.approx(1.0, abs=1e-12)
    sides = t.side_lengths
    assert np.ptp(sides) < 1e-12
    assert sides[0] == pytest.approx(1.5196713713031853, abs=1e-12)
    c = t.array.mean(axis=0)
    assert np.abs(c).max() < 1e-15
    assert t.v2.x == 0.0 and t.v2.y > 0
    assert t.signed_area > 0


def test_non_finite_vertex_rejected():
    with pytest.raises(GeometryError):
        tri(0, 0, math.inf, 0, 0, 1)


@given(tri_st)
def test_normalized_is_ccw_and_area_preserving(xy):
    t = tri(*xy)
    n = t.normalized()
    assert n.signed_area >= 0
    assert n.area == pytest.approx(t.area, abs=1e-12)


def test_affine_map_inverse_and_det():
    M = AffineMap(np.array([[2.0, 1.0], [0.5, 3.0]]), np.array([0.1, -0.2]))
    t = unit_equilateral()
    back = M.inverse().apply(M.apply(t))
    assert np.allclose(back.array, t.array, atol=1e-13)
    assert M.apply(t).area == pytest.approx(abs(M.det) * t.area, rel=1e-13)


# -- tilings -----------------------------------------------------------------

def test_tile_cover_unit_right_triangle():
    tiles = tile_cover(tri(0, 0, 1, 0, 0, 1), Square.unit())
    assert len(tiles) == 2
    assert sum(t.area for t in tiles) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("k", [1, 2, 5, 8])
def test_tile_cover_right_isosceles_grid(k):
    h = 1.0 / k
    tiles = tile_cover(tri(0, 0, h, 0, 0, h), Square.unit())
    assert len(tiles) == 2 * k * k
    for t in tiles:
        assert clip_to_square(t, Square.unit()).area == pytest.approx(t.area, rel=1e-9)


def _covers(tiles, sq, n=40, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.uniform([sq.xmin, sq.ymin], [sq.xmax, sq.ymax], size=(n, 2))
    arr = np.array([t.normalized().array for t in tiles])
    hit = np.zeros(n, dtype=bool)
    for a in arr:
        inside = np.ones(n, dtype=bool)
        for i in range(3):
            u, v = a[i], a[(i + 1) % 3]
            inside &= (v[0] - u[0]) * (pts[:, 1] - u[1]) - (v[1] - u[1]) * (pts[:, 0] - u[0]) >= -1e-12
        hit |= inside
    return hit.all()


@given(st.floats(0.15, 0.6), st.floats(-0.3, 0.3), st.floats(0.15, 0.6), st.floats(0.1, 0.6))
def test_tile_cover_covers_square(a, b, c, d):
    t = tri(0, 0, a, b * a, c * b, d)
    if t.area < 1e-3:
        return
    sq = Square(0.2, 0.1, 1.2, 1.1)
    tiles = tile_cover(t, sq)
    assert _covers(tiles, sq)
    # areas of the clipped pieces add up to the square
    assert sum(p.area for p in (clip_to_square(x, sq) for x in tiles) if p is not None) == \
        pytest.approx(sq.side ** 2, rel=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_tile_cover_translation_equivariant(dx, dy):
    t = tri(0, 0, 0.23, 0.05, 0.07, 0.19)
    s0 = Square(0.0, 0.0, 0.5, 0.5)
    s1 = Square(dx, dy, dx + 0.5, dy + 0.5)
    a = np.array([x.array for x in tile_cover(t, s0)])
    b = np.array([x.array for x in tile_cover(t, s1)])
    assert a.shape == b.shape
    key = lambda arr: np.lexsort(np.round(arr.mean(axis=1), 9).T)
    a = a[key(a)]
    b = b[key(b - [dx, dy])]
    assert np.allclose(b - [dx, dy], a, atol=1e-9)


def test_tile_cover_degenerate():
    with pytest.raises(GeometryError):
        tile_cover(tri(0, 0, 1, 1, 2, 2), Square.unit())


# -- clipping ----------------------------------------------------------------

def test_clip_interior_triangle_unchanged():
    t = tri(0.1, 0.1, 0.6, 0.2, 0.3, 0.7)
    poly = clip_to_square(t, Square.unit())
    assert len(poly) == 3
    assert poly.area == pytest.approx(t.area, abs=1e-15)


def test_clip_apex_on_side():
    # the apex sits on x = 0, so only one side is cut: a triangle remains
    poly = clip_to_square(tri(-0.5, 0.25, 0.5, 0.25, 0, 0.75), Square.unit())
    assert len(poly) == 3
    assert poly.area == pytest.approx(0.125, abs=1e-14)


def test_clip_quadrilateral():
    # shifted right, the left side cuts off a corner: four vertices
    t = tri(-0.4, 0.25, 0.6, 0.25, 0.1, 0.75)
    poly = clip_to_square(t, Square.unit())
    assert len(poly) == 4
    # half-plane oracle: full area minus the cut-off triangle left of x = 0
    # (vertices (-0.4,0.25), (0,0.25), (0,0.65))
    assert poly.area == pytest.approx(0.25 - 0.5 * 0.4 * 0.4, abs=1e-14)


def test_clip_corner_crossing_matches_monte_carlo():
    t = tri(-0.4, 0.6, 0.6, -0.4, 0.9, 0.9)
    outside = tri(-0.3, 0.5, 0.5, -0.3, -0.6, -0.6)
    assert all(not (0 <= x <= 1 and 0 <= y <= 1) for x, y in outside.array)
    poly = clip_to_square(outside, Square.unit())
    assert poly is not None
    assert poly.area == pytest.approx(mc_area_in_square(outside, Square.unit()), abs=1e-3)
    assert clip_to_square(t, Square.unit()).area == pytest.approx(mc_area_in_square(t, Square.unit()), abs=1e-3)


def test_clip_disjoint_and_touching():
    assert clip_to_square(tri(2, 2, 3, 2, 2, 3), Square.unit()) is None
    assert clip_to_square(tri(1, 0, 2, 0, 1, 1), Square.unit()) is None


@settings(max_examples=300)
@given(tri_st)
def test_clip_has_at_most_seven_vertices(xy):
    t = tri(*xy)
    poly = clip_to_square(t, Square.unit())
    if poly is None:
        return
    assert 3 <= len(poly) <= 7
    assert poly.area <= t.area + 1e-12
    assert poly.area <= 1.0 + 1e-12


def test_clip_vertex_count_bulk():
    """Many random triangles through the same vertex-count bound."""
    rng = np.random.default_rng(11)
    worst = 0
    for xy in rng.uniform(-1.5, 2.5, size=(10_000, 6)):
        poly = clip_to_square(xy.reshape(3, 2), Square.unit())
        if poly is not None:
            worst = max(worst, len(poly))
    assert worst <= 7


# -- fans and edge splits -----------------------------------------------------

def _regular(k, r=0.4, c=(0.5, 0.5)):
    ang = 2 * np.pi * np.arange(k) / k
    return ConvexPolygon(np.column_stack([c[0] + r * np.cos(ang), c[1] + r * np.sin(ang)]))


@pytest.mark.parametrize("k", [3, 4, 5, 6, 7])
def test_fan_triangulate_counts_and_area(k):
    poly = _regular(k)
    parts = fan_triangulate(poly)
    assert len(parts) == k - 2
    assert sum(p.area for p in parts) == pytest.approx(poly.area, abs=1e-12)
    verts = {tuple(np.round(v, 12)) for v in poly.vertices}
    assert all(tuple(np.round(v, 12)) in verts for p in parts for v in p.array)


def test_fan_triangulate_rejects_eight_gon():
    with pytest.raises(GeometryError):
        fan_triangulate(_regular(8))


def test_fan_of_triangle_is_itself():
    poly = ConvexPolygon([[0, 0], [1, 0], [0, 1]])
    (t,) = fan_triangulate(poly)
    assert t.area == pytest.approx(0.5)


@given(tri_st)
def test_clip_then_fan_partitions(xy):
    poly = clip_to_square(tri(*xy), Square.unit())
    if poly is None:
        return
    parts = fan_triangulate(poly)
    assert sum(p.area for p in parts) == pytest.approx(poly.area, abs=1e-12)
    assert all(p.area > 0 for p in parts)


def test_split_edge_conform_examples():
    t = tri(0, 0, 1, 0, 0, 1)
    assert len(split_edge_conform(t, [])) == 1
    assert len(split_edge_conform(t, [(0.5, 0.0)])) == 2
    parts = split_edge_conform(t, [(0.5, 0.0), (0.0, 0.3)])
    assert len(parts) == 3
    assert sum(p.area for p in parts) == pytest.approx(0.5, abs=1e-15)


def test_split_edge_conform_rejects_interior_point():
    with pytest.raises(GeometryError):
        split_edge_conform(tri(0, 0, 1, 0, 0, 1), [(0.2, 0.2)])


@given(st.lists(st.tuples(st.integers(0, 2), st.floats(0.01, 0.99)), max_size=6, unique_by=lambda x: round(x[1], 3)))
def test_split_edge_conform_vertices(pts):
    t = tri(0.1, 0.2, 0.9, 0.3, 0.4, 0.8)
    a = t.array
    P = [a[e] + s * (a[(e + 1) % 3] - a[e]) for e, s in pts]
    parts = split_edge_conform(t, P)
    assert sum(p.area for p in parts) == pytest.approx(t.area, abs=1e-12)
    verts = np.concatenate([p.array for p in parts])
    allowed = np.concatenate([a, np.array(P).reshape(-1, 2)])
    for v in verts:
        assert np.min(np.hypot(*(allowed - v).T)) < 1e-12
    for p in P:
        assert np.min(np.hypot(*(verts - p).T)) < 1e-12


# -- meshes -------------------------------------------------------------------

def _two_triangle_mesh():
    b = MeshBuilder()
    b.add(np.array([[0, 0], [1, 0], [1, 1]], float), 4, 0, True)
    b.add(np.array([[0, 0], [1, 1], [0, 1]], float), 4, 0, True)
    return b.build()


def test_mesh_conformity_and_json_roundtrip():
    m = _two_triangle_mesh()
    rep = m.check_conformity()
    assert rep.ok and rep.unpaired_edges == 0
    back = Mesh.from_json(m.to_json())
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.vertices, m.vertices)


def test_hanging_node_detected():
    b = MeshBuilder()
    b.add(np.array([[0, 0], [1, 0], [0, 1]], float), 4, 0, True)
    b.add(np.array([[1, 0], [1, 0.5], [0.5, 0.5]], float), 4, 0, True)
    b.add(np.array([[1, 0.5], [1, 1], [0.5, 0.5]], float), 4, 0, True)
    b.add(np.array([[0.5, 0.5], [1, 1], [0, 1]], float), 4, 0, True)
    rep = b.build().check_conformity()
    assert abs(rep.total_area - 1.0) < 1e-15
    assert not rep.conforming


def test_weld_merges_nearby_vertices():
    b = MeshBuilder()
    i = b.vertex((0.3, 0.3))
    j = b.vertex((0.3 + 1e-13, 0.3 - 1e-13))
    assert i == j
