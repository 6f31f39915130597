import math

import numpy as np
import pytest

from anisomesh.approx import best_linear
from anisomesh.functions import get_function
from anisomesh.geometry import GeometryError, Triangle
from anisomesh.integrate import Weights, asym_deviation_batch
from anisomesh.mesher import BuildParams, build
from anisomesh.spline import (assemble, convergence_run, evaluate, free_spline_error, global_error,
                              polynomial_error, trend_of)

from oracles import max_edge_jump, riemann_deviation

W2 = Weights(2.0, 1.0, 1.0)


@pytest.fixture(scope="module")
def q_spline():
    f = get_function("sum-squares")
    tri = build(f, BuildParams(512, weights=W2))
    return f, tri, assemble(f, tri, W2)


def test_linear_reproduced_exactly():
    f = get_function("linear")
    tri = build(f, BuildParams(256))
    s = assemble(f, tri, W2)
    V = s.mesh.vertices
    assert np.array_equal(s.values, f(V[:, 0], V[:, 1]))
    pts = np.random.default_rng(1).uniform(0, 1, (200, 2))
    assert np.abs(s(pts[:, 0], pts[:, 1]) - f(pts[:, 0], pts[:, 1])).max() < 1e-12
    assert global_error(f, s, W2).total == pytest.approx(0.0, abs=1e-14)


def test_evaluate_vertex_and_centroid(q_spline):
    _, _, s = q_spline
    for k in (0, 7, len(s.mesh) - 1):
        ids = s.mesh.triangles[k]
        c = s.mesh.vertices[ids].mean(axis=0)
        assert evaluate(s, c) == pytest.approx(s.values[ids].mean(), abs=1e-12)
        assert evaluate(s, s.mesh.vertices[ids[0]]) == pytest.approx(s.values[ids[0]], abs=1e-12)
    assert evaluate(s, (1.0, 1.0)) == pytest.approx(s.values[np.argmax(s.mesh.vertices.sum(1))], abs=1e-12)


def test_evaluate_outside_raises(q_spline):
    _, _, s = q_spline
    with pytest.raises(GeometryError):
        evaluate(s, (1.2, 0.5))
    with pytest.raises(GeometryError):
        evaluate(s, (0.5, -0.01))


@pytest.mark.parametrize("name", ["sum-squares", "exp-bowl", "quartic", "concave-bowl"])
def test_continuity(name):
    f = get_function(name)
    tri = build(f, BuildParams(1024))
    s = assemble(f, tri, W2)
    assert max_edge_jump(s) <= 1e-9


def test_error_decomposition(q_spline):
    f, _, s = q_spline
    for w in (Weights(1.0, 1.0, 2.0), W2, Weights(math.inf, 2.0, 1.0)):
        rep = global_error(f, s, w)
        assert rep.combined(w.p) == pytest.approx(rep.total, rel=1e-12)
        assert len(rep.per_triangle) == len(s.mesh)


def test_swap_invariance(q_spline):
    f, _, s = q_spline
    abc = s.coefficients()
    w = Weights(2.0, 1.0, 3.0)
    neg = lambda x, y: -f(x, y)
    a = polynomial_error(f, s.mesh.coords, abc, w, tol=1e-9).total
    b = polynomial_error(neg, s.mesh.coords, -abc, w.swapped(), tol=1e-9).total
    assert a == pytest.approx(b, rel=1e-8)


@pytest.mark.parametrize("name", ["sum-squares", "exp-bowl"])
@pytest.mark.parametrize("w", [Weights(1.0, 1.0, 1.0), W2, Weights(2.0, 2.0, 1.0), Weights(math.inf, 1.0, 2.0)])
def test_free_below_spline(name, w):
    f = get_function(name)
    tri = build(f, BuildParams(128, weights=w))
    sw = assemble(f, tri, w)
    assert free_spline_error(f, tri, w) <= global_error(f, sw, w).total * (1 + 1e-6)


@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_free_error_uniform_mesh(p):
    """On a uniform grid of 2k^2 congruent triangles the per-triangle optimum
    of q is the same everywhere."""
    q = get_function("sum-squares")
    tri = build(get_function("linear"), BuildParams(128))
    n = len(tri.mesh)
    assert np.allclose(tri.mesh.areas(), 1.0 / n)
    w = Weights(p, 1.0, 2.0)
    one = best_linear(q, tri.mesh.triangle(0), w, tol=1e-10).error
    expect = one if math.isinf(p) else n ** (1 / p) * one
    assert free_spline_error(q, tri, w, tol=1e-10) == pytest.approx(expect, rel=1e-5)


def test_two_triangle_dense_oracle():
    q = get_function("sum-squares")
    tri = build(get_function("linear"), BuildParams(40))
    assert len(tri.mesh) == 2
    s = assemble(q, tri, Weights(1.0, 1.0, 1.0))
    got = global_error(q, s, Weights(1.0, 1.0, 1.0), tol=1e-10).total
    abc = s.coefficients()
    ref = 0.0
    for t, (a, b, c) in zip(tri.mesh.coords, abc):
        ref += riemann_deviation(lambda x, y: x * x + y * y - (a * x + b * y + c), t, 1.0, 1.0, 1.0, n=512)
    assert got == pytest.approx(ref, rel=1e-4)


def test_interior_triangles_match_best_approximation(q_spline):
    f, tri, s = q_spline
    inner = np.flatnonzero(tri.mesh.interior & (tri.mesh.group == 1))
    assert len(inner) > 50
    pick = inner[:: max(1, len(inner) // 25)]
    tris = tri.mesh.coords[pick]
    got, _ = asym_deviation_batch(f, tris, s.coefficients()[pick], W2, tol=1e-12)
    for k, t in enumerate(tris):
        best = best_linear(f, Triangle.from_array(t), W2, tol=1e-12).error
        assert got[k] == pytest.approx(best, rel=1e-6)


def test_monotone_in_beta(q_spline):
    f, _, s = q_spline
    vals = [global_error(f, s, Weights(2.0, 1.0, b), tol=1e-8).total for b in (1.0, 2.0, 5.0, 30.0)]
    assert all(b >= a * (1 - 1e-9) for a, b in zip(vals, vals[1:]))


def test_trend_of():
    assert trend_of([None, None]) == "exact"
    assert trend_of([1.2, 1.1, 1.11]) == "decreasing"
    assert trend_of([1.0, 1.1]) == "irregular"


def test_convergence_linear_exact():
    res = convergence_run(get_function("linear"), W2, [64, 256])
    assert res.trend == "exact"
    assert res.last_ratio is None
    # P is rebuilt from vertex values, so only rounding remains
    assert all(r.error < 1e-14 for r in res.rows)


def test_convergence_sum_squares_trend():
    res = convergence_run(get_function("sum-squares"), W2, [256, 1024], full_budget=True, free=True)
    r = [row.ratio for row in res.rows]
    assert res.trend == "decreasing"
    assert 0.97 <= r[-1] <= 1.2
    for row in res.rows:
        assert row.free_ratio <= row.ratio * (1 + 1e-6)
        assert row.N_actual <= row.N


def test_convergence_rejects_unsorted():
    with pytest.raises(ValueError):
        convergence_run(get_function("linear"), W2, [256, 64])
