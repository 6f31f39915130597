import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anisomesh.approx import (LinearPoly, QuadForm, _check_nodes, aspect_ratio, best_linear,
                              best_linear_batch, closed_form_constant, constant_C, form_error_floor,
                              offset_jacobian, one_sided_best, optimal_triangle, random_unit_triangles,
                              sym2_eigen, vertex_offset)
from anisomesh.geometry import GeometryError, Triangle, unit_equilateral
from anisomesh.integrate import Weights, asym_deviation

from oracles import quadratic_moments, riemann_points, tri_area

E = unit_equilateral()


def q(x, y):
    return x * x + y * y


# -- closed forms (independently re-derived here) -----------------------------

def c_inf(a, b):
    # sup-norm: q - P ranges over [lo, hi] with hi - lo = r^2 (the oscillation
    # of q, r the circumradius); a hi = -b lo balances the two weighted sides
    r2 = 4 / (3 * math.sqrt(3))
    return r2 * a * b / (a + b)


def c_one(a, b):
    # p = 1: 3^{-3/2} a - a^2 / (2 pi (a + b)) when 3^{3/2} a / pi <= a + b
    return 3 ** -1.5 * a - a * a / (2 * math.pi * (a + b))


def test_closed_form_table():
    assert closed_form_constant(math.inf, 1, 1) == pytest.approx(c_inf(1, 1), rel=1e-15)
    assert closed_form_constant(math.inf, 2, 1) == pytest.approx(c_inf(2, 1), rel=1e-15)
    assert closed_form_constant(1, 1, 1) == pytest.approx(c_one(1, 1), rel=1e-15)
    assert closed_form_constant(2, 1, 1) is None
    # the p = 1 formula only holds in its validity range
    assert closed_form_constant(1, 10, 1) is None


@pytest.mark.parametrize("a,b", [(1, 1), (2, 1), (1, 4), (3, 0.5)])
def test_constant_sup_norm(a, b):
    assert constant_C(math.inf, a, b) == pytest.approx(c_inf(a, b), abs=1e-9)


@pytest.mark.parametrize("a,b", [(1, 1), (1, 2), (1, 4)])
def test_constant_p1(a, b):
    assert constant_C(1, a, b) == pytest.approx(c_one(a, b), abs=1e-7)


def test_constant_p2_is_l2_distance_to_plane():
    # for p = 2 and equal weights the best P is the L2 projection; by symmetry
    # it is the mean of q, and C^2 = Var(q) over the triangle
    M, v, s = quadratic_moments(E.array, n=600)
    coef = np.linalg.solve(M, v)
    ref = math.sqrt(s - coef @ v)
    assert constant_C(2, 1, 1) == pytest.approx(ref, rel=1e-5)
    assert constant_C(2, 1, 1) == pytest.approx(1 / math.sqrt(45), rel=1e-9)


def test_constant_p2_against_coefficient_grid():
    from oracles import grid_search_l2
    P = best_linear(q, E, Weights(2, 1, 1)).poly
    ref, _ = grid_search_l2(E.array, (P.a, P.b, P.c), (0.05, 0.05, 0.05))
    assert constant_C(2, 1, 1) == pytest.approx(ref, rel=1e-3)


# -- best_linear ----------------------------------------------------------------

@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.sampled_from([1.0, 2.0, math.inf]))
def test_best_linear_reproduces_linear(a, b, c, p):
    f = lambda x, y: a * x + b * y + c
    r = best_linear(f, E, Weights(p, 1, 2))
    assert r.error < 1e-9
    assert abs(r.poly.a - a) + abs(r.poly.b - b) + abs(r.poly.c - c) < 1e-6


@pytest.mark.parametrize("p,a,b", [(1, 1, 1), (2, 2, 1), (3, 1, 4), (math.inf, 2, 1)])
def test_best_linear_error_matches_deviation(p, a, b):
    t = Triangle.from_array(np.array([[0.1, 0.0], [0.9, 0.2], [0.3, 0.8]]))
    w = Weights(p, a, b)
    r = best_linear(q, t, w)
    assert r.converged
    assert r.error == pytest.approx(asym_deviation(q, r.poly, t, w, tol=1e-12), rel=1e-7)


@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_best_linear_is_locally_optimal(p):
    w = Weights(p, 1.0, 2.0)
    t = Triangle.from_array(np.array([[0.0, 0.0], [1.0, 0.1], [0.2, 0.7]]))
    r = best_linear(q, t, w)
    rng = np.random.default_rng(0)
    for d in rng.normal(size=(12, 3)) * 1e-3:
        P = LinearPoly(r.poly.a + d[0], r.poly.b + d[1], r.poly.c + d[2])
        assert asym_deviation(q, P, t, w, tol=1e-12) >= r.error * (1 - 1e-7)


def test_equioscillation_at_vertices():
    r = best_linear(q, E, Weights(math.inf, 1, 1))
    v = E.array
    g = q(v[:, 0], v[:, 1]) - r.poly(v[:, 0], v[:, 1])
    assert np.ptp(g) < 1e-8


@pytest.mark.parametrize("Q", [QuadForm(1, 4, 0), QuadForm(1, 1, 0.5), QuadForm(2, 0.5, -0.3)])
def test_equioscillation_on_optimal_triangle(Q):
    t = optimal_triangle(Q, 1.0)
    r = best_linear(Q, t, Weights(math.inf, 1, 1))
    v = t.array
    g = Q(v[:, 0], v[:, 1]) - r.poly(v[:, 0], v[:, 1])
    assert np.ptp(g) < 1e-8


@settings(max_examples=15)
@given(st.floats(0.2, 3), st.floats(0.2, 3), st.floats(-0.9, 0.9), st.sampled_from([1.0, 2.0, math.inf]),
       st.floats(0.5, 2.0))
def test_affine_covariance(A, B, rho, p, area):
    Q = QuadForm(A, B, rho * math.sqrt(A * B))
    w = Weights(p, 1.0, 2.0)
    t = optimal_triangle(Q, area)
    r = best_linear(Q, t, w)
    assert r.error == pytest.approx(form_error_floor(Q, w, area), rel=1e-4)


def test_batch_agrees_with_single():
    tris = np.array([t.array for t in random_unit_triangles(5, seed=3)])
    w = Weights(2, 2, 1)
    abc, err, ok, _ = best_linear_batch(q, tris, w)
    assert ok.all()
    for k in range(5):
        assert err[k] == pytest.approx(best_linear(q, Triangle.from_array(tris[k]), w).error, rel=1e-7)


def test_equilateral_beats_random_triangles_small_sample():
    tris = np.array([t.array for t in random_unit_triangles(12, seed=1)])
    for w in (Weights(1, 1, 1), Weights(2, 2, 1), Weights(math.inf, 1, 4)):
        _, err, _, _ = best_linear_batch(q, tris, w, 1e-7)
        assert (err >= constant_C(w.p, w.alpha, w.beta) - 1e-6).all()


# -- one-sided --------------------------------------------------------------------

def test_one_sided_above_is_interpolation():
    t = Triangle.from_array(np.array([[0.1, 0.1], [0.8, 0.3], [0.4, 0.9]]))
    r = one_sided_best(q, t, 2.0, "above")
    nodes = _check_nodes(t.array)
    assert (r.poly(nodes[:, 0], nodes[:, 1]) >= q(nodes[:, 0], nodes[:, 1])).all()
    # vertex interpolant of the convex q
    v = t.array
    M = np.column_stack([v, np.ones(3)])
    I = LinearPoly(*np.linalg.solve(M, q(v[:, 0], v[:, 1])))
    ref = asym_deviation(q, I, t, Weights(2, 1, 1), tol=1e-13)
    assert r.error == pytest.approx(ref, abs=1e-6)


def test_one_sided_sup_norm_limit():
    r2 = 4 / (3 * math.sqrt(3))
    for side in ("above", "below"):
        assert one_sided_best(q, E, math.inf, side).error == pytest.approx(r2, abs=1e-9)


def test_one_sided_below_feasible():
    r = one_sided_best(q, E, 2.0, "below")
    nodes = _check_nodes(E.array)
    assert (q(nodes[:, 0], nodes[:, 1]) - r.poly(nodes[:, 0], nodes[:, 1]) >= 0).all()
    # best from below of the convex q on E is its tangent plane at the centroid,
    # i.e. P = 0, and the error is ||q||_2 over E
    pts = riemann_points(E.array, 600)
    ref = math.sqrt(np.mean(q(pts[:, 0], pts[:, 1]) ** 2) * tri_area(E.array))
    assert r.error == pytest.approx(ref, rel=1e-5)


def test_one_sided_rejects_bad_side():
    with pytest.raises(ValueError):
        one_sided_best(q, E, 2.0, "sideways")


def test_penalty_monotone_in_beta():
    errs = [best_linear(q, E, Weights(2, 1, b)).error for b in (1, 3, 10, 30, 100)]
    assert all(b >= a - 1e-9 for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= one_sided_best(q, E, 2.0, "below").error + 1e-9


def test_constant_with_infinite_weight_uses_one_sided():
    assert constant_C(2, 1, math.inf) == pytest.approx(one_sided_best(q, E, 2.0, "below").error, rel=1e-12)


# -- optimal triangles and quadratic forms -------------------------------------------

def test_optimal_triangle_for_q_is_equilateral():
    t = optimal_triangle(QuadForm(1, 1, 0), 1.0)
    assert np.ptp(t.side_lengths) < 1e-12
    assert t.area == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0.05, 20), st.floats(0.05, 20), st.floats(-0.95, 0.95), st.floats(1e-4, 10))
def test_optimal_triangle_area(A, B, rho, area):
    t = optimal_triangle(QuadForm(A, B, rho * math.sqrt(A * B)), area)
    assert t.area == pytest.approx(area, rel=1e-12)


def test_optimal_triangle_rejects_indefinite():
    with pytest.raises(GeometryError):
        optimal_triangle(QuadForm(1, -1, 0), 1.0)
    with pytest.raises(ValueError):
        optimal_triangle(QuadForm(1, 1, 0), 0.0)


def test_stretched_optimal_triangle_beats_random():
    Q = QuadForm(1, 4, 0)
    w = Weights(2, 1, 1)
    best = best_linear(Q, optimal_triangle(Q, 1.0), w).error
    tris = np.array([t.array for t in random_unit_triangles(40, seed=5)])
    _, err, _, _ = best_linear_batch(Q, tris, w, 1e-7)
    assert (err >= best - 1e-6).all()


def test_form_error_floor_examples():
    w = Weights(math.inf, 1, 1)
    assert form_error_floor(QuadForm(1, 1, 0), w, 1.0) == pytest.approx(constant_C(math.inf, 1, 1))
    assert form_error_floor(QuadForm(1, 1, 0.5), w, 1.0) == pytest.approx(c_inf(1, 1) * math.sqrt(0.75), abs=1e-9)
    w2 = Weights(2, 2, 1)
    s = 1.7
    assert form_error_floor(QuadForm(1, 2, 0.3), w2, s * s) == \
        pytest.approx(s ** 3 * form_error_floor(QuadForm(1, 2, 0.3), w2, 1.0), rel=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_sym2_eigen_reconstructs(A, B, C):
    lmin, lmax, emin, emax = sym2_eigen(A, B, C)
    assert lmin <= lmax
    R = lmin * np.outer(emin, emin) + lmax * np.outer(emax, emax)
    assert np.allclose(R, [[A, C], [C, B]], atol=1e-10 * (1 + abs(A) + abs(B) + abs(C)))
    assert abs(emin @ emax) < 1e-12


def test_sym2_eigen_small_eigenvalue_accurate():
    # [[1, 1], [1, 1 + d]] has lam_min ~ d/2 for tiny d
    d = 1e-12
    lmin, lmax, _, _ = sym2_eigen(1.0, 1.0 + d, 1.0)
    assert lmin == pytest.approx(d / (2 + d), rel=1e-6)


@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(-1, 1), st.floats(0.01, 1))
def test_eigenvalue_floor_and_aspect_bound(A, B, rho, K):
    C = rho * math.sqrt(A * B)
    Q = QuadForm(A, B, C)
    if Q.det < K:
        return
    lmin, lmax, _, _ = Q.eigen()
    Aplus, Bplus = 3.0, 3.0
    assert lmin >= K / (Aplus + Bplus) - 1e-12
    side2 = 4 / math.sqrt(3)
    bound = math.sqrt(lmax / lmin) * side2
    assert aspect_ratio(optimal_triangle(Q, 1.0)) <= bound * (1 + 1e-9)
    assert bound <= (Aplus + Bplus) / math.sqrt(K) * side2 + 1e-9


# -- vertex offsets used by the spline ----------------------------------------------

def test_vertex_offset_l2():
    # P is the mean of q (side^2/12), vertices sit at q = side^2/3
    side2 = 4 / math.sqrt(3)
    assert vertex_offset(2, 1, 1) == pytest.approx(side2 / 3 - side2 / 12, abs=1e-8)


def test_vertex_offset_sup_norm():
    assert vertex_offset(math.inf, 1, 1) == pytest.approx(c_inf(1, 1), abs=1e-9)


def test_offset_jacobian_shapes():
    J = offset_jacobian(2, 1, 1)
    assert J.shape == (2, 3)
    # a traceless perturbation leaves the mean offset unchanged to first order
    assert abs(J.sum(axis=1)).max() < 1e-6
    # the sup-norm offsets do not move to first order (only the finite
    # difference residue of size O(step^2) remains)
    assert np.abs(offset_jacobian(math.inf, 1, 1)).max() < 1e-3
