"""Independent brute-force references and structural checks used across the test suite."""
import numpy as np


def riemann_points(tri, n):
    """Centroids of the n^2 congruent pieces of a uniform subdivision of
    ``tri``; each piece has area |tri| / n^2."""
    tri = np.asarray(tri, dtype=float)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    low = i + j <= n - 1
    up = i + j <= n - 2
    b_low = np.column_stack([(i[low] + 1 / 3) / n, (j[low] + 1 / 3) / n])
    b_up = np.column_stack([(i[up] + 2 / 3) / n, (j[up] + 2 / 3) / n])
    b = np.concatenate([b_low, b_up])
    return tri[0] + b[:, :1] * (tri[1] - tri[0]) + b[:, 1:] * (tri[2] - tri[0])


def tri_area(tri):
    tri = np.asarray(tri, dtype=float)
    return 0.5 * abs((tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
                     - (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1]))


def riemann_deviation(g, tri, p, alpha, beta, n=256):
    """(∫ (alpha g_+ + beta g_-)^p)^(1/p) by the centroid rule on n^2 pieces."""
    pts = riemann_points(tri, n)
    v = g(pts[:, 0], pts[:, 1])
    d = alpha * np.maximum(v, 0) + beta * np.maximum(-v, 0)
    return float((np.mean(d ** p) * tri_area(tri)) ** (1 / p))


def quadratic_moments(tri, n=512):
    """Exact-in-the-limit moments for the L2 error of q - (a x + b y + c):
    returns M (3x3 Gram of [x, y, 1]), v (moments of q against [x, y, 1])
    and s = ∫ q^2, all by the centroid rule."""
    pts = riemann_points(tri, n)
    A = tri_area(tri) / len(pts)
    x, y = pts[:, 0], pts[:, 1]
    q = x * x + y * y
    basis = np.stack([x, y, np.ones_like(x)])
    return A * basis @ basis.T, A * basis @ q, A * float(q @ q)


def grid_search_l2(tri, center, half_width, k=61):
    """Minimum of ||q - P||_2 over a k^3 grid of coefficients around ``center``."""
    M, v, s = quadratic_moments(tri)
    axes = [np.linspace(c - h, c + h, k) for c, h in zip(center, half_width)]
    A, B, C = np.meshgrid(*axes, indexing="ij")
    coef = np.stack([A.ravel(), B.ravel(), C.ravel()], axis=1)
    err2 = s - 2 * coef @ v + np.einsum("ni,ij,nj->n", coef, M, coef)
    k_best = int(np.argmin(err2))
    return float(np.sqrt(max(err2[k_best], 0.0))), coef[k_best]


def max_edge_jump(s, samples=5):
    """Largest disagreement of the two linear pieces along each shared edge."""
    mesh = s.mesh
    abc = s.coefficients()
    tri = mesh.triangles
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    owner = np.tile(np.arange(len(tri)), 3)
    key = np.sort(edges, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    key, owner = key[order], owner[order]
    same = (key[1:] == key[:-1]).all(axis=1)
    i = np.flatnonzero(same)
    a, b = mesh.vertices[key[i, 0]], mesh.vertices[key[i, 1]]
    t1, t2 = owner[i], owner[i + 1]
    worst = 0.0
    for u in np.linspace(0, 1, samples):
        pt = a + u * (b - a)
        v1 = abc[t1, 0] * pt[:, 0] + abc[t1, 1] * pt[:, 1] + abc[t1, 2]
        v2 = abc[t2, 0] * pt[:, 0] + abc[t2, 1] * pt[:, 1] + abc[t2, 2]
        worst = max(worst, float(np.abs(v1 - v2).max()))
    return worst
