"""Test functions with analytic derivatives and the pointwise quantities
the mesher needs: Hessian spectra, local quadratic models, moduli of
continuity and the H-weighted integral that governs the asymptotic error."""
from __future__ import annotations

import math
import json
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import ndimage
from scipy.integrate import dblquad

from .approx import LinearPoly, QuadForm, constant_C, sym2_eigen
from .integrate import Weights

Arr = Callable[[np.ndarray, np.ndarray], np.ndarray]

HESSIAN_TOL = 1e-12
VALIDATION_GRID = 512
MODULUS_GRID = 256


class HessianSignError(ValueError):
    """The Hessian determinant is negative somewhere on the domain."""


def _bc(v, x):
    """Broadcast a constant or array derivative to the shape of x."""
    return np.zeros(np.shape(x)) + v


@dataclass(eq=False)
class Field:
    """A C^2 function on [0,1]^2 given by its value and partial derivatives."""

    name: str
    f: Arr
    fx: Arr
    fy: Arr
    fxx: Arr
    fxy: Arr
    fyy: Arr
    _grids: dict = field(default_factory=dict, repr=False)

    def __call__(self, x, y):
        return _bc(self.f(x, y), x)

    def hessian(self, x, y):
        """(fxx, fxy, fyy) broadcast to the shape of x."""
        return _bc(self.fxx(x, y), x), _bc(self.fxy(x, y), x), _bc(self.fyy(x, y), x)

    def H(self, x, y):
        """Hessian determinant fxx fyy - fxy^2."""
        a, c, b = self.hessian(x, y)
        return a * b - c * c

    def grid(self, n: int = VALIDATION_GRID, centers: bool = True):
        """Cached (x, y, fxx, fxy, fyy) on an n x n grid of cell centres
        (or n+1 x n+1 nodes)."""
        key = (n, centers)
        if key not in self._grids:
            t = (np.arange(n) + 0.5) / n if centers else np.linspace(0.0, 1.0, n + 1)
            X, Y = np.meshgrid(t, t, indexing="ij")
            self._grids[key] = (X, Y) + self.hessian(X, Y)
        return self._grids[key]

    @property
    def sign(self) -> int:
        """+1 if convex, -1 if concave, 0 if the Hessian vanishes on the grid."""
        _, _, a, c, b = self.grid()
        tr = a + b
        if np.all(np.abs(tr) <= HESSIAN_TOL) and np.all(np.abs(c) <= HESSIAN_TOL):
            return 0
        return 1 if tr.max() > -tr.min() else -1

    def validate(self) -> "Field":
        _, _, a, c, b = self.grid()
        H = a * b - c * c
        if H.min() < -HESSIAN_TOL:
            raise HessianSignError(f"{self.name}: Hessian determinant reaches {H.min():.3e} < 0")
        tr = a + b
        if tr.max() > HESSIAN_TOL and tr.min() < -HESSIAN_TOL:
            raise HessianSignError(f"{self.name}: neither convex nor concave")
        return self

    def flipped(self) -> "Field":
        """-f (used to treat concave functions as convex ones)."""
        def neg(g):
            return lambda x, y: -g(x, y)
        return Field("-" + self.name, neg(self.f), neg(self.fx), neg(self.fy),
                     neg(self.fxx), neg(self.fxy), neg(self.fyy))


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

def polynomial(terms, name: str | None = None) -> Field:
    """sum c * x^i * y^j for (i, j, c) in terms."""
    terms = [(int(i), int(j), float(c)) for i, j, c in terms]

    def make(dx, dy):
        def ev(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            out = np.zeros(np.broadcast(x, y).shape)
            for i, j, c in terms:
                if i < dx or j < dy:
                    continue
                k = c * math.perm(i, dx) * math.perm(j, dy)
                out = out + k * x ** (i - dx) * y ** (j - dy)
            return out
        return ev

    label = name or "poly:" + json.dumps([[i, j, c] for i, j, c in terms])
    return Field(label, make(0, 0), make(1, 0), make(0, 1), make(2, 0), make(1, 1), make(0, 2))


def _exp_bowl() -> Field:
    def e(x, y):
        return np.exp(0.5 * (np.asarray(x) ** 2 + np.asarray(y) ** 2))
    return Field(
        "exp-bowl", e,
        lambda x, y: x * e(x, y), lambda x, y: y * e(x, y),
        lambda x, y: (1 + x * x) * e(x, y), lambda x, y: x * y * e(x, y),
        lambda x, y: (1 + y * y) * e(x, y),
    )


REGISTRY: dict[str, Callable[[], Field]] = {
    "sum-squares": lambda: polynomial([(2, 0, 1), (0, 2, 1)], "sum-squares"),
    "mixed-quadratic": lambda: polynomial([(2, 0, 1), (1, 1, 1), (0, 2, 1)], "mixed-quadratic"),
    "quartic": lambda: polynomial([(4, 0, 1), (0, 4, 1)], "quartic"),
    "sum-squares-quartic": lambda: polynomial([(2, 0, 1), (0, 2, 1), (4, 0, 1)], "sum-squares-quartic"),
    "cylinder": lambda: polynomial([(2, 0, 1)], "cylinder"),
    "concave-bowl": lambda: polynomial([(2, 0, -1), (0, 2, -1)], "concave-bowl"),
    "exp-bowl": _exp_bowl,
    "linear": lambda: polynomial([(1, 0, 0.3), (0, 1, -0.7), (0, 0, 0.5)], "linear"),
}


def get_function(text: str, validate: bool = True) -> Field:
    """Look up a registered function or parse ``poly:[[i,j,c],...]``."""
    text = text.strip()
    if text in REGISTRY:
        fn = REGISTRY[text]()
    elif text.startswith("poly:"):
        try:
            terms = json.loads(text[5:])
            if not all(len(t) == 3 for t in terms):
                raise ValueError
        except (ValueError, TypeError) as exc:
            raise ValueError(f"bad polynomial {text!r}") from exc
        if any(int(i) < 0 or int(j) < 0 for i, j, _ in terms):
            raise ValueError("negative exponents are not allowed")
        fn = polynomial(terms)
    else:
        raise KeyError(f"unknown function {text!r}; known: {', '.join(sorted(REGISTRY))}")
    return fn.validate() if validate else fn


# --------------------------------------------------------------------------
# pointwise quantities
# --------------------------------------------------------------------------

class SpectralData(NamedTuple):
    lam_min: float
    lam_max: float
    e_min: np.ndarray
    e_max: np.ndarray


def spectral(f: Field, pt) -> SpectralData:
    """Eigen-decomposition of the halved Hessian (so that the Taylor quadratic
    part is A x^2 + B y^2 + 2 C x y with [[A, C], [C, B]] = Hess/2)."""
    a, c, b = (float(v) for v in f.hessian(np.float64(pt[0]), np.float64(pt[1])))
    lmin, lmax, emin, emax = sym2_eigen(0.5 * a, 0.5 * b, 0.5 * c)
    return SpectralData(lmin, lmax, emin, emax)


def spectral_arrays(fxx, fxy, fyy):
    return sym2_eigen(0.5 * np.asarray(fxx), 0.5 * np.asarray(fyy), 0.5 * np.asarray(fxy))


class TaylorQuadratic(NamedTuple):
    """Second-order Taylor polynomial split as ``linear + quad``."""

    center: tuple
    linear: LinearPoly
    quad: QuadForm

    def __call__(self, x, y):
        return self.linear(x, y) + self.quad(x, y)


def taylor2(f: Field, center) -> TaylorQuadratic:
    x0, y0 = float(center[0]), float(center[1])
    X, Y = np.float64(x0), np.float64(y0)
    f0 = float(f(X, Y))
    gx, gy = float(_bc(f.fx(X, Y), X)), float(_bc(f.fy(X, Y), X))
    hxx, hxy, hyy = (float(v) for v in f.hessian(X, Y))
    A, B, C = 0.5 * hxx, 0.5 * hyy, 0.5 * hxy
    a = gx - 2 * A * x0 - 2 * C * y0
    b = gy - 2 * C * x0 - 2 * B * y0
    c = f0 - gx * x0 - gy * y0 + A * x0 * x0 + 2 * C * x0 * y0 + B * y0 * y0
    return TaylorQuadratic((x0, y0), LinearPoly(a, b, c), QuadForm(A, B, C))


def modulus(g, delta: float, n: int = MODULUS_GRID) -> float:
    """Modulus of continuity of ``g`` on [0,1]^2 (sup-norm distance), from the
    (n+1)^2 node grid and sliding-window extrema.

    ``g`` is a callable or an array already sampled on that grid.
    """
    if delta <= 0:
        return 0.0
    if callable(g):
        t = np.linspace(0.0, 1.0, n + 1)
        X, Y = np.meshgrid(t, t, indexing="ij")
        vals = _bc(g(X, Y), X)
    else:
        vals = np.asarray(g, dtype=float)
        n = vals.shape[0] - 1
    k = min(n, max(1, int(math.floor(delta * n + 1e-9)))) + 1
    hi = ndimage.maximum_filter(vals, size=k, mode="nearest")
    lo = ndimage.minimum_filter(vals, size=k, mode="nearest")
    return float((hi - lo).max())


def omega2(f: Field, delta: float, n: int = MODULUS_GRID) -> float:
    """Largest modulus of continuity among the second partial derivatives."""
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="ij")
    return max(modulus(d, delta) for d in f.hessian(X, Y))


def mu_G(f: Field, eps: float, n: int = VALIDATION_GRID) -> float:
    """Area fraction of the set where 0 < lam_min < eps (halved Hessian)."""
    _, _, a, c, b = f.grid(n)
    s = -1 if f.sign < 0 else 1
    lmin = spectral_arrays(s * a, s * c, s * b)[0]
    return float(np.mean((lmin > 0) & (lmin < eps)))


def sqrtH_seminorm(f: Field, p: float, epsabs: float = 1e-11, epsrel: float = 1e-10) -> float:
    """L_{p/(p+1)} quasi-norm of sqrt(H): (int H^(p/(2p+2)))^((p+1)/p);
    for p = inf simply int sqrt(H)."""
    e = 0.5 if math.isinf(p) else p / (2.0 * (p + 1.0))

    def integrand(y, x):
        a, c, b = f.hessian(np.float64(x), np.float64(y))
        H = max(0.0, float(a * b - c * c))
        return H ** e

    val, _ = dblquad(integrand, 0.0, 1.0, 0.0, 1.0, epsabs=epsabs, epsrel=epsrel)
    return val if math.isinf(p) else val ** ((p + 1.0) / p)


def predicted_limit(f: Field, w: Weights) -> float:
    """Asymptotic value of N * error for optimally adapted meshes.

    A concave f is the negative of a convex one with the weights exchanged."""
    if f.sign < 0:
        w = w.swapped()
    return 0.5 * constant_C(w.p, w.alpha, w.beta) * sqrtH_seminorm(f, w.p)
