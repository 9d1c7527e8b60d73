"""Equispaced Lagrange bases on [0, 1] and Gauss-Legendre rules.

All polynomial evaluation in the package goes through this module.
Derivatives use exact rational differentiation matrices: the ``n``-th
derivative of ``ell_j`` is ``sum_i ell_i(x) (D^n)_{ij}``, which keeps the
rows of every derivative operator summing to zero up to a single rounding.
Passing ``np.longdouble`` points selects extended-precision copies of the
same matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

MAX_DEGREE = 8
EXTENDED = np.longdouble


def _to_extended(q: Fraction):
    return EXTENDED(q.numerator) / EXTENDED(q.denominator)


@dataclass(frozen=True)
class ReferenceBasis1D:
    """Nodal Lagrange basis of a given degree with nodes ``j / degree``."""

    degree: int
    nodes: np.ndarray = field(repr=False, compare=False)
    weights: np.ndarray = field(repr=False, compare=False)
    # diff[n] = D^n with D[i, j] = ell_j'(node_i)
    diff: tuple = field(repr=False, compare=False)
    diff_ext: tuple = field(repr=False, compare=False, default=())

    @property
    def size(self) -> int:
        return self.degree + 1

    def __call__(self, xi, order: int = 0) -> np.ndarray:
        """Values (or derivatives) of every basis function at ``xi``.

        Returns an array of shape ``xi.shape + (degree + 1,)``.
        """
        xi = np.asarray(xi)
        ext = xi.dtype == EXTENDED
        xi = xi.astype(EXTENDED if ext else float)
        vals = _barycentric(self, xi)
        if order == 0:
            return vals
        if order > self.degree:
            return np.zeros(xi.shape + (self.size,), dtype=xi.dtype)
        return vals @ (self.diff_ext if ext else self.diff)[order]

    def derivative(self, j: int, xi: float, order: int = 1) -> float:
        return basis_derivative(self, j, xi, order)


def _barycentric(basis: ReferenceBasis1D, xi: np.ndarray) -> np.ndarray:
    nodes, w = basis.nodes, basis.weights
    diff = xi[..., None] - nodes
    exact = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        terms = w / diff
        out = terms / terms.sum(axis=-1, keepdims=True)
    hit = exact.any(axis=-1)
    if np.any(hit):
        out[hit] = exact[hit]
    # a distance to a node can be so small that w / diff overflows
    bad = ~np.all(np.isfinite(out), axis=-1)
    if np.any(bad):
        out[bad] = _product_form(nodes, diff[bad])
    return out


def _product_form(nodes, diff):
    n = len(nodes)
    out = np.empty_like(diff)
    for j in range(n):
        others = [k for k in range(n) if k != j]
        out[..., j] = np.prod(diff[..., others] / (nodes[j] - nodes[others]), axis=-1)
    return out


def _lagrange_poly(nodes, j):
    """Power-basis coefficients (lowest first) of ell_j, exact rationals."""
    coef = [Fraction(1)]
    for k, xk in enumerate(nodes):
        if k == j:
            continue
        d = nodes[j] - xk
        new = [Fraction(0)] * (len(coef) + 1)
        for i, a in enumerate(coef):
            new[i + 1] += a / d
            new[i] -= a * xk / d
        coef = new
    return coef


def _poly_der(c):
    return [i * c[i] for i in range(1, len(c))]


def _poly_eval(c, x):
    out = Fraction(0)
    for a in reversed(c):
        out = out * x + a
    return out


@lru_cache(maxsize=None)
def make_basis(degree: int) -> ReferenceBasis1D:
    if degree < 1:
        raise ValueError(f"basis degree must be >= 1, got {degree}")
    if degree > MAX_DEGREE:
        raise ValueError(f"basis degree capped at {MAX_DEGREE}, got {degree}")
    exact_nodes = [Fraction(j, degree) for j in range(degree + 1)]
    polys = [_lagrange_poly(exact_nodes, j) for j in range(degree + 1)]
    diff = [np.eye(degree + 1)]
    diff_ext = [np.eye(degree + 1, dtype=EXTENDED)]
    cur = polys
    for _ in range(degree):
        cur = [_poly_der(c) for c in cur]
        exact = [[_poly_eval(cur[j], x) for j in range(degree + 1)] for x in exact_nodes]
        for store, conv, dt in ((diff, float, float), (diff_ext, _to_extended, EXTENDED)):
            mat = np.array([[conv(q) for q in row] for row in exact], dtype=dt)
            mat.setflags(write=False)
            store.append(mat)
    nodes = np.arange(degree + 1) / degree
    # barycentric weights for equispaced nodes: (-1)^j C(m, j)
    weights = np.array([(-1.0) ** j * comb(degree, j) for j in range(degree + 1)])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return ReferenceBasis1D(degree, nodes, weights, tuple(diff), tuple(diff_ext))


def basis_derivative(basis: ReferenceBasis1D, j: int, xi: float, order: int) -> float:
    """Exact ``order``-th derivative of the ``j``-th basis function at ``xi``."""
    if not 0 <= j <= basis.degree:
        raise IndexError(j)
    if order < 0:
        raise ValueError("derivative order must be non-negative")
    return float(basis(np.asarray(xi, dtype=float), order)[..., j])


@lru_cache(maxsize=None)
def reference_integrals(degree: int, extended: bool = False):
    """Exact ``(stiffness, advection, mass)`` matrices on [0, 1].

    ``stiffness[i, j] = int ell_i' ell_j'``, ``advection[i, j] = int ell_i ell_j'``
    and ``mass[i, j] = int ell_i ell_j``; each rounded once from rationals,
    to ``np.longdouble`` when ``extended`` is set.
    """
    make_basis(degree)
    nodes = [Fraction(j, degree) for j in range(degree + 1)]
    polys = [_lagrange_poly(nodes, j) for j in range(degree + 1)]
    ders = [_poly_der(c) for c in polys]

    def integ(a, b):
        return sum(ai * bj / (i + j + 1) for i, ai in enumerate(a) for j, bj in enumerate(b))

    rng = range(degree + 1)
    out = []
    for left, right in ((ders, ders), (polys, ders), (polys, polys)):
        conv, dt = (_to_extended, EXTENDED) if extended else (float, float)
        mat = np.array([[conv(integ(left[i], right[j])) for j in rng] for i in rng], dtype=dt)
        mat.setflags(write=False)
        out.append(mat)
    return tuple(out)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def integrate(self, f) -> float:
        return np.sum(self.weights * f(self.points))


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadratureRule:
    """``n``-point Gauss-Legendre rule mapped to [0, 1]."""
    if n < 1:
        raise ValueError("need at least one quadrature point")
    x, w = np.polynomial.legendre.leggauss(n)
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts)


def quadrature_points(trial_degree: int, test_degree: int) -> int:
    """Point count used when integrating a trial/test pair on one cell."""
    return -(-(trial_degree + test_degree + 2) // 2) + 1
