"""Manufactured solutions, boundary seminorms and convergence tables.

Manufactured solutions carry hand-derived gradients and Hessians; the
forcing is assembled from them as ``-lap(u) + b.grad(u) + c u``.
Points are arrays of shape ``(n,)`` in 1D and ``(n, 2)`` in 2D.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import Coefficients, DiscreteField, cell_derivatives, evaluate_solution
from .mesh import CORNER_REF, FACE_VERTICES, Mesh1D

LN10 = math.log(10.0)
STAGNATION_RATE = 0.25

DEFAULT_COEFFS = {
    "sin10_1d": Coefficients(b=(1.0,), c=2.0),
    "periodic_2d": Coefficients(b=(1.0, 1.0), c=2.0),
    "nonperiodic_2d": Coefficients(b=(1.0, 1.0), c=2.0),
}


@dataclass(frozen=True)
class ManufacturedSolution:
    name: str
    dim: int
    coeff: Coefficients
    u: Callable
    gradient: Callable   # 1D: (n,), 2D: (n, 2)
    hessian: Callable    # 1D: (n,), 2D: (n, 2, 2)

    def forcing(self, pts):
        b = np.asarray(self.coeff.b)
        c = complex(self.coeff.c)
        if c.imag == 0:
            c = c.real
        if self.dim == 1:
            return -self.hessian(pts) + b[0] * self.gradient(pts) + c * self.u(pts)
        H = self.hessian(pts)
        lap = H[..., 0, 0] + H[..., 1, 1]
        return -lap + self.gradient(pts) @ b + c * self.u(pts)

    def __call__(self, pts):
        return self.u(pts)


# --------------------------------------------------------------------------
# closed forms


def _sin10():
    return (lambda y: np.sin(10 * y),
            lambda y: 10 * np.cos(10 * y),
            lambda y: -100 * np.sin(10 * y))


def _split(pts):
    pts = np.asarray(pts)
    return pts[..., 0], pts[..., 1]


def _pack(gx, gy):
    return np.stack([gx, gy], axis=-1)


def _pack_hess(hxx, hxy, hyy):
    return np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)


def _u1_factors(x, y):
    pi = np.pi
    Y = y**3 + np.exp(-y**2) + np.sin(4.5 * y**2) + np.sin(20 * y)
    Y1 = (3 * y**2 - 2 * y * np.exp(-y**2) + 9 * y * np.cos(4.5 * y**2)
          + 20 * np.cos(20 * y))
    Y2 = (6 * y + (4 * y**2 - 2) * np.exp(-y**2) + 9 * np.cos(4.5 * y**2)
          - 81 * y**2 * np.sin(4.5 * y**2) - 400 * np.sin(20 * y))
    X = 20 * np.cos(4 * pi * x) + 0.1 * np.sin(20 * pi * x) - 80 * np.sin(6 * pi * x)
    X1 = (-80 * pi * np.sin(4 * pi * x) + 2 * pi * np.cos(20 * pi * x)
          - 480 * pi * np.cos(6 * pi * x))
    X2 = (-320 * pi**2 * np.cos(4 * pi * x) - 40 * pi**2 * np.sin(20 * pi * x)
          + 2880 * pi**2 * np.sin(6 * pi * x))
    return X, X1, X2, Y, Y1, Y2


def _u1():
    def u(p):
        X, _, _, Y, _, _ = _u1_factors(*_split(p))
        return X * Y

    def grad(p):
        X, X1, _, Y, Y1, _ = _u1_factors(*_split(p))
        return _pack(X1 * Y, X * Y1)

    def hess(p):
        X, X1, X2, Y, Y1, Y2 = _u1_factors(*_split(p))
        return _pack_hess(X2 * Y, X1 * Y1, X * Y2)

    return u, grad, hess


def _u2_parts(x, y):
    """Value, gradient and Hessian entries of u2 as a tuple of arrays."""
    s20, c20 = np.sin(20 * y), np.cos(20 * y)
    # x y sin(20 y)
    v = x * y * s20
    gx = y * s20
    gy = x * (s20 + 20 * y * c20)
    hxx = np.zeros_like(x * y)
    hxy = s20 + 20 * y * c20
    hyy = x * (40 * c20 - 400 * y * s20)
    # 10 exp(-x y) cos(15 x)
    E = 10 * np.exp(-x * y)
    c15, s15 = np.cos(15 * x), np.sin(15 * x)
    v = v + E * c15
    gx = gx + E * (-y * c15 - 15 * s15)
    gy = gy - E * x * c15
    hxx = hxx + E * (y**2 * c15 + 30 * y * s15 - 225 * c15)
    hxy = hxy + E * (x * y * c15 + 15 * x * s15 - c15)
    hyy = hyy + E * x**2 * c15
    # 2 sin(10^s), s = y^2 + cos x
    P = 10.0 ** (y**2 + np.cos(x))
    sx, sy = -np.sin(x), 2 * y
    sxx, syy = -np.cos(x), 2.0
    Px, Py = LN10 * P * sx, LN10 * P * sy
    Pxx = LN10 * P * (LN10 * sx**2 + sxx)
    Pyy = LN10 * P * (LN10 * sy**2 + syy)
    Pxy = LN10**2 * P * sx * sy
    sP, cP = np.sin(P), np.cos(P)
    v = v + 2 * sP
    gx = gx + 2 * cP * Px
    gy = gy + 2 * cP * Py
    hxx = hxx + 2 * (cP * Pxx - sP * Px**2)
    hxy = hxy + 2 * (cP * Pxy - sP * Px * Py)
    hyy = hyy + 2 * (cP * Pyy - sP * Py**2)
    # sin(30 x y)
    s30, c30 = np.sin(30 * x * y), np.cos(30 * x * y)
    v = v + s30
    gx = gx + 30 * y * c30
    gy = gy + 30 * x * c30
    hxx = hxx - 900 * y**2 * s30
    hxy = hxy + 30 * c30 - 900 * x * y * s30
    hyy = hyy - 900 * x**2 * s30
    return v, gx, gy, hxx, hxy, hyy


def _u2():
    def u(p):
        return _u2_parts(*_split(p))[0]

    def grad(p):
        _, gx, gy, *_ = _u2_parts(*_split(p))
        return _pack(gx, gy)

    def hess(p):
        *_, hxx, hxy, hyy = _u2_parts(*_split(p))
        return _pack_hess(hxx, hxy, hyy)

    return u, grad, hess


_BUILDERS = {"sin10_1d": (1, _sin10), "periodic_2d": (2, _u1), "nonperiodic_2d": (2, _u2)}


def make_manufactured(name: str, coeff: Coefficients | None = None) -> ManufacturedSolution:
    """Look up a manufactured solution by name.

    ``sin10_1d`` is ``sin(10 y)``; ``periodic_2d`` is a smooth product that is
    1-periodic in ``x``; ``nonperiodic_2d`` is a strongly oscillating field
    with no periodicity.
    """
    try:
        dim, build = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown manufactured solution {name!r}; "
                         f"choose from {sorted(_BUILDERS)}") from None
    if coeff is None:
        coeff = DEFAULT_COEFFS[name]
    if coeff.dim != dim:
        raise ValueError(f"{name} needs {dim}D coefficients")
    return ManufacturedSolution(name, dim, coeff, *build())


# --------------------------------------------------------------------------
# boundary seminorms


def _resolve(field_, mesh, dofs):
    if isinstance(field_, DiscreteField):
        return field_.mesh, field_.dofs, field_.coeffs
    if mesh is None or dofs is None:
        raise ValueError("a raw coefficient vector needs mesh and dofs")
    return mesh, dofs, np.asarray(field_)


def _boundary_errors(exact: ManufacturedSolution, mesh, dofs, coeffs, order: int) -> float:
    if isinstance(mesh, Mesh1D):
        worst = 0.0
        for y in (0.0, mesh.L):
            if order == 1:
                err = evaluate_solution(mesh, dofs, coeffs, y, 1) - exact.gradient(np.array([y]))[0]
            else:
                err = evaluate_solution(mesh, dofs, coeffs, y, 2) - exact.hessian(np.array([y]))[0]
            # the 1D normal is +-1, so |n^order err| = |err|
            worst = max(worst, abs(err))
        return worst
    worst = 0.0
    for (cell, face), normals in zip(mesh.boundary_faces, mesh.boundary_normals):
        lv = FACE_VERTICES[face]
        ref = CORNER_REF[list(lv)]
        pts = mesh.vertices[mesh.quads[cell, list(lv)]]
        _, grad, hess = cell_derivatives(mesh, dofs, coeffs, int(cell), ref)
        if order == 1:
            err = np.einsum("nk,nk->n", exact.gradient(pts) - grad, normals)
        else:
            err = np.einsum("nk,nkj,nj->n", normals, exact.hessian(pts) - hess, normals)
        worst = max(worst, float(np.max(np.abs(err))))
    return worst


def h1b_seminorm(exact: ManufacturedSolution, field, mesh=None, dofs=None) -> float:
    """Max over Dirichlet-boundary vertices of the normal-derivative error.

    Each boundary face contributes both endpoints with its own cell and
    outward normal, so a corner of the square is measured with both normals.
    """
    mesh, dofs, coeffs = _resolve(field, mesh, dofs)
    return _boundary_errors(exact, mesh, dofs, coeffs, 1)


def h2b_seminorm(exact: ManufacturedSolution, field, mesh=None, dofs=None) -> float:
    """As :func:`h1b_seminorm` for the normal-normal second derivative."""
    mesh, dofs, coeffs = _resolve(field, mesh, dofs)
    return _boundary_errors(exact, mesh, dofs, coeffs, 2)


VERTEX_SETS = ("last_interior", "mid", "all")


def vertex_error(exact: ManufacturedSolution, field, mesh=None, dofs=None,
                 which: str = "last_interior") -> float:
    """Nodal error of a 1D field at a vertex set.

    ``last_interior`` takes the vertices one cell in from either end,
    ``mid`` the vertex nearest ``L/2`` and ``all`` every vertex.
    """
    mesh, dofs, coeffs = _resolve(field, mesh, dofs)
    if not isinstance(mesh, Mesh1D):
        raise TypeError("vertex errors are defined for 1D meshes")
    N = mesh.N
    if which == "last_interior":
        idx = [1, N - 1]
    elif which == "mid":
        idx = [N // 2]
    elif which == "all":
        idx = range(N + 1)
    else:
        raise ValueError(f"which must be one of {VERTEX_SETS}")
    ys = mesh.L * np.array(list(idx), dtype=float) / N
    uh = np.array([evaluate_solution(mesh, dofs, coeffs, y) for y in ys])
    return float(np.max(np.abs(uh - exact.u(ys))))


# --------------------------------------------------------------------------
# convergence tables


@dataclass
class ConvergenceTable:
    """One row per refinement level; errors are keyed by seminorm name."""

    names: tuple = ("h1b", "h2b")
    levels: list = field(default_factory=list)
    ncells: list = field(default_factory=list)
    h: list = field(default_factory=list)
    dofs: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)

    def __post_init__(self):
        for n in self.names:
            self.errors.setdefault(n, [])

    def __len__(self) -> int:
        return len(self.levels)

    def add(self, level: int, ncells: int, h: float, dofs: int, **errs) -> None:
        missing = set(self.names) - set(errs)
        if missing:
            raise ValueError(f"missing errors {sorted(missing)}")
        self.levels.append(int(level))
        self.ncells.append(int(ncells))
        self.h.append(float(h))
        self.dofs.append(int(dofs))
        for n in self.names:
            self.errors[n].append(float(errs[n]))


@dataclass(frozen=True)
class RateFit:
    steps: np.ndarray      # per-step rates; nan where a row was excluded
    summary: float         # mean of the last (up to) 3 valid steps
    stagnant: np.ndarray   # per-step flag: rate below STAGNATION_RATE
    excluded: np.ndarray   # per-row flag: non-positive or non-finite error


def fit_rate_series(errors, window: int = 3) -> RateFit:
    """Rates ``log2(e_i / e_{i+1})`` for halving ``h``."""
    e = np.asarray(errors, dtype=float)
    if len(e) < 2:
        raise ValueError("rate fitting needs at least two rows")
    bad = ~(np.isfinite(e) & (e > 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        steps = np.log2(e[:-1] / e[1:])
    steps[bad[:-1] | bad[1:]] = np.nan
    valid = steps[np.isfinite(steps)]
    summary = float(np.mean(valid[-window:])) if len(valid) else float("nan")
    stagnant = np.isfinite(steps) & (steps < STAGNATION_RATE)
    return RateFit(steps, summary, stagnant, bad)


def fit_rates(table: ConvergenceTable, window: int = 3) -> dict:
    """Per-seminorm :class:`RateFit` for a table."""
    if len(table) < 2:
        raise ValueError("rate fitting needs at least two rows")
    return {n: fit_rate_series(table.errors[n], window) for n in table.names}
