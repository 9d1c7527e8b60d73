"""Fourier analysis of the periodic tensor discretisation.

On a periodic grid of ``N`` bilinear cells in ``x`` the 1D mass and
convection-diffusion-reaction matrices are circulant, so the nodal
interpolants ``F_k`` of ``exp(2 pi i k x)`` diagonalise them. A normal-mode
2D problem then splits into one complex 1D problem in ``y`` per wavenumber.

This module also holds the closed-form Green's function of the 1D operator
for a point source next to the boundary, and randomised checks of the
elementary inequalities used to bound it.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import Coefficients, DiscreteField, assemble, cell_matrix_1d, solve_direct
from .mesh import TensorMesh2D, build_mesh_1d, enumerate_dofs
from .polybasis import QuadratureRule, gauss_rule, make_basis, quadrature_points

log = logging.getLogger(__name__)


def _cells(dx: float) -> int:
    N = int(round(1.0 / dx))
    if N < 1 or abs(N * dx - 1.0) > 1e-12:
        raise ValueError(f"dx={dx} does not divide [0, 1] into whole cells")
    return N


def mode_range(N: int) -> np.ndarray:
    """Independent wavenumbers ``-N/2+1 .. N/2`` (``N`` even) for ``N`` DoFs."""
    return np.arange(-((N - 1) // 2), N // 2 + 1)


# --------------------------------------------------------------------------
# Fourier interpolants and circulant eigenvalues


def fourier_interpolant(k: int, dx: float, x) -> np.ndarray:
    """Piecewise-linear interpolant of ``exp(2 pi i k x)`` on the grid ``j dx``."""
    N = _cells(dx)
    x = np.asarray(x, dtype=float)
    if np.any(x < -1e-14) or np.any(x > 1 + 1e-14):
        raise ValueError("fourier_interpolant is defined on [0, 1]")
    s = np.clip(x, 0.0, 1.0) * N
    j = np.minimum(np.floor(s), N - 1)
    t = s - j
    left = np.exp(2j * np.pi * k * j / N)
    right = np.exp(2j * np.pi * k * (j + 1) / N)
    return (1 - t) * left + t * right


def fourier_nodal(k: int, N: int) -> np.ndarray:
    """Values of ``F_k`` at the ``N`` distinct periodic nodes."""
    return np.exp(2j * np.pi * k * np.arange(N) / N)


def mass_eigenvalue(k, dx: float):
    return dx * (2 * np.cos(2 * np.pi * dx * np.asarray(k)) + 4) / 6


def stiffness_eigenvalue(k, dx: float, b0: float, c: float):
    theta = 2 * np.pi * dx * np.asarray(k)
    return (2 * c * dx**2 + 3j * b0 * dx * np.sin(theta)
            + (c * dx**2 - 6) * np.cos(theta) + 6) / (3 * dx)


def eigenvalue_ratio(k, dx: float, b0: float, c: float):
    """``lambda_A / lambda_M``.

    The real part is ``c + 6 (1 - cos t) / (dx^2 (2 + cos t))`` with
    ``t = 2 pi k dx``, so it never drops below ``c``.
    """
    if not c > 0:
        raise ValueError("eigenvalue ratio needs c > 0")
    return stiffness_eigenvalue(k, dx, b0, c) / mass_eigenvalue(k, dx)


def ratio_bounds(dx: float, c: float) -> tuple[float, float]:
    """The stated interval ``[c, (6 + 3 c dx^2) / dx^2]`` for ``Re(ratio)``.

    The upper end only holds while ``cos(2 pi k dx) >= -1/2``; near the
    Nyquist mode the real part reaches :func:`sharp_ratio_upper`.
    """
    return c, (6 + 3 * c * dx**2) / dx**2


def sharp_ratio_upper(dx: float, c: float) -> float:
    """``max_k Re(ratio) <= c + 12 / dx^2``, attained at ``cos(2 pi k dx) = -1``."""
    return c + 12 / dx**2


def circulant_rows(dx: float, b0: float, c: float):
    """Stencils ``(left, centre, right)`` of the periodic mass and operator rows."""
    mass = (dx / 6, 4 * dx / 6, dx / 6)
    op = (-1 / dx - b0 / 2 + c * dx / 6, 2 / dx + 4 * c * dx / 6, -1 / dx + b0 / 2 + c * dx / 6)
    return mass, op


def periodic_matrices_1d(N: int, b0: float, c: float):
    """Assembled periodic P1 mass and operator matrices (``N x N``, sparse).

    Built from the element matrices used everywhere else, so the circulant
    closed forms can be checked against real assembly.
    """
    if N < 3:
        raise ValueError("need N >= 3 periodic cells")
    dx = 1.0 / N
    basis = make_basis(1)
    op_loc = cell_matrix_1d(dx, basis, Coefficients(b=(b0,), c=c))
    mass_loc = dx * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    e = np.arange(N)
    idx = np.column_stack([e, (e + 1) % N])
    rows = np.repeat(idx, 2, axis=1).ravel()
    cols = np.tile(idx, (1, 2)).ravel()
    A = sp.coo_matrix((np.tile(op_loc.ravel(), N), (rows, cols)), shape=(N, N)).tocsr()
    M = sp.coo_matrix((np.tile(mass_loc.ravel(), N), (rows, cols)), shape=(N, N)).tocsr()
    return M, A


# --------------------------------------------------------------------------
# orthogonality integrals


def _x_rule(dx: float, rule: QuadratureRule | None = None):
    """Per-cell Gauss points and weights across [0, 1]."""
    N = _cells(dx)
    if rule is None:
        rule = gauss_rule(quadrature_points(1, 1))
    x = (np.arange(N)[:, None] + rule.points[None, :]) * dx
    w = np.broadcast_to(rule.weights * dx, x.shape)
    return x.ravel(), w.ravel()


def interpolant_inner(j: int, k: int, dx: float) -> complex:
    """``int_0^1 F_j conj(F_k) dx`` by per-cell Gauss quadrature (exact)."""
    x, w = _x_rule(dx)
    return complex(np.sum(w * fourier_interpolant(j, dx, x) * np.conj(fourier_interpolant(k, dx, x))))


def interpolant_exponential_inner(k: int, kp: int, dx: float, rule_points: int = 16) -> complex:
    """``int_0^1 F_k exp(-2 pi i k' x) dx`` by a high-order per-cell rule."""
    x, w = _x_rule(dx, gauss_rule(rule_points))
    return complex(np.sum(w * fourier_interpolant(k, dx, x) * np.exp(-2j * np.pi * kp * x)))


def aliasing_weight(kp: int, dx: float) -> float:
    """Closed form of ``int F_k exp(-2 pi i k' x)`` when ``k - k'`` is a multiple of ``N``."""
    if kp == 0:
        return 1.0
    s = np.sin(np.pi * kp * dx)
    return float(s * s / (np.pi**2 * kp**2 * dx**2))


def orthogonality_closed_form(k: int, kp: int, dx: float) -> float:
    N = _cells(dx)
    return aliasing_weight(kp, dx) if (k - kp) % N == 0 else 0.0


# --------------------------------------------------------------------------
# decoupled solve


def project_forcing(f, k: int, dx: float, quadrature: QuadratureRule | None = None):
    """``y -> (dx / lambda_M) int_0^1 f(x, y) conj(F_k(x)) dx`` by per-cell quadrature."""
    x, w = _x_rule(dx, quadrature)
    weight = w * np.conj(fourier_interpolant(k, dx, x)) * (dx / mass_eigenvalue(k, dx))

    def fk(y):
        y = np.asarray(y, dtype=float)
        pts = np.stack(np.broadcast_arrays(x[:, None], y.ravel()[None, :]), axis=-1)
        vals = np.asarray(f(pts.reshape(-1, 2)), dtype=complex).reshape(len(x), -1)
        return (weight @ vals).reshape(y.shape)

    return fk


def _all_mode_forcing(f, ks, dx: float):
    """Projection of ``f`` onto every mode at once; returns ``y -> (len(ks), ...)``."""
    x, w = _x_rule(dx)
    F = np.conj(np.stack([fourier_interpolant(k, dx, x) for k in ks]))
    scale = dx / mass_eigenvalue(np.asarray(ks), dx)
    weight = (F * w) * scale[:, None]
    cache: dict = {}

    def at(y):
        key = (y.shape, y.tobytes())
        hit = cache.get(key)
        if hit is None:
            yd = np.asarray(y, dtype=float).ravel()
            pts = np.stack(np.broadcast_arrays(x[:, None], yd[None, :]), axis=-1)
            vals = np.asarray(f(pts.reshape(-1, 2)), dtype=complex).reshape(len(x), -1)
            hit = cache[key] = weight @ vals
        return hit

    return at


def thread_count(workers) -> int:
    if workers is None:
        workers = int(os.environ.get("BFLUX_THREADS", "1") or 1)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return int(workers)


@dataclass(frozen=True)
class DecoupledSolution:
    field: DiscreteField
    modes: np.ndarray            # wavenumbers
    coefficients: np.ndarray     # (len(modes), n1d) nodal values of u_k(y)
    y_nodes: np.ndarray          # 1D support points


def decoupled_solve_2d(mesh: TensorMesh2D, coeff: Coefficients, f,
                       dirichlet_values=None, workers=None) -> DecoupledSolution:
    """Solve a periodic normal-mode problem one Fourier mode at a time.

    Each mode is a complex 1D problem on the ``y`` mesh with reaction
    ``lambda_A / lambda_M`` and projected forcing; the per-mode nodal values
    are then summed against ``F_k`` at every 2D DoF. Quadrature matches the
    direct 2D assembly so the two agree to solver precision.
    """
    if not (isinstance(mesh, TensorMesh2D) and mesh.periodic_x):
        raise ValueError("decoupling needs a periodic tensor mesh")
    if mesh.mode != "normal":
        raise ValueError("decoupling needs normal-mode degrees")
    if mesh.m != 1:
        raise ValueError("decoupling needs bilinear interior cells")
    coeff.check(2)
    N, dx = mesh.Nx, mesh.dx
    b0, b1 = coeff.b
    c = float(np.real(coeff.c))
    ks = mode_range(N)
    mesh1 = build_mesh_1d(mesh.L, mesh.Ny, 1, mesh.p)
    dofs1 = enumerate_dofs(mesh1)
    yn = dofs1.node_points
    forcing = _all_mode_forcing(f, ks, dx) if f is not None else None

    # Dirichlet data per mode: DFT of nodal boundary values at y = 0 and y = L
    xn = np.arange(N) * dx
    g_modes = np.zeros((len(ks), 2), dtype=complex)
    if dirichlet_values is not None:
        for side, y in enumerate((0.0, mesh.L)):
            pts = np.column_stack([xn, np.full(N, y)])
            gv = np.asarray(dirichlet_values(pts), dtype=complex)
            g_modes[:, side] = np.exp(-2j * np.pi * np.outer(ks, xn)) @ gv / N

    def solve_mode(i):
        k = int(ks[i])
        ratio = complex(eigenvalue_ratio(k, dx, b0, c))
        co = Coefficients(b=(b1,), c=ratio)
        fk = None if forcing is None else (lambda y, i=i: forcing(np.asarray(y))[i])
        system = assemble(mesh1, co, fk, dofs1, g_modes[i])
        return solve_direct(system)

    n = thread_count(workers)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            coeffs1 = list(pool.map(solve_mode, range(len(ks))))
    else:
        coeffs1 = [solve_mode(i) for i in range(len(ks))]
    U = np.array(coeffs1, dtype=np.clongdouble)

    # synthesis at the 2D DoF support points
    dofs2 = enumerate_dofs(mesh)
    pts = dofs2.node_points
    ix = np.rint(pts[:, 0] / dx).astype(int) % N
    order = np.argsort(yn)
    pos = np.searchsorted(yn[order], pts[:, 1])
    pos = np.clip(pos, 0, len(yn) - 1)
    lower = np.clip(pos - 1, 0, len(yn) - 1)
    pick = np.where(np.abs(yn[order][lower] - pts[:, 1]) < np.abs(yn[order][pos] - pts[:, 1]),
                    lower, pos)
    iy = order[pick]
    if np.max(np.abs(yn[iy] - pts[:, 1])) > 1e-9 * mesh.L:
        raise RuntimeError("2D DoFs do not sit on the 1D y-nodes")
    phase = np.exp(2j * np.pi * np.outer(ix, ks) / N)
    values = np.einsum("nk,kn->n", phase, U[:, iy].astype(complex))
    return DecoupledSolution(DiscreteField(mesh, dofs2, values), ks, U, yn)


def decoupling_discrepancy(mesh: TensorMesh2D, coeff: Coefficients, f,
                           dirichlet_values=None, workers=None) -> float:
    """Max nodal difference between decoupled and direct solves, relative."""
    from .assembly import solve

    direct = solve(mesh, coeff, f, dirichlet_values).coeffs
    synth = decoupled_solve_2d(mesh, coeff, f, dirichlet_values, workers).field.coeffs
    scale = max(float(np.max(np.abs(direct))), 1e-300)
    return float(np.max(np.abs(synth - direct)) / scale)


# --------------------------------------------------------------------------
# Green's function oracle


@dataclass(frozen=True)
class GreensOracle:
    """Closed-form Green's function for a point source at ``L - dy``.

    Solves ``-G'' + b G' + ct G`` with ``G(0) = G(L) = 0``, ``G`` continuous
    and ``G'`` jumping by ``+1`` across ``L - dy``.
    """

    b: float
    ct: complex
    L: float
    dy: float
    D: complex
    A1: complex
    A2: complex
    c1: complex
    c2: complex
    c3: complex
    c4: complex

    @property
    def kink(self) -> float:
        return self.L - self.dy


def greens_build(b: float, ct: complex, L: float, dy: float) -> GreensOracle:
    ct = complex(ct)
    if not ct.real > 0:
        raise ValueError("Green's oracle needs Re(c) > 0")
    if not 0 < dy < L:
        raise ValueError("need 0 < dy < L")
    D = np.sqrt(complex(b * b + 4 * ct)) / 2
    sDL = np.sinh(D * L)
    if sDL == 0:
        raise ZeroDivisionError("sinh(D L) vanishes")
    A1 = np.exp(b * (L - dy) / 2)
    A2 = (L - dy) * D
    c2 = -(np.cosh(A2) * sDL - np.cosh(D * L) * np.sinh(A2)) / (A1 * D * sDL)
    c3 = -np.sinh(A2) / (A1 * D)
    c4 = np.cosh(D * L) * np.sinh(A2) / (A1 * D * sDL)
    return GreensOracle(float(b), ct, float(L), float(dy), complex(D), complex(A1),
                        complex(A2), 0j, complex(c2), complex(c3), complex(c4))


def _branch_eval(g: GreensOracle, ch: complex, sh: complex, y, order: int):
    # (ch cosh(Dy) + sh sinh(Dy)) e^{by/2} = sum over r = b/2 +- D of a_r e^{r y}
    rp, rm = g.b / 2 + g.D, g.b / 2 - g.D
    ap, am = (ch + sh) / 2, (ch - sh) / 2
    return ap * rp**order * np.exp(rp * y) + am * rm**order * np.exp(rm * y)


def greens_eval(g: GreensOracle, y, order: int = 0, side: str | None = None):
    """``G`` or its ``order``-th derivative.

    The branch is chosen by ``y <= L - dy`` unless ``side`` is ``"left"`` or
    ``"right"``, which evaluates that branch's closed form directly (used for
    one-sided limits at the kink).
    """
    if order < 0:
        raise ValueError("derivative order must be non-negative")
    y = np.asarray(y, dtype=float)
    left = _branch_eval(g, g.c1, g.c2, y, order)
    right = _branch_eval(g, g.c3, g.c4, y, order)
    if side == "left":
        return left
    if side == "right":
        return right
    return np.where(y <= g.kink, left, right)


def greens_residual(g: GreensOracle, y) -> np.ndarray:
    """Relative ODE residual away from the kink."""
    G0, G1, G2 = (greens_eval(g, y, n) for n in range(3))
    res = -G2 + g.b * G1 + g.ct * G0
    scale = np.abs(G2) + abs(g.b) * np.abs(G1) + abs(g.ct) * np.abs(G0)
    return np.abs(res) / np.maximum(scale, 1e-300)


def greens_jump(g: GreensOracle) -> complex:
    y = g.kink
    return complex(greens_eval(g, y, 1, "right") - greens_eval(g, y, 1, "left"))


# --------------------------------------------------------------------------
# randomised inequality checks

# relative slack for rounding where a bound is approached with equality
INEQ_SLACK = 1e-12


@dataclass(frozen=True)
class AppendixReport:
    samples: int
    seed: int
    violations: dict   # inequality name -> count
    worst: dict        # inequality name -> max lhs / rhs

    @property
    def total_violations(self) -> int:
        return int(sum(self.violations.values()))


def _sample_D(rng, n):
    re = rng.uniform(1.0, 10.0, n)
    im = rng.uniform(-1.0, 1.0, n) * re
    return re + 1j * im


def check_appendix_inequalities(samples: int = 10_000, seed: int = 0) -> AppendixReport:
    """Sample each inequality ``samples`` times and count violations.

    Parameter domains: ``Re(D) >= 1``, ``|Im(D)| <= Re(D)``, ``L >= 1``,
    ``0 < delta <= L``, ``y`` in ``[L - delta, L]``, and for the exp/sinh
    ratio ``z = a + ib`` with ``0 < a <= 10``, ``|b| <= a``.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    out_v, out_w = {}, {}

    def record(name, lhs, rhs):
        ratio = lhs / rhs
        out_v[name] = int(np.count_nonzero(ratio > 1 + INEQ_SLACK))
        out_w[name] = float(np.max(ratio))

    D = _sample_D(rng, samples)
    L = rng.uniform(1.0, 10.0, samples)
    delta = L * (1 - rng.random(samples))          # (0, L]
    record("exp_difference", np.abs((np.exp(-2 * D * delta) - 1) / (2 * D)), delta)

    D = _sample_D(rng, samples)
    L = rng.uniform(1.0, 10.0, samples)
    delta = L * (1 - rng.random(samples))
    sign = rng.choice([-1.0, 1.0], samples)
    e2L = np.exp(2 * D * L)
    record("exp_ratio", np.abs((e2L + sign * np.exp(2 * D * delta)) / (e2L - 1)),
           np.full(samples, 4.0))

    D = _sample_D(rng, samples)
    L = rng.uniform(1.0, 10.0, samples)
    delta = L * (1 - rng.random(samples))
    y = L - delta * rng.random(samples)
    sign = rng.choice([-1.0, 1.0], samples)
    lhs = np.abs((np.exp(-D * (L + delta - y)) + sign * np.exp(D * (L - delta - y))) / (2 * D))
    record("exp_sum", lhs, 1 / np.abs(D))

    a = 10.0 * (1 - rng.random(samples))           # (0, 10]
    bb = rng.uniform(-1.0, 1.0, samples) * a
    z = a + 1j * bb
    record("exp_over_sinh", np.abs(np.exp(z) / np.sinh(z)), 2 + 2 / np.abs(z))
    return AppendixReport(samples, seed, out_v, out_w)
