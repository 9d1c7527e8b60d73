"""Refinement-study runners shared by the CLI, the tests and the scripts.

Each runner returns :class:`~bflux.verification.ConvergenceTable` objects
keyed by boundary-enrichment ``p``; nothing here touches the filesystem.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .assembly import Coefficients, SolverError, solve
from .mesh import build_disk_mesh, build_mesh_1d, build_tensor_mesh_2d, enumerate_dofs
from .spectral import (decoupling_discrepancy, eigenvalue_ratio,
                       fourier_nodal, greens_build, greens_eval, greens_jump, greens_residual,
                       interpolant_exponential_inner, mass_eigenvalue, mode_range,
                       orthogonality_closed_form, periodic_matrices_1d, ratio_bounds,
                       sharp_ratio_upper, stiffness_eigenvalue, thread_count)
from .verification import (ConvergenceTable, make_manufactured, h1b_seminorm, h2b_seminorm,
                           vertex_error)

log = logging.getLogger(__name__)

PROBLEMS = ("study1d", "study2d_periodic", "study2d_square", "study2d_disk",
            "decouple_check", "property_suite")


class StudyError(RuntimeError):
    """A solve inside a refinement study failed; names the level."""


@dataclass(frozen=True)
class StudyResult:
    p: int
    table: ConvergenceTable
    vertex_table: ConvergenceTable | None = None


def _map_levels(fn, levels, workers):
    n = thread_count(workers)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(fn, levels))
    return [fn(l) for l in levels]


def _guarded(label, fn):
    def run(level):
        try:
            return fn(level)
        except (SolverError, np.linalg.LinAlgError) as exc:
            raise StudyError(f"{label}: level {level} failed: {exc}") from exc
    return run


def study_1d(m: int, p: int, refinements: int, base_cells: int = 8,
             coeff: Coefficients | None = None, L: float = 1.0, workers=None) -> StudyResult:
    """``sin(10 y)`` on ``[0, L]`` with ``N = base_cells * 2**level`` cells."""
    exact = make_manufactured("sin10_1d", coeff)

    def level_run(level):
        N = base_cells * 2**level
        mesh = build_mesh_1d(L, N, m, p)
        field = solve(mesh, exact.coeff, exact.forcing, exact.u)
        return (level, N, mesh.dy, field.dofs.total_dofs,
                h1b_seminorm(exact, field), h2b_seminorm(exact, field),
                vertex_error(exact, field, which="last_interior"),
                vertex_error(exact, field, which="mid"))

    rows = _map_levels(_guarded(f"study1d m={m} p={p}", level_run),
                       range(refinements + 1), workers)
    table = ConvergenceTable()
    vtab = ConvergenceTable(names=("last_interior", "mid"))
    for level, N, h, nd, e1, e2, ev, em in rows:
        table.add(level, N, h, nd, h1b=e1, h2b=e2)
        vtab.add(level, N, h, nd, last_interior=ev, mid=em)
    return StudyResult(p, table, vtab)


def _study_2d(label, exact_name, build, levels, h_of, coeff, workers) -> ConvergenceTable:
    exact = make_manufactured(exact_name, coeff)

    def level_run(level):
        mesh = build(level)
        field = solve(mesh, exact.coeff, exact.forcing, exact.u)
        return (level, mesh.ncells, h_of(level), enumerate_dofs(mesh).total_dofs,
                h1b_seminorm(exact, field), h2b_seminorm(exact, field))

    rows = _map_levels(_guarded(label, level_run), levels, workers)
    table = ConvergenceTable()
    for level, nc, h, nd, e1, e2 in rows:
        table.add(level, nc, h, nd, h1b=e1, h2b=e2)
    return table


def study_2d_periodic(p: int, refinements: int, mode: str = "normal", base_cells: int = 8,
                      coeff: Coefficients | None = None, workers=None) -> StudyResult:
    """Product solution on the unit strip, periodic in ``x``, Dirichlet in ``y``."""
    def build(level):
        N = base_cells * 2**level
        return build_tensor_mesh_2d(N, N, p, mode=mode, periodic_x=True)

    table = _study_2d(f"study2d_periodic p={p} {mode}", "periodic_2d", build,
                      range(refinements + 1), lambda l: 1.0 / (base_cells * 2**l), coeff, workers)
    return StudyResult(p, table)


def study_2d_square(p: int, refinements: int, mode: str = "normal", base_cells: int = 8,
                    coeff: Coefficients | None = None, workers=None) -> StudyResult:
    """Nonperiodic solution on the unit square with Dirichlet data on all sides."""
    def build(level):
        N = base_cells * 2**level
        return build_tensor_mesh_2d(N, N, p, mode=mode)

    table = _study_2d(f"study2d_square p={p} {mode}", "nonperiodic_2d", build,
                      range(refinements + 1), lambda l: 1.0 / (base_cells * 2**l), coeff, workers)
    return StudyResult(p, table)


def study_2d_disk(p: int, refinements: int, mode: str = "normal", start_level: int = 3,
                  coeff: Coefficients | None = None, radius: float = 1.0,
                  workers=None) -> StudyResult:
    """Product solution restricted to the disk; levels count uniform refinements.

    The nominal ``h`` of level ``l`` is ``radius / 2**l``.
    """
    def build(level):
        return build_disk_mesh(radius, level, p, mode)

    levels = range(start_level, start_level + refinements + 1)
    table = _study_2d(f"study2d_disk p={p} {mode}", "periodic_2d", build, levels,
                      lambda l: radius / 2**l, coeff, workers)
    return StudyResult(p, table)


# --------------------------------------------------------------------------
# oracle suites


def decouple_suite(sizes=(8, 16), p_list=(0, 2), coeff: Coefficients | None = None,
                   workers=None) -> list[tuple[int, int, float]]:
    """``(N, p, discrepancy)`` for the periodic product solution on ``N x N``."""
    exact = make_manufactured("periodic_2d", coeff)
    out = []
    for N in sizes:
        for p in p_list:
            mesh = build_tensor_mesh_2d(N, N, p, periodic_x=True)
            d = decoupling_discrepancy(mesh, exact.coeff, exact.forcing, exact.u, workers)
            out.append((int(N), int(p), d))
    return out


def eigen_suite(sizes=(8, 16, 32), b0: float = 1.0, c: float = 2.0) -> dict:
    """Eigen-identity error and ratio-bound violation counts.

    ``lower_violations`` and ``stated_upper_violations`` test the interval
    of :func:`ratio_bounds`; ``sharp_upper_violations`` tests
    :func:`sharp_ratio_upper`. Ratios are swept over ``-N/2 .. N/2``.
    """
    worst, lower, upper, sharp = 0.0, 0, 0, 0
    for N in sizes:
        dx = 1.0 / N
        M, A = periodic_matrices_1d(N, b0, c)
        lo, hi = ratio_bounds(dx, c)
        top = sharp_ratio_upper(dx, c)
        for k in mode_range(N):
            v = fourier_nodal(int(k), N)
            worst = max(worst,
                        float(np.max(np.abs(A @ v - stiffness_eigenvalue(k, dx, b0, c) * v))),
                        float(np.max(np.abs(M @ v - mass_eigenvalue(k, dx) * v))))
        ks = np.arange(-N // 2, N // 2 + 1)
        re = np.real(eigenvalue_ratio(ks, dx, b0, c))
        slack = 1e-12
        lower += int(np.count_nonzero(re < lo * (1 - slack)))
        upper += int(np.count_nonzero(re > hi * (1 + slack)))
        sharp += int(np.count_nonzero(re > top * (1 + slack)))
    return {"max_identity_error": worst, "lower_violations": lower,
            "stated_upper_violations": upper, "sharp_upper_violations": sharp}


def orthogonality_suite(N: int = 8) -> float:
    """Max deviation of ``int F_k exp(-2 pi i k' x)`` from its closed form."""
    dx = 1.0 / N
    worst = 0.0
    for k in mode_range(N):
        for kp in range(-2 * N, 2 * N + 1):
            val = interpolant_exponential_inner(int(k), kp, dx)
            worst = max(worst, abs(val - orthogonality_closed_form(int(k), kp, dx)))
    return worst


def greens_suite(seed: int = 0, count: int = 5, points: int = 100) -> dict:
    """Residual, jump and boundary checks over random admissible parameters."""
    rng = np.random.default_rng(seed)
    worst_res = worst_jump = worst_bc = 0.0
    c1_exact = True
    for _ in range(count):
        b = rng.uniform(-3, 3)
        ct = complex(rng.uniform(0.5, 5), rng.uniform(-3, 3))
        L = rng.uniform(0.5, 3)
        dy = L * rng.uniform(0.02, 0.5)
        g = greens_build(b, ct, L, dy)
        y = np.linspace(0, L, points + 2)[1:-1]
        y = y[np.abs(y - g.kink) > 1e-6 * L]
        worst_res = max(worst_res, float(np.max(greens_residual(g, y))))
        worst_jump = max(worst_jump, abs(greens_jump(g) - 1))
        worst_bc = max(worst_bc, abs(complex(greens_eval(g, 0.0))),
                       abs(complex(greens_eval(g, L))))
        c1_exact &= g.c1 == 0
    return {"max_residual": worst_res, "max_jump_error": worst_jump,
            "max_boundary_value": worst_bc, "c1_zero": bool(c1_exact)}
