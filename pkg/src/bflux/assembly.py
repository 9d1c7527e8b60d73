"""Galerkin assembly of -lap(u) + b.grad(u) + c u = f and its direct solve.

Every system is assembled over complex scalars. Test functions are real
Lagrange polynomials, so the sesquilinear form reduces to the ordinary
bilinear one on the nodal basis.

One-dimensional systems are assembled, refined and stored in
``np.longdouble``: boundary second derivatives divide coefficient
differences by ``h**2``, and double rounding of the coefficients alone
floors the error near 1e-8 at the finest desk-scale meshes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import DofSystem, Mesh1D, QuadMesh, TensorMesh2D, enumerate_dofs
from .polybasis import (EXTENDED, ReferenceBasis1D, gauss_rule, make_basis,
                        quadrature_points, reference_integrals)

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-12
EXT_COMPLEX = np.clongdouble
# cells integrated per batch; bounds the quadrature work arrays
CELL_CHUNK = 32768


class SolverError(RuntimeError):
    """Raised when a linear solve fails or misses its residual target."""


@dataclass(frozen=True)
class Coefficients:
    """Advection vector and reaction rate; unit viscosity is implied."""

    b: tuple = (0.0,)
    c: complex = 1.0

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "b", tuple(float(v) for v in b))

    @property
    def dim(self) -> int:
        return len(self.b)

    def check(self, dim: int) -> None:
        if dim == 1:
            if not complex(self.c).real > 0:
                raise ValueError(f"1D reaction needs Re(c) > 0, got {self.c}")
        else:
            if complex(self.c).imag != 0 or not complex(self.c).real > 0:
                raise ValueError(f"2D reaction must be real and positive, got {self.c}")
            if len(self.b) != 2:
                raise ValueError("2D advection needs two components")


# --------------------------------------------------------------------------
# local matrices


def reference_matrices_1d(basis: ReferenceBasis1D, npts: int | None = None):
    """Reference integrals ``(stiffness, advection, mass)`` on [0, 1].

    Entry ``(i, j)`` pairs test function ``i`` with trial function ``j``.
    Without ``npts`` the exact rational integrals are used.
    """
    if npts is None:
        return reference_integrals(basis.degree)
    rule = gauss_rule(npts)
    v = basis(rule.points)
    d = basis(rule.points, 1)
    w = rule.weights
    stiff = np.einsum("q,qi,qj->ij", w, d, d)
    adv = np.einsum("q,qi,qj->ij", w, v, d)
    mass = np.einsum("q,qi,qj->ij", w, v, v)
    return stiff, adv, mass


def cell_matrix_1d(width: float, basis: ReferenceBasis1D, coeff: Coefficients) -> np.ndarray:
    if width <= 0:
        raise ValueError("cell width must be positive")
    coeff.check(1)
    stiff, adv, mass = reference_matrices_1d(basis)
    return stiff / width + coeff.b[0] * adv + complex(coeff.c) * width * mass


def bilinear_jacobian(corners: np.ndarray, xi, eta):
    """Jacobian ``J[..., k, l] = d x_k / d xi_l`` of the bilinear map.

    ``corners`` has shape ``(nc, 4, 2)``; ``xi``/``eta`` broadcast against
    a trailing quadrature axis. Result shape ``(nc, nq, 2, 2)``.
    """
    c0, c1, c2, c3 = (corners[:, k, None, :] for k in range(4))
    xi = np.asarray(xi)[None, :, None]
    eta = np.asarray(eta)[None, :, None]
    dxi = (c1 - c0) * (1 - eta) + (c2 - c3) * eta
    deta = (c3 - c0) * (1 - xi) + (c2 - c1) * xi
    return np.stack([dxi, deta], axis=-1)


def bilinear_map(corners: np.ndarray, xi, eta) -> np.ndarray:
    c0, c1, c2, c3 = (corners[:, k, None, :] for k in range(4))
    xi = np.asarray(xi)[None, :, None]
    eta = np.asarray(eta)[None, :, None]
    return ((1 - xi) * (1 - eta) * c0 + xi * (1 - eta) * c1
            + xi * eta * c2 + (1 - xi) * eta * c3)


@dataclass(frozen=True)
class _TensorRule:
    xi: np.ndarray
    eta: np.ndarray
    w: np.ndarray
    N: np.ndarray       # (nq, nloc)
    dN: np.ndarray      # (nq, nloc, 2) reference gradients


def _tensor_rule(dx: int, de: int) -> _TensorRule:
    bx, be = make_basis(dx), make_basis(de)
    rx = gauss_rule(quadrature_points(dx, dx))
    re = gauss_rule(quadrature_points(de, de))
    vx, gx = bx(rx.points), bx(rx.points, 1)
    ve, ge = be(re.points), be(re.points, 1)
    # quadrature index qx fastest, local index a fastest
    N = np.einsum("pb,qa->pqba", ve, vx).reshape(len(re) * len(rx), -1)
    Nxi = np.einsum("pb,qa->pqba", ve, gx).reshape(N.shape)
    Neta = np.einsum("pb,qa->pqba", ge, vx).reshape(N.shape)
    XI, ETA = np.meshgrid(rx.points, re.points)
    W = np.outer(re.weights, rx.weights)
    return _TensorRule(XI.ravel(), ETA.ravel(), W.ravel(), N, np.stack([Nxi, Neta], -1))


def _cell_integrals(corners: np.ndarray, dx: int, de: int, coeff: Coefficients, forcing=None):
    """Local matrices (and loads) for a batch of cells sharing degrees."""
    rule = _tensor_rule(dx, de)
    J = bilinear_jacobian(corners, rule.xi, rule.eta)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise ValueError("degenerate or inverted cell: Jacobian determinant <= 0")
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    # physical gradients: grad = J^{-T} grad_ref
    grad = np.einsum("cqlk,qil->cqik", inv, rule.dN)
    wdet = rule.w[None, :] * det
    b = np.asarray(coeff.b)
    stiff = np.einsum("cq,cqik,cqjk->cij", wdet, grad, grad)
    bgrad = grad @ b
    adv = np.einsum("cq,qi,cqj->cij", wdet, rule.N, bgrad)
    mass = np.einsum("cq,qi,qj->cij", wdet, rule.N, rule.N)
    local = stiff + adv + complex(coeff.c) * mass
    load = None
    if forcing is not None:
        pts = bilinear_map(corners, rule.xi, rule.eta)
        fv = np.asarray(forcing(pts.reshape(-1, 2)), dtype=complex).reshape(det.shape)
        load = np.einsum("cq,cq,qi->ci", wdet, fv, rule.N)
    return local, load


def cell_matrix_2d(corners, basis_x: ReferenceBasis1D, basis_y: ReferenceBasis1D,
                   coeff: Coefficients) -> np.ndarray:
    """Local matrix of one mapped cell; ``corners`` is (4, 2) counterclockwise."""
    corners = np.asarray(corners, dtype=float)[None]
    local, _ = _cell_integrals(corners, basis_x.degree, basis_y.degree, coeff)
    return local[0]


# --------------------------------------------------------------------------
# global system


@dataclass(eq=False)
class ComplexLinearSystem:
    """Condensed system on the free DoFs plus the map back to all DoFs.

    ``u_full = prolongation @ u_free + offset``; unconstrained construction
    (``prolongation=None``) treats the matrix as the whole system.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    prolongation: sp.csr_matrix | None = None
    offset: np.ndarray | None = None
    full_matrix: sp.csr_matrix | None = field(default=None, repr=False)
    full_rhs: np.ndarray | None = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def expand(self, x: np.ndarray) -> np.ndarray:
        if self.prolongation is None:
            return x
        return self.prolongation @ x + self.offset


def _condense(A: sp.csr_matrix, F: np.ndarray, dofs: DofSystem, dirichlet_values):
    g = np.zeros(dofs.total_dofs, dtype=A.dtype)
    if len(dofs.dirichlet):
        if callable(dirichlet_values):
            g[dofs.dirichlet] = dirichlet_values(dofs.node_points[dofs.dirichlet])
        elif dirichlet_values is not None:
            g[dofs.dirichlet] = dirichlet_values
    for i, masters in dofs.constraints.items():
        g[i] = sum(w * g[j] for j, w in masters)
    P = dofs.prolongation().astype(A.dtype).tocsr()
    if not dofs.constraints:
        # P is a plain column selection
        free = dofs.free_dofs()
        K = A[free][:, free].tocsr()
        rhs = (F - A @ g)[free]
    else:
        PT = P.T.tocsr()
        K = (PT @ A @ P).tocsr()
        rhs = PT @ (F - A @ g)
    return ComplexLinearSystem(K, rhs, P, g, A, F)


def assemble(mesh, coeff: Coefficients, forcing, dofs: DofSystem | None = None,
             dirichlet_values=None) -> ComplexLinearSystem:
    """Assemble the global system on ``mesh``.

    ``forcing`` maps an array of points (shape ``(n,)`` in 1D, ``(n, 2)`` in
    2D) to forcing values, or is ``None`` for zero forcing.
    ``dirichlet_values`` is a callable of the same kind, an array over
    ``dofs.dirichlet``, or ``None`` for homogeneous data.
    """
    if dofs is None:
        dofs = enumerate_dofs(mesh)
    if len(dofs.cell_dofs) != mesh.ncells:
        raise ValueError("DofSystem does not match the mesh cell count")
    if isinstance(mesh, Mesh1D):
        A, F = _assemble_1d(mesh, coeff, forcing, dofs)
    elif isinstance(mesh, QuadMesh):
        A, F = _assemble_2d(mesh, coeff, forcing, dofs)
    else:
        raise TypeError(f"unsupported mesh {type(mesh).__name__}")
    return _condense(A, F, dofs, dirichlet_values)


def _assemble_1d(mesh: Mesh1D, coeff: Coefficients, forcing, dofs: DofSystem):
    coeff.check(1)
    n = dofs.total_dofs
    degrees = np.asarray(mesh.degrees)
    rows, cols, vals = [], [], []
    F = np.zeros(n, dtype=EXT_COMPLEX)
    h = EXTENDED(mesh.L) / mesh.N
    c = complex(coeff.c)
    c_ext = EXTENDED(c.real) + 1j * EXTENDED(c.imag)
    for deg in np.unique(degrees):
        cells = np.flatnonzero(degrees == deg)
        basis = make_basis(int(deg))
        stiff, adv, mass = reference_integrals(int(deg), extended=True)
        local = stiff / h + EXTENDED(coeff.b[0]) * adv + (c_ext * h) * mass
        idx = np.array([dofs.cell_dofs[c] for c in cells])
        rows.append(np.repeat(idx, deg + 1, axis=1).ravel())
        cols.append(np.tile(idx, (1, deg + 1)).ravel())
        vals.append(np.broadcast_to(local.ravel(), (len(cells), local.size)).ravel())
        if forcing is not None:
            rule = gauss_rule(quadrature_points(int(deg), int(deg)))
            q = rule.points.astype(EXTENDED)
            pts = (cells[:, None] + q[None, :]) * h
            fv = np.asarray(forcing(pts.ravel())).astype(EXT_COMPLEX).reshape(pts.shape)
            load = h * np.einsum("q,cq,qi->ci", rule.weights.astype(EXTENDED), fv, basis(q))
            np.add.at(F, idx, load)
    A = sp.coo_matrix((np.concatenate(vals).astype(EXT_COMPLEX),
                       (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    return A, F


def _assemble_2d(mesh: QuadMesh, coeff: Coefficients, forcing, dofs: DofSystem):
    coeff.check(2)
    n = dofs.total_dofs
    rows, cols, vals = [], [], []
    F = np.zeros(n, dtype=complex)
    degs = mesh.degrees
    pairs = np.unique(degs, axis=0)
    for dx, de in pairs:
        group = np.flatnonzero((degs[:, 0] == dx) & (degs[:, 1] == de))
        for start in range(0, len(group), CELL_CHUNK):
            cells = group[start:start + CELL_CHUNK]
            corners = mesh.vertices[mesh.quads[cells]]
            local, load = _cell_integrals(corners, int(dx), int(de), coeff, forcing)
            idx = np.array([dofs.cell_dofs[c] for c in cells])
            nl = idx.shape[1]
            rows.append(np.repeat(idx, nl, axis=1).ravel().astype(np.int32))
            cols.append(np.tile(idx, (1, nl)).ravel().astype(np.int32))
            vals.append(local.reshape(-1))
            if load is not None:
                np.add.at(F, idx, load)
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    return A, F


def solve_direct(system: ComplexLinearSystem) -> np.ndarray:
    """Sparse LU solve; returns the full coefficient vector.

    The factorisation is always double precision; residuals and the
    iterate keep the dtype of the assembled system, so extended systems
    get mixed-precision iterative refinement.
    """
    A_work = sp.csr_matrix(system.matrix)
    dt = A_work.dtype
    b = np.asarray(system.rhs, dtype=dt)
    if A_work.shape[0] != A_work.shape[1] or A_work.shape[0] != len(b):
        raise ValueError(f"system is not square/consistent: {A_work.shape} vs rhs {b.shape}")
    if A_work.shape[0] == 0:
        return system.expand(np.zeros(0, dtype=dt))
    # real data (every 2D problem here) factors at half the cost and memory
    real = not np.any(A_work.data.imag) and not np.any(b.imag)
    A = sp.csc_matrix(A_work.real if real else A_work, dtype=float if real else complex)
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SolverError(f"LU factorisation failed ({exc}); n={A.shape[0]}") from exc

    def inner(r):
        if real:
            return lu.solve(np.ascontiguousarray(r.real, dtype=float)).astype(dt)
        return lu.solve(r.astype(complex)).astype(dt)

    extended = dt == EXT_COMPLEX
    # extended systems always take a few sweeps: the residual target is
    # met by the first solve but the double iterate is not yet accurate
    steps, min_steps = (4, 3) if extended else (3, 0)
    x = inner(b)
    bnorm = float(np.linalg.norm(b.astype(complex)))
    for k in range(steps):
        r = b - A_work @ x
        rnorm = float(np.linalg.norm(r.astype(complex)))
        if not np.isfinite(rnorm) or not np.all(np.isfinite(x)):
            raise SolverError("non-finite solution: matrix is numerically singular")
        if k >= min_steps and (rnorm <= RESIDUAL_TOL * bnorm or rnorm == 0.0):
            break
        x = x + inner(r)
    rnorm = float(np.linalg.norm((b - A_work @ x).astype(complex)))
    if rnorm > RESIDUAL_TOL * bnorm:
        raise SolverError(f"residual {rnorm / bnorm:.3e} x |rhs| exceeds {RESIDUAL_TOL}")
    return system.expand(x)


# --------------------------------------------------------------------------
# discrete fields


@dataclass(eq=False)
class DiscreteField:
    mesh: object
    dofs: DofSystem
    coeffs: np.ndarray

    def evaluate(self, point, derivative=0):
        return evaluate_solution(self.mesh, self.dofs, self.coeffs, point, derivative)


def interpolate(mesh, fn, dofs: DofSystem | None = None) -> DiscreteField:
    """Nodal interpolant of ``fn`` (constraints applied afterwards)."""
    if dofs is None:
        dofs = enumerate_dofs(mesh)
    vals = np.asarray(fn(dofs.node_points), dtype=complex)
    return DiscreteField(mesh, dofs, dofs.apply_constraints(vals))


def solve(mesh, coeff: Coefficients, forcing, dirichlet_values=None) -> DiscreteField:
    dofs = enumerate_dofs(mesh)
    system = assemble(mesh, coeff, forcing, dofs, dirichlet_values)
    return DiscreteField(mesh, dofs, solve_direct(system))


def locate_cell(mesh, point):
    """Owning cell and local coordinates; ties go to the lowest cell index."""
    if isinstance(mesh, Mesh1D):
        y = float(point)
        tol = 1e-12 * mesh.L
        if y < -tol or y > mesh.L + tol:
            raise ValueError(f"point {y} outside [0, {mesh.L}]")
        c = int(np.clip(np.ceil(y / mesh.dy) - 1, 0, mesh.N - 1))
        return c, (y - c * mesh.dy) / mesh.dy
    x, y = (float(v) for v in point)
    if isinstance(mesh, TensorMesh2D):
        if mesh.periodic_x:
            x = x % 1.0 if not (0.0 <= x <= 1.0) else x
        tol = 1e-12
        if x < -tol or x > 1 + tol or y < -tol or y > mesh.L + tol:
            raise ValueError(f"point {(x, y)} outside the mesh")
        i = int(np.clip(np.ceil(x / mesh.dx) - 1, 0, mesh.Nx - 1))
        j = int(np.clip(np.ceil(y / mesh.dy) - 1, 0, mesh.Ny - 1))
        return mesh.cell_index(i, j), ((x - i * mesh.dx) / mesh.dx, (y - j * mesh.dy) / mesh.dy)
    corners = mesh.vertices[mesh.quads]
    lo, hi = corners.min(axis=1), corners.max(axis=1)
    pad = 1e-12 * (1 + np.abs(hi).max())
    cand = np.flatnonzero(np.all((lo - pad <= [x, y]) & ([x, y] <= hi + pad), axis=1))
    for c in cand:
        ref = _inverse_bilinear(corners[c], np.array([x, y]))
        if ref is not None and np.all(ref >= -1e-10) and np.all(ref <= 1 + 1e-10):
            return int(c), tuple(np.clip(ref, 0.0, 1.0))
    raise ValueError(f"point {(x, y)} outside the mesh")


def _inverse_bilinear(corners: np.ndarray, target: np.ndarray):
    ref = np.array([0.5, 0.5])
    for _ in range(50):
        x = bilinear_map(corners[None], ref[:1], ref[1:])[0, 0]
        r = x - target
        if np.linalg.norm(r) < 1e-14 * (1 + np.linalg.norm(target)):
            return ref
        J = bilinear_jacobian(corners[None], ref[:1], ref[1:])[0, 0]
        ref = ref - np.linalg.solve(J, r)
        if np.any(np.abs(ref) > 10):
            return None
    return ref


def cell_derivatives(mesh: QuadMesh, dofs: DofSystem, coeffs: np.ndarray, cell: int, ref):
    """Value, physical gradient and physical Hessian at local points ``ref``.

    ``ref`` has shape ``(n, 2)``. Returns arrays of shape ``(n,)``,
    ``(n, 2)`` and ``(n, 2, 2)``.
    """
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    dx, de = (int(d) for d in mesh.degrees[cell])
    bx, be = make_basis(dx), make_basis(de)
    xi, eta = ref[:, 0], ref[:, 1]
    vx, gx, hx = bx(xi), bx(xi, 1), bx(xi, 2)
    ve, ge, he = be(eta), be(eta, 1), be(eta, 2)
    u = np.asarray(coeffs)[dofs.cell_dofs[cell]].reshape(de + 1, dx + 1)
    val = np.einsum("na,nb,ba->n", vx, ve, u)
    # derivatives annihilate constants; shifting first avoids cancellation
    u = u - u[0, 0]

    def comb(ex, ee):
        return np.einsum("na,nb,ba->n", ex, ee, u)

    g_ref = np.stack([comb(gx, ve), comb(vx, ge)], axis=-1)
    h_ref = np.empty((len(xi), 2, 2), dtype=u.dtype)
    h_ref[:, 0, 0] = comb(hx, ve)
    h_ref[:, 1, 1] = comb(vx, he)
    h_ref[:, 0, 1] = h_ref[:, 1, 0] = comb(gx, ge)

    corners = mesh.vertices[mesh.quads[cell]]
    J = bilinear_jacobian(corners[None], xi, eta)[0]
    inv = np.linalg.inv(J)
    grad = np.einsum("nlk,nl->nk", inv, g_ref)
    # the bilinear map's only second derivative is the mixed one
    s = corners[0] - corners[1] + corners[2] - corners[3]
    corr = np.zeros_like(h_ref)
    corr[:, 0, 1] = corr[:, 1, 0] = grad @ s
    hess = np.einsum("nlk,nlm,nmj->nkj", inv, h_ref - corr, inv)
    return val, grad, hess


def evaluate_solution(mesh, dofs: DofSystem, coeffs: np.ndarray, point, derivative=0):
    """Value or derivative of a discrete field at a physical point.

    In 1D ``derivative`` is an order 0..2; in 2D it is a multi-index
    ``(nx, ny)`` with ``nx + ny <= 2`` (or 0 for the value).
    """
    cell, ref = locate_cell(mesh, point)
    if isinstance(mesh, Mesh1D):
        order = int(derivative)
        if order > 2 or order < 0:
            raise ValueError("derivative order must be 0, 1 or 2")
        deg = mesh.degrees[cell]
        vals = make_basis(deg)(np.array([ref], dtype=EXTENDED), order)[0]
        local = np.asarray(coeffs)[dofs.cell_dofs[cell]]
        if order:
            local = local - local[0]
        h = EXTENDED(mesh.L) / mesh.N
        return complex(vals @ local / h ** order)
    if derivative == 0:
        derivative = (0, 0)
    nx, ny = derivative
    if nx + ny > 2 or min(nx, ny) < 0:
        raise ValueError("derivative multi-index must have total order <= 2")
    val, grad, hess = cell_derivatives(mesh, dofs, coeffs, cell, [ref])
    if nx + ny == 0:
        return complex(val[0])
    if nx + ny == 1:
        return complex(grad[0, 0 if nx else 1])
    if nx == 2:
        return complex(hess[0, 0, 0])
    if ny == 2:
        return complex(hess[0, 1, 1])
    return complex(hess[0, 0, 1])
