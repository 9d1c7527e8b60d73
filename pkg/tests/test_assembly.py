import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

import bflux.assembly as asm
from bflux.assembly import (Coefficients, ComplexLinearSystem, SolverError, assemble,
                            cell_matrix_1d, cell_matrix_2d, evaluate_solution, interpolate,
                            reference_matrices_1d, solve, solve_direct)
from bflux.mesh import build_disk_mesh, build_mesh_1d, build_tensor_mesh_2d, enumerate_dofs
from bflux.polybasis import make_basis


def test_cell_matrix_1d_hat_functions():
    K = cell_matrix_1d(0.5, make_basis(1), Coefficients(b=(0.0,), c=1.0))
    # 1/dy +- dy * {1/3, 1/6}
    np.testing.assert_allclose(K, [[2.16667, -1.91667], [-1.91667, 2.16667]], atol=1e-5)


def test_cell_matrix_1d_rejects_nonpositive_reaction():
    with pytest.raises(ValueError):
        cell_matrix_1d(0.5, make_basis(1), Coefficients(b=(1.0,), c=1j))
    with pytest.raises(ValueError):
        cell_matrix_1d(0.0, make_basis(1), Coefficients(b=(1.0,), c=1.0))


def test_advection_block_linear():
    _, adv, _ = reference_matrices_1d(make_basis(1))
    np.testing.assert_allclose(adv, [[-0.5, 0.5], [-0.5, 0.5]], atol=1e-15)


@pytest.mark.parametrize("degree", [1, 3, 5])
def test_exact_and_quadrature_reference_matrices_agree(degree):
    b = make_basis(degree)
    for a, q in zip(reference_matrices_1d(b), reference_matrices_1d(b, degree + 2)):
        np.testing.assert_allclose(a, q, atol=1e-11)


def _split_2d(corners, dx, de, b=(0.0, 0.0)):
    """Stiffness-plus-advection and mass parts, using linearity in ``c``."""
    k1 = cell_matrix_2d(corners, make_basis(dx), make_basis(de), Coefficients(b=b, c=1.0))
    k2 = cell_matrix_2d(corners, make_basis(dx), make_basis(de), Coefficients(b=b, c=2.0))
    return 2 * k1 - k2, k2 - k1


UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_bilinear_laplacian_unit_square():
    stiff, mass = _split_2d(UNIT, 1, 1)
    # local order (0,0), (1,0), (0,1), (1,1)
    expected = np.array([[4, -1, -1, -2], [-1, 4, -2, -1], [-1, -2, 4, -1], [-2, -1, -1, 4]]) / 6
    np.testing.assert_allclose(stiff.real, expected, atol=1e-14)
    np.testing.assert_allclose(np.diag(stiff.real), 2 / 3)
    np.testing.assert_allclose(mass.real.sum(), 1.0, atol=1e-14)


@pytest.mark.parametrize("degs", [(1, 1), (1, 4), (3, 2)])
def test_stiffness_annihilates_constants(degs):
    corners = np.array([[0.1, 0.0], [1.3, 0.2], [1.0, 1.1], [-0.2, 0.9]])
    stiff, _ = _split_2d(corners, *degs)
    np.testing.assert_allclose(stiff.sum(axis=1), 0.0, atol=1e-12)


def test_rotated_corner_order_gives_same_physical_matrix():
    rect = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 0.5], [0.0, 0.5]])
    b = (1.0, 0.5)
    K = cell_matrix_2d(rect, make_basis(1), make_basis(1), Coefficients(b=b, c=2.0))
    rot = np.roll(rect, -1, axis=0)
    Kr = cell_matrix_2d(rot, make_basis(1), make_basis(1), Coefficients(b=b, c=2.0))
    idx = [0, 1, 3, 2]            # local index of reference corner k
    perm = np.empty(4, dtype=int)
    for k in range(4):
        perm[idx[k]] = idx[(k + 1) % 4]
    np.testing.assert_allclose(Kr, K[np.ix_(perm, perm)], atol=1e-13)


def test_degenerate_cell_rejected():
    flat = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    with pytest.raises(ValueError):
        cell_matrix_2d(flat, make_basis(1), make_basis(1), Coefficients(b=(0, 0), c=1.0))


def test_zero_forcing_gives_zero_rhs():
    system = assemble(build_mesh_1d(1.0, 3, 1), Coefficients(b=(1.0,), c=2.0), None)
    assert np.all(system.rhs == 0)
    np.testing.assert_allclose(solve_direct(system), 0.0)
    assert np.linalg.matrix_rank(system.matrix.toarray().astype(complex)) == system.dimension


def test_symmetric_assembly_is_symmetric():
    mesh = build_tensor_mesh_2d(6, 6, 2)
    system = assemble(mesh, Coefficients(b=(0.0, 0.0), c=2.0), None)
    A = system.full_matrix
    assert abs(A - A.T).max() <= 1e-13 * abs(A).max()
    A1 = assemble(build_mesh_1d(1.0, 8, 2, 2), Coefficients(b=(0.0,), c=3.0), None).full_matrix
    assert abs(A1 - A1.T).max() <= 1e-13 * abs(A1).max()


def test_pattern_symmetric_with_advection():
    A = assemble(build_tensor_mesh_2d(5, 5, 1), Coefficients(b=(1.0, 1.0), c=2.0),
                 None).full_matrix
    P = (A != 0).astype(int)
    assert (P - P.T).nnz == 0


def test_chunked_assembly_is_identical(monkeypatch):
    mesh = build_tensor_mesh_2d(7, 7, 2)
    co = Coefficients(b=(1.0, -0.5), c=2.0)
    f = lambda x: np.sin(x[:, 0]) + x[:, 1]
    ref = assemble(mesh, co, f)
    monkeypatch.setattr(asm, "CELL_CHUNK", 3)
    chunked = assemble(mesh, co, f)
    assert abs(ref.full_matrix - chunked.full_matrix).max() <= 1e-15
    np.testing.assert_allclose(ref.full_rhs, chunked.full_rhs, atol=1e-15)


def test_max_vertex_rate_sin_pi():
    co = Coefficients(b=(0.0,), c=1.0)
    f = lambda y: (np.pi**2 + 1) * np.sin(np.pi * y)
    errs = []
    for N in (8, 16, 32, 64):
        field = solve(build_mesh_1d(1.0, N, 1), co, f)
        ys = np.linspace(0, 1, N + 1)
        uh = np.array([field.evaluate(y) for y in ys])
        errs.append(np.max(np.abs(uh - np.sin(np.pi * ys))))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates >= 2 - 0.1)


def test_solve_identity():
    A = sp.identity(5, dtype=complex, format="csr")
    e1 = np.eye(5)[0].astype(complex)
    np.testing.assert_allclose(solve_direct(ComplexLinearSystem(A, e1)), e1)


def test_solve_random_complex():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(50, 50)) + 1j * rng.normal(size=(50, 50)) + 20 * np.eye(50)
    b = rng.normal(size=50) + 1j * rng.normal(size=50)
    x = solve_direct(ComplexLinearSystem(sp.csr_matrix(A), b))
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_solve_1d_residual():
    mesh = build_mesh_1d(1.0, 64, 2, 2)
    system = assemble(mesh, Coefficients(b=(1.0,), c=2.0), lambda y: np.exp(y))
    dofs = enumerate_dofs(mesh)
    x = solve_direct(system)[dofs.free_dofs()]
    A = system.matrix.astype(np.clongdouble)
    r = system.rhs - A @ x.astype(np.clongdouble)
    assert np.linalg.norm(r.astype(complex)) <= 1e-12 * np.linalg.norm(system.rhs.astype(complex))


def test_singular_system_raises():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]], dtype=complex))
    with pytest.raises(SolverError):
        solve_direct(ComplexLinearSystem(A, np.array([1.0, 0.0], dtype=complex)))


def test_dimension_mismatch_raises():
    mesh = build_mesh_1d(1.0, 4, 1)
    other = enumerate_dofs(build_mesh_1d(1.0, 5, 1))
    with pytest.raises(ValueError):
        assemble(mesh, Coefficients(b=(0.0,), c=1.0), None, other)


def test_interpolant_of_constants_and_xy():
    mesh = build_tensor_mesh_2d(4, 4, 2)
    one = interpolate(mesh, lambda x: np.ones(len(x)))
    pt = (0.37, 0.81)
    assert one.evaluate(pt) == pytest.approx(1.0)
    assert abs(one.evaluate(pt, (1, 0))) < 1e-12 and abs(one.evaluate(pt, (0, 1))) < 1e-12
    xy = interpolate(build_tensor_mesh_2d(3, 3, 0), lambda x: x[:, 0] * x[:, 1])
    assert xy.evaluate(pt, (1, 1)) == pytest.approx(1.0, abs=1e-12)


def test_mapped_derivatives_of_affine_field():
    mesh = build_disk_mesh(1.0, 2, p=1)
    # affine data is bilinear in the reference coordinates, hence reproduced
    lin = interpolate(mesh, lambda x: 2 + 3 * x[:, 0] - x[:, 1])
    for pt in [(0.05, -0.03), (0.6, 0.5), (-0.2, 0.9)]:
        assert lin.evaluate(pt) == pytest.approx(2 + 3 * pt[0] - pt[1], abs=1e-12)
        assert lin.evaluate(pt, (1, 0)) == pytest.approx(3.0, abs=1e-10)
        assert lin.evaluate(pt, (0, 1)) == pytest.approx(-1.0, abs=1e-10)
        for d in [(2, 0), (1, 1), (0, 2)]:
            assert abs(lin.evaluate(pt, d)) < 1e-8


@pytest.mark.parametrize("pt", [(0.6, 0.5), (-0.3, 0.85), (0.1, -0.05)])
def test_mapped_hessian_vs_finite_difference(pt):
    mesh = build_disk_mesh(1.0, 2, p=2)
    field = interpolate(mesh, lambda x: np.sin(2 * x[:, 0]) * np.exp(x[:, 1]))
    h = 1e-5
    e = np.eye(2) * h
    pt = np.array(pt)
    for k, grad_dir in enumerate([(1, 0), (0, 1)]):
        fd = [(field.evaluate(pt + e[l], grad_dir) - field.evaluate(pt - e[l], grad_dir)) / (2 * h)
              for l in range(2)]
        exact = [field.evaluate(pt, tuple(np.add(grad_dir, (1 - l, l)))) for l in range(2)]
        np.testing.assert_allclose(exact, fd, atol=1e-5)


def test_boundary_derivative_vs_finite_difference_1d():
    mesh = build_mesh_1d(1.0, 10, 1, 2)
    field = solve(mesh, Coefficients(b=(1.0,), c=2.0), lambda y: np.cos(3 * y))
    h = 1e-6
    fd = (field.evaluate(h) - field.evaluate(0.0)) / h
    assert field.evaluate(0.0, 1) == pytest.approx(fd, abs=1e-5)


def test_boundary_derivative_vs_finite_difference_2d():
    mesh = build_tensor_mesh_2d(6, 6, 2, periodic_x=True)
    field = solve(mesh, Coefficients(b=(1.0, 1.0), c=2.0),
                  lambda x: np.cos(2 * np.pi * x[:, 0]) + x[:, 1])
    h = 1e-6
    pt = np.array([1 / 3, 0.0])
    fd = (field.evaluate(pt + [0, h]) - field.evaluate(pt)) / h
    assert field.evaluate(pt, (0, 1)) == pytest.approx(fd, abs=1e-5)


def test_point_outside_mesh_raises():
    mesh = build_mesh_1d(1.0, 4, 1)
    dofs = enumerate_dofs(mesh)
    with pytest.raises(ValueError):
        evaluate_solution(mesh, dofs, np.zeros(dofs.total_dofs), 1.5)
    disk = build_disk_mesh(1.0, 1)
    dd = enumerate_dofs(disk)
    with pytest.raises(ValueError):
        evaluate_solution(disk, dd, np.zeros(dd.total_dofs), (0.9, 0.9))


@pytest.mark.parametrize("mesh", [
    build_tensor_mesh_2d(5, 4, 2),
    build_tensor_mesh_2d(5, 4, 1, mode="isotropic"),
    build_disk_mesh(1.0, 1, p=2),
], ids=["square-normal", "square-isotropic", "disk"])
def test_galerkin_reproduces_affine(mesh):
    co = Coefficients(b=(1.0, 0.5), c=2.0)
    u = lambda x: 1 + 2 * x[:, 0] - 3 * x[:, 1]
    f = lambda x: co.b[0] * 2 + co.b[1] * -3 + 2.0 * u(x)
    field = solve(mesh, co, f, u)
    np.testing.assert_allclose(field.coeffs, u(field.dofs.node_points), atol=1e-11)


def test_galerkin_reproduces_affine_1d_complex():
    co = Coefficients(b=(1.5,), c=2 + 3j)
    u = lambda y: (1 - 2j) + 4 * y
    f = lambda y: 1.5 * 4 + (2 + 3j) * u(y)
    field = solve(build_mesh_1d(2.0, 6, 2, 1), co, f, u)
    np.testing.assert_allclose(field.coeffs, u(field.dofs.node_points), atol=1e-12)


@pytest.mark.parametrize("mesh", [build_tensor_mesh_2d(5, 5, 2, mode="isotropic"),
                                  build_mesh_1d(1.0, 9, 2, 2)], ids=["2d", "1d"])
def test_coercivity_proxy(mesh):
    co = Coefficients(b=(0.0,) * (1 if hasattr(mesh, "N") else 2), c=1.5)
    K = assemble(mesh, co, None).matrix.astype(complex)
    rng = np.random.default_rng(11)
    for _ in range(100):
        v = rng.normal(size=K.shape[0]) + 1j * rng.normal(size=K.shape[0])
        assert np.real(np.vdot(v, K @ v)) > 0


def test_conjugation_convention():
    mesh = build_mesh_1d(1.0, 12, 1, 2)
    ct = 2 - 1.5j
    f = lambda y: np.exp(1j * 3 * y) * (1 + y)
    u = solve(mesh, Coefficients(b=(1.0,), c=ct), f).coeffs
    uc = solve(mesh, Coefficients(b=(1.0,), c=np.conj(ct)), lambda y: np.conj(f(y))).coeffs
    np.testing.assert_allclose(uc, np.conj(u), atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(c_re=st.floats(0.1, 10), c_im=st.floats(-10, 10), b=st.floats(-5, 5),
       N=st.integers(3, 20), m=st.integers(1, 3), p=st.integers(0, 3))
def test_1d_solve_meets_residual_target(c_re, c_im, b, N, m, p):
    mesh = build_mesh_1d(1.0, N, m, p)
    system = assemble(mesh, Coefficients(b=(b,), c=complex(c_re, c_im)), lambda y: 1 + y * y)
    x = solve_direct(system)
    assert np.all(np.isfinite(x))
