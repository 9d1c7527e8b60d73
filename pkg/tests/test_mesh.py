import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bflux.assembly import Coefficients, bilinear_jacobian, interpolate, solve
from bflux.mesh import (FACE_VERTICES, build_disk_mesh, build_mesh_1d, build_tensor_mesh_2d,
                        dump_mesh, enumerate_dofs, isotropic_face_constraints, refine_uniform)
from bflux.polybasis import gauss_rule


def test_mesh_1d_layouts():
    assert build_mesh_1d(1.0, 4, 1, 2).degrees == (3, 1, 1, 3)
    assert build_mesh_1d(1.0, 4, 1, 0).degrees == (1, 1, 1, 1)
    mesh = build_mesh_1d(2.0, 5, 2, 1)
    assert mesh.dy == pytest.approx(0.4)
    np.testing.assert_allclose(np.diff(mesh.vertices), 0.4)


def test_mesh_1d_rejects_too_few_cells():
    with pytest.raises(ValueError):
        build_mesh_1d(1.0, 2, 1, 1)


def test_dofs_1d_count():
    dofs = enumerate_dofs(build_mesh_1d(1.0, 4, 1, 2))
    assert dofs.total_dofs == 9
    np.testing.assert_array_equal(dofs.dirichlet, [dofs.cell_dofs[0][0], dofs.cell_dofs[-1][-1]])
    assert len(dofs.free_dofs()) == 7
    assert not dofs.constraints


def test_refine_1d():
    fine = refine_uniform(build_mesh_1d(1.0, 4, 2, 1))
    assert fine.N == 8
    assert fine.degrees == (3,) + (2,) * 6 + (3,)


def _deg(mesh, i, j):
    return tuple(mesh.degrees[mesh.cell_index(i, j)])


def test_periodic_normal_layout():
    mesh = build_tensor_mesh_2d(4, 4, 3, periodic_x=True)
    for j in range(4):
        for i in range(4):
            assert _deg(mesh, i, j) == ((1, 4) if j in (0, 3) else (1, 1))


def test_square_normal_layout():
    mesh = build_tensor_mesh_2d(4, 4, 1)
    counts = {}
    for d in map(tuple, mesh.degrees):
        counts[d] = counts.get(d, 0) + 1
    assert counts == {(2, 2): 4, (2, 1): 4, (1, 2): 4, (1, 1): 4}
    for i, j in [(0, 0), (3, 0), (0, 3), (3, 3)]:
        assert _deg(mesh, i, j) == (2, 2)


@pytest.mark.parametrize("mode", ["normal", "isotropic"])
def test_p0_is_bilinear(mode):
    mesh = build_tensor_mesh_2d(3, 3, 0, mode=mode)
    assert np.all(mesh.degrees == 1)


def test_isotropic_layout():
    mesh = build_tensor_mesh_2d(5, 5, 2, mode="isotropic")
    for j in range(5):
        for i in range(5):
            edge = i in (0, 4) or j in (0, 4)
            assert _deg(mesh, i, j) == ((3, 3) if edge else (1, 1))


def test_periodic_with_x_dirichlet_rejected():
    with pytest.raises(ValueError):
        build_tensor_mesh_2d(4, 4, 1, periodic_x=True, dirichlet_sides={"left", "bottom", "top"})


def test_periodic_p0_dof_count():
    dofs = enumerate_dofs(build_tensor_mesh_2d(4, 4, 0, periodic_x=True))
    assert dofs.total_dofs == 20
    # column x = 1 aliases column x = 0
    assert len(dofs.dirichlet) == 8


@pytest.mark.parametrize("periodic", [True, False])
@pytest.mark.parametrize("p", [0, 1, 3])
def test_normal_mode_is_conforming(periodic, p):
    mesh = build_tensor_mesh_2d(6, 5, p, periodic_x=periodic)
    dofs = enumerate_dofs(mesh)
    assert not dofs.constraints
    # neighbours share the degree along their common face
    for j in range(5):
        for i in range(6):
            c = mesh.degrees[mesh.cell_index(i, j)]
            if i + 1 < 6 or periodic:
                r = mesh.degrees[mesh.cell_index((i + 1) % 6, j)]
                assert c[1] == r[1]
            if j + 1 < 5:
                t = mesh.degrees[mesh.cell_index(i, j + 1)]
                assert c[0] == t[0]


def test_normal_mode_shared_nodes_agree():
    mesh = build_tensor_mesh_2d(4, 4, 2)
    dofs = enumerate_dofs(mesh)
    pts = dofs.node_points
    # every DoF sits at one physical point, so equal points mean equal ids
    keys = {tuple(np.round(pt, 12)) for pt in pts}
    assert len(keys) == dofs.total_dofs


def test_isotropic_face_weight_table():
    p2 = isotropic_face_constraints(1, 3)
    assert [t for t, _ in p2] == pytest.approx([1 / 3, 2 / 3])
    assert p2[0][1] == pytest.approx((2 / 3, 1 / 3))
    assert p2[1][1] == pytest.approx((1 / 3, 2 / 3))
    (t, w), = isotropic_face_constraints(1, 2)
    assert t == 0.5 and w == pytest.approx((0.5, 0.5))


@pytest.mark.parametrize("periodic", [True, False])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_isotropic_constraint_consistency(periodic, p):
    mesh = build_tensor_mesh_2d(5, 5, p, mode="isotropic", periodic_x=periodic)
    dofs = enumerate_dofs(mesh)
    assert dofs.constraints
    assert not set(dofs.constraints) & set(dofs.dirichlet.tolist())
    for masters in dofs.constraints.values():
        assert sum(w for _, w in masters) == pytest.approx(1.0, abs=1e-13)
        assert not {j for j, _ in masters} & set(dofs.constraints)
    # affine data passes through the constraints unchanged
    a, bx, by = 0.3, -1.2, 2.5
    pts = dofs.node_points
    u = a + by * pts[:, 1] + (0.0 if periodic else bx * pts[:, 0])
    np.testing.assert_allclose(dofs.apply_constraints(u), u, atol=1e-13)


def test_isotropic_solution_is_affine_on_mismatched_faces():
    mesh = build_tensor_mesh_2d(5, 5, 2, mode="isotropic")
    coeff = Coefficients(b=(1.0, 1.0), c=2.0)
    field = solve(mesh, coeff, lambda x: np.exp(x[:, 0]) * np.cos(3 * x[:, 1]) + 5.0)
    rng = np.random.default_rng(7)
    # face x = 0.2 between a boundary (3,3) cell and interior (1,1) cell, y in [0.2, 0.4]
    a, b = np.array([0.2, 0.2]), np.array([0.2, 0.4])
    ua, ub = field.evaluate(a), field.evaluate(b)
    for t in rng.random(10):
        pt = (1 - t) * a + t * b
        assert field.evaluate(pt) == pytest.approx((1 - t) * ua + t * ub, abs=1e-12)


def _min_jacobian(mesh, n=3):
    rule = gauss_rule(n)
    xi, eta = np.meshgrid(rule.points, rule.points)
    J = bilinear_jacobian(mesh.cell_corners(), xi.ravel(), eta.ravel())
    return float(np.min(np.linalg.det(J)))


def test_disk_coarse_blocks():
    mesh = build_disk_mesh(1.0, 0)
    assert mesh.ncells == 5
    assert _min_jacobian(mesh, 2) > 0


@pytest.mark.parametrize("radius", [1.0, 2.5])
@pytest.mark.parametrize("level", [0, 1, 3])
def test_disk_boundary_on_circle(radius, level):
    mesh = build_disk_mesh(radius, level)
    v = mesh.vertices[mesh.boundary_vertex_ids()]
    np.testing.assert_allclose(np.hypot(v[:, 0], v[:, 1]), radius, atol=1e-12)
    # outward normals are the exact radial directions
    for (cell, face), nrm in zip(mesh.boundary_faces, mesh.boundary_normals):
        ends = mesh.vertices[mesh.quads[cell, list(FACE_VERTICES[face])]]
        np.testing.assert_allclose(nrm, ends / radius, atol=1e-12)


def test_disk_quadrisection_and_quality():
    meshes = [build_disk_mesh(1.0, r) for r in range(4)]
    for a, b in zip(meshes, meshes[1:]):
        assert b.ncells == 4 * a.ncells
    jac = [_min_jacobian(m) for m in meshes]
    assert all(j > 0 for j in jac)
    # detJ scales like h^2; the quality factor must not degrade beyond that
    scaled = [j * 4**r for r, j in enumerate(jac)]
    assert min(scaled) > 0.25 * scaled[0]


def test_disk_refine_twice_matches_direct_build():
    a = refine_uniform(refine_uniform(build_disk_mesh(1.0, 0)))
    b = build_disk_mesh(1.0, 2)
    key = lambda v: sorted(map(tuple, np.round(v, 12)))
    assert key(a.vertices) == key(b.vertices)
    assert a.ncells == b.ncells


def test_disk_radial_refinement():
    mesh = build_disk_mesh(1.0, 2, p=2)
    owners = set(mesh.boundary_faces[:, 0].tolist())
    for cell, deg in enumerate(mesh.degrees):
        expect = 3 if cell in owners else 1
        # outer blocks run eta outward, so only the eta degree is raised
        assert deg[1] == expect and deg[0] == 1


def test_tensor_refine():
    fine = refine_uniform(build_tensor_mesh_2d(4, 4, 2, periodic_x=True))
    assert (fine.Nx, fine.Ny) == (8, 8)
    ref = build_tensor_mesh_2d(8, 8, 2, periodic_x=True)
    np.testing.assert_array_equal(fine.degrees, ref.degrees)


def test_dump_format():
    buf = io.StringIO()
    dump_mesh(build_tensor_mesh_2d(3, 3, 1), buf)
    lines = buf.getvalue().splitlines()
    assert sum(l.startswith("vertex ") for l in lines) == 16
    quads = [l.split() for l in lines if l.startswith("quad ")]
    assert len(quads) == 9 and all(len(q) == 7 for q in quads)
    assert lines[0] == "vertex 0.0 0.0"


@settings(max_examples=25, deadline=None)
@given(N=st.integers(3, 9), p=st.integers(0, 3), periodic=st.booleans(),
       seed=st.integers(0, 1000))
def test_affine_interpolant_is_exact(N, p, periodic, seed):
    rng = np.random.default_rng(seed)
    a, bx, by = rng.normal(size=3)
    if periodic:
        bx = 0.0
    mode = "isotropic" if seed % 2 else "normal"
    mesh = build_tensor_mesh_2d(N, N, p, mode=mode, periodic_x=periodic)
    field = interpolate(mesh, lambda x: a + bx * x[:, 0] + by * x[:, 1])
    pt = rng.random(2)
    assert field.evaluate(pt) == pytest.approx(a + bx * pt[0] + by * pt[1], abs=1e-12)
