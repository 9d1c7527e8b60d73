"""Meshes with per-cell anisotropic degrees, and global DoF numbering.

Three mesh kinds are supported:

* :class:`Mesh1D` -- a uniform chain of intervals on ``[0, L]``.
* :class:`TensorMesh2D` -- a uniform grid on ``[0, 1] x [0, L]``, optionally
  periodic in ``x``.
* :class:`MappedMesh2D` -- a quadrilateral disk whose vertices are placed by a
  blend of a Cartesian centre block and a polar outer description.

Two-dimensional cells use local coordinates ``(xi, eta)`` on the unit square
with counterclockwise corners ``v0=(0,0), v1=(1,0), v2=(1,1), v3=(0,1)``.
Local faces are ``0: eta=0``, ``1: xi=1``, ``2: eta=1``, ``3: xi=0``.
Cell degrees are stored per local direction as ``(deg_xi, deg_eta)``.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from math import gcd, pi, sqrt

import numpy as np
from scipy.spatial import cKDTree

from .polybasis import make_basis

SIDES = ("bottom", "right", "top", "left")
MODES = ("normal", "isotropic")

# local corner indices of each face, ordered by increasing local coordinate
FACE_VERTICES = ((0, 1), (1, 2), (3, 2), (0, 3))
# reference coordinates of the four corners
CORNER_REF = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


# --------------------------------------------------------------------------
# 1D


@dataclass(frozen=True)
class Mesh1D:
    L: float
    N: int
    m: int
    p: int

    @property
    def dy(self) -> float:
        return self.L / self.N

    @property
    def degrees(self) -> tuple[int, ...]:
        inner = [self.m] * (self.N - 2)
        return (self.m + self.p, *inner, self.m + self.p)

    @property
    def vertices(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.N + 1)

    @property
    def ncells(self) -> int:
        return self.N


def build_mesh_1d(L: float, N: int, m: int, p: int = 0) -> Mesh1D:
    if N < 3:
        raise ValueError(f"need at least 3 cells so an interior cell exists, got N={N}")
    if L <= 0:
        raise ValueError("domain length must be positive")
    if m < 1 or p < 0:
        raise ValueError("need m >= 1 and p >= 0")
    make_basis(m + p)  # rejects degrees above the cap
    return Mesh1D(float(L), int(N), int(m), int(p))


# --------------------------------------------------------------------------
# 2D


@dataclass(eq=False)
class QuadMesh:
    """Shared structure of the two-dimensional meshes."""

    vertices: np.ndarray          # (nv, 2)
    quads: np.ndarray             # (nc, 4) counterclockwise corner indices
    degrees: np.ndarray           # (nc, 2) per local direction
    boundary_faces: np.ndarray    # (nb, 2) rows of (cell, local face); Dirichlet faces
    boundary_normals: np.ndarray  # (nb, 2, 2) outward unit normal at both face endpoints
    vertex_alias: np.ndarray      # (nv,) canonical vertex id used for DoF numbering
    m: int = 1
    p: int = 0
    mode: str = "normal"

    @property
    def ncells(self) -> int:
        return len(self.quads)

    def cell_corners(self, cells=None) -> np.ndarray:
        q = self.quads if cells is None else self.quads[cells]
        return self.vertices[q]

    def boundary_vertex_ids(self) -> np.ndarray:
        out = set()
        for cell, face in self.boundary_faces:
            for lv in FACE_VERTICES[face]:
                out.add(int(self.quads[cell, lv]))
        return np.array(sorted(out), dtype=int)

    def has_constraints(self) -> bool:
        return bool(enumerate_dofs(self).constraints)


def assign_degrees(quads: np.ndarray, boundary_faces: np.ndarray, m: int, p: int,
                   mode: str) -> np.ndarray:
    """Per-cell ``(deg_xi, deg_eta)`` from the Dirichlet boundary faces.

    ``normal`` raises only the direction crossing each boundary face;
    ``isotropic`` raises both directions of every cell touching the boundary.
    """
    if mode not in MODES:
        raise ValueError(f"unknown refinement mode {mode!r}")
    deg = np.full((len(quads), 2), m, dtype=int)
    for cell, face in boundary_faces:
        if mode == "isotropic":
            deg[cell] = m + p
        elif face in (0, 2):
            deg[cell, 1] = m + p
        else:
            deg[cell, 0] = m + p
    return deg


@dataclass(eq=False)
class TensorMesh2D(QuadMesh):
    Nx: int = 0
    Ny: int = 0
    L: float = 1.0
    periodic_x: bool = False
    dirichlet_sides: frozenset = frozenset()

    @property
    def dx(self) -> float:
        return 1.0 / self.Nx

    @property
    def dy(self) -> float:
        return self.L / self.Ny

    def cell_index(self, i: int, j: int) -> int:
        return j * self.Nx + i


def build_tensor_mesh_2d(Nx: int, Ny: int, p: int, mode: str = "normal",
                         periodic_x: bool = False, dirichlet_sides=None,
                         L: float = 1.0, m: int = 1) -> TensorMesh2D:
    if Nx < 3 or Ny < 3:
        raise ValueError("need Nx, Ny >= 3")
    if dirichlet_sides is None:
        dirichlet_sides = {"bottom", "top"} if periodic_x else set(SIDES)
    sides = frozenset(dirichlet_sides)
    unknown = sides - set(SIDES)
    if unknown:
        raise ValueError(f"unknown sides {sorted(unknown)}")
    if periodic_x and sides & {"left", "right"}:
        raise ValueError("periodic in x excludes Dirichlet conditions on left/right")
    untreated = {"bottom", "top"} - sides
    if not periodic_x:
        untreated |= {"left", "right"} - sides
    if untreated:
        raise ValueError(f"sides {sorted(untreated)} are neither periodic nor Dirichlet")

    xs = np.linspace(0.0, 1.0, Nx + 1)
    ys = np.linspace(0.0, L, Ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((Nx + 1) * (Ny + 1)).reshape(Ny + 1, Nx + 1)
    quads = np.column_stack([
        vid[:-1, :-1].ravel(), vid[:-1, 1:].ravel(),
        vid[1:, 1:].ravel(), vid[1:, :-1].ravel(),
    ])
    alias = vid.copy()
    if periodic_x:
        alias[:, -1] = alias[:, 0]
    alias = alias.ravel()

    faces, normals = [], []
    side_info = {
        "bottom": (0, (0.0, -1.0)), "top": (2, (0.0, 1.0)),
        "left": (3, (-1.0, 0.0)), "right": (1, (1.0, 0.0)),
    }
    for side in SIDES:
        if side not in sides:
            continue
        face, n = side_info[side]
        if side == "bottom":
            cells = [j * Nx + i for j in [0] for i in range(Nx)]
        elif side == "top":
            cells = [(Ny - 1) * Nx + i for i in range(Nx)]
        elif side == "left":
            cells = [j * Nx for j in range(Ny)]
        else:
            cells = [j * Nx + Nx - 1 for j in range(Ny)]
        for c in cells:
            faces.append((c, face))
            normals.append((n, n))
    faces = np.array(faces, dtype=int).reshape(-1, 2)
    normals = np.array(normals, dtype=float).reshape(-1, 2, 2)
    degrees = assign_degrees(quads, faces, m, p, mode)
    return TensorMesh2D(vertices, quads, degrees, faces, normals, alias, m=m, p=p,
                        mode=mode, Nx=Nx, Ny=Ny, L=float(L), periodic_x=periodic_x,
                        dirichlet_sides=sides)


# --------------------------------------------------------------------------
# disk


def _disk_block_map(block: int, xi, eta, radius: float):
    """Physical position of block parameters.

    Block 0 is the central square; blocks 1-4 are the outer pieces centred
    on angles 0, pi/2, pi, 3pi/2. In an outer block ``xi`` runs clockwise and
    ``eta`` runs outward; ``eta = 1`` is the circle.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    a = radius / (2.0 * sqrt(2.0))
    if block == 0:
        return np.stack([-a + 2 * a * xi, -a + 2 * a * eta], axis=-1)
    inner_y = a - 2 * a * xi
    phi_in = np.arctan2(inner_y, a)
    r_in = np.hypot(a, inner_y)
    theta = pi / 4 - (pi / 2) * xi
    # polar near the circle: d(phi)/d(eta) vanishes at eta = 1
    phi = theta + (1 - eta) ** 2 * (phi_in - theta)
    r = r_in + eta * (radius - r_in)
    rot = (block - 1) * pi / 2
    return np.stack([r * np.cos(phi + rot), r * np.sin(phi + rot)], axis=-1)


@dataclass(eq=False)
class MappedMesh2D(QuadMesh):
    radius: float = 1.0
    level: int = 0
    # per cell: block id and parameter box (xi0, xi1, eta0, eta1)
    cell_block: np.ndarray = field(default=None, repr=False)
    cell_params: np.ndarray = field(default=None, repr=False)


def _merge_points(points: np.ndarray, tol: float):
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(points))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(points))])
    uniq, inverse = np.unique(roots, return_inverse=True)
    return points[uniq], inverse


def _disk_from_params(radius: float, level: int, blocks: np.ndarray, params: np.ndarray,
                      m: int, p: int, mode: str) -> MappedMesh2D:
    corners = np.empty((len(blocks), 4, 2))
    boxes = [(0, 2), (1, 2), (1, 3), (0, 3)]  # (xi index, eta index) into params
    for b in np.unique(blocks):
        sel = blocks == b
        for k, (ix, ie) in enumerate(boxes):
            corners[sel, k] = _disk_block_map(b, params[sel, ix], params[sel, ie], radius)
    pts, inverse = _merge_points(corners.reshape(-1, 2), 1e-10 * radius)
    quads = inverse.reshape(-1, 4)
    on_circle = np.hypot(pts[:, 0], pts[:, 1])
    bnd = np.isclose(on_circle, radius, rtol=0, atol=1e-9 * radius)
    pts[bnd] *= (radius / on_circle[bnd])[:, None]

    faces, normals = [], []
    for c in np.flatnonzero((blocks > 0) & np.isclose(params[:, 3], 1.0)):
        faces.append((c, 2))
        n = [pts[quads[c, lv]] / radius for lv in FACE_VERTICES[2]]
        normals.append(n)
    faces = np.array(faces, dtype=int).reshape(-1, 2)
    normals = np.array(normals, dtype=float).reshape(-1, 2, 2)
    degrees = assign_degrees(quads, faces, m, p, mode)
    return MappedMesh2D(pts, quads, degrees, faces, normals, np.arange(len(pts)),
                        m=m, p=p, mode=mode, radius=float(radius), level=level,
                        cell_block=blocks, cell_params=params)


def build_disk_mesh(radius: float = 1.0, refinements: int = 0, p: int = 0,
                    mode: str = "normal", m: int = 1) -> MappedMesh2D:
    if refinements < 0:
        raise ValueError("refinements must be >= 0")
    blocks = np.arange(5)
    params = np.tile([0.0, 1.0, 0.0, 1.0], (5, 1))
    mesh = _disk_from_params(radius, 0, blocks, params, m, p, mode)
    for _ in range(refinements):
        mesh = refine_uniform(mesh)
    return mesh


# --------------------------------------------------------------------------
# refinement


def refine_uniform(mesh):
    if isinstance(mesh, Mesh1D):
        return build_mesh_1d(mesh.L, 2 * mesh.N, mesh.m, mesh.p)
    if isinstance(mesh, TensorMesh2D):
        return build_tensor_mesh_2d(2 * mesh.Nx, 2 * mesh.Ny, mesh.p, mesh.mode,
                                    mesh.periodic_x, mesh.dirichlet_sides, mesh.L, mesh.m)
    if isinstance(mesh, MappedMesh2D):
        pr = mesh.cell_params
        xm = 0.5 * (pr[:, 0] + pr[:, 1])
        em = 0.5 * (pr[:, 2] + pr[:, 3])
        kids = [
            np.column_stack([pr[:, 0], xm, pr[:, 2], em]),
            np.column_stack([xm, pr[:, 1], pr[:, 2], em]),
            np.column_stack([xm, pr[:, 1], em, pr[:, 3]]),
            np.column_stack([pr[:, 0], xm, em, pr[:, 3]]),
        ]
        params = np.stack(kids, axis=1).reshape(-1, 4)
        blocks = np.repeat(mesh.cell_block, 4)
        return _disk_from_params(mesh.radius, mesh.level + 1, blocks, params,
                                 mesh.m, mesh.p, mesh.mode)
    raise TypeError(f"cannot refine {type(mesh).__name__}")


# --------------------------------------------------------------------------
# degrees of freedom


@dataclass(eq=False)
class DofSystem:
    total_dofs: int
    cell_dofs: list                 # per cell: global index of each local node
    dirichlet: np.ndarray           # sorted global indices with prescribed values
    constraints: dict               # constrained index -> [(master, weight), ...]
    node_points: np.ndarray         # physical support point of every DoF

    @property
    def constrained(self) -> np.ndarray:
        return np.array(sorted(self.constraints), dtype=int)

    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.total_dofs, dtype=bool)
        mask[self.dirichlet] = False
        mask[self.constrained] = False
        return np.flatnonzero(mask)

    def prolongation(self):
        """Sparse ``P`` with ``u = P u_free + g`` (``g`` carries Dirichlet data)."""
        from scipy.sparse import csr_matrix

        free = self.free_dofs()
        col = -np.ones(self.total_dofs, dtype=int)
        col[free] = np.arange(len(free))
        rows, cols, vals = list(free), list(range(len(free))), [1.0] * len(free)
        for i, masters in self.constraints.items():
            for j, w in masters:
                if col[j] >= 0:
                    rows.append(i)
                    cols.append(col[j])
                    vals.append(w)
        return csr_matrix((vals, (rows, cols)), shape=(self.total_dofs, len(free)))

    def apply_constraints(self, u: np.ndarray) -> np.ndarray:
        """Overwrite constrained entries with the weighted master values."""
        out = np.array(u, copy=True)
        for i, masters in self.constraints.items():
            out[i] = sum(w * out[j] for j, w in masters)
        return out


# entries die with their mesh, so large meshes are not pinned in memory
_DOF_CACHE: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def enumerate_dofs(mesh) -> DofSystem:
    hit = _DOF_CACHE.get(mesh)
    if hit is not None:
        return hit
    dofs = _enumerate_1d(mesh) if isinstance(mesh, Mesh1D) else _enumerate_2d(mesh)
    _DOF_CACHE[mesh] = dofs
    return dofs


def _enumerate_1d(mesh: Mesh1D) -> DofSystem:
    cell_dofs, points = [], [0.0]
    nxt = 1
    for i, deg in enumerate(mesh.degrees):
        left = nxt - 1
        inner = list(range(nxt, nxt + deg - 1))
        right = nxt + deg - 1
        cell_dofs.append(np.array([left, *inner, right]))
        a = i * mesh.dy
        points.extend(a + mesh.dy * np.arange(1, deg + 1) / deg)
        nxt = right + 1
    n = nxt
    return DofSystem(n, cell_dofs, np.array([0, n - 1]), {}, np.array(points))


def _ratio(k: int, n: int) -> tuple[int, int]:
    g = gcd(k, n)
    return k // g, n // g


def _face_local_nodes(face: int, dx: int, de: int):
    """Local (a, b) index pairs of the nodes on a face, in increasing local coordinate."""
    if face == 0:
        return [(a, 0) for a in range(dx + 1)]
    if face == 2:
        return [(a, de) for a in range(dx + 1)]
    if face == 1:
        return [(dx, b) for b in range(de + 1)]
    return [(0, b) for b in range(de + 1)]


def _map_points(corners: np.ndarray, ref: np.ndarray) -> np.ndarray:
    xi, eta = ref[..., 0:1], ref[..., 1:2]
    return ((1 - xi) * (1 - eta) * corners[0] + xi * (1 - eta) * corners[1]
            + xi * eta * corners[2] + (1 - xi) * eta * corners[3])


def _enumerate_2d(mesh: QuadMesh) -> DofSystem:
    """Topological numbering: vertices first, then edge nodes, then cell nodes.

    Vertex nodes are keyed by their alias id, edge nodes by
    ``(lo, hi, t)`` with ``t`` the reduced fraction measured from the lower
    aliased endpoint, and cell-interior nodes by cell. Only faces and cells
    of degree >= 2 need per-node work, so bilinear cells are numbered in
    bulk.
    """
    alias = np.asarray(mesh.vertex_alias)
    quads = np.asarray(mesh.quads)
    degs = np.asarray(mesh.degrees)
    canon, vdof = np.unique(alias, return_inverse=True)
    # first physical vertex carrying each alias gives the support point
    first = np.full(len(canon), len(alias))
    np.minimum.at(first, vdof, np.arange(len(alias)))
    n_vert = len(canon)

    edge_index: dict = {}
    edge_points: list = []
    interior_points: list = []  # cell-interior nodes, numbered after all edges

    nc = len(quads)
    cell_dofs: list = [None] * nc
    for dx, de in np.unique(degs, axis=0):
        dx, de = int(dx), int(de)
        cells = np.flatnonzero((degs[:, 0] == dx) & (degs[:, 1] == de))
        q = quads[cells]
        loc = np.empty((len(cells), de + 1, dx + 1), dtype=np.int64)
        loc[:, 0, 0] = vdof[q[:, 0]]
        loc[:, 0, dx] = vdof[q[:, 1]]
        loc[:, de, dx] = vdof[q[:, 2]]
        loc[:, de, 0] = vdof[q[:, 3]]
        for face, (la, lb) in enumerate(FACE_VERTICES):
            deg = dx if face in (0, 2) else de
            if deg < 2:
                continue
            inner = _face_local_nodes(face, dx, de)[1:-1]
            ref = np.array([[a / dx, b / de] for a, b in inner])
            for k_c, qc in enumerate(q):
                va, vb = int(alias[qc[la]]), int(alias[qc[lb]])
                lo, hi = min(va, vb), max(va, vb)
                phys = _map_points(mesh.vertices[qc], ref)
                for k, (a, b) in enumerate(inner, start=1):
                    t = _ratio(k, deg) if va == lo else _ratio(deg - k, deg)
                    key = (lo, hi, t)
                    i = edge_index.get(key)
                    if i is None:
                        i = edge_index[key] = n_vert + len(edge_points)
                        edge_points.append(phys[k - 1])
                    loc[k_c, b, a] = i
        if dx >= 2 and de >= 2:
            inner = [(a, b) for b in range(1, de) for a in range(1, dx)]
            ref = np.array([[a / dx, b / de] for a, b in inner])
            for k_c, qc in enumerate(q):
                phys = _map_points(mesh.vertices[qc], ref)
                for k, (a, b) in enumerate(inner):
                    # provisional negative id, shifted once edges are counted
                    loc[k_c, b, a] = -1 - len(interior_points)
                    interior_points.append(phys[k])
        flat = loc.reshape(len(cells), -1)
        for k_c, c in enumerate(cells):
            cell_dofs[c] = flat[k_c]

    n_edge = n_vert + len(edge_points)
    if interior_points:
        for c in range(nc):
            d = cell_dofs[c]
            neg = d < 0
            if neg.any():
                d[neg] = n_edge - 1 - d[neg]
    total = n_edge + len(interior_points)
    points = np.concatenate([mesh.vertices[first],
                             np.reshape(edge_points, (-1, 2)),
                             np.reshape(interior_points, (-1, 2))], axis=0)
    constraints = _edge_constraints(mesh, alias, canon, edge_index)

    dirichlet = set()
    for cell, face in mesh.boundary_faces:
        dx, de = (int(d) for d in degs[cell])
        for a, b in _face_local_nodes(face, dx, de):
            dirichlet.add(int(cell_dofs[cell][b * (dx + 1) + a]))
    return DofSystem(total, cell_dofs, np.array(sorted(dirichlet), dtype=int),
                     constraints, points)


def _edge_constraints(mesh: QuadMesh, alias, canon, edge_index) -> dict:
    """Tie the extra nodes of edges shared by cells of different edge degree."""
    quads, degs = np.asarray(mesh.quads), np.asarray(mesh.degrees)
    lo_hi, ds = [], []
    for face, (la, lb) in enumerate(FACE_VERTICES):
        va, vb = alias[quads[:, la]], alias[quads[:, lb]]
        lo_hi.append(np.column_stack([np.minimum(va, vb), np.maximum(va, vb)]))
        ds.append(degs[:, 0] if face in (0, 2) else degs[:, 1])
    rows = np.unique(np.column_stack([np.concatenate(lo_hi), np.concatenate(ds)]), axis=0)
    edges, counts = np.unique(rows[:, :2], axis=0, return_counts=True)
    constraints = {}
    for lo, hi in edges[counts > 1]:
        lo, hi = int(lo), int(hi)
        present = sorted(int(d) for d in rows[(rows[:, 0] == lo) & (rows[:, 1] == hi), 2])
        low = present[0]
        basis = make_basis(low)
        vlo, vhi = (int(np.searchsorted(canon, v)) for v in (lo, hi))
        masters = [vlo] + [edge_index[(lo, hi, _ratio(j, low))] for j in range(1, low)] + [vhi]
        low_ts = {_ratio(j, low) for j in range(low + 1)}
        for deg in present[1:]:
            for k in range(1, deg):
                t = _ratio(k, deg)
                if t in low_ts:
                    continue
                w = basis(np.array(k / deg))
                constraints[edge_index[(lo, hi, t)]] = [
                    (mi, float(wi)) for mi, wi in zip(masters, w) if abs(wi) > 1e-15
                ]
    return constraints


def isotropic_face_constraints(low_degree: int, high_degree: int) -> list:
    """Weights tying each non-vertex node of a high-degree face to the low side.

    Returns ``[(t, weights), ...]`` where ``weights[j]`` multiplies the low
    side's node ``j`` (node 0 and ``low_degree`` being the vertices).
    """
    if high_degree <= low_degree:
        raise ValueError("high side must have the larger degree")
    basis = make_basis(low_degree)
    out = []
    for k in range(1, high_degree):
        t = k / high_degree
        out.append((t, tuple(float(w) for w in basis(np.array(t)))))
    return out


# --------------------------------------------------------------------------
# debugging output


def dump_mesh(mesh, fh) -> None:
    """Write ``vertex x y`` and ``quad i0 i1 i2 i3 degx degy`` lines."""
    if isinstance(mesh, Mesh1D):
        for x in mesh.vertices:
            fh.write(f"vertex {float(x)!r} 0.0\n")
        for i, d in enumerate(mesh.degrees):
            fh.write(f"interval {i} {i + 1} {d}\n")
        return
    for x, y in mesh.vertices:
        fh.write(f"vertex {float(x)!r} {float(y)!r}\n")
    for q, (dx, de) in zip(mesh.quads, mesh.degrees):
        fh.write(f"quad {q[0]} {q[1]} {q[2]} {q[3]} {dx} {de}\n")
