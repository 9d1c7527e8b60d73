# %% [markdown]
# # Nonperiodic square and curved disk
#
# On the square every side is Dirichlet and corner cells carry `(1+p, 1+p)`.
# On the disk the outer cell layer is enriched in the radial direction.

# %%
import numpy as np

from bflux import build_disk_mesh, build_tensor_mesh_2d
from bflux.assembly import bilinear_jacobian
from bflux.polybasis import gauss_rule
from bflux.studies import study_2d_disk, study_2d_square
from bflux.verification import fit_rate_series

# %%
sq = build_tensor_mesh_2d(4, 4, 1)
print(np.array([tuple(d) for d in sq.degrees]).reshape(4, 4, 2)[::-1])

# %% [markdown]
# Disk mesh quality: the smallest Jacobian determinant, scaled by `4**level`,
# stays bounded away from zero.

# %%
rule = gauss_rule(3)
xi, eta = (a.ravel() for a in np.meshgrid(rule.points, rule.points))
for level in range(5):
    disk = build_disk_mesh(1.0, level)
    det = np.linalg.det(bilinear_jacobian(disk.cell_corners(), xi, eta))
    r = np.hypot(*disk.vertices[disk.boundary_vertex_ids()].T)
    print(f"level {level}: {disk.ncells:5d} cells, min detJ * 4^l = {det.min() * 4**level:.4f}, "
          f"max | |x| - 1 | on boundary = {np.abs(r - 1).max():.1e}")

# %% [markdown]
# Refinement studies (moderate sizes; the acceptance suite runs further).

# %%
res = study_2d_square(2, refinements=5)
print("square p=2 H1-B steps", np.round(fit_rate_series(res.table.errors["h1b"]).steps, 2))
res = study_2d_disk(1, refinements=3, start_level=3)
print("disk p=1 H1-B steps  ", np.round(fit_rate_series(res.table.errors["h1b"]).steps, 2))
