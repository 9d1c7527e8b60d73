# %% [markdown]
# # Periodic strip: normal versus isotropic enrichment
#
# The unit square is periodic in `x` with Dirichlet data at `y = 0` and `y = 1`.
# Bilinear interior cells are enriched either across the boundary only
# (normal mode) or in both directions (isotropic mode, which needs hanging
# constraints on faces with mismatched degree).

# %%
import numpy as np

from bflux import build_tensor_mesh_2d, enumerate_dofs
from bflux.studies import study_2d_periodic
from bflux.verification import fit_rate_series

# %%
for mode in ("normal", "isotropic"):
    mesh = build_tensor_mesh_2d(8, 8, 2, mode=mode, periodic_x=True)
    dofs = enumerate_dofs(mesh)
    print(f"{mode:9s} degrees of row 0: {mesh.degrees[:3].tolist()} "
          f"dofs {dofs.total_dofs}, constrained {len(dofs.constraints)}")

# %% [markdown]
# H1-B rates for p = 2 up to 128 x 128. The normal mode approaches rate 2,
# while the isotropic mode stays near rate 1.

# %%
for mode in ("normal", "isotropic"):
    res = study_2d_periodic(2, refinements=4, mode=mode)
    steps = fit_rate_series(res.table.errors["h1b"]).steps
    print(f"{mode:9s} per-step rates {np.round(steps, 2)}")
