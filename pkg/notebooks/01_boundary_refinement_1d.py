# %% [markdown]
# # Boundary p-refinement in 1D
#
# Solve `-u'' + b u' + c u = f` on `[0, 1]` with `u = sin(10 y)`, `b = 1`, `c = 2`.
# Interior cells have degree `m`; the two boundary cells have degree `m + p`.
# We track the boundary derivative errors H1-B and H2-B under uniform refinement.

# %%
import numpy as np

from bflux import build_mesh_1d, make_manufactured, solve
from bflux.studies import study_1d
from bflux.verification import fit_rate_series

exact = make_manufactured("sin10_1d")

# %% [markdown]
# A single solve: degrees and boundary errors on a 16-cell mesh.

# %%
mesh = build_mesh_1d(1.0, 16, m=1, p=2)
field = solve(mesh, exact.coeff, exact.forcing, exact.u)
print("degrees:", mesh.degrees)
print("u'(0) exact %.6f, discrete %.6f" % (exact.gradient(np.array([0.0]))[0],
                                          field.evaluate(0.0, 1).real))

# %% [markdown]
# Rates of the H1-B seminorm against `min(2m, m + p)`.

# %%
print(" m  p  formula  measured")
for m in (1, 2):
    for p in range(4):
        res = study_1d(m, p, refinements=6)
        r = fit_rate_series(res.table.errors["h1b"]).summary
        print(f"{m:2d} {p:2d} {min(2 * m, m + p):8d} {r:9.2f}")

# %% [markdown]
# The error at the vertex one cell in from the boundary converges faster than
# a generic interior vertex.

# %%
res = study_1d(1, 1, refinements=6)
for name in ("last_interior", "mid"):
    steps = fit_rate_series(res.vertex_table.errors[name]).steps
    print(name, np.round(steps, 2))
