# %% [markdown]
# # Spectral oracles
#
# On a periodic grid the bilinear mass and operator matrices are circulant in
# `x`, so Fourier interpolants diagonalise them and the 2D problem splits into
# independent complex 1D problems, one per mode.

# %%
import numpy as np

from bflux import build_tensor_mesh_2d, make_manufactured
from bflux.spectral import (check_appendix_inequalities, decoupling_discrepancy,
                            eigenvalue_ratio, greens_build, greens_eval, greens_jump,
                            ratio_bounds, sharp_ratio_upper)

# %% [markdown]
# Real part of `lambda_A / lambda_M` over all modes for `N = 16`, `c = 2`.
# The upper bound `(6 + 3 c dx^2) / dx^2` fails once `cos(2 pi k dx) < -1/2`;
# the sharp value near the Nyquist mode is `c + 12 / dx^2`.

# %%
N, c = 16, 2.0
dx = 1 / N
ks = np.arange(-N // 2, N // 2 + 1)
re = np.real(eigenvalue_ratio(ks, dx, 1.0, c))
lo, hi = ratio_bounds(dx, c)
print("modes above the stated bound:", ks[re > hi].tolist())
print(f"max Re = {re.max():.3f}, sharp bound = {sharp_ratio_upper(dx, c):.3f}")

# %% [markdown]
# Decoupled solve versus the direct 2D solve.

# %%
exact = make_manufactured("periodic_2d")
for p in (0, 2):
    mesh = build_tensor_mesh_2d(8, 8, p, periodic_x=True)
    d = decoupling_discrepancy(mesh, exact.coeff, exact.forcing, exact.u)
    print(f"p={p}: relative discrepancy {d:.2e}")

# %% [markdown]
# Green's function for a unit derivative jump at `L - dy`.

# %%
g = greens_build(1.0, 2.0, 1.0, 1 / 16)
y = np.linspace(0, 1, 9)
print(np.round(greens_eval(g, y).real, 5))
print("jump", greens_jump(g))

# %%
rep = check_appendix_inequalities(10_000, seed=42)
for name, v in rep.violations.items():
    print(f"{name:15s} violations {v}, worst ratio {rep.worst[name]:.4f}")
