# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Distances between point clouds
#
# Training compares clouds with the Chamfer distance (mean nearest-neighbour
# distance, both ways) and evaluation reports the Hausdorff distance (the
# worst nearest-neighbour distance, both ways). Both come with a brute-force
# and a k-d tree backend.

# %%
import numpy as np

from softprop import geometry
from softprop.numcore import Tensor, grad_check, ops

rng = np.random.default_rng(0)
a = rng.standard_normal((300, 3))
b = a + 0.05 * rng.standard_normal((300, 3))

for backend in ("brute", "indexed"):
    print(backend, geometry.chamfer(a, b, backend), geometry.hausdorff(a, b, backend))

# %% [markdown]
# A single stray point barely moves Chamfer but sets Hausdorff on its own.

# %%
b_out = np.vstack([b, [[4.0, 0.0, 0.0]]])
print("chamfer", geometry.chamfer(a, b), "->", geometry.chamfer(a, b_out))
print("hausdorff", geometry.hausdorff(a, b), "->", geometry.hausdorff(a, b_out))

# %% [markdown]
# ## Gradients
#
# The Chamfer gradient treats the nearest-neighbour pairing as fixed. With a
# small step the pairing does not change, so central differences agree.

# %%
p = rng.standard_normal((40, 3))
q = rng.standard_normal((55, 3))
g = geometry.chamfer_grad(p, q)
h = 1e-6
fd = np.zeros_like(p)
for i in range(p.shape[0]):
    for j in range(3):
        e = np.zeros_like(p)
        e[i, j] = h
        fd[i, j] = (geometry.chamfer(p + e, q) - geometry.chamfer(p - e, q)) / (2 * h)
print("max |analytic - fd|:", np.abs(g - fd).max())

# %% [markdown]
# The autodiff engine is checked the same way, here on a small two-layer
# network in double precision.

# %%
x = Tensor(rng.standard_normal((5, 4)))
w1 = Tensor(rng.standard_normal((4, 6)))
w2 = Tensor(rng.standard_normal((6, 1)))
print("relative error:", grad_check(lambda: ops.sum(ops.matmul(ops.relu(ops.matmul(x, w1)), w2)), [w1, w2]))
