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
# # The synthetic soft body
#
# A unit sphere painted with coloured dots is pushed around by up to three
# Gaussian bumps and a global anisotropic scale. Two cameras inside the body
# look at opposite hemispheres; each sample pairs both camera images with the
# ground-truth cloud of a single hemisphere, alternating between views.

# %%
import numpy as np

from softprop import synthdata as sd

scene = sd.SceneConfig(points_per_view=512)
rng = np.random.default_rng(3)
params = sd.DeformationParams.random(rng)
print(params.to_dict())

# %% [markdown]
# The deformed radius along the prototype directions:

# %%
from softprop.prototype import fibonacci_sphere

u = fibonacci_sphere(2000)
r = np.linalg.norm(sd.deform(u, params), axis=1)
print(f"radius min {r.min():.3f} max {r.max():.3f}")

# %% [markdown]
# Rendering: each camera sees the dots on the far hemisphere. Identical
# parameters always give identical images.

# %%
img = sd.render_internal(params, scene)
print(img.shape, img.dtype, "lit pixels per camera:", [int((img[..., 3 * v:3 * v + 3].sum(-1) > 0).sum()) for v in range(2)])
assert np.array_equal(img, sd.render_internal(params, scene))

# %%
try:
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(6, 3))
    for v, ax in enumerate(axes):
        ax.imshow(img[..., 3 * v:3 * v + 3])
        ax.set_title(f"camera {v + 1}")
        ax.axis("off")
    plt.show()
except ImportError:
    pass

# %% [markdown]
# A small dataset: views alternate, sessions cycle through four sub-seeds and
# the split is a seeded 5:1. Clouds are stored in metres; the dataset-wide
# normalization maps them into [-1, 1]^3 for training.

# %%
ds = sd.sample_dataset(24, scene, seed=0)
print("views", np.bincount(ds.views)[1:], "train/test", len(ds.train_idx), len(ds.test_idx))
nc = ds.normalized_clouds()
print("normalized range", nc.min(), nc.max())
print("view 1 z >= 0:", bool((ds.clouds[ds.views == 1][..., 2] >= 0).all()))
