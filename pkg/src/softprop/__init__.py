"""Vision-based shape proprioception for soft bodies.

Image encoder to latent code, folding-style point-cloud decoders, Chamfer
training, Hausdorff evaluation and a PCA + nearest-neighbour baseline, all
on a small numpy autodiff engine and a synthetic deformable-body generator.
"""

__version__ = "0.1.0"
