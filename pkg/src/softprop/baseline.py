"""PCA + nearest-neighbour shape lookup baseline.

Images are box-filtered down to 14x14, flattened, projected onto the top-K
principal axes of the training images, and the ground-truth cloud of the
closest training latent (lowest index on ties) is returned as the
prediction. The lookup is restricted to training samples of the queried view,
since only those carry a cloud for that view.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from softprop.errors import ShapeError
from softprop.imaging import resize_area
from softprop.numcore.ops import rowwise_matmul

DOWNSAMPLE = 14


def image_features(images, size: int = DOWNSAMPLE) -> np.ndarray:
    """uint8 or float images (n, H, W, C) -> (n, size*size*C) float64 vectors in [0, 1]."""
    imgs = np.asarray(images)
    if imgs.ndim == 3:
        imgs = imgs[None]
    scale = 255.0 if imgs.dtype == np.uint8 else 1.0
    small = resize_area(imgs.astype(np.float64) / scale, size)
    return small.reshape(small.shape[0], -1)


@dataclass
class PcaModel:
    mean: np.ndarray
    axes: np.ndarray  # (K, d), orthonormal rows

    @property
    def k(self) -> int:
        return self.axes.shape[0]

    @classmethod
    def fit(cls, x: np.ndarray, k: int) -> "PcaModel":
        x = np.asarray(x, dtype=np.float64)
        n, d = x.shape
        if n < 1:
            raise ValueError("PCA needs at least one sample")
        if not 1 <= k <= min(n, d):
            raise ValueError(f"K={k} exceeds the feasible rank min(n={n}, d={d})")
        mean = x.mean(axis=0)
        _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
        return cls(mean=mean, axes=vt[:k].copy())

    def transform(self, x) -> np.ndarray:
        return rowwise_matmul(np.atleast_2d(x) - self.mean, self.axes.T)

    def inverse_transform(self, z) -> np.ndarray:
        return np.atleast_2d(z) @ self.axes + self.mean

    def project(self, x) -> np.ndarray:
        """Orthogonal projection onto the principal affine subspace."""
        return self.inverse_transform(self.transform(x))


@dataclass
class KnnStore:
    latents: np.ndarray
    views: np.ndarray
    clouds: np.ndarray  # world-frame clouds aligned with ``latents``
    sample_ids: np.ndarray

    def nearest(self, z: np.ndarray, view: int | None = None) -> int:
        """Row of the closest stored latent (restricted to ``view``); lowest row wins ties."""
        rows = np.arange(len(self.latents)) if view is None else np.nonzero(self.views == view)[0]
        if rows.size == 0:
            raise ValueError(f"no stored samples for view {view}")
        diff = self.latents[rows] - np.asarray(z).reshape(1, -1)
        d2 = np.einsum("ij,ij->i", diff, diff)
        return int(rows[np.argmin(d2)])

    @property
    def stored_floats(self) -> int:
        return int(self.latents.size + self.clouds.size)


class KnnBaseline:
    def __init__(self, pca: PcaModel, store: KnnStore, image_shape: tuple):
        self.pca = pca
        self.store = store
        self.image_shape = tuple(image_shape)

    def latent(self, image) -> np.ndarray:
        img = np.asarray(image)
        if img.shape[-3:] != self.image_shape:
            raise ShapeError(f"baseline expects images of shape {self.image_shape}, got {img.shape}")
        return self.pca.transform(image_features(img))[0]

    def predict(self, image, view: int | None = None) -> np.ndarray:
        """Stored cloud of the nearest training image (a reference, not a copy)."""
        return self.store.clouds[self.store.nearest(self.latent(image), view)]

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, mean=self.pca.mean, axes=self.pca.axes, latents=self.store.latents, views=self.store.views,
                 clouds=self.store.clouds, sample_ids=self.store.sample_ids, image_shape=np.asarray(self.image_shape))
        return path

    @classmethod
    def load(cls, path) -> "KnnBaseline":
        with np.load(path) as z:
            pca = PcaModel(z["mean"], z["axes"])
            store = KnnStore(z["latents"], z["views"], z["clouds"], z["sample_ids"])
            return cls(pca, store, tuple(int(v) for v in z["image_shape"]))


def build_baseline(dataset, k: int = 512, indices=None) -> KnnBaseline:
    """Fit PCA on the training images and store every training latent with its cloud."""
    idx = np.asarray(dataset.train_idx if indices is None else indices)
    if idx.size == 0:
        raise ValueError("training set is empty")
    feats = image_features(dataset.images[idx])
    pca = PcaModel.fit(feats, k)
    store = KnnStore(latents=pca.transform(feats), views=np.asarray(dataset.views[idx]),
                     clouds=np.asarray(dataset.clouds[idx]), sample_ids=idx)
    return KnnBaseline(pca, store, dataset.images.shape[1:])
