"""Area-averaging image resampling."""

from __future__ import annotations

import numpy as np


def area_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix; row i averages the source pixels overlapping output pixel i."""
    edges_out = np.arange(dst + 1) * (src / dst)
    lo = np.maximum(edges_out[:-1, None], np.arange(src)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(1, src + 1)[None, :])
    w = np.clip(hi - lo, 0.0, None)
    return w / w.sum(axis=1, keepdims=True)


def resize_area(images: np.ndarray, size: int) -> np.ndarray:
    """Box-filter resample ``(..., H, W, C)`` images to ``size x size``."""
    images = np.asarray(images)
    h, w = images.shape[-3], images.shape[-2]
    if h == size and w == size:
        return images.astype(np.float64)
    ah, aw = area_weights(h, size), area_weights(w, size)
    out = np.einsum("ih,...hwc->...iwc", ah, images.astype(np.float64))
    return np.einsum("jw,...iwc->...ijc", aw, out)
