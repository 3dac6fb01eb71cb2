"""Point clouds, normalization, and Chamfer / Hausdorff distances.

Both distances use unsquared Euclidean norms. Nearest-neighbour searches
come in two exact backends:

``"brute"``
    full difference table, ``argmin`` picks the lowest index on ties;
``"indexed"``
    a k-d tree (:class:`SpatialIndex`) whose candidates are re-scored with
    the brute-force formula, so values and argmin indices agree with
    ``"brute"`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from softprop.errors import ShapeError

FRAMES = ("world", "normalized")
BACKENDS = ("brute", "indexed")
NORMALIZED_EPS = 1e-6

_BRUTE_CHUNK = 1 << 21  # entries of the difference table evaluated at once


@dataclass(frozen=True)
class PointCloud:
    """An (N, 3) array of finite coordinates tagged with its frame."""

    points: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ShapeError(f"point cloud must be (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ShapeError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.frame == "normalized" and np.abs(pts).max() > 1.0 + NORMALIZED_EPS:
            raise ValueError("normalized cloud leaves [-1, 1]^3")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def _as_points(cloud) -> tuple:
    if isinstance(cloud, PointCloud):
        return cloud.points, cloud.frame
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ShapeError(f"point cloud must be (N, 3), got {pts.shape}")
    if pts.shape[0] < 1:
        raise ShapeError("point cloud is empty")
    return pts, None


def _pair(a, b) -> tuple:
    pa, fa = _as_points(a)
    pb, fb = _as_points(b)
    if fa is not None and fb is not None and fa != fb:
        raise ValueError(f"frame mismatch: {fa} vs {fb}")
    return pa, pb


# nearest neighbours --------------------------------------------------------


def _norm3(diff: np.ndarray) -> np.ndarray:
    # fixed evaluation order so both backends round identically
    x, y, z = diff[..., 0], diff[..., 1], diff[..., 2]
    return np.sqrt(x * x + y * y + z * z)


def _brute_nn(query: np.ndarray, ref: np.ndarray) -> tuple:
    n = query.shape[0]
    dist = np.empty(n)
    idx = np.empty(n, dtype=np.intp)
    step = max(1, _BRUTE_CHUNK // max(1, ref.shape[0]))
    for s in range(0, n, step):
        diff = query[s : s + step, None, :] - ref[None, :, :]
        d = _norm3(diff)
        j = d.argmin(axis=1)
        idx[s : s + step] = j
        dist[s : s + step] = d[np.arange(j.size), j]
    return dist, idx


class SpatialIndex:
    """Exact nearest-neighbour index over a fixed cloud.

    Ties (equal distance under the brute-force formula) resolve to the
    lowest point index.
    """

    def __init__(self, cloud):
        self.points, self.frame = _as_points(cloud)
        self._tree = cKDTree(self.points)

    def query(self, query) -> tuple:
        """Return ``(distances, indices)`` of each query point's nearest neighbour."""
        q, _ = _as_points(query)
        d0, _ = self._tree.query(q, k=1)
        # every point whose true distance could equal the minimum
        radii = d0 * (1.0 + 1e-9) + 1e-12
        cands = self._tree.query_ball_point(q, radii)
        dist = np.empty(q.shape[0])
        idx = np.empty(q.shape[0], dtype=np.intp)
        for i, c in enumerate(cands):
            c = np.sort(np.asarray(c, dtype=np.intp))
            diff = q[i] - self.points[c]
            d = _norm3(diff)
            k = d.argmin()
            dist[i], idx[i] = d[k], c[k]
        return dist, idx


def nearest(query, ref, backend: str = "brute") -> tuple:
    """Distances and indices into ``ref`` of each ``query`` point's nearest neighbour."""
    q, r = _pair(query, ref)
    if backend == "brute":
        return _brute_nn(q, r)
    if backend == "indexed":
        return SpatialIndex(r).query(q)
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def batch_pairs(a: np.ndarray, b: np.ndarray) -> tuple:
    """Nearest-neighbour indices both ways for batches ``a`` (B, M, 3) and ``b`` (B, N, 3).

    Uses a single-precision squared-distance matrix per sample. That is
    quick for the small clouds seen in training, but near-ties may resolve
    to either point, so distances should be recomputed from the pairs.
    Returns ``(j_ab (B, M), j_ba (B, N))``.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    return _batch_argmin(a, b), _batch_argmin(b, a)


def _batch_argmin(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # one matmul of [a, 1] against [-2b, |b|^2]; |a|^2 is constant along the reduced axis
    lhs = np.concatenate([a, np.ones(a.shape[:2] + (1,), dtype=a.dtype)], axis=2)
    rhs = np.concatenate([-2.0 * b, np.einsum("bni,bni->bn", b, b)[:, :, None]], axis=2)
    return np.matmul(lhs, rhs.transpose(0, 2, 1)).argmin(axis=2)


# distances -----------------------------------------------------------------


def directed_distances(a, b, backend: str = "brute") -> np.ndarray:
    """For every point of ``a``, the distance to its nearest point in ``b``."""
    return nearest(a, b, backend)[0]


def chamfer(a, b, backend: str = "brute") -> float:
    """Symmetric mean nearest-neighbour distance, each direction weighted 1/2."""
    pa, pb = _pair(a, b)
    da = nearest(pa, pb, backend)[0]
    db = nearest(pb, pa, backend)[0]
    return 0.5 * da.mean() + 0.5 * db.mean()


def chamfer_grad(pred, gt, backend: str = "brute") -> np.ndarray:
    """Gradient of :func:`chamfer` w.r.t. the predicted points, pairings held fixed.

    Returns an array shaped like ``pred``. Pairs at zero distance contribute
    nothing.
    """
    p, g = _pair(pred, gt)
    d_pg, j_pg = nearest(p, g, backend)
    d_gp, j_gp = nearest(g, p, backend)
    return _chamfer_grad_from_pairs(p, g, j_pg, j_gp)


def _chamfer_grad_from_pairs(p: np.ndarray, g: np.ndarray, j_pg: np.ndarray, j_gp: np.ndarray) -> np.ndarray:
    diff = p - g[j_pg]
    norm = np.sqrt((diff * diff).sum(1))
    unit = np.divide(diff, norm[:, None], out=np.zeros_like(diff), where=norm[:, None] > 0)
    grad = unit / (2.0 * p.shape[0])
    diff2 = p[j_gp] - g
    norm2 = np.sqrt((diff2 * diff2).sum(1))
    unit2 = np.divide(diff2, norm2[:, None], out=np.zeros_like(diff2), where=norm2[:, None] > 0)
    np.add.at(grad, j_gp, unit2 / (2.0 * g.shape[0]))
    return grad


def hausdorff(a, b, backend: str = "brute") -> float:
    """Symmetric Hausdorff distance: the larger of the two directed max-min terms."""
    pa, pb = _pair(a, b)
    return float(max(nearest(pa, pb, backend)[0].max(), nearest(pb, pa, backend)[0].max()))


# normalization -------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationTransform:
    """Per-axis affine map ``normalized = (world - offset) / scale``."""

    scale: tuple
    offset: tuple

    def __post_init__(self):
        s = np.asarray(self.scale, dtype=np.float64)
        o = np.asarray(self.offset, dtype=np.float64)
        if s.shape != (3,) or o.shape != (3,):
            raise ShapeError("scale and offset must have 3 entries")
        if not np.all(s > 0):
            raise ValueError(f"scales must be positive, got {s.tolist()}")
        object.__setattr__(self, "scale", tuple(float(v) for v in s))
        object.__setattr__(self, "offset", tuple(float(v) for v in o))

    @classmethod
    def fit(cls, clouds) -> "NormalizationTransform":
        """Fit one transform mapping every cloud in ``clouds`` into [-1, 1]^3."""
        pts = [_as_points(c)[0] for c in clouds]
        if not pts:
            raise ValueError("cannot fit a transform to an empty dataset")
        lo = np.min([p.min(axis=0) for p in pts], axis=0)
        hi = np.max([p.max(axis=0) for p in pts], axis=0)
        for axis, name in enumerate("xyz"):
            if hi[axis] <= lo[axis]:
                raise ValueError(f"degenerate {name} axis: zero extent, cannot normalize")
        return cls(scale=tuple((hi - lo) / 2.0), offset=tuple((hi + lo) / 2.0))

    def normalize(self, cloud):
        pts, _ = _as_points(cloud)
        out = (pts - np.asarray(self.offset)) / np.asarray(self.scale)
        return PointCloud(out, frame="normalized") if isinstance(cloud, PointCloud) else out

    def denormalize(self, cloud):
        pts, _ = _as_points(cloud)
        out = pts * np.asarray(self.scale) + np.asarray(self.offset)
        return PointCloud(out, frame="world") if isinstance(cloud, PointCloud) else out

    def to_dict(self) -> dict:
        return {"scale": list(self.scale), "offset": list(self.offset)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationTransform":
        return cls(scale=tuple(d["scale"]), offset=tuple(d["offset"]))


def fit_transform(clouds) -> NormalizationTransform:
    return NormalizationTransform.fit(clouds)
