"""Synthetic soft body: seeded deformations, internal-camera images, partial clouds.

The body is a unit sphere (or a flat square sheet) carrying a fixed pattern
of coloured dots. A deformation is a handful of Gaussian radial bumps plus a
global anisotropic scale. Each sample pairs the images from the internal
cameras with a ground-truth cloud from one view, in metres.

Cameras sit on the body axis, ``camera_offset`` body radii behind the centre
and looking through it along +z (view 1) or -z (view 2). A camera exactly at
the centre would see a purely radial bump move no dot at all.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from softprop import ply
from softprop.errors import DatasetError
from softprop.geometry import NormalizationTransform
from softprop.prototype import fibonacci_sphere

DATASET_VERSION = 1
AMPLITUDE_RANGE = (-0.3, 0.3)
WIDTH_RANGE = (0.2, 0.6)
SCALE_RANGE = (0.9, 1.1)
MAX_BUMPS = 3
N_SESSIONS = 4
SPLIT_RATIO = (5, 1)


@dataclass(frozen=True)
class DeformationParams:
    centers: np.ndarray  # (k, 3): unit directions (sphere) or in-plane points with z = 0 (sheet)
    amplitudes: np.ndarray
    widths: np.ndarray
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        a = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
        w = np.asarray(self.widths, dtype=np.float64).reshape(-1)
        s = np.asarray(self.scale, dtype=np.float64).reshape(3)
        if not (len(c) == len(a) == len(w)) or len(c) > MAX_BUMPS:
            raise ValueError(f"need matching bump lists of length <= {MAX_BUMPS}")
        if np.any(np.abs(a) > AMPLITUDE_RANGE[1]) or np.any((w < WIDTH_RANGE[0]) | (w > WIDTH_RANGE[1])):
            raise ValueError("bump amplitude or width out of range")
        if np.any((s < SCALE_RANGE[0]) | (s > SCALE_RANGE[1])):
            raise ValueError("global scale out of range")
        for name, v in (("centers", c), ("amplitudes", a), ("widths", w), ("scale", s)):
            object.__setattr__(self, name, v)

    @classmethod
    def identity(cls) -> "DeformationParams":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.ones(3))

    @classmethod
    def random(cls, rng: np.random.Generator, body: str = "sphere") -> "DeformationParams":
        k = int(rng.integers(1, MAX_BUMPS + 1))
        if body == "sphere":
            c = rng.standard_normal((k, 3))
            c /= np.linalg.norm(c, axis=1, keepdims=True)
        else:
            c = np.concatenate([rng.uniform(-1, 1, (k, 2)), np.zeros((k, 1))], axis=1)
        return cls(c, rng.uniform(*AMPLITUDE_RANGE, k), rng.uniform(*WIDTH_RANGE, k), rng.uniform(*SCALE_RANGE, 3))

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}


def bump_field(u: np.ndarray, params: DeformationParams) -> np.ndarray:
    """Sum of Gaussian bumps evaluated at prototype points ``u`` (M, 3)."""
    total = np.zeros(u.shape[0])
    for c, a, w in zip(params.centers, params.amplitudes, params.widths):
        d2 = ((u - c) ** 2).sum(axis=1)
        total += a * np.exp(-d2 / (2.0 * w * w))
    return total


def deform(u, params: DeformationParams, body: str = "sphere") -> np.ndarray:
    """Map prototype points (unit sphere directions, or sheet points) to the deformed body."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if body == "sphere":
        out = u * (1.0 + bump_field(u, params))[:, None]
    elif body == "sheet":
        out = np.stack([u[:, 0], u[:, 1], bump_field(u, params)], axis=1)
    else:
        raise ValueError(f"unknown body {body!r}")
    return out * params.scale


# scene and rendering ---------------------------------------------------------


@dataclass(frozen=True)
class SceneConfig:
    body: str = "sphere"
    views: int = 2
    image_size: int = 32
    fov_deg: float = 90.0
    dot_count: int = 300
    dot_seed: int = 0
    splat_radius: int = 2
    camera_offset: float = 0.8
    points_per_view: int = 2048
    diameter_mm: float = 250.0

    def __post_init__(self):
        if self.body not in ("sphere", "sheet"):
            raise ValueError(f"unknown body {self.body!r}")
        if self.views not in (1, 2):
            raise ValueError("views must be 1 or 2")
        if self.body == "sheet" and self.views != 1:
            raise ValueError("the sheet body has a single view")
        if self.image_size < 4 or self.points_per_view < 1 or self.dot_count < 1:
            raise ValueError("image_size, points_per_view and dot_count must be positive")

    @property
    def radius_m(self) -> float:
        """World-units size of one body unit (sphere radius / sheet half-width), in metres."""
        return self.diameter_mm / 2000.0

    @property
    def channels(self) -> int:
        return 3 * self.views

    def to_dict(self) -> dict:
        return asdict(self)


def dot_pattern(scene: SceneConfig) -> tuple:
    """Fixed dot positions on the prototype surface and their 8-bit colours."""
    rng = np.random.default_rng([scene.dot_seed, 1729])
    if scene.body == "sphere":
        pos = rng.standard_normal((scene.dot_count, 3))
        pos /= np.linalg.norm(pos, axis=1, keepdims=True)
    else:
        pos = np.concatenate([rng.uniform(-1, 1, (scene.dot_count, 2)), np.zeros((scene.dot_count, 1))], axis=1)
    colors = rng.integers(40, 256, size=(scene.dot_count, 3), dtype=np.uint8)
    return pos, colors


def camera_frames(scene: SceneConfig) -> list:
    """Per-camera ``(position, rotation)``; rotation rows are the camera x, y, z axes in body frame."""
    if scene.body == "sheet":
        return [(np.array([0.0, 0.0, -1.0]), np.eye(3))]
    up = np.eye(3)
    down = np.diag([1.0, -1.0, -1.0])
    frames = [(np.array([0.0, 0.0, -scene.camera_offset]), up)]
    if scene.views == 2:
        frames.append((np.array([0.0, 0.0, scene.camera_offset]), down))
    return frames


def focal_length(scene: SceneConfig) -> float:
    return (scene.image_size / 2.0) / np.tan(np.radians(scene.fov_deg) / 2.0)


def project(points: np.ndarray, position: np.ndarray, rotation: np.ndarray, scene: SceneConfig) -> tuple:
    """Pinhole projection; returns continuous pixel coords ``(u, v)`` and depth."""
    cam = (points - position) @ rotation.T
    depth = cam[:, 2]
    f = focal_length(scene)
    c = scene.image_size / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = c + f * cam[:, 0] / depth
        v = c + f * cam[:, 1] / depth
    return u, v, depth


def _splat_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    keep = dx * dx + dy * dy <= radius * radius
    return np.stack([dy[keep], dx[keep]], axis=1)


def render_camera(points: np.ndarray, colors: np.ndarray, position, rotation, scene: SceneConfig) -> np.ndarray:
    """Splat coloured dots onto a black (H, W, 3) uint8 image, nearest depth winning."""
    size = scene.image_size
    img = np.zeros((size, size, 3), dtype=np.uint8)
    u, v, depth = project(points, position, rotation, scene)
    ok = (depth > 1e-3) & np.isfinite(u) & np.isfinite(v)
    if not ok.any():
        return img
    dots = np.nonzero(ok)[0]
    col = np.floor(u[ok]).astype(np.int64)
    row = np.floor(v[ok]).astype(np.int64)
    off = _splat_offsets(scene.splat_radius)
    rr = (row[:, None] + off[None, :, 0]).reshape(-1)
    cc = (col[:, None] + off[None, :, 1]).reshape(-1)
    dd = np.repeat(depth[ok], len(off))
    di = np.repeat(dots, len(off))
    inside = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size)
    rr, cc, dd, di = rr[inside], cc[inside], dd[inside], di[inside]
    pix = rr * size + cc
    order = np.lexsort((di, dd, pix))
    first = np.unique(pix[order], return_index=True)[1]
    win = order[first]
    img.reshape(-1, 3)[pix[win]] = colors[di[win]]
    return img


def render_internal(params: DeformationParams, scene: SceneConfig) -> np.ndarray:
    """Channel-stacked internal camera images, (H, W, 3 * views) uint8."""
    pos, colors = dot_pattern(scene)
    pts = deform(pos, params, scene.body)
    imgs = [render_camera(pts, colors, p, r, scene) for p, r in camera_frames(scene)]
    return np.concatenate(imgs, axis=2)


def view_prototype(scene: SceneConfig, view: int) -> np.ndarray:
    """Prototype points whose deformed images form the ground-truth cloud of ``view`` (1-based)."""
    n = scene.points_per_view
    if scene.body == "sheet":
        i = np.arange(n)
        golden = (np.sqrt(5.0) - 1.0) / 2.0
        x = 2.0 * (i + 0.5) / n - 1.0
        y = 2.0 * np.mod(i * golden, 1.0) - 1.0
        return np.stack([x, y, np.zeros(n)], axis=1)
    if scene.views == 1:
        return fibonacci_sphere(n)
    return fibonacci_sphere(n, (0.0, 1.0) if view == 1 else (-1.0, 0.0))


def ground_truth_cloud(params: DeformationParams, scene: SceneConfig, view: int) -> np.ndarray:
    """(N, 3) float32 ground-truth points in metres."""
    return (deform(view_prototype(scene, view), params, scene.body) * scene.radius_m).astype(np.float32)


# datasets ----------------------------------------------------------------------


@dataclass
class Dataset:
    """In-memory dataset. Images are uint8 (n, H, W, 3 * views); views are 1-based."""

    scene: SceneConfig
    seed: int
    images: np.ndarray
    views: np.ndarray
    clouds: np.ndarray
    sessions: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    transform: NormalizationTransform
    params: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.views)

    def float_images(self, idx=None) -> np.ndarray:
        imgs = self.images if idx is None else self.images[idx]
        return imgs.astype(np.float32) / np.float32(255.0)

    def normalized_clouds(self, idx=None) -> np.ndarray:
        clouds = self.clouds if idx is None else self.clouds[idx]
        out = (clouds.astype(np.float64) - np.asarray(self.transform.offset)) / np.asarray(self.transform.scale)
        return out.astype(np.float32)


def split_indices(n: int, seed: int) -> tuple:
    """Seeded random 5:1 train/test split, each part sorted."""
    perm = np.random.default_rng([seed, 7919]).permutation(n)
    n_train = n * SPLIT_RATIO[0] // sum(SPLIT_RATIO)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def sample_dataset(n: int, scene: SceneConfig = SceneConfig(), seed: int = 0) -> Dataset:
    """Generate ``n`` samples; sample ``i`` belongs to session ``i % 4`` and view ``i % views + 1``."""
    if n < scene.views:
        raise DatasetError(f"need at least {scene.views} samples for {scene.views} views, got {n}")
    images, views, clouds, sessions, params = [], [], [], [], []
    for i in range(n):
        session = i % N_SESSIONS
        rng = np.random.default_rng([seed, session, i])
        p = DeformationParams.random(rng, scene.body)
        view = i % scene.views + 1
        images.append(render_internal(p, scene))
        clouds.append(ground_truth_cloud(p, scene, view))
        views.append(view)
        sessions.append(session)
        params.append(p)
    clouds = np.stack(clouds)
    train_idx, test_idx = split_indices(n, seed)
    return Dataset(scene=scene, seed=seed, images=np.stack(images), views=np.asarray(views, dtype=np.int64),
                   clouds=clouds, sessions=np.asarray(sessions, dtype=np.int64), train_idx=train_idx,
                   test_idx=test_idx, transform=NormalizationTransform.fit(list(clouds)), params=params)


# on-disk layout ------------------------------------------------------------------
#
#   dataset.json    format version, scene, seed, transform, split
#   manifest.csv    id, view, image, cloud, session, split
#   images/NNNNNN.png   camera images tiled left to right, RGB
#   clouds/NNNNNN.ply   binary little-endian float32 x, y, z (metres)


def _write_cloud(path: Path, pts: np.ndarray) -> None:
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(pts)}\nproperty float x\nproperty float y\nproperty float z\nend_header\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(pts, dtype="<f4").tobytes())


def save_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    split = np.full(len(ds), "train", dtype=object)
    split[ds.test_idx] = "test"
    rows = []
    for i in range(len(ds)):
        img_rel, cloud_rel = f"images/{i:06d}.png", f"clouds/{i:06d}.ply"
        tiles = np.split(ds.images[i], ds.scene.views, axis=2)
        Image.fromarray(np.concatenate(tiles, axis=1), mode="RGB").save(out / img_rel, optimize=False)
        _write_cloud(out / cloud_rel, ds.clouds[i])
        rows.append([i, int(ds.views[i]), img_rel, cloud_rel, int(ds.sessions[i]), split[i]])
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "view", "image", "cloud", "session", "split"])
        w.writerows(rows)
    meta = {
        "version": DATASET_VERSION,
        "scene": ds.scene.to_dict(),
        "seed": ds.seed,
        "n": len(ds),
        "transform": ds.transform.to_dict(),
        "split_ratio": list(SPLIT_RATIO),
        "params": [p.to_dict() for p in ds.params],
    }
    (out / "dataset.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return out / "manifest.csv"


def load_dataset(path) -> Dataset:
    root = Path(path)
    if root.name == "manifest.csv":
        root = root.parent
    try:
        meta = json.loads((root / "dataset.json").read_text())
        with open(root / "manifest.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read dataset at {root}: {exc}") from exc
    if meta.get("version") != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {meta.get('version')}")
    if not rows:
        raise DatasetError(f"dataset at {root} is empty")
    scene = SceneConfig(**meta["scene"])
    images, clouds = [], []
    for r in rows:
        tiled = np.asarray(Image.open(root / r["image"]).convert("RGB"))
        images.append(np.concatenate(np.split(tiled, scene.views, axis=1), axis=2))
        pts, _ = ply.read_ply(root / r["cloud"])
        clouds.append(pts.astype(np.float32))
    split = np.array([r["split"] for r in rows])
    params = [DeformationParams(**{k: np.asarray(v) for k, v in p.items()}) for p in meta.get("params", [])]
    return Dataset(scene=scene, seed=int(meta["seed"]), images=np.stack(images),
                   views=np.array([int(r["view"]) for r in rows]), clouds=np.stack(clouds),
                   sessions=np.array([int(r["session"]) for r in rows]),
                   train_idx=np.nonzero(split == "train")[0], test_idx=np.nonzero(split == "test")[0],
                   transform=NormalizationTransform.from_dict(meta["transform"]), params=params)


def dataset_checksum(path) -> str:
    """SHA-256 over every file of a saved dataset, in sorted path order."""
    root = Path(path)
    h = hashlib.sha256()
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()
