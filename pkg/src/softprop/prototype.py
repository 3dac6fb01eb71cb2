"""Decoder parameter grids: square grids, sphere samples, mesh surface samples.

Square grids are row-major with x varying fastest: point ``j`` sits at
column ``j % side`` and row ``j // side``. :func:`subgrid` relies on that
layout to pull nested coarse grids out of a fine one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from softprop.errors import ShapeError


@dataclass(frozen=True)
class PrototypeGrid:
    points: np.ndarray
    kind: str
    resolution: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise ShapeError(f"grid points must be (M, 2) or (M, 3), got {pts.shape}")
        if pts.shape[0] < 4:
            raise ValueError(f"a grid needs at least 4 points, got {pts.shape[0]}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def square_grid(side: int, dim: int = 2) -> PrototypeGrid:
    """``side x side`` points equally spaced over [-1, 1]^2.

    With ``dim=3`` the grid lies in the x-y plane with z = 0.
    """
    if side < 2:
        raise ValueError(f"square grid side must be >= 2, got {side}")
    if dim not in (2, 3):
        raise ValueError(f"grid dimension must be 2 or 3, got {dim}")
    lin = np.linspace(-1.0, 1.0, side)
    yy, xx = np.meshgrid(lin, lin, indexing="ij")
    cols = [xx.reshape(-1), yy.reshape(-1)]
    if dim == 3:
        cols.append(np.zeros(side * side))
    return PrototypeGrid(np.stack(cols, axis=1), "square", (side, side))


def subgrid(grid: PrototypeGrid, stride: int) -> PrototypeGrid:
    """Every ``stride``-th row and column of a square grid (values copied bitwise)."""
    if grid.kind != "square":
        raise ValueError("subgrid needs a square grid")
    side = grid.resolution[0]
    keep = np.arange(0, side, stride)
    rows = (keep[:, None] * side + keep[None, :]).reshape(-1)
    return PrototypeGrid(grid.points[rows], "square", (keep.size, keep.size))


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def fibonacci_sphere(count: int, z_range: tuple = (-1.0, 1.0)) -> np.ndarray:
    """Golden-angle spiral points, area-uniform over the band ``z_range`` of the unit sphere."""
    i = np.arange(count) + 0.5
    z0, z1 = z_range
    z = z1 - (z1 - z0) * i / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(count)
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def sphere_samples(count: int, seed: int = 0) -> PrototypeGrid:
    """``count`` spiral points on the unit sphere under a seed-chosen rotation."""
    if count < 4:
        raise ValueError(f"sphere prototype needs at least 4 points, got {count}")
    rot = _random_rotation(np.random.default_rng(seed))
    pts = fibonacci_sphere(count) @ rot.T
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return PrototypeGrid(pts, "sphere", (count,))


# meshes ----------------------------------------------------------------------


def read_off(path) -> tuple:
    """Read an ASCII OFF mesh; polygons with more than 3 vertices are fanned into triangles."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValueError(f"cannot read mesh {path}: {exc}") from exc
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or not tokens[0].endswith("OFF"):
        raise ValueError(f"{path}: missing OFF header")
    pos = 1
    try:
        nv, nf = int(tokens[pos]), int(tokens[pos + 1])
        pos += 3
        verts = np.array(tokens[pos : pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        tris = []
        for _ in range(nf):
            k = int(tokens[pos])
            idx = [int(t) for t in tokens[pos + 1 : pos + 1 + k]]
            pos += 1 + k
            tris += [(idx[0], idx[i], idx[i + 1]) for i in range(1, k - 1)]
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed OFF body") from exc
    faces = np.array(tris, dtype=np.intp).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= nv):
        raise ValueError(f"{path}: face index out of range")
    return verts, faces


def write_off(path, verts: np.ndarray, faces: np.ndarray) -> Path:
    path = Path(path)
    lines = ["OFF", f"{len(verts)} {len(faces)} 0"]
    lines += [" ".join(f"{v:.9g}" for v in row) for row in verts]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in faces]
    path.write_text("\n".join(lines) + "\n")
    return path


def sample_triangles(verts: np.ndarray, faces: np.ndarray, count: int, rng: np.random.Generator) -> tuple:
    """Area-weighted uniform samples on a triangle soup; returns ``(points, face_ids)``."""
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = area.sum()
    if not total > 0:
        raise ValueError("mesh has zero total area")
    face = rng.choice(len(faces), size=count, p=area / total)
    u, v = rng.random(count), rng.random(count)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    pts = a[face] + u[:, None] * (b[face] - a[face]) + v[:, None] * (c[face] - a[face])
    return pts, face


def mesh_samples(mesh_file, count: int, seed: int = 0) -> PrototypeGrid:
    """Uniform surface samples of an OFF mesh, centred and scaled into [-1, 1]^3.

    A single uniform scale (the largest half-extent) keeps the mesh's aspect.
    """
    if count < 4:
        raise ValueError(f"mesh prototype needs at least 4 points, got {count}")
    verts, faces = read_off(mesh_file)
    if len(faces) == 0:
        raise ValueError("mesh has no faces")
    pts, _ = sample_triangles(verts, faces, count, np.random.default_rng(seed))
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    center = (lo + hi) / 2.0
    half = float((hi - lo).max()) / 2.0
    pts = (pts - center) / half
    return PrototypeGrid(np.clip(pts, -1.0, 1.0), "mesh_samples", (count,))


def grid_from_spec(spec: dict) -> PrototypeGrid:
    """Rebuild a grid from ``{"kind", "size", "dim", "seed", "mesh"}`` as stored with a run."""
    kind = spec.get("kind", "square")
    if kind == "square":
        return square_grid(int(spec["size"]), int(spec.get("dim", 2)))
    if kind == "sphere":
        return sphere_samples(int(spec["size"]), int(spec.get("seed", 0)))
    if kind == "mesh_samples":
        return mesh_samples(spec["mesh"], int(spec["size"]), int(spec.get("seed", 0)))
    raise ValueError(f"unknown prototype kind {kind!r}")


def export_ply(grid: PrototypeGrid, path):
    """Write the grid as a PLY cloud for inspection (2-D grids get z = 0)."""
    from softprop.ply import write_ply

    pts = grid.points if grid.dim == 3 else np.hstack([grid.points, np.zeros((len(grid), 1))])
    return write_ply(path, pts)
