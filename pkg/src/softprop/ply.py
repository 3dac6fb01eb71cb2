"""ASCII PLY point clouds with an optional per-point ``error`` scalar.

Files are written as ``format ascii 1.0`` with ``float x, y, z`` vertex
properties (plus ``float error`` when given). The reader also accepts
``binary_little_endian`` files whose vertex properties are all float/double.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
              "uchar": "u1", "uint8": "u1", "int": "<i4", "int32": "<i4"}


def write_ply(path, points: np.ndarray, error: np.ndarray | None = None) -> Path:
    path = Path(path)
    pts = np.asarray(points, dtype=np.float64)
    cols = [pts]
    header = ["ply", "format ascii 1.0", f"element vertex {pts.shape[0]}",
              "property float x", "property float y", "property float z"]
    if error is not None:
        err = np.asarray(error, dtype=np.float64).reshape(-1, 1)
        if err.shape[0] != pts.shape[0]:
            raise ValueError("error attribute length does not match point count")
        header.append("property float error")
        cols.append(err)
    header.append("end_header")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(header) + "\n")
        np.savetxt(fh, np.hstack(cols), fmt="%.9g")
    return path


def read_ply(path) -> tuple:
    """Return ``(points, attributes)`` where ``attributes`` maps extra property names to arrays."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"{path} is not a PLY file")
        fmt, count, props, in_vertex = None, None, [], False
        while True:
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            tok = line.decode("ascii").split()
            if not tok or tok[0] in ("comment", "obj_info"):
                continue
            if tok[0] == "end_header":
                break
            if tok[0] == "format":
                fmt = tok[1]
            elif tok[0] == "element":
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    count = int(tok[2])
            elif tok[0] == "property" and in_vertex:
                if tok[1] == "list":
                    raise ValueError(f"{path}: list properties on vertices are not supported")
                props.append((tok[2], tok[1]))
        if count is None:
            raise ValueError(f"{path}: no vertex element")
        names = [n for n, _ in props]
        if fmt == "ascii":
            data = np.loadtxt(fh, dtype=np.float64, ndmin=2, max_rows=count) if count else np.zeros((0, len(props)))
        elif fmt == "binary_little_endian":
            dtype = np.dtype([(n, _PLY_TYPES[t]) for n, t in props])
            rec = np.frombuffer(fh.read(dtype.itemsize * count), dtype=dtype, count=count)
            data = np.stack([rec[n].astype(np.float64) for n in names], axis=1)
        else:
            raise ValueError(f"{path}: unsupported PLY format {fmt!r}")
    for axis in "xyz":
        if axis not in names:
            raise ValueError(f"{path}: missing vertex property {axis}")
    pts = data[:, [names.index(a) for a in "xyz"]]
    attrs = {n: data[:, i] for i, n in enumerate(names) if n not in ("x", "y", "z")}
    return pts, attrs
