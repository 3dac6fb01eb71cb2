import numpy as np
import pytest
from scipy.spatial import cKDTree

from softprop import ply
from softprop.errors import ShapeError
from softprop.prototype import (PrototypeGrid, export_ply, fibonacci_sphere, grid_from_spec, mesh_samples, read_off,
                                sample_triangles, sphere_samples, square_grid, subgrid, write_off)


def test_square_grid_corners():
    g = square_grid(2)
    assert {tuple(p) for p in g.points} == {(-1, -1), (-1, 1), (1, -1), (1, 1)}


def test_square_grid_large():
    g = square_grid(100)
    assert len(g) == 10000 and g.resolution == (100, 100)
    np.testing.assert_allclose(np.diff(np.unique(g.points[:, 0])), 2 / 99)


def test_square_grid_centre_and_layout():
    g = square_grid(3)
    assert (0.0, 0.0) in {tuple(p) for p in g.points}
    # x varies fastest
    np.testing.assert_array_equal(g.points[:3, 0], [-1, 0, 1])
    np.testing.assert_array_equal(g.points[:3, 1], [-1, -1, -1])


def test_square_grid_3d_has_zero_z():
    g = square_grid(4, dim=3)
    assert g.dim == 3 and np.all(g.points[:, 2] == 0)
    np.testing.assert_array_equal(g.points[:, :2], square_grid(4).points)


def test_square_grid_errors():
    with pytest.raises(ValueError):
        square_grid(1)
    with pytest.raises(ValueError):
        square_grid(3, dim=4)


def test_subgrid_is_nested():
    fine = square_grid(100, 3)
    coarse = subgrid(fine, 2)
    assert len(coarse) == 2500
    rows = {tuple(p): i for i, p in enumerate(fine.points)}
    assert all(tuple(p) in rows for p in coarse.points)
    with pytest.raises(ValueError):
        subgrid(sphere_samples(10), 2)


def test_grid_validation():
    with pytest.raises(ValueError):
        PrototypeGrid(np.zeros((3, 2)), "square", (3,))
    with pytest.raises(ShapeError):
        PrototypeGrid(np.zeros((5, 4)), "square", (5,))
    g = square_grid(3)
    with pytest.raises(ValueError):
        g.points[0, 0] = 5.0


def test_sphere_samples_unit_norm_and_deterministic():
    a = sphere_samples(500, seed=3)
    b = sphere_samples(500, seed=3)
    np.testing.assert_allclose(np.linalg.norm(a.points, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, sphere_samples(500, seed=4).points)
    with pytest.raises(ValueError):
        sphere_samples(3)


def test_sphere_spacing_audit():
    pts = sphere_samples(10000, seed=0).points
    d, _ = cKDTree(pts).query(pts, k=2)
    nn = d[:, 1]
    uniform = np.sqrt(4 * np.pi / 10000)
    assert nn.min() > uniform / 3 and nn.max() < uniform * 3


def test_fibonacci_band():
    pts = fibonacci_sphere(200, (0.0, 1.0))
    assert pts[:, 2].min() >= 0


def _square_mesh(tmp_path):
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return write_off(tmp_path / "sq.off", verts, faces), verts, faces


def test_off_round_trip(tmp_path):
    path, verts, faces = _square_mesh(tmp_path)
    v, f = read_off(path)
    np.testing.assert_array_equal(v, verts)
    np.testing.assert_array_equal(f, faces)


def test_off_quad_is_fanned(tmp_path):
    p = tmp_path / "quad.off"
    p.write_text("OFF\n# a quad\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    _, f = read_off(p)
    np.testing.assert_array_equal(f, [[0, 1, 2], [0, 2, 3]])


def test_off_errors(tmp_path):
    with pytest.raises(ValueError):
        read_off(tmp_path / "missing.off")
    bad = tmp_path / "bad.off"
    bad.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")
    with pytest.raises(ValueError):
        read_off(bad)
    out_of_range = tmp_path / "oor.off"
    out_of_range.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n")
    with pytest.raises(ValueError):
        read_off(out_of_range)


def test_planar_mesh_samples(tmp_path):
    path, _, _ = _square_mesh(tmp_path)
    g = mesh_samples(path, 1000, seed=1)
    assert g.kind == "mesh_samples" and len(g) == 1000
    assert np.all(np.abs(g.points[:, :2]) <= 1.0) and np.all(g.points[:, 2] == 0)
    assert np.array_equal(g.points, mesh_samples(path, 1000, seed=1).points)


def test_zero_area_mesh(tmp_path):
    p = write_off(tmp_path / "z.off", np.zeros((3, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(ValueError, match="area"):
        mesh_samples(p, 10)


def test_sampling_density_follows_area():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [3, 0, 0], [3, 3, 0]])
    faces = np.array([[0, 1, 2], [1, 3, 4]])  # areas 0.5 and 3
    _, face = sample_triangles(verts, faces, 100000, np.random.default_rng(0))
    frac = np.bincount(face, minlength=2) / 100000
    expected = np.array([0.5, 3.0]) / 3.5
    assert np.all(np.abs(frac - expected) / expected < 0.1)


def test_grid_from_spec_and_export(tmp_path):
    assert np.array_equal(grid_from_spec({"kind": "square", "size": 5, "dim": 3}).points, square_grid(5, 3).points)
    assert np.array_equal(grid_from_spec({"kind": "sphere", "size": 40, "seed": 2}).points,
                          sphere_samples(40, 2).points)
    with pytest.raises(ValueError):
        grid_from_spec({"kind": "torus", "size": 4})
    path = export_ply(square_grid(3), tmp_path / "g.ply")
    pts, _ = ply.read_ply(path)
    assert pts.shape == (9, 3) and np.all(pts[:, 2] == 0)
