import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from softprop import geometry, ply
from softprop.errors import ShapeError
from softprop.geometry import (NormalizationTransform, PointCloud, SpatialIndex, batch_pairs, chamfer, chamfer_grad,
                               directed_distances, fit_transform, hausdorff, nearest)
from softprop.numcore import numerical_grad


def cloud(rng, n, scale=1.0):
    return rng.standard_normal((n, 3)) * scale


coords = st.floats(-10, 10, allow_nan=False, width=64)
clouds = st.integers(1, 12).flatmap(lambda n: arrays(np.float64, (n, 3), elements=coords))


# closed forms -----------------------------------------------------------------


def test_chamfer_single_pair():
    assert chamfer([[0, 0, 0]], [[3, 4, 0]]) == 5.0


def test_chamfer_two_point_case():
    # a->b minima (0, 1) averaged with weight 1/(2*2); b->a minimum 0
    assert chamfer([[0, 0, 0], [1, 0, 0]], [[0, 0, 0]]) == pytest.approx(0.25)


def test_chamfer_identity(rng):
    a = cloud(rng, 50)
    for backend in geometry.BACKENDS:
        assert chamfer(a, a, backend) == 0.0
        assert hausdorff(a, a, backend) == 0.0


def test_hausdorff_directed_max():
    assert hausdorff([[0, 0, 0], [2, 0, 0]], [[0, 0, 0]]) == 2.0


def test_chamfer_grad_unit_direction():
    np.testing.assert_allclose(chamfer_grad([[1, 0, 0]], [[0, 0, 0]]), [[1, 0, 0]])


def test_chamfer_grad_zero_at_minimum(rng):
    a = cloud(rng, 20)
    np.testing.assert_array_equal(chamfer_grad(a, a), np.zeros_like(a))


def test_chamfer_grad_matches_finite_differences(rng):
    from softprop.numcore import Tensor

    p, g = cloud(rng, 64), cloud(rng, 80)
    analytic = chamfer_grad(p, g, "indexed")
    t = Tensor(p.copy(), dtype=np.float64)
    numeric = numerical_grad(lambda: Tensor(np.array(chamfer(t.data, g, "indexed"))), t, 1e-6)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    assert err.max() <= 1e-6


# backends ---------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    r = np.random.default_rng(seed)
    a, b = cloud(r, int(r.integers(1, 400))), cloud(r, int(r.integers(1, 400)))
    d0, i0 = nearest(a, b, "brute")
    d1, i1 = nearest(a, b, "indexed")
    np.testing.assert_array_equal(i0, i1)
    np.testing.assert_array_equal(d0, d1)
    assert chamfer(a, b, "indexed") == pytest.approx(chamfer(a, b, "brute"), rel=1e-12)


def test_ties_go_to_lowest_index():
    ref = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0]])
    q = np.zeros((1, 3))
    for backend in geometry.BACKENDS:
        assert nearest(q, ref, backend)[1][0] == 0
    # duplicated point
    assert SpatialIndex(ref).query(np.array([[1.0, 0, 0]]))[1][0] == 0


def test_brute_chunking_consistent(rng, monkeypatch):
    a, b = cloud(rng, 300), cloud(rng, 200)
    full = nearest(a, b, "brute")
    monkeypatch.setattr(geometry, "_BRUTE_CHUNK", 1000)
    chunked = nearest(a, b, "brute")
    np.testing.assert_array_equal(full[1], chunked[1])


def test_batch_pairs_agree_with_exact_search(rng):
    a, b = rng.random((3, 40, 3)), rng.random((3, 70, 3))
    j_ab, j_ba = batch_pairs(a, b)
    for k in range(3):
        d_ab = directed_distances(a[k], b[k])
        np.testing.assert_allclose(np.linalg.norm(a[k] - b[k][j_ab[k]], axis=1), d_ab, atol=1e-6)
        d_ba = directed_distances(b[k], a[k])
        np.testing.assert_allclose(np.linalg.norm(b[k] - a[k][j_ba[k]], axis=1), d_ba, atol=1e-6)


def test_unknown_backend():
    with pytest.raises(ValueError, match="backend"):
        chamfer([[0, 0, 0]], [[1, 0, 0]], "approx")


def test_empty_and_malformed_clouds():
    with pytest.raises(ShapeError):
        chamfer(np.zeros((0, 3)), [[0, 0, 0]])
    with pytest.raises(ShapeError):
        hausdorff(np.zeros((4, 2)), [[0, 0, 0]])
    with pytest.raises(ShapeError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.nan, 0, 0]]))


def test_frame_mismatch():
    a = PointCloud([[0.1, 0, 0]], "normalized")
    b = PointCloud([[0.1, 0, 0]], "world")
    with pytest.raises(ValueError, match="frame"):
        chamfer(a, b)
    with pytest.raises(ValueError, match="frame"):
        hausdorff(a, b)


def test_normalized_cloud_bound():
    PointCloud([[1.0 + 5e-7, 0, 0]], "normalized")
    with pytest.raises(ValueError):
        PointCloud([[1.01, 0, 0]], "normalized")


# properties -------------------------------------------------------------------


@given(clouds, clouds)
def test_chamfer_symmetric_and_below_hausdorff(a, b):
    c_ab, c_ba = chamfer(a, b), chamfer(b, a)
    assert abs(c_ab - c_ba) <= 1e-9 * max(1.0, c_ab)
    assert c_ab <= hausdorff(a, b) + 1e-12


@given(clouds, clouds, clouds)
def test_hausdorff_triangle_inequality(a, b, c):
    assert hausdorff(a, c) <= hausdorff(a, b) + hausdorff(b, c) + 1e-9


@given(clouds, clouds, st.integers(0, 2**31 - 1))
def test_rigid_invariance(a, b, seed):
    r = np.random.default_rng(seed)
    q, _ = np.linalg.qr(r.standard_normal((3, 3)))
    shift = r.standard_normal(3) * 5
    ta, tb = a @ q.T + shift, b @ q.T + shift
    for fn in (chamfer, hausdorff):
        v, w = fn(a, b), fn(ta, tb)
        assert abs(v - w) <= 1e-5 * max(v, 1e-3)


# normalization ----------------------------------------------------------------


def test_fit_maps_unit_span():
    pts = np.array([[0.0, 0, 0], [2, 2, 2], [1, 0.5, 2]])
    t = fit_transform([pts])
    out = t.normalize(pts)
    np.testing.assert_array_equal(out.min(axis=0), [-1, -1, -1])
    np.testing.assert_array_equal(out.max(axis=0), [1, 1, 1])


def test_normalize_round_trip(rng):
    clouds_ = [cloud(rng, 30, 0.2) + 0.05 for _ in range(4)]
    t = NormalizationTransform.fit(clouds_)
    for c in clouds_:
        n = t.normalize(PointCloud(c))
        assert n.frame == "normalized"
        np.testing.assert_allclose(t.denormalize(n).points, c, atol=1e-6)
    assert NormalizationTransform.from_dict(t.to_dict()) == t


def test_degenerate_axis_named():
    flat = np.array([[0.0, 0, 1], [1, 2, 1], [2, 1, 1]])
    with pytest.raises(ValueError, match="z axis"):
        fit_transform([flat])


def test_transform_rejects_non_positive_scale():
    with pytest.raises(ValueError):
        NormalizationTransform(scale=(1, 0, 1), offset=(0, 0, 0))


# PLY --------------------------------------------------------------------------


def test_ply_round_trip(tmp_path, rng):
    pts = rng.standard_normal((25, 3)).astype(np.float32)
    err = rng.random(25).astype(np.float32)
    path = ply.write_ply(tmp_path / "a.ply", pts, err)
    back, attrs = ply.read_ply(path)
    np.testing.assert_array_equal(back.astype(np.float32), pts)
    np.testing.assert_array_equal(attrs["error"].astype(np.float32), err)
    assert path.read_text().splitlines()[1] == "format ascii 1.0"


def test_ply_binary_reader(tmp_path, rng):
    pts = rng.standard_normal((7, 3)).astype("<f4")
    header = "ply\nformat binary_little_endian 1.0\nelement vertex 7\n" \
             "property float x\nproperty float y\nproperty float z\nend_header\n"
    path = tmp_path / "b.ply"
    path.write_bytes(header.encode() + pts.tobytes())
    back, attrs = ply.read_ply(path)
    np.testing.assert_array_equal(back, pts.astype(np.float64))
    assert attrs == {}


def test_ply_errors(tmp_path):
    bad = tmp_path / "x.ply"
    bad.write_text("not a ply\n")
    with pytest.raises(ValueError):
        ply.read_ply(bad)
    with pytest.raises(ValueError):
        ply.write_ply(tmp_path / "y.ply", np.zeros((3, 3)), np.zeros(2))
