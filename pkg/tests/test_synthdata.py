import numpy as np
import pytest

from softprop import synthdata as sd
from softprop.errors import DatasetError
from softprop.prototype import fibonacci_sphere


def one_bump(center, amplitude, width=0.4):
    return sd.DeformationParams(np.asarray([center], dtype=float), [amplitude], [width])


def test_identity_deformation():
    u = fibonacci_sphere(200)
    np.testing.assert_array_equal(sd.deform(u, sd.DeformationParams.identity()), u)


def test_bump_peak():
    c = np.array([0.0, 0.6, 0.8])
    for w in (0.2, 0.45, 0.6):
        np.testing.assert_allclose(sd.deform(c, one_bump(c, 0.2, w))[0], 1.2 * c, rtol=1e-12)


def test_radius_bounds_under_random_params():
    # three coincident bumps of -0.3 reach 1 - 0.9 = 0.1 at worst
    rng = np.random.default_rng(0)
    u = fibonacci_sphere(500)
    lo, hi = np.inf, 0.0
    for _ in range(300):
        r = np.linalg.norm(sd.deform(u, sd.DeformationParams.random(rng)), axis=1)
        lo, hi = min(lo, r.min()), max(hi, r.max())
    assert 0.1 * 0.9 <= lo and hi <= 1.9 * 1.1
    worst = sd.DeformationParams(np.tile([[0.0, 0.0, 1.0]], (3, 1)), [-0.3] * 3, [0.3] * 3, [0.9] * 3)
    assert np.linalg.norm(sd.deform([0.0, 0.0, 1.0], worst)) == pytest.approx(0.09)


def test_param_validation():
    with pytest.raises(ValueError):
        one_bump([0, 0, 1], 0.31)
    with pytest.raises(ValueError):
        one_bump([0, 0, 1], 0.1, width=0.7)
    with pytest.raises(ValueError):
        sd.DeformationParams(np.zeros((4, 3)), np.zeros(4), np.full(4, 0.3))
    with pytest.raises(ValueError):
        sd.DeformationParams(np.zeros((0, 3)), [], [], [1.2, 1, 1])
    with pytest.raises(ValueError):
        sd.SceneConfig(body="sheet", views=2)


def test_optical_axis_hits_centre_pixel():
    scene = sd.SceneConfig()
    for (pos, rot), axis in zip(sd.camera_frames(scene), ([0, 0, 1.0], [0, 0, -1.0])):
        u, v, depth = sd.project(np.array([axis]), pos, rot, scene)
        assert (u[0], v[0]) == (16.0, 16.0) and depth[0] > 0


def test_projection_moves_outward_with_amplitude():
    scene = sd.SceneConfig()
    pos, rot = sd.camera_frames(scene)[0]
    dot = np.array([0.5, 0.3, np.sqrt(1 - 0.34)])
    radii = []
    for a in np.linspace(-0.3, 0.3, 13):
        u, v, _ = sd.project(sd.deform(dot, one_bump(dot, a)), pos, rot, scene)
        radii.append(np.hypot(u[0] - 16.0, v[0] - 16.0))
    assert np.all(np.diff(radii) > 0)


def test_render_deterministic_and_shaped():
    scene = sd.SceneConfig()
    a = sd.render_internal(sd.DeformationParams.identity(), scene)
    b = sd.render_internal(sd.DeformationParams.identity(), scene)
    assert a.shape == (32, 32, 6) and a.dtype == np.uint8
    np.testing.assert_array_equal(a, b)
    assert a.any()


def test_images_identify_amplitude_changes():
    scene = sd.SceneConfig()
    rng = np.random.default_rng(11)
    for _ in range(100):
        p = sd.DeformationParams.random(rng)
        amp = p.amplitudes.copy()
        amp[0] += 0.05 if amp[0] < 0.25 else -0.05
        q = sd.DeformationParams(p.centers, amp, p.widths, p.scale)
        assert not np.array_equal(sd.render_internal(p, scene), sd.render_internal(q, scene))


def test_ground_truth_hemispheres(small_scene):
    p = sd.DeformationParams.identity()
    up, down = sd.ground_truth_cloud(p, small_scene, 1), sd.ground_truth_cloud(p, small_scene, 2)
    assert up.shape == (256, 3) and up.dtype == np.float32
    assert np.all(up[:, 2] >= 0) and np.all(down[:, 2] < 0)
    np.testing.assert_allclose(np.linalg.norm(up, axis=1), small_scene.radius_m, rtol=1e-6)


def test_single_view_covers_whole_body():
    scene = sd.SceneConfig(views=1, points_per_view=128)
    ds = sd.sample_dataset(6, scene, seed=1)
    assert set(ds.views) == {1} and ds.images.shape[-1] == 3
    z = ds.clouds[..., 2]
    assert np.all(z.min(axis=1) < 0) and np.all(z.max(axis=1) > 0)


def test_dataset_layout(small_dataset):
    ds = small_dataset
    assert np.array_equal(ds.views, np.arange(48) % 2 + 1)
    assert np.array_equal(ds.sessions, np.arange(48) % 4)
    assert (len(ds.train_idx), len(ds.test_idx)) == (40, 8)
    assert not set(ds.train_idx) & set(ds.test_idx)
    nc = ds.normalized_clouds()
    assert nc.min() >= -1 - 1e-6 and nc.max() <= 1 + 1e-6


def test_split_arithmetic():
    train, test = sd.split_indices(2400, 0)
    assert (len(train), len(test)) == (2000, 400)
    views = np.arange(2400) % 2 + 1
    assert np.bincount(views)[1:].tolist() == [1200, 1200]


def test_same_seed_same_data(small_scene):
    a = sd.sample_dataset(6, small_scene, seed=3)
    b = sd.sample_dataset(6, small_scene, seed=3)
    c = sd.sample_dataset(6, small_scene, seed=4)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.clouds, b.clouds)
    assert not np.array_equal(a.clouds, c.clouds)
    with pytest.raises(DatasetError):
        sd.sample_dataset(1, small_scene)


def test_save_load_checksum(small_scene, tmp_path):
    ds = sd.sample_dataset(6, small_scene, seed=2)
    sd.save_dataset(ds, tmp_path / "a")
    sd.save_dataset(ds, tmp_path / "b")
    assert sd.dataset_checksum(tmp_path / "a") == sd.dataset_checksum(tmp_path / "b")
    back = sd.load_dataset(tmp_path / "a" / "manifest.csv")
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.clouds, ds.clouds)
    np.testing.assert_array_equal(back.test_idx, ds.test_idx)
    assert back.transform.to_dict() == ds.transform.to_dict()
    header = (tmp_path / "a" / "manifest.csv").read_text().splitlines()[0]
    assert header == "id,view,image,cloud,session,split"
    with pytest.raises(DatasetError):
        sd.load_dataset(tmp_path / "missing")
