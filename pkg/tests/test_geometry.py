"""Geometry: normalization, shapes, corruption, sampling, xyz I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orthoview.geometry import (
    SHAPE_KINDS,
    CorruptionSpec,
    DatasetSplit,
    DegenerateCloudWarning,
    PointCloud,
    SynthDatasetConfig,
    XyzFormatError,
    corrupt,
    generate_dataset,
    hole_center,
    load_dataset,
    load_xyz,
    make_instance,
    normalize_unit_cube,
    sample_points,
    save_dataset,
    save_xyz,
    synth_shape,
)


class TestNormalize:
    def test_cube_corners(self):
        out = normalize_unit_cube(PointCloud(points=[(0, 0, 0), (2, 2, 2)]))
        np.testing.assert_allclose(out.points, [(-1, -1, -1), (1, 1, 1)])

    def test_hand_arithmetic(self):
        # centroid (2, 4/3, 0), scale 8/3; expected worked out by hand
        out = normalize_unit_cube(PointCloud(points=[(1, 0, 0), (3, 0, 0), (2, 4, 0)]))
        expected = [(-3 / 8, -1 / 2, 0), (3 / 8, -1 / 2, 0), (0, 1, 0)]
        np.testing.assert_allclose(out.points, expected, atol=1e-15)

    def test_idempotent(self, random_cloud):
        once = normalize_unit_cube(random_cloud)
        twice = normalize_unit_cube(once)
        np.testing.assert_allclose(twice.points, once.points, atol=1e-12)

    def test_bounds_and_extreme(self, random_cloud):
        out = normalize_unit_cube(random_cloud)
        assert np.all(out.points >= -1.0) and np.all(out.points <= 1.0)
        assert np.abs(out.points).max() == 1.0

    def test_degenerate_warns(self):
        with pytest.warns(DegenerateCloudWarning):
            out = normalize_unit_cube(PointCloud(points=[(3, 3, 3), (3, 3, 3)]))
        np.testing.assert_allclose(out.points, 0.0)

    @given(st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=20, deadline=None)
    def test_idempotence_property(self, seed):
        cloud = synth_shape("box", 32, seed)
        once = normalize_unit_cube(cloud)
        twice = normalize_unit_cube(once)
        assert np.abs(twice.points - once.points).max() < 1e-12


class TestSynthShapes:
    def test_sphere_radius(self):
        cloud = synth_shape("sphere", 500, seed=7)
        radii = np.linalg.norm(cloud.points, axis=1)
        assert np.abs(radii - 1.0).max() < 1e-9

    def test_box_face_membership(self):
        cloud = synth_shape("box", 500, seed=7, params={"extents": (1, 1, 1)})
        on_face = np.isclose(np.abs(cloud.points), 0.5)
        assert np.all(on_face.sum(axis=1) >= 1)

    def test_torus_symmetry_monte_carlo(self):
        # fraction with x > 0 ~ 0.5 within 3 sigma of a fair binomial
        n = 10_000
        cloud = synth_shape("torus", n, seed=3, params={"ring_radius": 1.0, "tube_radius": 0.25})
        frac = (cloud.points[:, 0] > 0).mean()
        assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / n)

    def test_torus_tube_distance(self):
        cloud = synth_shape("torus", 200, seed=3)
        x, y, z = cloud.points.T
        d = np.hypot(np.hypot(x, z) - 0.7, y)
        assert np.abs(d - 0.25).max() < 1e-9

    def test_deterministic(self):
        a = synth_shape("cone", 64, seed=11)
        b = synth_shape("cone", 64, seed=11)
        assert np.array_equal(a.points, b.points)
        c = synth_shape("cone", 64, seed=12)
        assert not np.array_equal(a.points, c.points)

    def test_labels_follow_kind_order(self):
        for i, kind in enumerate(SHAPE_KINDS):
            assert synth_shape(kind, 16, seed=0).label == i

    def test_capsule_on_surface(self):
        cloud = synth_shape("capsule", 300, seed=5, params={"radius": 0.4, "height": 1.0})
        x, y, z = cloud.points.T
        r_xy = np.hypot(x, z)
        on_side = np.abs(y) <= 0.5 + 1e-12
        assert np.allclose(r_xy[on_side], 0.4, atol=1e-9)
        caps = ~on_side
        d_top = np.sqrt(x[caps] ** 2 + z[caps] ** 2 + (np.abs(y[caps]) - 0.5) ** 2)
        assert np.allclose(d_top, 0.4, atol=1e-9)

    def test_ellipsoid_on_surface(self):
        cloud = synth_shape("ellipsoid", 300, seed=5, params={"radii": (1.0, 0.7, 0.55)})
        x, y, z = cloud.points.T
        val = (x / 1.0) ** 2 + (y / 0.7) ** 2 + (z / 0.55) ** 2
        assert np.abs(val - 1.0).max() < 1e-9

    def test_errors(self):
        with pytest.raises(ValueError):
            synth_shape("pyramid", 32, seed=0)
        with pytest.raises(ValueError):
            synth_shape("sphere", 4, seed=0)
        with pytest.raises(ValueError):
            synth_shape("box", 32, seed=0, params={"extents": (1, -1, 1)})


class TestCorrupt:
    def test_empty_spec_is_identity(self, random_cloud):
        out = corrupt(random_cloud, CorruptionSpec(), seed=0)
        assert np.array_equal(out.points, random_cloud.points)

    def test_full_background_disjoint(self, random_cloud):
        out = corrupt(random_cloud, CorruptionSpec(background=1.0), seed=0)
        assert out.n_points == random_cloud.n_points
        orig = {tuple(p) for p in random_cloud.points}
        assert all(tuple(p) not in orig for p in out.points)

    def test_hole_brute_force_containment(self, random_cloud):
        spec = CorruptionSpec(hole_radius=0.3)
        center = hole_center(random_cloud, spec, seed=5)
        out = corrupt(random_cloud, spec, seed=5)
        assert out.n_points == random_cloud.n_points
        for p in out.points:  # exhaustive scan
            assert np.linalg.norm(p - center) >= 0.3

    def test_occlusion_halfspace(self, random_cloud):
        out = corrupt(random_cloud, CorruptionSpec(occlusion_tau=0.0), seed=9)
        assert out.n_points == random_cloud.n_points
        # survivors are a subset of the original cloud
        orig = {tuple(p) for p in random_cloud.points}
        assert all(tuple(p) in orig for p in out.points)

    def test_rotation_preserves_norms(self, random_cloud):
        for axis in ("y", "any"):
            out = corrupt(random_cloud, CorruptionSpec(rotate=axis), seed=2)
            np.testing.assert_allclose(
                np.linalg.norm(out.points, axis=1),
                np.linalg.norm(random_cloud.points, axis=1),
                atol=1e-12,
            )

    def test_rotate_y_keeps_y(self, random_cloud):
        out = corrupt(random_cloud, CorruptionSpec(rotate="y"), seed=2)
        np.testing.assert_allclose(out.points[:, 1], random_cloud.points[:, 1], atol=1e-12)

    def test_deterministic(self, random_cloud):
        spec = CorruptionSpec(background=0.2, hole_radius=0.25, rotate="any")
        a = corrupt(random_cloud, spec, seed=4)
        b = corrupt(random_cloud, spec, seed=4)
        assert np.array_equal(a.points, b.points)

    def test_validation(self):
        with pytest.raises(ValueError):
            CorruptionSpec(background=1.5)
        with pytest.raises(ValueError):
            CorruptionSpec(rotate="x")

    def test_hole_removing_everything_errors(self):
        tiny = PointCloud(points=np.zeros((5, 3)) + 0.01)
        with pytest.raises(ValueError, match="removed every point"):
            corrupt(tiny, CorruptionSpec(hole_radius=10.0), seed=0)


class TestSamplePoints:
    def test_fixed_is_epoch_invariant(self, random_cloud):
        a = sample_points(random_cloud, 16, "fixed", epoch=0, seed=3)
        b = sample_points(random_cloud, 16, "fixed", epoch=7, seed=3)
        assert np.array_equal(a.points, b.points)

    def test_resampled_differs_across_epochs(self, random_cloud):
        a = sample_points(random_cloud, 16, "resampled", epoch=0, seed=3)
        b = sample_points(random_cloud, 16, "resampled", epoch=1, seed=3)
        assert not np.array_equal(a.points, b.points)

    def test_fixed_full_size_is_permutation(self, rng):
        cloud = PointCloud(points=rng.uniform(-1, 1, size=(4, 3)))
        out = sample_points(cloud, 4, "fixed", epoch=0, seed=1)
        got = sorted(map(tuple, out.points))
        want = sorted(map(tuple, cloud.points))
        assert got == want

    def test_sizes_and_replacement(self, rng):
        cloud = PointCloud(points=rng.uniform(-1, 1, size=(8, 3)))
        out = sample_points(cloud, 20, "resampled", epoch=0, seed=1)
        assert out.n_points == 20
        with pytest.raises(ValueError):
            sample_points(cloud, 20, "fixed", epoch=0, seed=1)
        with pytest.raises(ValueError):
            sample_points(cloud, 0, "fixed", epoch=0, seed=1)


class TestXyzIO:
    def test_round_trip(self, tmp_path, random_cloud):
        path = tmp_path / "c.xyz"
        save_xyz(random_cloud, path)
        back = load_xyz(path)
        assert np.abs(back.points - random_cloud.points).max() < 1e-6

    def test_sphere_round_trip(self, tmp_path):
        cloud = normalize_unit_cube(synth_shape("sphere", 1024, seed=0))
        save_xyz(cloud, tmp_path / "s.xyz")
        back = load_xyz(tmp_path / "s.xyz")
        assert np.abs(back.points - cloud.points).max() < 1e-6

    def test_comments_and_blanks(self, tmp_path):
        (tmp_path / "c.xyz").write_text("# header\n\n0.5 0.5 0.5\n# mid\n1 2 3\n")
        assert load_xyz(tmp_path / "c.xyz").n_points == 2

    def test_malformed_line_names_lineno(self, tmp_path):
        (tmp_path / "bad.xyz").write_text("0 0 0\na b c\n")
        with pytest.raises(XyzFormatError, match=":2:"):
            load_xyz(tmp_path / "bad.xyz")

    def test_non_finite_rejected(self, tmp_path):
        (tmp_path / "bad.xyz").write_text("0 0 inf\n")
        with pytest.raises(XyzFormatError, match="non-finite"):
            load_xyz(tmp_path / "bad.xyz")

    def test_empty_rejected(self, tmp_path):
        (tmp_path / "bad.xyz").write_text("# nothing\n")
        with pytest.raises(XyzFormatError, match="no points"):
            load_xyz(tmp_path / "bad.xyz")

    def test_dataset_round_trip(self, tmp_path):
        cfg = SynthDatasetConfig(n_train=3, n_test=2, n_points=32)
        train, test = generate_dataset(cfg)
        save_dataset(train, tmp_path / "train")
        back = load_dataset(tmp_path / "train", "train")
        assert back.class_names == list(SHAPE_KINDS)
        assert len(back) == len(train)
        assert [c.label for c in back.clouds] == [c.label for c in train.clouds]
        assert np.abs(back.clouds[5].points - train.clouds[5].points).max() < 1e-6

    def test_load_missing_classes(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path, "train")


class TestDataset:
    def test_deterministic(self):
        cfg = SynthDatasetConfig(n_train=2, n_test=1, n_points=32)
        a, _ = generate_dataset(cfg)
        b, _ = generate_dataset(cfg)
        for ca, cb in zip(a.clouds, b.clouds):
            assert np.array_equal(ca.points, cb.points)

    def test_normalized_instances(self):
        cloud = make_instance(SynthDatasetConfig(n_points=64), "cylinder", instance_seed=42)
        assert np.abs(cloud.points).max() == 1.0

    def test_split_invariants(self):
        cfg = SynthDatasetConfig(n_train=2, n_test=1, n_points=32)
        train, test = generate_dataset(cfg)
        assert len(train) == 16 and len(test) == 8
        assert [c.uid for c in train.clouds] == list(range(16))

    def test_validation(self):
        with pytest.raises(ValueError):
            DatasetSplit(clouds=[], class_names=[])
        with pytest.raises(ValueError):
            DatasetSplit(
                clouds=[PointCloud(points=[(0, 0, 0)], label=3)], class_names=["a", "b"]
            )
