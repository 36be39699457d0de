import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from grindrl.pointcloud import (
    CloudFormatError,
    bounding_box,
    chamfer,
    downsample,
    load_cloud,
    mean_nn_spacing,
    save_cloud,
)


def brute_chamfer(s1, s2):
    """Independent O(n*m) oracle: direct double-loop over squared distances."""
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    d2 = ((s1[:, None, :] - s2[None, :, :]) ** 2).sum(axis=2)
    return d2.min(axis=1).mean() + d2.min(axis=0).mean()


def random_cloud(rng, n, scale=5.0):
    return rng.uniform(-scale, scale, size=(n, 3))


class TestChamfer:
    def test_identical_clouds_zero(self):
        s = [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)]
        assert chamfer(s, s) == 0.0

    def test_single_point_pair(self):
        # both directed sums are 1.0^2 -> total 2.0
        assert chamfer([(0, 0, 0)], [(1, 0, 0)]) == pytest.approx(2.0, abs=1e-15)

    def test_two_vs_one(self):
        s1 = [(0, 0, 0), (2, 0, 0)]
        s2 = [(1, 0, 0)]
        expected = brute_chamfer(s1, s2)
        assert expected == pytest.approx(2.0, abs=1e-15)
        assert chamfer(s1, s2) == pytest.approx(expected, abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            s1 = random_cloud(rng, rng.integers(1, 200))
            s2 = random_cloud(rng, rng.integers(1, 200))
            assert chamfer(s1, s2) == pytest.approx(brute_chamfer(s1, s2), abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            s1 = random_cloud(rng, 40)
            s2 = random_cloud(rng, 17)
            assert chamfer(s1, s2) == chamfer(s2, s1)

    def test_nonnegative_and_self_zero(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            s = random_cloud(rng, rng.integers(1, 60))
            assert chamfer(s, random_cloud(rng, 30)) >= 0.0
            assert chamfer(s, s) == 0.0

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            chamfer([], [(0, 0, 0)])
        with pytest.raises(ValueError):
            chamfer([(0, 0, 0)], [])

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            chamfer([(np.nan, 0, 0)], [(0, 0, 0)])


class TestBoundingBox:
    def test_single_point(self):
        assert bounding_box([(0, 0, 0)]).as_array().tolist() == [0, 0, 0]

    def test_two_corners(self):
        box = bounding_box([(0, 0, 0), (1, 2, 3)])
        assert (box.w, box.h, box.d) == (1.0, 2.0, 3.0)

    def test_matches_minmax_scan(self):
        rng = np.random.default_rng(5)
        cloud = random_cloud(rng, 50)
        box = bounding_box(cloud)
        lo = [min(p[k] for p in cloud) for k in range(3)]
        hi = [max(p[k] for p in cloud) for k in range(3)]
        assert np.allclose(box.as_array(), np.array(hi) - np.array(lo))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            bounding_box([])


class TestCloudIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        cloud = random_cloud(rng, 3)
        path = tmp_path / "c.xyz"
        save_cloud(cloud, path)
        loaded = load_cloud(path)
        assert np.allclose(loaded, cloud, atol=1e-9)
        assert np.array_equal(loaded, cloud)  # repr round-trips exactly

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0 0\na b c\n")
        with pytest.raises(CloudFormatError, match=":2"):
            load_cloud(path)

    def test_wrong_field_count(self, tmp_path):
        path = tmp_path / "bad.xyz"
        path.write_text("0 0\n")
        with pytest.raises(CloudFormatError, match=":1"):
            load_cloud(path)

    def test_empty_file_is_empty_cloud(self, tmp_path):
        path = tmp_path / "empty.xyz"
        path.write_text("")
        assert load_cloud(path).shape == (0, 3)


class TestDownsample:
    def test_n_at_least_cloud_size_keeps_all(self):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, 10)
        out = downsample(cloud, 10, seed=0)
        assert sorted(map(tuple, out)) == sorted(map(tuple, cloud))

    def test_single_point_subset(self):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, 10)
        out = downsample(cloud, 1, seed=4)
        assert out.shape == (1, 3)
        assert tuple(out[0]) in set(map(tuple, cloud))

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, 100)
        a = downsample(cloud, 20, seed=42)
        b = downsample(cloud, 20, seed=42)
        assert np.array_equal(a, b)

    def test_no_replacement(self):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, 50)
        out = downsample(cloud, 30, seed=0)
        assert len(set(map(tuple, out))) == 30

    @given(st.integers(min_value=1, max_value=200))
    @settings(max_examples=25, deadline=None)
    def test_size_is_min_of_n_and_cloud(self, n):
        cloud = np.random.default_rng(0).uniform(size=(64, 3))
        assert downsample(cloud, n, seed=1).shape[0] == min(n, 64)


def test_mean_nn_spacing_regular_grid():
    xs = np.arange(4.0)
    grid = np.array([(x, y, 0.0) for x in xs for y in xs])
    assert mean_nn_spacing(grid) == pytest.approx(1.0)
