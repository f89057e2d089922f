"""Density-map generation: count conservation, kNN sigmas, file formats."""

import json

import numpy as np
import pytest

from scalecount.groundtruth import (
    Annotation,
    density_adaptive,
    density_fixed,
    density_to_pgm,
    knn_mean_distance,
    load_density,
    save_density,
)
from scalecount.ops import sum_pool_grid
from scalecount.pgm import read_pgm


def random_annotation(rng, width, height, count):
    points = np.column_stack(
        [rng.uniform(0, width - 1e-6, size=count), rng.uniform(0, height - 1e-6, size=count)]
    )
    return Annotation(width=width, height=height, points=points)


class TestAnnotation:
    def test_bounds_checked(self):
        with pytest.raises(ValueError):
            Annotation(width=10, height=10, points=np.array([[10.0, 5.0]]))

    def test_empty_dims_rejected(self):
        with pytest.raises(ValueError):
            Annotation(width=0, height=5, points=np.zeros((0, 2)))

    def test_json_roundtrip(self, rng):
        ann = random_annotation(rng, 64, 48, 7)
        back = Annotation.from_json(ann.to_json())
        assert back.width == 64 and back.height == 48
        np.testing.assert_array_equal(back.points, ann.points)

    def test_json_schema(self, rng):
        data = json.loads(random_annotation(rng, 32, 32, 3).to_json())
        assert set(data) == {"width", "height", "points"}
        assert len(data["points"]) == 3 and len(data["points"][0]) == 2


class TestDensityFixed:
    def test_single_center_point_sums_to_one(self):
        ann = Annotation(width=64, height=64, points=np.array([[32.0, 32.0]]))
        grid = density_fixed(ann, sigma=2.0)
        assert abs(grid.sum() - 1.0) < 1e-12
        assert grid.min() >= 0.0

    def test_zero_points_zero_map(self):
        ann = Annotation(width=32, height=16, points=np.zeros((0, 2)))
        np.testing.assert_array_equal(density_fixed(ann, sigma=15.0), 0.0)

    def test_37_points_sigma15_sum(self, rng):
        """Oracle is the direct sum of the map; must equal the count."""
        ann = random_annotation(rng, 200, 200, 37)
        grid = density_fixed(ann, sigma=15.0)
        assert abs(float(grid.sum()) - 37.0) < 1e-3

    def test_border_point_mass_kept(self):
        ann = Annotation(width=40, height=40, points=np.array([[0.0, 0.0]]))
        assert abs(density_fixed(ann, sigma=5.0).sum() - 1.0) < 1e-12

    def test_bad_sigma(self, rng):
        with pytest.raises(ValueError):
            density_fixed(random_annotation(rng, 16, 16, 2), sigma=0.0)

    def test_translation_equivariance(self, rng):
        """Integer shifts away from borders shift the map identically."""
        pts = np.array([[20.3, 22.7], [25.1, 24.9]])
        a = density_fixed(Annotation(width=64, height=64, points=pts), sigma=2.0)
        b = density_fixed(Annotation(width=64, height=64, points=pts + 7.0), sigma=2.0)
        np.testing.assert_allclose(a[15:35, 15:35], b[22:42, 22:42], atol=1e-14)

    def test_peak_at_point(self):
        ann = Annotation(width=31, height=31, points=np.array([[15.0, 10.0]]))
        grid = density_fixed(ann, sigma=1.5)
        assert np.unravel_index(grid.argmax(), grid.shape) == (10, 15)


class TestKnnMeanDistance:
    def test_unit_square_corners(self):
        """Hand oracle: each corner sees 1, 1, sqrt(2) -> mean (2 + sqrt 2)/3."""
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        expected = (1.0 + 1.0 + np.sqrt(2.0)) / 3.0
        np.testing.assert_allclose(knn_mean_distance(pts, 3), expected, atol=1e-12)
        assert abs(expected - 1.1381) < 1e-4

    def test_two_points(self):
        pts = np.array([[0.0, 0.0], [3.0, 4.0]])
        np.testing.assert_allclose(knn_mean_distance(pts, 1), [5.0, 5.0])

    def test_collinear_three(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        np.testing.assert_allclose(knn_mean_distance(pts, 2), [1.5, 1.0, 1.5])

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            knn_mean_distance(np.zeros((3, 2)), 3)

    def test_matches_bruteforce(self, rng):
        pts = rng.uniform(0, 50, size=(40, 2))
        k = 3
        expected = []
        for i in range(40):
            dists = sorted(
                float(np.hypot(*(pts[i] - pts[j]))) for j in range(40) if j != i
            )
            expected.append(sum(dists[:k]) / k)
        np.testing.assert_allclose(knn_mean_distance(pts, k), expected, atol=1e-12)


class TestDensityAdaptive:
    def test_square_corner_sigma(self):
        """40 px square, beta 0.3, k 3: sigma = 0.3 * (80 + 40 sqrt 2)/3."""
        pts = np.array([[0.0, 0.0], [40.0, 0.0], [0.0, 40.0], [40.0, 40.0]])
        ann = Annotation(width=64, height=64, points=pts)
        expected_sigma = 0.3 * (40 + 40 + 40 * np.sqrt(2)) / 3
        assert abs(expected_sigma - 13.657) < 1e-3
        grid = density_adaptive(ann, beta=0.3, k=3)
        assert abs(grid.sum() - 4.0) < 1e-3

    def test_single_point_fallback(self):
        ann = Annotation(width=64, height=64, points=np.array([[30.0, 30.0]]))
        grid = density_adaptive(ann, beta=0.3, k=3)
        assert abs(grid.sum() - 1.0) < 1e-12

    def test_sigma_scales_with_coordinates(self, rng):
        """Scaling all points by s scales every sigma by s (pre-clamp)."""
        pts = rng.uniform(5, 20, size=(10, 2))
        base = 0.3 * knn_mean_distance(pts, 3)
        scaled = 0.3 * knn_mean_distance(pts * 3.0, 3)
        np.testing.assert_allclose(scaled, base * 3.0, rtol=1e-12)

    def test_duplicate_points_clamped(self):
        pts = np.array([[10.0, 10.0], [10.0, 10.0], [10.0, 10.0], [10.0, 10.0], [10.0, 10.0]])
        ann = Annotation(width=32, height=32, points=pts)
        grid = density_adaptive(ann, beta=0.3, k=3)  # sigma clamps at 0.5
        assert abs(grid.sum() - 5.0) < 1e-3

    def test_count_conservation_random(self, rng):
        for count in (1, 4, 60):
            ann = random_annotation(rng, 120, 90, count)
            grid = density_adaptive(ann, beta=0.3, k=3)
            assert abs(grid.sum() - count) < 1e-3
            assert grid.min() >= 0.0


class TestAlignment:
    def test_sum_pool_preserves_count(self, rng):
        ann = random_annotation(rng, 96, 96, 23)
        grid = density_fixed(ann, sigma=4.0)
        pooled = sum_pool_grid(grid, 4)
        assert abs(pooled.sum() - grid.sum()) < 1e-9


class TestDensityIO:
    def test_binary_roundtrip(self, rng, tmp_path):
        grid = rng.random((17, 23))
        path = tmp_path / "map.dmap"
        save_density(path, grid)
        back = load_density(path)
        assert back.shape == (17, 23)
        np.testing.assert_array_equal(back, grid.astype(np.float32).astype(np.float64))

    def test_header_layout(self, rng, tmp_path):
        path = tmp_path / "map.dmap"
        save_density(path, np.zeros((2, 3)))
        raw = path.read_bytes()
        assert raw[:4] == b"DMAP"
        assert int.from_bytes(raw[4:8], "little") == 2
        assert int.from_bytes(raw[8:12], "little") == 3
        assert len(raw) == 12 + 4 * 6

    def test_pgm_export(self, rng, tmp_path):
        grid = rng.random((12, 16))
        path = tmp_path / "map.pgm"
        density_to_pgm(path, grid)
        img = read_pgm(path)
        assert img.shape == (12, 16)
        assert img.max() == 255  # max-normalized
