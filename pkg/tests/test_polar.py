import math

import numpy as np
import pytest

from fisheyebench.errors import ModelMismatchError, OutOfRangeError
from fisheyebench.geometry import FisheyeModel, ProjectionKind
from fisheyebench.polar import (
    MapDirection,
    map_coords,
    polar_rectify,
    polar_shape,
    source_hit_mask,
    write_metadata,
)


def _model(kind=ProjectionKind.EQUIDISTANT, fov=181.8, radius=100.0, size=201):
    c = (size - 1) / 2.0
    return FisheyeModel.from_fov(kind, fov, radius, (c, c))


class TestShape:
    def test_sizing_rule_frozen_pfseq_scale(self):
        # cols = ceil(2*pi*1155) = 7258; fov 180 -> rows = ceil(cols / 4)
        m = FisheyeModel.from_fov(ProjectionKind.EQUISOLID, 180.0, 1155.0, (1155.0, 1155.0))
        assert polar_shape(m) == (1815, 7258)

    def test_sizing_rule_fov_dependence(self):
        m = FisheyeModel.from_fov(ProjectionKind.EQUIDISTANT, 181.8, 1155.0, (1155.0, 1155.0))
        rows, cols = polar_shape(m)
        assert cols == math.ceil(2.0 * math.pi * 1155.0)
        assert rows == math.ceil(cols * math.radians(181.8) / 2.0 / (2.0 * math.pi))

    def test_small_model_shape(self):
        m = _model(radius=100.0)
        rows, cols = polar_shape(m)
        assert cols == 629
        assert rows == math.ceil(629 * math.radians(90.9) / (2 * math.pi))


class TestRectify:
    def test_uniform_source_gives_uniform_polar(self):
        m = _model()
        img = np.full((201, 201), 77, dtype=np.uint8)
        polar = polar_rectify(img, m)
        assert (polar.pixels == 77).all()
        assert polar.pixels.shape == polar_shape(m)

    def test_center_pixel_fills_row_zero(self):
        m = _model()
        img = np.zeros((201, 201), dtype=np.uint8)
        img[100, 100] = 255
        polar = polar_rectify(img, m)
        assert (polar.pixels[0] == 255).all()
        assert polar.pixels[5:].max() == 0

    def test_values_exist_in_source(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, (201, 201), dtype=np.uint8)
        m = _model()
        polar = polar_rectify(img, m)
        assert np.isin(polar.pixels, img).all()

    def test_circle_exceeding_image_rejected(self):
        m = _model()
        with pytest.raises(ModelMismatchError):
            polar_rectify(np.zeros((150, 201), dtype=np.uint8), m)

    def test_non_grayscale_rejected(self):
        with pytest.raises(ValueError):
            polar_rectify(np.zeros((20, 20, 3)), _model())


class TestCoverage:
    @pytest.mark.parametrize("kind", list(ProjectionKind))
    def test_every_in_circle_pixel_sampled(self, kind):
        m = _model(kind=kind)
        counts = source_hit_mask(m, (201, 201))
        ys, xs = np.mgrid[0:201, 0:201]
        inside = np.hypot(xs - 100.0, ys - 100.0) <= 100.0
        assert (counts[inside] > 0).all()

    def test_node_only_sampling_is_sparser(self):
        m = _model()
        dense = source_hit_mask(m, (201, 201))
        sparse = source_hit_mask(m, (201, 201), supersample=1)
        assert sparse.sum() < dense.sum()


class TestMapCoords:
    def test_center_maps_to_pole_column_zero(self, small_model):
        assert map_coords(
            MapDirection.FISHEYE_TO_POLAR, small_model.optical_center, small_model
        ) == (0.0, 0.0)

    def test_rim_at_phi_90(self, small_model):
        rows, cols = polar_shape(small_model)
        cx, cy = small_model.optical_center
        col, row = map_coords(
            MapDirection.FISHEYE_TO_POLAR,
            (cx, cy + small_model.image_circle_radius),  # +y is phi = 90 degrees
            small_model,
        )
        assert row == pytest.approx(rows - 1, abs=1e-6)
        assert col == pytest.approx(cols / 4.0, abs=1.0)

    def test_round_trip_under_one_pixel(self, small_model):
        rng = np.random.default_rng(11)
        n = 1000
        ang = rng.uniform(0, 2 * math.pi, n)
        rad = np.sqrt(rng.uniform(0, 1, n)) * small_model.image_circle_radius
        cx, cy = small_model.optical_center
        worst = 0.0
        for a, r in zip(ang, rad):
            x, y = cx + r * math.cos(a), cy + r * math.sin(a)
            p = map_coords(MapDirection.FISHEYE_TO_POLAR, (x, y), small_model)
            bx, by = map_coords(MapDirection.POLAR_TO_FISHEYE, p, small_model)
            worst = max(worst, math.hypot(bx - x, by - y))
        assert worst < 1.0

    def test_out_of_circle_raises(self, small_model):
        cx, cy = small_model.optical_center
        with pytest.raises(OutOfRangeError):
            map_coords(
                MapDirection.FISHEYE_TO_POLAR,
                (cx + small_model.image_circle_radius + 2.0, cy),
                small_model,
            )

    def test_row_beyond_grid_raises(self, small_model):
        rows, _ = polar_shape(small_model)
        with pytest.raises(OutOfRangeError):
            map_coords(MapDirection.POLAR_TO_FISHEYE, (0.0, rows + 5.0), small_model)


class TestMetadata:
    def test_sidecar_contents(self, tmp_path, small_model):
        polar = polar_rectify(np.zeros((201, 201), dtype=np.uint8), small_model)
        path = tmp_path / "polar.txt"
        write_metadata(path, polar)
        text = path.read_text()
        rows, cols = polar.pixels.shape
        assert f"rows {rows}" in text
        assert f"cols {cols}" in text
        assert small_model.config_hash() in text
