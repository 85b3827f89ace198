"""Rectification of the fisheye disc into a spherical-angle matrix.

Rows index the incidence angle theta in [0, fov/2], columns the azimuth phi
in [0, 2*pi). Sampling is nearest-neighbour, no interpolation. The grid is
sized from the outer-rim circumference so every source pixel inside the
image circle keeps at least one representative:

    columns = ceil(2*pi*image_circle_radius)
    rows    = ceil(columns * (fov/2) / (2*pi))

Rows cover [0, fov/2] inclusive (theta step = (fov/2) / (rows - 1)), so row 0
is the pole and the last row is the circle rim. At the pole the column index
is canonicalized to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ModelMismatchError, OutOfRangeError
from .geometry import FisheyeModel, angle_of_radius, radius_of_angle


@dataclass(frozen=True)
class PolarImage:
    pixels: np.ndarray  # (rows, cols)
    theta_resolution: float  # radians per row
    phi_resolution: float  # radians per column
    source_model: FisheyeModel


class MapDirection(Enum):
    FISHEYE_TO_POLAR = "fisheye_to_polar"
    POLAR_TO_FISHEYE = "polar_to_fisheye"


def polar_shape(model: FisheyeModel) -> tuple[int, int]:
    cols = math.ceil(2.0 * math.pi * model.image_circle_radius)
    rows = math.ceil(cols * model.theta_max / (2.0 * math.pi))
    return rows, cols


def _grid_resolutions(model: FisheyeModel) -> tuple[float, float, int, int]:
    rows, cols = polar_shape(model)
    theta_res = model.theta_max / (rows - 1)
    phi_res = 2.0 * math.pi / cols
    return theta_res, phi_res, rows, cols


def polar_rectify(image: np.ndarray, model: FisheyeModel) -> PolarImage:
    """Resample the fisheye disc to the (theta, phi) grid, nearest neighbour."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("expected a grayscale image")
    h, w = img.shape
    cx, cy = model.optical_center
    R = model.image_circle_radius
    if cx - R < -0.5 or cy - R < -0.5 or cx + R > w - 0.5 or cy + R > h - 0.5:
        raise ModelMismatchError(
            f"image circle (center {cx},{cy} radius {R}) exceeds {w}x{h} image"
        )
    theta_res, phi_res, rows, cols = _grid_resolutions(model)
    theta = np.arange(rows) * theta_res
    phi = np.arange(cols) * phi_res
    r = radius_of_angle(model.kind, model.focal, theta)
    src_x = cx + r[:, None] * np.cos(phi)[None, :]
    src_y = cy + r[:, None] * np.sin(phi)[None, :]
    ix = np.clip(np.rint(src_x).astype(np.intp), 0, w - 1)
    iy = np.clip(np.rint(src_y).astype(np.intp), 0, h - 1)
    return PolarImage(img[iy, ix], theta_res, phi_res, model)


def source_hit_mask(
    model: FisheyeModel, shape: tuple[int, int], supersample: int = 3
) -> np.ndarray:
    """Count how often each source pixel falls under a polar cell footprint.

    Each cell covers a (theta_res x phi_res) patch of the disc, not just its
    node, so the footprint is rasterized at `supersample` points per axis.
    With supersample=1 this degenerates to node-only sampling, which can
    skip a small fraction of rim pixels.
    """
    h, w = shape
    cx, cy = model.optical_center
    theta_res, phi_res, rows, cols = _grid_resolutions(model)
    sub = (np.arange(supersample) - (supersample - 1) / 2.0) / supersample
    counts = np.zeros(h * w, dtype=np.int64)
    theta_base = np.arange(rows) * theta_res
    phi_base = np.arange(cols) * phi_res
    for dt in sub:
        theta = np.clip(theta_base + dt * theta_res, 0.0, model.theta_max)
        r = radius_of_angle(model.kind, model.focal, theta)
        for dp in sub:
            phi = phi_base + dp * phi_res
            ix = np.clip(np.rint(cx + r[:, None] * np.cos(phi)[None, :]).astype(np.intp), 0, w - 1)
            iy = np.clip(np.rint(cy + r[:, None] * np.sin(phi)[None, :]).astype(np.intp), 0, h - 1)
            np.add.at(counts, (iy * w + ix).ravel(), 1)
    return counts.reshape(h, w)


def map_coords(
    direction: MapDirection,
    coords: tuple[float, float],
    model: FisheyeModel,
) -> tuple[float, float]:
    """Exact coordinate transfer between fisheye (x, y) and polar (col, row).

    Polar coordinates are (column, row) to keep the (x, y) ordering of image
    axes. Inverse pair: POLAR_TO_FISHEYE(FISHEYE_TO_POLAR(p)) == p within 1 px.
    """
    theta_res, phi_res, rows, cols = _grid_resolutions(model)
    cx, cy = model.optical_center
    if direction is MapDirection.FISHEYE_TO_POLAR:
        dx, dy = coords[0] - cx, coords[1] - cy
        r = math.hypot(dx, dy)
        if r > model.image_circle_radius + 1e-9:
            raise OutOfRangeError(f"radius {r:.3f} px outside image circle")
        theta = float(angle_of_radius(model.kind, model.focal, r))
        if r == 0.0:
            return (0.0, 0.0)  # pole canonicalized to column 0
        phi = math.atan2(dy, dx) % (2.0 * math.pi)
        return (phi / phi_res, theta / theta_res)
    col, row = coords
    theta = row * theta_res
    if not -1e-9 <= theta <= model.theta_max + 1e-9:
        raise OutOfRangeError(f"row {row} outside [0, {rows - 1}]")
    phi = (col * phi_res) % (2.0 * math.pi)
    r = float(radius_of_angle(model.kind, model.focal, theta))
    return (cx + r * math.cos(phi), cy + r * math.sin(phi))


def write_metadata(path, polar: PolarImage):
    """Plain-text sidecar describing a rectified image."""
    rows, cols = polar.pixels.shape
    Path(path).write_text(
        f"theta_resolution {polar.theta_resolution!r}\n"
        f"phi_resolution {polar.phi_resolution!r}\n"
        f"rows {rows}\n"
        f"cols {cols}\n"
        f"source_model_hash {polar.source_model.config_hash()}\n"
    )
