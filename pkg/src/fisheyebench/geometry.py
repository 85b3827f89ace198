"""Fisheye projection models, pose algebra and back-projection.

Conventions (locked by tests):
  - Camera frame is right-handed: x right, y down (image y grows downward),
    z along the optical axis into the scene.
  - Azimuth phi is measured counter-clockwise from the +x image axis, so a
    ray (dx, dy, dz) lands at pixel center + r * (cos phi, sin phi) with
    phi = atan2(dy, dx).
  - "Gimbal XZY" Euler angles compose as R = Ry(ry) @ Rz(rz) @ Rx(rx)
    (outermost gimbal X), active rotations.
  - Distances are Euclidean range along the ray, not planar depth.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, InvalidDistanceError, OutOfCircleError

DISTANCE_CAP_M = 500.0


class ProjectionKind(Enum):
    EQUIDISTANT = "equidistant"
    EQUISOLID = "equisolid"


def radius_of_angle(kind: ProjectionKind, focal: float, theta):
    """Radial image distance of incidence angle theta (radians)."""
    theta = np.asarray(theta, dtype=float)
    if kind is ProjectionKind.EQUIDISTANT:
        return focal * theta
    return 2.0 * focal * np.sin(theta / 2.0)


def angle_of_radius(kind: ProjectionKind, focal: float, r):
    """Incidence angle for a radial image distance (inverse of radius_of_angle)."""
    r = np.asarray(r, dtype=float)
    if kind is ProjectionKind.EQUIDISTANT:
        return r / focal
    return 2.0 * np.arcsin(np.clip(r / (2.0 * focal), -1.0, 1.0))


def focal_from_fov(kind: ProjectionKind, fov_deg: float, image_circle_radius: float) -> float:
    """Focal length (pixels) such that theta = fov/2 maps to the circle rim."""
    if not 0.0 < fov_deg <= 360.0:
        raise ValueError(f"fov must be in (0, 360], got {fov_deg}")
    theta_max = math.radians(fov_deg) / 2.0
    if kind is ProjectionKind.EQUIDISTANT:
        return image_circle_radius / theta_max
    return image_circle_radius / (2.0 * math.sin(theta_max / 2.0))


@dataclass(frozen=True)
class FisheyeModel:
    kind: ProjectionKind
    focal: float
    optical_center: tuple[float, float]
    image_circle_radius: float
    fov: float  # degrees

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal must be > 0")
        if self.image_circle_radius <= 0:
            raise ValueError("image_circle_radius must be > 0")
        if not 0.0 < self.fov <= 360.0:
            raise ValueError("fov must be in (0, 360]")
        rim = radius_of_angle(self.kind, self.focal, math.radians(self.fov) / 2.0)
        if abs(float(rim) - self.image_circle_radius) > 1e-6:
            raise ValueError(
                f"model inconsistent: radius at fov/2 is {float(rim):.8f} px, "
                f"image circle radius is {self.image_circle_radius} px"
            )

    @classmethod
    def from_fov(
        cls,
        kind: ProjectionKind,
        fov_deg: float,
        image_circle_radius: float,
        optical_center: tuple[float, float],
    ) -> "FisheyeModel":
        focal = focal_from_fov(kind, fov_deg, image_circle_radius)
        return cls(kind, focal, optical_center, image_circle_radius, fov_deg)

    @property
    def theta_max(self) -> float:
        return math.radians(self.fov) / 2.0

    def config_text(self) -> str:
        cx, cy = self.optical_center
        return (
            f"kind {self.kind.value}\n"
            f"focal {self.focal!r}\n"
            f"cx {cx!r}\n"
            f"cy {cy!r}\n"
            f"circle_radius {self.image_circle_radius!r}\n"
            f"fov {self.fov!r}\n"
        )

    def config_hash(self) -> str:
        return hashlib.sha1(self.config_text().encode()).hexdigest()[:12]

    def save(self, path):
        Path(path).write_text(self.config_text())

    @classmethod
    def load(cls, path) -> "FisheyeModel":
        fields = {}
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" ")
            fields[key] = value
        try:
            return cls(
                kind=ProjectionKind(fields["kind"]),
                focal=float(fields["focal"]),
                optical_center=(float(fields["cx"]), float(fields["cy"])),
                image_circle_radius=float(fields["circle_radius"]),
                fov=float(fields["fov"]),
            )
        except (KeyError, ValueError) as exc:
            raise CorruptFileError(f"bad camera config {path}: {exc}") from exc


@dataclass(frozen=True)
class Ray:
    """Unit direction in the camera frame."""

    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-12:
            d = d / n
        object.__setattr__(self, "direction", d)


def rotation_x(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rotation_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rotation_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def euler_xzy_to_rotation(rx: float, ry: float, rz: float) -> np.ndarray:
    """Gimbal-order X, Z, Y rotation: outermost gimbal X, applied first."""
    return rotation_y(ry) @ rotation_z(rz) @ rotation_x(rx)


def rotation_to_euler_xzy(rotation: np.ndarray) -> tuple[float, float, float]:
    """Inverse of euler_xzy_to_rotation (degrees); assumes |rz| < 90."""
    # R = Ry Rz Rx: R[1,0] = sin(rz); R[1,1] = cos(rz)cos(rx); R[1,2] = -cos(rz)sin(rx)
    rz = math.asin(np.clip(rotation[1, 0], -1.0, 1.0))
    rx = math.atan2(-rotation[1, 2], rotation[1, 1])
    ry = math.atan2(-rotation[2, 0], rotation[0, 0])
    return math.degrees(rx), math.degrees(ry), math.degrees(rz)


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform: X_world = R @ X_cam + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if abs(np.linalg.det(r) - 1.0) > 1e-9 or not np.allclose(
            r.T @ r, np.eye(3), atol=1e-9
        ):
            raise ValueError("rotation must be orthonormal with det 1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other-in-self's-frame: world pose of a child."""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (pts - self.translation) @ self.rotation

    @property
    def center(self) -> np.ndarray:
        return self.translation


def project_ray(model: FisheyeModel, ray: Ray) -> tuple[float, float] | None:
    """Pixel of a camera-frame ray, or None when theta exceeds fov/2."""
    d = ray.direction
    theta = math.atan2(math.hypot(d[0], d[1]), d[2])
    if theta > model.theta_max + 1e-12:
        return None
    r = float(radius_of_angle(model.kind, model.focal, theta))
    phi = math.atan2(d[1], d[0])
    cx, cy = model.optical_center
    return (cx + r * math.cos(phi), cy + r * math.sin(phi))


def project_rays(model: FisheyeModel, directions: np.ndarray):
    """Vectorized projection. Returns (pixels (n,2), in_field mask)."""
    d = np.asarray(directions, dtype=float)
    rho = np.hypot(d[..., 0], d[..., 1])
    theta = np.arctan2(rho, d[..., 2])
    in_field = theta <= model.theta_max + 1e-12
    r = radius_of_angle(model.kind, model.focal, theta)
    with np.errstate(invalid="ignore"):
        scale = np.where(rho > 0, r / np.where(rho > 0, rho, 1.0), 0.0)
    cx, cy = model.optical_center
    pix = np.stack([cx + d[..., 0] * scale, cy + d[..., 1] * scale], axis=-1)
    return pix, in_field


def unproject_pixel(model: FisheyeModel, pixel: tuple[float, float]) -> Ray:
    """Analytic inverse of project_ray; raises OutOfCircleError beyond the rim."""
    cx, cy = model.optical_center
    dx, dy = pixel[0] - cx, pixel[1] - cy
    r = math.hypot(dx, dy)
    if r > model.image_circle_radius + 1e-9:
        raise OutOfCircleError(f"radius {r:.3f} px outside circle {model.image_circle_radius} px")
    theta = float(angle_of_radius(model.kind, model.focal, r))
    if r == 0.0:
        return Ray(np.array([0.0, 0.0, 1.0]))
    phi = math.atan2(dy, dx)
    st = math.sin(theta)
    return Ray(np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)]))


def unproject_pixels(model: FisheyeModel, pixels: np.ndarray):
    """Vectorized inverse projection. Returns (directions, in_circle mask)."""
    pix = np.asarray(pixels, dtype=float)
    cx, cy = model.optical_center
    dx, dy = pix[..., 0] - cx, pix[..., 1] - cy
    r = np.hypot(dx, dy)
    in_circle = r <= model.image_circle_radius + 1e-9
    theta = angle_of_radius(model.kind, model.focal, r)
    st = np.sin(theta)
    with np.errstate(invalid="ignore"):
        scale = np.where(r > 0, st / np.where(r > 0, r, 1.0), 0.0)
    dirs = np.stack([dx * scale, dy * scale, np.cos(theta)], axis=-1)
    return dirs, in_circle


def back_project(
    model: FisheyeModel,
    pose: Pose,
    pixel: tuple[float, float],
    distance: float,
    cap: float = DISTANCE_CAP_M,
) -> np.ndarray:
    """World point of a pixel at the given Euclidean range along its ray."""
    if not np.isfinite(distance) or distance <= 0 or distance > cap:
        raise InvalidDistanceError(f"distance {distance} outside (0, {cap}]")
    ray = unproject_pixel(model, pixel)
    return pose.apply(distance * ray.direction)


def back_project_many(
    model: FisheyeModel,
    pose: Pose,
    pixels: np.ndarray,
    distances: np.ndarray,
    cap: float = DISTANCE_CAP_M,
):
    """Vectorized back-projection. Returns (world points, valid mask)."""
    dist = np.asarray(distances, dtype=float)
    dirs, in_circle = unproject_pixels(model, np.asarray(pixels, dtype=float))
    valid = in_circle & np.isfinite(dist) & (dist > 0) & (dist <= cap)
    pts = pose.apply(dirs * dist[..., None])
    return pts, valid
