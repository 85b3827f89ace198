"""Raycast generator of fisheye stereo pairs with exact ground truth.

Scenes are axis-aligned textured boxes plus an optional ground plane in a
Z-up world; cameras aim at the zenith (+Z). Every rendered pixel carries the
exact Euclidean range to the first surface along its ray, so back-projected
points land on the geometry to machine precision. Pixels that hit nothing
are sky (procedural gradient, invalid distance). Pixels outside the image
circle get a flat border fill.

Textures are procedural (checker plus lattice-hash noise, seeded), so the
whole render is a pure function of (scene, model, pose).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial.transform import Rotation as ScipyRotation

from .dataset import DistanceMap, Rig, StereoPair, View, write_raw32f
from .geometry import DISTANCE_CAP_M, FisheyeModel, Pose, ProjectionKind, unproject_pixels

BORDER_FILL = 0.2


@dataclass(frozen=True)
class Scene:
    """Axis-aligned boxes (n, 2, 3: lo/hi corners) with procedural texture."""

    boxes: np.ndarray
    ground_plane: bool = True
    seed: int = 0
    checker_size: float = 1.0
    noise_amp: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "boxes", np.asarray(self.boxes, dtype=float).reshape(-1, 2, 3))


def urban_canyon_scene(seed: int = 0) -> Scene:
    """Simplified street canyon: two rows of building blocks along X."""
    boxes = []
    rng = np.random.default_rng(seed)
    for i in range(-3, 4):
        x0 = i * 9.0
        h_left = 14.0 + 8.0 * rng.random()
        h_right = 14.0 + 8.0 * rng.random()
        boxes.append([[x0, -8.0, 0.0], [x0 + 7.5, -4.0, h_left]])
        boxes.append([[x0, 4.0, 0.0], [x0 + 7.5, 8.0, h_right]])
    return Scene(np.array(boxes), ground_plane=True, seed=seed, checker_size=0.8)


def room_scene(half_extent: float = 12.0, height: float = 10.0, seed: int = 0) -> Scene:
    """Single box enclosing the origin: every ray hits geometry (no sky)."""
    box = [[-half_extent, -half_extent, -1.0], [half_extent, half_extent, height]]
    return Scene(np.array([box]), ground_plane=False, seed=seed, checker_size=0.6)


def _lattice_hash(ix: np.ndarray, iy: np.ndarray, iz: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic pseudo-random value in [0, 1) per integer lattice cell."""
    h = (
        ix.astype(np.int64) * 73856093
        ^ iy.astype(np.int64) * 19349663
        ^ iz.astype(np.int64) * 83492791
        ^ np.int64(seed) * 2654435761
    )
    h = (h ^ (h >> 13)) * 1274126177
    return ((h ^ (h >> 16)) & 0xFFFFFF) / float(0x1000000)


def _texture(scene: Scene, points: np.ndarray) -> np.ndarray:
    c = scene.checker_size
    cells = np.floor(points / c)
    checker = (cells.sum(axis=-1) % 2.0 >= 1.0).astype(float)
    fine = np.floor(points / (0.25 * c))
    noise = _lattice_hash(fine[..., 0], fine[..., 1], fine[..., 2], scene.seed)
    val = 0.2 + 0.45 * checker + scene.noise_amp * noise
    return np.clip(val, 0.0, 1.0)


def _sky(directions: np.ndarray) -> np.ndarray:
    # gentle elevation gradient, nearly featureless
    return np.clip(0.65 + 0.25 * directions[..., 2], 0.0, 1.0)


def raycast(scene: Scene, origin: np.ndarray, directions: np.ndarray):
    """First-hit ranges for unit world-frame rays from a common origin.

    Returns (ranges, hit mask, hit points). Rays starting inside a box hit
    its far face, so a closed room renders from the inside.
    """
    d = np.asarray(directions, dtype=float)
    flat = d.reshape(-1, 3)
    n = flat.shape[0]
    best_t = np.full(n, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / flat
        for lo, hi in scene.boxes:
            t1 = (lo - origin) * inv
            t2 = (hi - origin) * inv
            t_enter = np.minimum(t1, t2).max(axis=1)
            t_exit = np.maximum(t1, t2).min(axis=1)
            hit_t = np.where(t_enter > 1e-9, t_enter, t_exit)
            ok = (t_exit >= t_enter) & (hit_t > 1e-9)
            best_t = np.where(ok & (hit_t < best_t), hit_t, best_t)
        if scene.ground_plane:
            t_g = -origin[2] * inv[:, 2]
            ok = (flat[:, 2] != 0) & (t_g > 1e-9)
            best_t = np.where(ok & (t_g < best_t), t_g, best_t)
    hit = np.isfinite(best_t)
    t = np.where(hit, best_t, 0.0)
    points = origin + flat * t[:, None]
    return t.reshape(d.shape[:-1]), hit.reshape(d.shape[:-1]), points.reshape(d.shape)


def _shade(scene: Scene, world_dirs, hit, points) -> np.ndarray:
    img = np.where(hit, _texture(scene, points), _sky(world_dirs))
    return img


def render_rays(scene: Scene, model: FisheyeModel, pose: Pose, pixels: np.ndarray):
    """Raycast at (possibly sub-pixel) image coordinates.

    Returns (gray values in [0,1], ranges, hit mask, in-circle mask).
    """
    dirs_cam, in_circle = unproject_pixels(model, pixels)
    world_dirs = dirs_cam @ pose.rotation.T
    t, hit, points = raycast(scene, pose.center, world_dirs)
    gray = _shade(scene, world_dirs, hit, points)
    gray = np.where(in_circle, gray, BORDER_FILL)
    hit = hit & in_circle
    return gray, np.where(hit, t, np.nan), hit, in_circle


def render_view(
    scene: Scene,
    model: FisheyeModel,
    pose: Pose,
    shape: tuple[int, int] | None = None,
    cap: float = DISTANCE_CAP_M,
):
    """Render one view. Returns (uint8 image, DistanceMap, sky mask)."""
    if shape is None:
        side = int(math.ceil(2 * model.image_circle_radius))
        shape = (side, side)
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    pixels = np.stack([xs, ys], axis=-1)
    gray, ranges, hit, in_circle = render_rays(scene, model, pose, pixels)
    valid = hit & (np.nan_to_num(ranges, nan=np.inf) <= cap)
    values = np.where(valid, np.nan_to_num(ranges), 0.0)
    dist = DistanceMap(values=values, validity=valid, cap=cap)
    sky = in_circle & ~hit
    image = np.clip(np.rint(gray * 255.0), 0, 255).astype(np.uint8)
    return image, dist, sky


@dataclass(frozen=True)
class Motion:
    """Rig motion over one exposure, in the world frame."""

    angular_velocity: np.ndarray  # rad/s, axis-angle rate
    linear_velocity: np.ndarray  # m/s
    exposure: float  # seconds
    subsamples: int = 8

    def __post_init__(self):
        if self.subsamples < 1:
            raise ValueError("subsamples must be >= 1")
        object.__setattr__(self, "angular_velocity", np.asarray(self.angular_velocity, float))
        object.__setattr__(self, "linear_velocity", np.asarray(self.linear_velocity, float))


def _pose_at(pose: Pose, motion: Motion, tau: float) -> Pose:
    # rotation pivots on the camera's own center
    rot = ScipyRotation.from_rotvec(motion.angular_velocity * tau).as_matrix()
    return Pose(rot @ pose.rotation, pose.translation + motion.linear_velocity * tau)


def render_pair(
    scene: Scene,
    rig: Rig,
    front_pose: Pose,
    motion: Motion | None = None,
    shape: tuple[int, int] | None = None,
    frame_id: str = "0",
) -> StereoPair:
    """Render both rig views; blur averaged over the exposure, ground truth
    (distance map, sky mask) taken at the mid-exposure pose."""
    rear_pose = front_pose.compose(rig.rear_offset)
    views = []
    for model, pose in ((rig.front_model, front_pose), (rig.rear_model, rear_pose)):
        image, dist, sky = render_view(scene, model, pose, shape)
        if motion is not None and motion.subsamples >= 1 and (
            np.any(motion.angular_velocity) or np.any(motion.linear_velocity)
        ):
            k = motion.subsamples
            taus = (np.arange(k) + 0.5) / k * motion.exposure - motion.exposure / 2.0
            acc = np.zeros(image.shape, dtype=np.float64)
            for tau in taus:
                sub, _, _ = render_view(scene, model, _pose_at(pose, motion, tau), shape)
                acc += sub
            image = np.clip(np.rint(acc / k), 0, 255).astype(np.uint8)
        views.append(View(image, dist, sky, model, pose))
    return StereoPair(frame_id, views[0], views[1])


def pfseq_like_rig(size: int = 600) -> Rig:
    """PFSeq-style equidistant rig scaled to a square render of `size` px."""
    radius = size / 2.0
    center = ((size - 1) / 2.0, (size - 1) / 2.0)
    model = FisheyeModel.from_fov(ProjectionKind.EQUIDISTANT, 181.8, radius, center)
    from .dataset import rear_offset_pose

    return Rig(model, model, rear_offset_pose(2.0, (-8.0, 6.0, -7.0)))


def generate_sequence(
    scene: Scene,
    rig: Rig,
    trajectory: list[tuple[float, float, float]],
    out_dir,
    motion: Motion | None = None,
    shape: tuple[int, int] | None = None,
) -> Path:
    """Render a trajectory of (x, y, yaw_deg) records and write a manifest."""
    from .dataset import front_pose_from_record

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (x, y, yaw) in enumerate(trajectory):
        pair = render_pair(scene, rig, front_pose_from_record(x, y, yaw), motion, shape, str(i))
        names = []
        for tag, view in (("front", pair.front), ("rear", pair.rear)):
            img_name = f"{i:04d}_{tag}.png"
            dist_name = f"{i:04d}_{tag}.dist"
            sky_name = f"{i:04d}_{tag}_sky.png"
            Image.fromarray(view.image).save(out / img_name)
            write_raw32f(out / dist_name, view.distance.values)
            Image.fromarray((view.sky_mask.astype(np.uint8)) * 255).save(out / sky_name)
            names.extend([img_name, dist_name, sky_name])
        lines.append(f"{i} " + " ".join(names) + f" {x} {y} {yaw}")

    front, rear = rig.front_model, rig.rear_model
    from .geometry import rotation_to_euler_xzy

    rx, ry, rz = rotation_to_euler_xzy(rig.rear_offset.rotation)
    manifest = out / "manifest.txt"
    text = []
    for prefix, m in (("front", front), ("rear", rear)):
        cx, cy = m.optical_center
        text += [
            f"{prefix}.kind {m.kind.value}",
            f"{prefix}.fov {m.fov!r}",
            f"{prefix}.circle_radius {m.image_circle_radius!r}",
            f"{prefix}.cx {cx!r}",
            f"{prefix}.cy {cy!r}",
        ]
    text += [
        f"rear_offset.baseline_x {float(rig.rear_offset.translation[0])!r}",
        f"rear_offset.rotation_xzy {rx:.9f} {ry:.9f} {rz:.9f}",
        "distance.encoding raw32f",
        f"distance.cap {DISTANCE_CAP_M}",
        "frames:",
        *lines,
    ]
    manifest.write_text("\n".join(text) + "\n")
    return manifest
