import numpy as np
import pytest

from fisheyebench import synth
from fisheyebench.dataset import StereoPair, front_pose_from_record
from fisheyebench.geometry import FisheyeModel, ProjectionKind


@pytest.fixture(scope="session")
def small_model() -> FisheyeModel:
    return FisheyeModel.from_fov(ProjectionKind.EQUIDISTANT, 181.8, 100.0, (100.0, 100.0))


@pytest.fixture(scope="session")
def room_pair() -> StereoPair:
    scene = synth.room_scene(seed=1)
    rig = synth.pfseq_like_rig(300)
    return synth.render_pair(scene, rig, front_pose_from_record(0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def urban_pair() -> StereoPair:
    scene = synth.urban_canyon_scene(seed=0)
    rig = synth.pfseq_like_rig(300)
    return synth.render_pair(scene, rig, front_pose_from_record(0.0, 0.0, 0.0))


def epipolar_matches(
    seed: int,
    n: int,
    focal: float = 394.30930624379033,
    center=(600.0, 600.0),
    rotation_xzy=(-8.0, 6.0, -7.0),
    baseline=(2.0, 0.0, 0.0),
    noise_deg: float = 0.0,
):
    """Exact equisolid pixel correspondences between two cameras.

    Returns (pixels_a, pixels_b, R, t). Camera A is at the origin; camera B
    has camera-to-world pose (R, t). Optional angular noise perturbs the
    B-side rays.
    """
    from fisheyebench.geometry import euler_xzy_to_rotation

    rng = np.random.default_rng(seed)
    R = euler_xzy_to_rotation(*rotation_xzy)
    t = np.asarray(baseline, dtype=float)
    a = 1.0 / (2.0 * focal)
    pts = rng.uniform(-15.0, 15.0, (n, 3))
    pts[:, 2] = rng.uniform(3.0, 30.0, n)
    qa = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    pb = (pts - t) @ R
    qb = pb / np.linalg.norm(pb, axis=1, keepdims=True)
    if noise_deg > 0:
        axis = rng.standard_normal((n, 3))
        axis -= (axis * qb).sum(1, keepdims=True) * qb
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        ang = np.radians(noise_deg) * rng.standard_normal(n)[:, None]
        qb = qb * np.cos(ang) + axis * np.sin(ang)
        qb /= np.linalg.norm(qb, axis=1, keepdims=True)

    def to_pix(q):
        theta = np.arccos(np.clip(q[:, 2], -1.0, 1.0))
        r = np.sin(theta / 2.0) / a
        phi = np.arctan2(q[:, 1], q[:, 0])
        return np.stack(
            [center[0] + r * np.cos(phi), center[1] + r * np.sin(phi)], axis=1
        )

    return to_pix(qa), to_pix(qb), R, t


def outlier_pixels(seed: int, n: int, center=(600.0, 600.0), radius: float = 550.0):
    rng = np.random.default_rng(seed)
    ang = rng.uniform(0.0, 2.0 * np.pi, (2, n))
    rad = np.sqrt(rng.uniform(0.0, 1.0, (2, n))) * radius
    a = np.stack([center[0] + rad[0] * np.cos(ang[0]), center[1] + rad[0] * np.sin(ang[0])], axis=1)
    b = np.stack([center[0] + rad[1] * np.cos(ang[1]), center[1] + rad[1] * np.sin(ang[1])], axis=1)
    return a, b
