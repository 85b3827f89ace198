"""Sequence ingestion and keypoint-file interchange.

Manifest format (plain text, whitespace-separated key/value pairs, then a
frame table after a ``frames:`` line)::

    front.kind equidistant
    front.fov 181.8
    front.circle_radius 300
    front.cx 300
    front.cy 300
    rear.kind equidistant
    rear.fov 181.8
    rear.circle_radius 300
    rear.cx 300
    rear.cy 300
    rear_offset.baseline_x 2.0
    rear_offset.rotation_xzy -8 6 -7
    distance.encoding raw32f            # or: png16 <scale> <offset>
    distance.cap 500
    frames:
    0 f_img f_dist f_sky r_img r_dist r_sky 0.0 0.0 0.0

Frame columns: id, front image / distance / sky mask, rear image / distance /
sky mask, then the front-camera pose as X, Y (meters) and yaw around Z
(degrees). ``-`` stands for a missing sky mask (treated as all-valid).
Paths are relative to the manifest. World frame is Z-up by default; cameras
aim along +Z (zenith).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    BadPoseRecordError,
    CorruptFileError,
    DimensionMismatchError,
    MissingFileError,
    TruncatedFileError,
    UnknownEncodingError,
    VersionMismatchError,
)
from .features import Keypoint
from .geometry import (
    DISTANCE_CAP_M,
    FisheyeModel,
    Pose,
    ProjectionKind,
    euler_xzy_to_rotation,
    rotation_z,
)

KEYPOINT_MAGIC = b"FBKP"
KEYPOINT_VERSION = 1


@dataclass(frozen=True)
class DistanceMap:
    values: np.ndarray  # meters, float64
    validity: np.ndarray  # bool; False for sky / out-of-cap pixels
    cap: float = DISTANCE_CAP_M


@dataclass(frozen=True)
class View:
    image: np.ndarray
    distance: DistanceMap
    sky_mask: np.ndarray | None  # True where sky
    model: FisheyeModel
    pose: Pose


@dataclass(frozen=True)
class StereoPair:
    frame_id: str
    front: View
    rear: View


@dataclass(frozen=True)
class Rig:
    front_model: FisheyeModel
    rear_model: FisheyeModel
    rear_offset: Pose  # rear camera expressed in the front camera frame


@dataclass(frozen=True)
class Sequence:
    frames: list[StereoPair]
    rig: Rig
    trajectory: list[Pose]  # front-camera pose per frame


def front_pose_from_record(x: float, y: float, yaw_deg: float) -> Pose:
    """Front-camera world pose from the (X, Y, yaw-around-Z) trajectory record."""
    return Pose(rotation_z(yaw_deg), np.array([x, y, 0.0]))


def rear_offset_pose(baseline_x: float, rotation_xzy_deg: tuple[float, float, float]) -> Pose:
    rx, ry, rz = rotation_xzy_deg
    return Pose(euler_xzy_to_rotation(rx, ry, rz), np.array([baseline_x, 0.0, 0.0]))


# ---------------------------------------------------------------------------
# Distance maps


def decode_distance_map(
    path,
    encoding: str,
    shape: tuple[int, int] | None = None,
    scale: float = 1.0,
    offset: float = 0.0,
    cap: float = DISTANCE_CAP_M,
) -> DistanceMap:
    """Decode a distance file to meters; flags sky/out-of-cap pixels invalid.

    ``raw32f``: little-endian float32, row-major; needs ``shape``.
    ``png16``: 16-bit grayscale PNG decoded as value * scale + offset.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFileError(str(path))
    if encoding == "raw32f":
        if shape is None:
            raise ValueError("raw32f needs an explicit shape")
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != shape[0] * shape[1]:
            raise CorruptFileError(
                f"{path}: {raw.size} floats, expected {shape[0] * shape[1]}"
            )
        values = raw.astype(np.float64).reshape(shape)
    elif encoding == "png16":
        try:
            arr = np.asarray(Image.open(path))
        except Exception as exc:
            raise CorruptFileError(f"{path}: {exc}") from exc
        values = arr.astype(np.float64) * scale + offset
    else:
        raise UnknownEncodingError(encoding)
    with np.errstate(invalid="ignore"):
        validity = np.isfinite(values) & (values > 0) & (values <= cap)
    return DistanceMap(values=values, validity=validity, cap=cap)


def write_raw32f(path, values: np.ndarray):
    np.asarray(values, dtype="<f4").tofile(path)


# ---------------------------------------------------------------------------
# Keypoint files (versioned binary; text header, little-endian records)


@dataclass(frozen=True)
class KeypointFile:
    image_id: str
    detector_id: str
    parameter_string: str
    keypoints: list[Keypoint]
    descriptors: np.ndarray | None = None  # float32 (n, k) or packed uint8 bits
    descriptor_bits: int = 0  # bit width for binary descriptors


def write_keypoints(path, payload: KeypointFile):
    kps = payload.keypoints
    desc = payload.descriptors
    if desc is None:
        dtag, width = b"n", 0
    elif desc.dtype == np.float32:
        dtag, width = b"f", desc.shape[1]
    elif desc.dtype == np.uint8:
        dtag, width = b"b", payload.descriptor_bits or desc.shape[1] * 8
    else:
        raise ValueError(f"unsupported descriptor dtype {desc.dtype}")
    if desc is not None and len(desc) != len(kps):
        raise ValueError("descriptor count must match keypoint count")
    header = "\n".join([payload.image_id, payload.detector_id, payload.parameter_string])
    hbytes = header.encode()
    with open(path, "wb") as fh:
        fh.write(KEYPOINT_MAGIC)
        fh.write(struct.pack("<H", KEYPOINT_VERSION))
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(struct.pack("<cII", dtag, width, len(kps)))
        for i, kp in enumerate(kps):
            fh.write(
                struct.pack(
                    "<5d", kp.x, kp.y, kp.scale, kp.orientation, kp.response
                )
            )
            fh.write(b"P" if kp.frame == "polar" else b"F")
            if desc is not None:
                fh.write(desc[i].tobytes())


def read_keypoints(path) -> KeypointFile:
    data = Path(path).read_bytes()
    if len(data) < 6 or data[:4] != KEYPOINT_MAGIC:
        raise VersionMismatchError(f"{path}: bad magic")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != KEYPOINT_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {KEYPOINT_VERSION}")
    pos = 6
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = data[pos : pos + hlen].decode()
    pos += hlen
    try:
        image_id, detector_id, parameter_string = header.split("\n")
    except ValueError as exc:
        raise CorruptFileError(f"{path}: malformed header") from exc
    dtag, width, count = struct.unpack_from("<cII", data, pos)
    pos += struct.calcsize("<cII")
    if dtag == b"n":
        desc_bytes = 0
    elif dtag == b"f":
        desc_bytes = width * 4
    elif dtag == b"b":
        desc_bytes = (width + 7) // 8
    else:
        raise CorruptFileError(f"{path}: unknown descriptor tag {dtag!r}")
    record = 5 * 8 + 1 + desc_bytes
    if len(data) - pos < count * record:
        raise TruncatedFileError(f"{path}: expected {count} records")
    kps: list[Keypoint] = []
    rows = []
    for _ in range(count):
        x, y, scale, orientation, response = struct.unpack_from("<5d", data, pos)
        pos += 40
        frame = "polar" if data[pos : pos + 1] == b"P" else "fisheye"
        pos += 1
        kps.append(Keypoint(x, y, scale, orientation, response, frame))
        if desc_bytes:
            rows.append(np.frombuffer(data, dtype=np.uint8, count=desc_bytes, offset=pos))
            pos += desc_bytes
    descriptors = None
    bits = 0
    if dtag == b"f":
        descriptors = (
            np.stack(rows).view(np.float32).reshape(count, width)
            if rows
            else np.empty((0, width), np.float32)
        )
    elif dtag == b"b":
        descriptors = (
            np.stack(rows) if rows else np.empty((0, desc_bytes), np.uint8)
        )
        bits = width
    return KeypointFile(image_id, detector_id, parameter_string, kps, descriptors, bits)


# ---------------------------------------------------------------------------
# Manifests


def _load_image(path: Path) -> np.ndarray:
    if not path.exists():
        raise MissingFileError(str(path))
    try:
        return np.asarray(Image.open(path).convert("L"))
    except MissingFileError:
        raise
    except Exception as exc:
        raise CorruptFileError(f"{path}: {exc}") from exc


def _model_from_keys(kv: dict, prefix: str) -> FisheyeModel:
    try:
        return FisheyeModel.from_fov(
            kind=ProjectionKind(kv[f"{prefix}.kind"]),
            fov_deg=float(kv[f"{prefix}.fov"]),
            image_circle_radius=float(kv[f"{prefix}.circle_radius"]),
            optical_center=(float(kv[f"{prefix}.cx"]), float(kv[f"{prefix}.cy"])),
        )
    except (KeyError, ValueError) as exc:
        raise CorruptFileError(f"bad {prefix} camera keys: {exc}") from exc


def load_sequence(manifest_path) -> Sequence:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFileError(str(manifest_path))
    root = manifest_path.parent
    kv: dict[str, str] = {}
    frame_lines: list[str] = []
    in_frames = False
    for line in manifest_path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "frames:":
            in_frames = True
            continue
        if in_frames:
            frame_lines.append(line)
        else:
            key, _, value = line.partition(" ")
            kv[key] = value.strip()

    front_model = _model_from_keys(kv, "front")
    rear_model = _model_from_keys(kv, "rear")
    offset = rear_offset_pose(
        float(kv.get("rear_offset.baseline_x", "2.0")),
        tuple(float(v) for v in kv.get("rear_offset.rotation_xzy", "0 0 0").split()),
    )
    rig = Rig(front_model, rear_model, offset)
    cap = float(kv.get("distance.cap", str(DISTANCE_CAP_M)))
    enc_parts = kv.get("distance.encoding", "raw32f").split()
    encoding = enc_parts[0]
    scale = float(enc_parts[1]) if len(enc_parts) > 1 else 1.0
    doffset = float(enc_parts[2]) if len(enc_parts) > 2 else 0.0

    frames: list[StereoPair] = []
    trajectory: list[Pose] = []
    for line in frame_lines:
        parts = line.split()
        if len(parts) != 10:
            raise BadPoseRecordError(f"frame line needs 10 fields: {line!r}")
        fid = parts[0]
        try:
            x, y, yaw = (float(v) for v in parts[7:10])
        except ValueError as exc:
            raise BadPoseRecordError(f"bad pose in {line!r}") from exc
        front_pose = front_pose_from_record(x, y, yaw)
        rear_pose = front_pose.compose(offset)
        views = []
        for img_p, dist_p, sky_p, model, pose in (
            (parts[1], parts[2], parts[3], front_model, front_pose),
            (parts[4], parts[5], parts[6], rear_model, rear_pose),
        ):
            image = _load_image(root / img_p)
            dist = decode_distance_map(
                root / dist_p, encoding, shape=image.shape, scale=scale,
                offset=doffset, cap=cap,
            )
            if dist.values.shape != image.shape:
                raise DimensionMismatchError(
                    f"frame {fid}: distance map {dist.values.shape} vs image {image.shape}"
                )
            sky = None
            if sky_p != "-":
                sky = _load_image(root / sky_p) > 127
                if sky.shape != image.shape:
                    raise DimensionMismatchError(
                        f"frame {fid}: sky mask {sky.shape} vs image {image.shape}"
                    )
                # sky pixels are never valid
                dist = DistanceMap(dist.values, dist.validity & ~sky, dist.cap)
            views.append(View(image, dist, sky, model, pose))
        frames.append(StereoPair(fid, views[0], views[1]))
        trajectory.append(front_pose)
    return Sequence(frames=frames, rig=rig, trajectory=trajectory)
