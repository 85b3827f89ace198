"""Baseline detectors and descriptors.

Detectors: difference-of-Gaussians blob detector (DoG), Harris corners, and
a FAST-style segment-test detector over an image pyramid with Harris-score
ranking (FastPyramid). Descriptors: a 128-float gradient-orientation
histogram (GradHist) and a 256-bit rotated intensity-comparison string
(RotBinary). Parameter names mirror the common OpenCV semantics
(contrast_threshold, edge_threshold, sigma, n_octave_layers, pattern_scale).

Everything is deterministic: same image and parameters give the identical
keypoint list (descending response, ties broken by (y, x)). The RotBinary
sampling pattern is generated from a fixed seed so descriptors are
comparable across machines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import EmptyInputError, ImageTooSmallError

FRAME_FISHEYE = "fisheye"
FRAME_POLAR = "polar"

ROT_BINARY_SEED = 42
ROT_BINARY_BITS = 256
_PATTERN_RADIUS = 15.0


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float  # radians in [0, 2*pi)
    response: float
    frame: str = FRAME_FISHEYE

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be > 0")
        object.__setattr__(self, "orientation", float(self.orientation) % (2.0 * math.pi))


class DetectorAlgorithm(Enum):
    DOG = "dog"
    HARRIS = "harris"
    FAST_PYRAMID = "fastpyramid"


class DescriptorKind(Enum):
    GRAD_HIST = "gradhist"
    ROT_BINARY = "rotbinary"


@dataclass(frozen=True)
class DetectorParams:
    algorithm: DetectorAlgorithm = DetectorAlgorithm.DOG
    # DoG
    contrast_threshold: float = 0.04
    edge_threshold: float = 10.0
    sigma: float = 1.6
    n_octave_layers: int = 3
    # Harris
    block_size: int = 3
    harris_k: float = 0.04
    # FastPyramid
    intensity_threshold: float = 0.08
    levels: int = 4
    scale_factor: float = 1.26

    def __post_init__(self):
        if self.contrast_threshold <= 0 or self.edge_threshold <= 0 or self.sigma <= 0:
            raise ValueError("DoG thresholds and sigma must be > 0")
        if self.n_octave_layers < 1:
            raise ValueError("n_octave_layers must be >= 1")
        if self.intensity_threshold <= 0 or self.levels < 1 or self.scale_factor <= 1.0:
            raise ValueError("bad FastPyramid parameters")

    def setup_string(self) -> str:
        if self.algorithm is DetectorAlgorithm.DOG:
            return f"dog {self.contrast_threshold} {self.edge_threshold} {self.sigma}"
        if self.algorithm is DetectorAlgorithm.HARRIS:
            return f"harris {self.block_size} {self.harris_k}"
        return f"fastpyramid {self.intensity_threshold} {self.levels} {self.scale_factor}"


@dataclass(frozen=True)
class DescriptorParams:
    kind: DescriptorKind = DescriptorKind.GRAD_HIST
    pattern_scale: float = 1.0  # RotBinary only

    def setup_string(self) -> str:
        if self.kind is DescriptorKind.GRAD_HIST:
            return "gradhist"
        return f"rotbinary {self.pattern_scale}"


def _to_float_gray(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 3:
        img = img.mean(axis=2)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def _sort_keypoints(kps: list[Keypoint]) -> list[Keypoint]:
    return sorted(kps, key=lambda k: (-k.response, k.y, k.x, k.orientation))


# ---------------------------------------------------------------------------
# DoG detector


def _n_octaves(w: int, h: int) -> int:
    n = int(math.floor(math.log2(min(w, h))))
    # octaves smaller than the 3x3x3 extrema support cannot contribute
    usable = int(math.floor(math.log2(min(w, h) / 8.0))) + 1
    return max(1, min(n, usable))


def _gaussian_pyramid(base: np.ndarray, sigma: float, n_layers: int, n_oct: int):
    k = 2.0 ** (1.0 / n_layers)
    first = math.sqrt(max(sigma * sigma - 0.25, 0.01))  # assume input sigma 0.5
    octave_base = ndimage.gaussian_filter(base, first, mode="nearest")
    pyramid = []
    for _ in range(n_oct):
        gauss = [octave_base]
        for i in range(1, n_layers + 3):
            s_prev = sigma * k ** (i - 1)
            s_tot = sigma * k**i
            incr = math.sqrt(s_tot * s_tot - s_prev * s_prev)
            gauss.append(ndimage.gaussian_filter(gauss[-1], incr, mode="nearest"))
        pyramid.append(gauss)
        octave_base = gauss[n_layers][::2, ::2]
    return pyramid


def _refine_extremum(dogs, layer, y, x, n_layers):
    """3D quadratic refinement; returns (layer_off, y_off, x_off, value) or None."""
    h, w = dogs[0].shape
    for _ in range(5):
        prev_, cur, nxt = dogs[layer - 1], dogs[layer], dogs[layer + 1]
        g = np.array(
            [
                (nxt[y, x] - prev_[y, x]) / 2.0,
                (cur[y + 1, x] - cur[y - 1, x]) / 2.0,
                (cur[y, x + 1] - cur[y, x - 1]) / 2.0,
            ]
        )
        dss = prev_[y, x] + nxt[y, x] - 2 * cur[y, x]
        dyy = cur[y + 1, x] + cur[y - 1, x] - 2 * cur[y, x]
        dxx = cur[y, x + 1] + cur[y, x - 1] - 2 * cur[y, x]
        dsy = (nxt[y + 1, x] - nxt[y - 1, x] - prev_[y + 1, x] + prev_[y - 1, x]) / 4.0
        dsx = (nxt[y, x + 1] - nxt[y, x - 1] - prev_[y, x + 1] + prev_[y, x - 1]) / 4.0
        dyx = (cur[y + 1, x + 1] - cur[y + 1, x - 1] - cur[y - 1, x + 1] + cur[y - 1, x - 1]) / 4.0
        hess = np.array([[dss, dsy, dsx], [dsy, dyy, dyx], [dsx, dyx, dxx]])
        try:
            off = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(off) < 0.5):
            value = cur[y, x] + 0.5 * float(g @ off)
            # spatial Hessian for the edge test at the settled location
            return off[0], off[1], off[2], value, (dxx, dyy, dyx)
        layer += int(round(np.clip(off[0], -1, 1)))
        y += int(round(np.clip(off[1], -1, 1)))
        x += int(round(np.clip(off[2], -1, 1)))
        if not (1 <= layer <= n_layers and 1 <= y < h - 1 and 1 <= x < w - 1):
            return None
    return None


def _orientations(gauss: np.ndarray, x: float, y: float, scl_oct: float) -> list[float]:
    """36-bin gradient-orientation histogram peaks (>= 0.8 of max)."""
    h, w = gauss.shape
    radius = int(round(3.0 * 1.5 * scl_oct))
    xi, yi = int(round(x)), int(round(y))
    x0, x1 = max(xi - radius, 1), min(xi + radius, w - 2)
    y0, y1 = max(yi - radius, 1), min(yi + radius, h - 2)
    if x1 <= x0 or y1 <= y0:
        return [0.0]
    patch = gauss[y0 - 1 : y1 + 2, x0 - 1 : x1 + 2]
    gx = (patch[1:-1, 2:] - patch[1:-1, :-2]) / 2.0
    gy = (patch[2:, 1:-1] - patch[:-2, 1:-1]) / 2.0
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    d2 = (xs - x) ** 2 + (ys - y) ** 2
    weight = np.exp(-d2 / (2.0 * (1.5 * scl_oct) ** 2))
    bins = np.floor(((ang % (2 * np.pi)) / (2 * np.pi)) * 36).astype(int) % 36
    hist = np.bincount(bins.ravel(), weights=(mag * weight).ravel(), minlength=36)
    # circular smoothing, twice
    for _ in range(2):
        hist = (np.roll(hist, 1) + hist + np.roll(hist, -1)) / 3.0
    peak = hist.max()
    if peak <= 0:
        return [0.0]
    out = []
    for b in range(36):
        left, right = hist[(b - 1) % 36], hist[(b + 1) % 36]
        if hist[b] >= 0.8 * peak and hist[b] > left and hist[b] > right:
            denom = left - 2 * hist[b] + right
            interp = b + (0.5 * (left - right) / denom if denom != 0 else 0.0)
            out.append((interp % 36) / 36.0 * 2 * np.pi)
    return out or [0.0]


def _detect_dog(img: np.ndarray, params: DetectorParams) -> list[Keypoint]:
    h, w = img.shape
    if min(h, w) < 16:
        raise ImageTooSmallError(f"{w}x{h} below DoG minimum of 16 px")
    s = params.n_octave_layers
    k = 2.0 ** (1.0 / s)
    pyramid = _gaussian_pyramid(img, params.sigma, s, _n_octaves(w, h))
    edge_t = params.edge_threshold
    edge_limit = (edge_t + 1.0) ** 2 / edge_t
    kps: list[Keypoint] = []
    for octv, gauss in enumerate(pyramid):
        dogs = [b - a for a, b in zip(gauss[:-1], gauss[1:])]
        oh, ow = dogs[0].shape
        if min(oh, ow) < 8:
            continue
        stack = np.stack(dogs)
        for layer in range(1, s + 1):
            cur = stack[layer]
            neigh = stack[layer - 1 : layer + 2]
            c = cur[1:-1, 1:-1]
            is_max = np.ones_like(c, dtype=bool)
            is_min = np.ones_like(c, dtype=bool)
            for dl in range(3):
                for dy in range(3):
                    for dx in range(3):
                        if dl == 1 and dy == 1 and dx == 1:
                            continue
                        n = neigh[dl, dy : dy + oh - 2, dx : dx + ow - 2]
                        is_max &= c > n
                        is_min &= c < n
            cand = (is_max | is_min) & (np.abs(c) > 0.5 * params.contrast_threshold)
            for y, x in np.argwhere(cand) + 1:
                res = _refine_extremum(dogs, layer, y, x, s)
                if res is None:
                    continue
                off_l, off_y, off_x, value, (dxx, dyy, dyx) = res
                if abs(value) < params.contrast_threshold:
                    continue
                tr = dxx + dyy
                det = dxx * dyy - dyx * dyx
                if det <= 0 or tr * tr / det > edge_limit:
                    continue
                scl_oct = params.sigma * k ** (layer + off_l)
                fx, fy = x + off_x, y + off_y
                gidx = int(np.clip(round(layer + off_l), 0, len(gauss) - 1))
                for ori in _orientations(gauss[gidx], fx, fy, scl_oct):
                    kps.append(
                        Keypoint(
                            x=float(fx * 2**octv),
                            y=float(fy * 2**octv),
                            scale=float(scl_oct * 2**octv),
                            orientation=ori,
                            response=float(abs(value)),
                        )
                    )
    return _sort_keypoints(kps)


# ---------------------------------------------------------------------------
# Harris and FastPyramid


def _harris_response(img: np.ndarray, block_size: int, k: float) -> np.ndarray:
    gx = ndimage.sobel(img, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(img, axis=0, mode="nearest") / 8.0
    sigma = max(block_size / 2.0, 1.0)
    sxx = ndimage.gaussian_filter(gx * gx, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(gy * gy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(gx * gy, sigma, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def _nms_peaks(response: np.ndarray, threshold: float) -> np.ndarray:
    local_max = response == ndimage.maximum_filter(response, size=3, mode="nearest")
    ys, xs = np.nonzero(local_max & (response > threshold))
    border = (ys > 2) & (ys < response.shape[0] - 3) & (xs > 2) & (xs < response.shape[1] - 3)
    return np.stack([ys[border], xs[border]], axis=1)


def _detect_harris(img: np.ndarray, params: DetectorParams) -> list[Keypoint]:
    if min(img.shape) < 8:
        raise ImageTooSmallError("image below Harris minimum of 8 px")
    resp = _harris_response(img, params.block_size, params.harris_k)
    peak = resp.max()
    if peak <= 0:
        return []
    kps = [
        Keypoint(x=float(x), y=float(y), scale=float(params.block_size), orientation=0.0,
                 response=float(resp[y, x]))
        for y, x in _nms_peaks(resp, 0.01 * peak)
    ]
    return _sort_keypoints(kps)


# Bresenham circle of radius 3, (dy, dx), clockwise from 12 o'clock
_FAST_OFFSETS = np.array(
    [(-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
     (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2), (-3, -1)]
)


def _fast_corners(img: np.ndarray, threshold: float) -> np.ndarray:
    h, w = img.shape
    center = img[3 : h - 3, 3 : w - 3]
    brighter = np.ones((16,) + center.shape, dtype=bool)
    darker = np.ones_like(brighter)
    for i, (dy, dx) in enumerate(_FAST_OFFSETS):
        ring = img[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx]
        brighter[i] = ring > center + threshold
        darker[i] = ring < center - threshold
    corner = np.zeros(center.shape, dtype=bool)
    for mask in (brighter, darker):
        doubled = np.concatenate([mask, mask], axis=0)
        for start in range(16):
            corner |= doubled[start : start + 9].all(axis=0)
    ys, xs = np.nonzero(corner)
    return np.stack([ys + 3, xs + 3], axis=1)


def _centroid_orientation(img: np.ndarray, y: int, x: int, radius: int = 7) -> float:
    h, w = img.shape
    y0, y1 = max(y - radius, 0), min(y + radius + 1, h)
    x0, x1 = max(x - radius, 0), min(x + radius + 1, w)
    patch = img[y0:y1, x0:x1]
    ys, xs = np.mgrid[y0 - y : y1 - y, x0 - x : x1 - x]
    disc = ys * ys + xs * xs <= radius * radius
    m10 = float((patch * xs * disc).sum())
    m01 = float((patch * ys * disc).sum())
    return math.atan2(m01, m10) % (2.0 * math.pi)


def _resize(img: np.ndarray, scale: float) -> np.ndarray:
    h, w = img.shape
    nh, nw = max(int(round(h / scale)), 8), max(int(round(w / scale)), 8)
    ys = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    xs = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    grid = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(img, grid, order=1, mode="nearest")


def _detect_fast_pyramid(img: np.ndarray, params: DetectorParams) -> list[Keypoint]:
    if min(img.shape) < 16:
        raise ImageTooSmallError("image below FastPyramid minimum of 16 px")
    kps: list[Keypoint] = []
    for level in range(params.levels):
        factor = params.scale_factor**level
        lvl = img if level == 0 else _resize(img, factor)
        if min(lvl.shape) < 8:
            break
        corners = _fast_corners(lvl, params.intensity_threshold)
        if len(corners) == 0:
            continue
        harris = _harris_response(lvl, 3, 0.04)
        for y, x in corners:
            score = float(harris[y, x])
            if score <= 0:
                continue
            kps.append(
                Keypoint(
                    x=float(x * factor),
                    y=float(y * factor),
                    scale=float(3.0 * factor),
                    orientation=_centroid_orientation(lvl, y, x),
                    response=score,
                )
            )
    return _sort_keypoints(kps)


def detect(image: np.ndarray, params: DetectorParams) -> list[Keypoint]:
    """Run the configured detector on a grayscale image."""
    img = _to_float_gray(image)
    if params.algorithm is DetectorAlgorithm.DOG:
        return _detect_dog(img, params)
    if params.algorithm is DetectorAlgorithm.HARRIS:
        return _detect_harris(img, params)
    return _detect_fast_pyramid(img, params)


# ---------------------------------------------------------------------------
# Descriptors


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 2)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )


_GH_BINS = 4
_GH_ORI = 8


def _gradhist_one(gx, gy, shape, kp: Keypoint) -> np.ndarray | None:
    h, w = shape
    bin_width = 3.0 * kp.scale
    radius = int(round(bin_width * math.sqrt(2) * (_GH_BINS + 1) * 0.5))
    if not (radius <= kp.x <= w - 1 - radius and radius <= kp.y <= h - 1 - radius):
        return None
    cos_o, sin_o = math.cos(kp.orientation), math.sin(kp.orientation)
    rng = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(rng, rng)
    # rotate sample offsets into the keypoint frame
    rx = (cos_o * dx + sin_o * dy) / bin_width
    ry = (-sin_o * dx + cos_o * dy) / bin_width
    rbin = ry + _GH_BINS / 2 - 0.5
    cbin = rx + _GH_BINS / 2 - 0.5
    inside = (rbin > -1) & (rbin < _GH_BINS) & (cbin > -1) & (cbin < _GH_BINS)
    xs = (kp.x + dx)[inside].astype(float)
    ys = (kp.y + dy)[inside].astype(float)
    gxs = _bilinear(gx, xs, ys)
    gys = _bilinear(gy, xs, ys)
    mag = np.hypot(gxs, gys)
    ang = (np.arctan2(gys, gxs) - kp.orientation) % (2 * np.pi)
    obin = ang / (2 * np.pi) * _GH_ORI
    weight = np.exp(-(rx[inside] ** 2 + ry[inside] ** 2) / (0.5 * _GH_BINS**2))
    hist = np.zeros((_GH_BINS + 2, _GH_BINS + 2, _GH_ORI))
    r0 = np.floor(rbin[inside]).astype(int)
    c0 = np.floor(cbin[inside]).astype(int)
    o0 = np.floor(obin).astype(int)
    fr = rbin[inside] - r0
    fc = cbin[inside] - c0
    fo = obin - o0
    val = mag * weight
    for dr in (0, 1):
        for dc in (0, 1):
            for do in (0, 1):
                wgt = (
                    val
                    * (fr if dr else 1 - fr)
                    * (fc if dc else 1 - fc)
                    * (fo if do else 1 - fo)
                )
                np.add.at(
                    hist,
                    (r0 + dr + 1, c0 + dc + 1, (o0 + do) % _GH_ORI),
                    wgt,
                )
    desc = hist[1 : _GH_BINS + 1, 1 : _GH_BINS + 1, :].ravel()
    norm = np.linalg.norm(desc)
    if norm > 0:
        desc = np.minimum(desc / norm, 0.2)
        norm = np.linalg.norm(desc)
        if norm > 0:
            desc = desc / norm
    return desc.astype(np.float32)


def _rot_binary_pattern() -> np.ndarray:
    rng = np.random.default_rng(ROT_BINARY_SEED)
    pattern = rng.normal(0.0, _PATTERN_RADIUS / 2.5, size=(ROT_BINARY_BITS, 2, 2))
    return np.clip(pattern, -_PATTERN_RADIUS, _PATTERN_RADIUS)


_ROT_PATTERN = _rot_binary_pattern()


def _rotbinary_one(smooth: np.ndarray, kp: Keypoint, pattern_scale: float) -> np.ndarray | None:
    h, w = smooth.shape
    s = pattern_scale * (kp.scale / 1.6)
    reach = _PATTERN_RADIUS * s * math.sqrt(2) + 1
    if not (reach <= kp.x <= w - 1 - reach and reach <= kp.y <= h - 1 - reach):
        return None
    cos_o, sin_o = math.cos(kp.orientation), math.sin(kp.orientation)
    px = _ROT_PATTERN[..., 0] * s
    py = _ROT_PATTERN[..., 1] * s
    xs = kp.x + cos_o * px - sin_o * py
    ys = kp.y + sin_o * px + cos_o * py
    vals = _bilinear(smooth, xs, ys)
    bits = (vals[:, 0] < vals[:, 1]).astype(np.uint8)
    return np.packbits(bits)


def describe(
    image: np.ndarray,
    keypoints: list[Keypoint],
    params: DescriptorParams,
) -> tuple[np.ndarray, list[int]]:
    """Describe keypoints; returns (descriptors, surviving indices).

    GradHist gives float32 (n, 128); RotBinary packed uint8 (n, 32).
    Keypoints whose patch exceeds the image bounds are dropped; the index
    list maps descriptor rows back to the input keypoints.
    """
    if not keypoints:
        raise EmptyInputError("no keypoints to describe")
    img = _to_float_gray(image)
    kept: list[int] = []
    rows = []
    if params.kind is DescriptorKind.GRAD_HIST:
        gy, gx = np.gradient(img)
        for i, kp in enumerate(keypoints):
            d = _gradhist_one(gx, gy, img.shape, kp)
            if d is not None:
                kept.append(i)
                rows.append(d)
        width, dtype = 128, np.float32
    else:
        smooth = ndimage.gaussian_filter(img, 2.0, mode="nearest")
        for i, kp in enumerate(keypoints):
            d = _rotbinary_one(smooth, kp, params.pattern_scale)
            if d is not None:
                kept.append(i)
                rows.append(d)
        width, dtype = ROT_BINARY_BITS // 8, np.uint8
    if not rows:
        return np.empty((0, width), dtype=dtype), kept
    return np.stack(rows).astype(dtype), kept
