"""Ground-truth match oracle and evaluation metrics.

Detections are back-projected through the distance maps to 3D world points;
two detections match when their points satisfy the criterion (a metric
search sphere or an angular cone around the reference ray). Multiple
candidates resolve one-to-one by greedy ascending separation, which makes
match sets nest as the tolerance grows.

Detections whose nearest pixel is invalid (sky, beyond the cap, outside the
circle) never produce candidates but stay in the metric denominators.
Distance lookup at sub-pixel keypoint locations reads the nearest pixel:
interpolating ranges across depth discontinuities would fabricate phantom
3D points.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .dataset import StereoPair, View
from .errors import MissingDistanceMapError, ZeroDetectionsError
from .features import FRAME_POLAR, Keypoint
from .geometry import FisheyeModel, unproject_pixels
from .matching import AttemptedMatch
from .polar import MapDirection, map_coords

DEFAULT_TOLERANCES_M = (
    0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10, 0.15,
)

METRIC_CSV_COLUMNS = (
    "tolerance_m", "n_matches", "repeatability", "n_correct",
    "matching_score", "drop", "n_det_min",
)


@dataclass(frozen=True)
class MatchCriterion:
    kind: str  # "sphere" | "angular"
    threshold: float  # meters (sphere) or radians (angular half-angle)

    def __post_init__(self):
        if self.kind not in ("sphere", "angular"):
            raise ValueError(f"unknown criterion kind {self.kind!r}")
        if self.threshold <= 0:
            raise ValueError("criterion threshold must be > 0")


@dataclass(frozen=True)
class MetricRow:
    tolerance: float
    n_matches: int
    repeatability: float
    n_correct_attempted: int
    matching_score: float
    drop: float
    n_detections_min: int


@dataclass(frozen=True)
class MatchSet:
    """Oracle matches plus the back-projection context they came from."""

    pairs: np.ndarray  # (m, 2) detection indices
    separations: np.ndarray  # (m,) 3D distance (or angle) per pair
    criterion: MatchCriterion
    points_a: np.ndarray
    valid_a: np.ndarray
    points_b: np.ndarray
    valid_b: np.ndarray
    center_a: np.ndarray
    n_det_a: int
    n_det_b: int


def fisheye_coords(kp: Keypoint, model: FisheyeModel) -> tuple[float, float]:
    """Detection position in fisheye pixels, mapping polar detections back."""
    if kp.frame == FRAME_POLAR:
        return map_coords(MapDirection.POLAR_TO_FISHEYE, (kp.x, kp.y), model)
    return (kp.x, kp.y)


def back_project_detections(detections: list[Keypoint], view: View):
    """World points for detections; invalid lookups are flagged, not dropped."""
    if view.distance is None:
        raise MissingDistanceMapError("view has no distance map")
    n = len(detections)
    points = np.zeros((n, 3))
    valid = np.zeros(n, dtype=bool)
    if n == 0:
        return points, valid
    coords = np.array([fisheye_coords(kp, view.model) for kp in detections])
    h, w = view.distance.values.shape
    px = np.rint(coords[:, 0]).astype(int)
    py = np.rint(coords[:, 1]).astype(int)
    in_img = (px >= 0) & (px < w) & (py >= 0) & (py < h)
    pxc = np.clip(px, 0, w - 1)
    pyc = np.clip(py, 0, h - 1)
    dist = view.distance.values[pyc, pxc]
    ok = in_img & view.distance.validity[pyc, pxc]
    dirs, in_circle = unproject_pixels(view.model, coords)
    ok &= in_circle
    pts = view.pose.apply(dirs * dist[:, None])
    points[ok] = pts[ok]
    valid = ok
    return points, valid


def _separation(criterion: MatchCriterion, pa, pb, center_a):
    if criterion.kind == "sphere":
        return np.linalg.norm(pa - pb, axis=-1)
    da = pa - center_a
    db = pb - center_a
    na = np.linalg.norm(da, axis=-1)
    nb = np.linalg.norm(db, axis=-1)
    cosang = np.einsum("...i,...i->...", da, db) / np.maximum(na * nb, 1e-300)
    return np.arccos(np.clip(cosang, -1.0, 1.0))


def _candidate_pairs(criterion, points_a, valid_a, points_b, valid_b, center_a):
    """All (i, j, separation) pairs satisfying the criterion, both valid."""
    ia = np.nonzero(valid_a)[0]
    ib = np.nonzero(valid_b)[0]
    if len(ia) == 0 or len(ib) == 0:
        return np.empty((0, 2), int), np.empty(0)
    if criterion.kind == "sphere":
        tree_b = cKDTree(points_b[ib])
        neighbors = cKDTree(points_a[ia]).query_ball_tree(tree_b, criterion.threshold)
        rows, cols = [], []
        for k, lst in enumerate(neighbors):
            rows.extend([k] * len(lst))
            cols.extend(lst)
        if not rows:
            return np.empty((0, 2), int), np.empty(0)
        pi = ia[np.array(rows)]
        pj = ib[np.array(cols)]
        sep = np.linalg.norm(points_a[pi] - points_b[pj], axis=1)
    else:
        da = points_a[ia] - center_a
        db = points_b[ib] - center_a
        ua = da / np.linalg.norm(da, axis=1, keepdims=True)
        ub = db / np.linalg.norm(db, axis=1, keepdims=True)
        ang = np.arccos(np.clip(ua @ ub.T, -1.0, 1.0))
        r, c = np.nonzero(ang <= criterion.threshold)
        pi, pj, sep = ia[r], ib[c], ang[r, c]
    keep = sep <= criterion.threshold
    return np.stack([pi[keep], pj[keep]], axis=1), sep[keep]


def _greedy_one_to_one(pairs: np.ndarray, sep: np.ndarray):
    """Ascending-separation greedy assignment; ties broken by (i, j)."""
    if len(pairs) == 0:
        return pairs, sep
    order = np.lexsort((pairs[:, 1], pairs[:, 0], sep))
    used_a, used_b = set(), set()
    keep = []
    for k in order:
        i, j = int(pairs[k, 0]), int(pairs[k, 1])
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        keep.append(k)
    keep = np.array(keep, dtype=int)
    return pairs[keep], sep[keep]


def greedy_match_points(
    points_a: np.ndarray,
    points_b: np.ndarray,
    criterion: MatchCriterion,
    center_a=None,
    valid_a: np.ndarray | None = None,
    valid_b: np.ndarray | None = None,
):
    """One-to-one greedy matching of 3D point sets under the criterion.

    Returns (pairs (m, 2), separations (m,)). The angular criterion needs
    center_a, the reference camera center.
    """
    pa = np.asarray(points_a, dtype=float).reshape(-1, 3)
    pb = np.asarray(points_b, dtype=float).reshape(-1, 3)
    va = np.ones(len(pa), bool) if valid_a is None else np.asarray(valid_a, bool)
    vb = np.ones(len(pb), bool) if valid_b is None else np.asarray(valid_b, bool)
    if center_a is None:
        center_a = np.zeros(3)
    cand, sep = _candidate_pairs(criterion, pa, va, pb, vb, np.asarray(center_a, float))
    return _greedy_one_to_one(cand, sep)


def ground_truth_matches(
    det_a: list[Keypoint],
    det_b: list[Keypoint],
    pair: StereoPair,
    criterion: MatchCriterion,
) -> MatchSet:
    """Oracle matches between two detection lists over a stereo pair."""
    points_a, valid_a = back_project_detections(det_a, pair.front)
    points_b, valid_b = back_project_detections(det_b, pair.rear)
    center_a = pair.front.pose.center
    pairs, seps = greedy_match_points(
        points_a, points_b, criterion, center_a, valid_a, valid_b
    )
    return MatchSet(
        pairs=pairs, separations=seps, criterion=criterion,
        points_a=points_a, valid_a=valid_a, points_b=points_b, valid_b=valid_b,
        center_a=center_a, n_det_a=len(det_a), n_det_b=len(det_b),
    )


def metric_scores(
    match_set: MatchSet,
    attempted: list[AttemptedMatch],
    criterion: MatchCriterion | None = None,
    n_det_a: int | None = None,
    n_det_b: int | None = None,
) -> MetricRow:
    """Repeatability / matching score row for one tolerance.

    A correct attempted match is an attempted pair whose back-projections
    satisfy the criterion, counted after one-to-one deduplication keeping
    the smallest separation per detection.
    """
    criterion = criterion or match_set.criterion
    na = match_set.n_det_a if n_det_a is None else n_det_a
    nb = match_set.n_det_b if n_det_b is None else n_det_b
    n_min = min(na, nb)
    if n_min == 0:
        raise ZeroDetectionsError("minimum detection count is zero")
    n_matches = len(match_set.pairs)
    repeatability = n_matches / n_min

    correct_pairs = []
    correct_seps = []
    for m in attempted:
        if not (match_set.valid_a[m.index_a] and match_set.valid_b[m.index_b]):
            continue
        s = float(
            _separation(
                criterion,
                match_set.points_a[m.index_a],
                match_set.points_b[m.index_b],
                match_set.center_a,
            )
        )
        if s <= criterion.threshold:
            correct_pairs.append((m.index_a, m.index_b))
            correct_seps.append(s)
    if correct_pairs:
        dedup, _ = _greedy_one_to_one(np.array(correct_pairs), np.array(correct_seps))
        n_correct = len(dedup)
    else:
        n_correct = 0
    matching_score = n_correct / n_min
    return MetricRow(
        tolerance=criterion.threshold,
        n_matches=n_matches,
        repeatability=repeatability,
        n_correct_attempted=n_correct,
        matching_score=matching_score,
        drop=repeatability - matching_score,
        n_detections_min=n_min,
    )


def sweep(
    pair: StereoPair,
    det_a: list[Keypoint],
    det_b: list[Keypoint],
    attempted: list[AttemptedMatch],
    tolerances=DEFAULT_TOLERANCES_M,
    kind: str = "sphere",
) -> list[MetricRow]:
    """One MetricRow per tolerance (ascending); default is the 12-value sweep."""
    tol = list(tolerances)
    if any(b <= a for a, b in zip(tol, tol[1:])):
        raise ValueError("tolerances must be ascending")
    rows = []
    for t in tol:
        crit = MatchCriterion(kind, t)
        ms = ground_truth_matches(det_a, det_b, pair, crit)
        rows.append(metric_scores(ms, attempted))
    return rows


def spreading_score(
    keypoints: list[Keypoint],
    model: FisheyeModel,
    n_radial: int = 4,
    n_azimuthal: int = 8,
    fill_threshold: int = 2,
) -> float:
    """Fraction of equal-area polar cells holding >= fill_threshold keypoints.

    Radial edges at r_max * sqrt(k / n_radial) give cells of equal area.
    """
    if n_radial < 1 or n_azimuthal < 1:
        raise ValueError("grid must be at least 1x1")
    counts = np.zeros((n_radial, n_azimuthal), dtype=int)
    cx, cy = model.optical_center
    rmax = model.image_circle_radius
    for kp in keypoints:
        x, y = fisheye_coords(kp, model)
        dx, dy = x - cx, y - cy
        r = math.hypot(dx, dy)
        if r > rmax:
            continue
        ri = min(int(n_radial * (r / rmax) ** 2), n_radial - 1)
        phi = math.atan2(dy, dx) % (2.0 * math.pi)
        ai = min(int(phi / (2.0 * math.pi) * n_azimuthal), n_azimuthal - 1)
        counts[ri, ai] += 1
    return float((counts >= fill_threshold).sum() / counts.size)


def write_metric_csv(rows: list[MetricRow], path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_CSV_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.tolerance, r.n_matches, f"{r.repeatability:.6f}",
                    r.n_correct_attempted, f"{r.matching_score:.6f}",
                    f"{r.drop:.6f}", r.n_detections_min,
                ]
            )
    return Path(path)
