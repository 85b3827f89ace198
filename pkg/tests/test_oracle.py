import math

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from fisheyebench.errors import MissingDistanceMapError, ZeroDetectionsError
from fisheyebench.features import DetectorParams, Keypoint, detect
from fisheyebench.geometry import back_project
from fisheyebench.matching import AttemptedMatch
from fisheyebench.oracle import (
    DEFAULT_TOLERANCES_M,
    METRIC_CSV_COLUMNS,
    MatchCriterion,
    MatchSet,
    back_project_detections,
    fisheye_coords,
    greedy_match_points,
    ground_truth_matches,
    metric_scores,
    spreading_score,
    sweep,
    write_metric_csv,
)


def _kp(x, y, frame="fisheye"):
    return Keypoint(float(x), float(y), 1.6, 0.0, 1.0, frame)


def _max_matching_size(points_a, points_b, tol):
    d = np.linalg.norm(points_a[:, None, :] - points_b[None, :, :], axis=2)
    graph = csr_matrix((d <= tol).astype(np.int8))
    perm = maximum_bipartite_matching(graph, perm_type="column")
    return int((perm >= 0).sum())


class TestGreedyMatching:
    def test_hand_built_instance(self):
        a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        b = np.array([[0.04, 0.0, 0.0], [1.01, 0.0, 0.0], [5.0, 0.0, 0.0]])
        pairs, seps = greedy_match_points(a, b, MatchCriterion("sphere", 0.05))
        assert pairs.tolist() == [[1, 1], [0, 0]]  # closest pair first
        assert seps[0] == pytest.approx(0.01)

    def test_one_to_one(self):
        a = np.zeros((3, 3))
        b = np.zeros((2, 3))
        pairs, _ = greedy_match_points(a, b, MatchCriterion("sphere", 0.1))
        assert len(pairs) == 2
        assert len(set(pairs[:, 0])) == 2 and len(set(pairs[:, 1])) == 2

    def test_invalid_points_excluded(self):
        a = np.zeros((2, 3))
        b = np.zeros((2, 3))
        pairs, _ = greedy_match_points(
            a, b, MatchCriterion("sphere", 0.1), valid_a=np.array([True, False])
        )
        assert pairs[:, 0].tolist() == [0]

    def test_angular_criterion_ignores_range(self):
        a = np.array([[0.0, 0.0, 5.0]])
        b = np.array([[0.0, 0.0, 25.0]])  # same direction, different range
        pairs, seps = greedy_match_points(
            a, b, MatchCriterion("angular", math.radians(0.1)), center_a=np.zeros(3)
        )
        assert len(pairs) == 1 and seps[0] == pytest.approx(0.0, abs=1e-12)

    def test_at_least_half_of_maximum(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            a = rng.uniform(0, 1, (60, 3))
            b = a + rng.normal(0, 0.05, a.shape)
            tol = 0.08
            pairs, _ = greedy_match_points(a, b, MatchCriterion("sphere", tol))
            m = _max_matching_size(a, b, tol)
            assert m / 2.0 <= len(pairs) <= m

    def test_nesting_across_tolerances(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, 1, (50, 3))
        b = a + rng.normal(0, 0.04, a.shape)
        previous = set()
        for tol in (0.01, 0.03, 0.06, 0.1, 0.2):
            pairs, _ = greedy_match_points(a, b, MatchCriterion("sphere", tol))
            current = {tuple(p) for p in pairs.tolist()}
            assert previous <= current
            previous = current

    def test_bad_criterion(self):
        with pytest.raises(ValueError):
            MatchCriterion("euclidean", 0.1)
        with pytest.raises(ValueError):
            MatchCriterion("sphere", 0.0)


def _synthetic_match_set(n=100, n_matches=34):
    # points 0..n-1 coincide across sides; matched pairs are the first block
    pts = np.zeros((n, 3))
    pts[:, 0] = np.arange(n, dtype=float)
    pairs = np.stack([np.arange(n_matches), np.arange(n_matches)], axis=1)
    return MatchSet(
        pairs=pairs,
        separations=np.zeros(n_matches),
        criterion=MatchCriterion("sphere", 0.1),
        points_a=pts,
        valid_a=np.ones(n, bool),
        points_b=pts.copy(),
        valid_b=np.ones(n, bool),
        center_a=np.zeros(3),
        n_det_a=n,
        n_det_b=n,
    )


class TestMetricScores:
    def test_table_drop_arithmetic(self):
        ms = _synthetic_match_set(100, 34)
        attempted = [AttemptedMatch(i, i, 0.0) for i in range(27)]
        row = metric_scores(ms, attempted)
        assert row.repeatability == pytest.approx(0.34)
        assert row.matching_score == pytest.approx(0.27)
        assert round(row.drop, 2) == 0.07

        ms = _synthetic_match_set(100, 7)
        attempted = [AttemptedMatch(i, i, 0.0) for i in range(6)]
        row = metric_scores(ms, attempted)
        assert round(row.drop, 2) == 0.01

    def test_incorrect_attempted_not_counted(self):
        ms = _synthetic_match_set(10, 5)
        # pairing detection i with point at x=i+5 is 5 meters off
        attempted = [AttemptedMatch(0, 5, 0.0)]
        row = metric_scores(ms, attempted)
        assert row.n_correct_attempted == 0

    def test_duplicate_attempted_deduplicated(self):
        ms = _synthetic_match_set(10, 5)
        attempted = [AttemptedMatch(0, 0, 0.0), AttemptedMatch(1, 0, 0.0)]
        # both are "correct" only if within tolerance; (1, 0) is 1 m off
        row = metric_scores(ms, attempted)
        assert row.n_correct_attempted == 1

    def test_invalid_side_excluded(self):
        ms = _synthetic_match_set(10, 5)
        object.__setattr__(ms, "valid_b", np.zeros(10, bool))
        row = metric_scores(ms, [AttemptedMatch(0, 0, 0.0)])
        assert row.n_correct_attempted == 0

    def test_zero_detections(self):
        ms = _synthetic_match_set(10, 5)
        with pytest.raises(ZeroDetectionsError):
            metric_scores(ms, [], n_det_a=0, n_det_b=10)


class TestBackProjection:
    def test_center_keypoint_matches_geometry(self, room_pair):
        view = room_pair.front
        kp = _kp(150.0, 150.0)
        pts, valid = back_project_detections([kp], view)
        assert valid[0]
        expected = back_project(
            view.model, view.pose, (150.0, 150.0), view.distance.values[150, 150]
        )
        np.testing.assert_allclose(pts[0], expected, atol=1e-12)

    def test_out_of_image_is_invalid(self, room_pair):
        pts, valid = back_project_detections([_kp(-40.0, 10.0)], room_pair.front)
        assert not valid[0]

    def test_sky_pixel_invalid(self, urban_pair):
        sky_y, sky_x = np.argwhere(urban_pair.front.sky_mask)[0]
        _, valid = back_project_detections(
            [_kp(float(sky_x), float(sky_y))], urban_pair.front
        )
        assert not valid[0]

    def test_polar_keypoint_mapped_back(self, room_pair):
        from fisheyebench.polar import MapDirection, map_coords

        view = room_pair.front
        col_row = map_coords(MapDirection.FISHEYE_TO_POLAR, (200.0, 150.0), view.model)
        kp = _kp(col_row[0], col_row[1], frame="polar")
        x, y = fisheye_coords(kp, view.model)
        assert (x, y) == pytest.approx((200.0, 150.0), abs=1e-9)

    def test_missing_distance_map(self, room_pair):
        import dataclasses

        view = dataclasses.replace(room_pair.front, distance=None)
        with pytest.raises(MissingDistanceMapError):
            back_project_detections([_kp(10, 10)], view)


class TestSweep:
    def test_default_sweep_length_and_monotonicity(self, room_pair):
        det_a = detect(room_pair.front.image, DetectorParams())
        det_b = detect(room_pair.rear.image, DetectorParams())
        rows = sweep(room_pair, det_a, det_b, [])
        assert len(rows) == 12
        assert [r.tolerance for r in rows] == list(DEFAULT_TOLERANCES_M)
        counts = [r.n_matches for r in rows]
        assert counts == sorted(counts)

    def test_non_ascending_rejected(self, room_pair):
        det = detect(room_pair.front.image, DetectorParams())
        with pytest.raises(ValueError):
            sweep(room_pair, det, det, [], tolerances=[0.1, 0.05])

    def test_identity_pair_all_matched(self, room_pair):
        from fisheyebench.dataset import StereoPair

        ident = StereoPair("id", room_pair.front, room_pair.front)
        det = detect(room_pair.front.image, DetectorParams())
        ms = ground_truth_matches(det, det, ident, MatchCriterion("sphere", 0.005))
        assert len(ms.pairs) == ms.valid_a.sum()


class TestSpreadingScore:
    @staticmethod
    def _cell_keypoints(model, per_cell, n_radial=4, n_azimuthal=8):
        cx, cy = model.optical_center
        R = model.image_circle_radius
        kps = []
        for ri in range(n_radial):
            r = math.sqrt((ri + 0.5) / n_radial) * R
            for ai in range(n_azimuthal):
                phi = (ai + 0.5) / n_azimuthal * 2.0 * math.pi
                for _ in range(per_cell):
                    kps.append(_kp(cx + r * math.cos(phi), cy + r * math.sin(phi)))
        return kps

    def test_full_grid(self, small_model):
        kps = self._cell_keypoints(small_model, per_cell=2)
        assert spreading_score(kps, small_model) == 1.0

    def test_threshold_respected(self, small_model):
        kps = self._cell_keypoints(small_model, per_cell=1)
        assert spreading_score(kps, small_model) == 0.0
        assert spreading_score(kps, small_model, fill_threshold=1) == 1.0

    def test_empty(self, small_model):
        assert spreading_score([], small_model) == 0.0

    def test_partial(self, small_model):
        kps = self._cell_keypoints(small_model, per_cell=2, n_radial=2)
        # keypoints cover rings 0 and 3 of the 4-ring default grid
        assert spreading_score(kps, small_model) == pytest.approx(0.5)


class TestCsv:
    def test_golden_file(self, tmp_path):
        ms = _synthetic_match_set(100, 34)
        rows = [metric_scores(ms, [AttemptedMatch(i, i, 0.0) for i in range(27)])]
        path = tmp_path / "metrics.csv"
        write_metric_csv(rows, path)
        text = path.read_text()
        assert text.splitlines()[0] == ",".join(METRIC_CSV_COLUMNS)
        assert text.splitlines()[1] == "0.1,34,0.340000,27,0.270000,0.070000,100"
