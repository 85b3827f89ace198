import math

import numpy as np
import pytest

from fisheyebench.errors import EmptyInputError, ImageTooSmallError
from fisheyebench.features import (
    DescriptorKind,
    DescriptorParams,
    DetectorAlgorithm,
    DetectorParams,
    Keypoint,
    describe,
    detect,
)


def _blob_image(x0=30.3, y0=33.7, sigma=3.0, size=64, amp=1.0):
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    return amp * np.exp(-((xs - x0) ** 2 + (ys - y0) ** 2) / (2.0 * sigma**2))


def _checker(size=96, cell=8):
    ys, xs = np.mgrid[0:size, 0:size]
    return ((np.floor(xs / cell) + np.floor(ys / cell)) % 2).astype(float)


class TestKeypoint:
    def test_orientation_wraps(self):
        kp = Keypoint(0.0, 0.0, 1.0, 7.0, 0.0)
        assert 0.0 <= kp.orientation < 2.0 * math.pi
        assert kp.orientation == pytest.approx(7.0 - 2.0 * math.pi)

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            Keypoint(0.0, 0.0, 0.0, 0.0, 0.0)


class TestDog:
    def test_blob_localized_subpixel(self):
        kps = detect(_blob_image(), DetectorParams())
        assert kps
        best = kps[0]
        assert best.x == pytest.approx(30.3, abs=0.2)
        assert best.y == pytest.approx(33.7, abs=0.2)
        assert 1.5 < best.scale < 4.5

    def test_contrast_threshold_filters_weak_blobs(self):
        img = _blob_image(amp=0.05)
        strong = detect(_blob_image(amp=1.0), DetectorParams(contrast_threshold=0.04))
        weak = detect(img, DetectorParams(contrast_threshold=0.04))
        assert strong and not weak
        assert detect(img, DetectorParams(contrast_threshold=0.001))

    def test_contrast_monotonic(self, room_pair):
        img = room_pair.front.image
        counts = [
            len(detect(img, DetectorParams(contrast_threshold=c)))
            for c in (0.02, 0.04, 0.08)
        ]
        assert counts[0] >= counts[1] >= counts[2]

    def test_edge_threshold_monotonic(self, room_pair):
        img = room_pair.front.image
        counts = [
            len(detect(img, DetectorParams(edge_threshold=e))) for e in (5.0, 10.0, 20.0)
        ]
        assert counts[0] <= counts[1] <= counts[2]

    def test_flat_image_has_no_keypoints(self):
        assert detect(np.full((64, 64), 0.5), DetectorParams()) == []

    def test_too_small_image(self):
        with pytest.raises(ImageTooSmallError):
            detect(np.zeros((8, 8)), DetectorParams())

    def test_deterministic_and_sorted(self, room_pair):
        a = detect(room_pair.front.image, DetectorParams())
        b = detect(room_pair.front.image, DetectorParams())
        assert a == b
        responses = [k.response for k in a]
        assert responses == sorted(responses, reverse=True)


class TestHarris:
    def test_square_corners(self):
        img = np.zeros((64, 64))
        img[20:44, 20:44] = 1.0
        kps = detect(img, DetectorParams(algorithm=DetectorAlgorithm.HARRIS))
        got = sorted((round(k.x), round(k.y)) for k in kps)
        assert got == [(20, 20), (20, 43), (43, 20), (43, 43)]

    def test_edge_only_image_rejected(self):
        img = np.zeros((64, 64))
        img[:, 32:] = 1.0  # a straight edge has no corner response
        kps = detect(img, DetectorParams(algorithm=DetectorAlgorithm.HARRIS))
        assert kps == []


class TestFastPyramid:
    def test_finds_checker_corners(self):
        kps = detect(_checker(), DetectorParams(algorithm=DetectorAlgorithm.FAST_PYRAMID))
        assert len(kps) > 20

    def test_intensity_threshold_monotonic(self):
        img = _checker() * 0.4
        counts = [
            len(
                detect(
                    img,
                    DetectorParams(
                        algorithm=DetectorAlgorithm.FAST_PYRAMID, intensity_threshold=t
                    ),
                )
            )
            for t in (0.05, 0.15, 0.5)
        ]
        assert counts[0] >= counts[1] >= counts[2]

    def test_orientation_from_centroid(self):
        # a corner with mass to its +x side points near orientation 0
        kps = detect(_checker(), DetectorParams(algorithm=DetectorAlgorithm.FAST_PYRAMID))
        assert all(0.0 <= k.orientation < 2.0 * math.pi for k in kps)


class TestSetupStrings:
    def test_dog(self):
        assert DetectorParams().setup_string() == "dog 0.04 10.0 1.6"

    def test_descriptor(self):
        assert DescriptorParams().setup_string() == "gradhist"
        assert (
            DescriptorParams(DescriptorKind.ROT_BINARY, 2.0).setup_string()
            == "rotbinary 2.0"
        )


@pytest.fixture(scope="module")
def detections(room_pair):
    return detect(room_pair.front.image, DetectorParams())


class TestDescribe:
    def test_gradhist_shape_and_norm(self, room_pair, detections):
        desc, kept = describe(room_pair.front.image, detections, DescriptorParams())
        assert desc.dtype == np.float32
        assert desc.shape[1] == 128
        assert len(kept) == len(desc)
        norms = np.linalg.norm(desc, axis=1)
        assert ((norms < 1.0 + 1e-3) | (norms == 0.0)).all()
        assert desc.max() <= 0.2 + 1e-3 + 0.2  # clamped before renormalization

    def test_rotbinary_shape(self, room_pair, detections):
        desc, kept = describe(
            room_pair.front.image, detections, DescriptorParams(DescriptorKind.ROT_BINARY)
        )
        assert desc.dtype == np.uint8
        assert desc.shape[1] == 32
        assert len(kept) == len(desc)

    def test_border_keypoints_dropped(self, room_pair):
        kps = [Keypoint(2.0, 2.0, 1.6, 0.0, 1.0)]
        desc, kept = describe(room_pair.front.image, kps, DescriptorParams())
        assert kept == []
        assert desc.shape == (0, 128)

    def test_deterministic(self, room_pair, detections):
        d1, _ = describe(room_pair.front.image, detections, DescriptorParams())
        d2, _ = describe(room_pair.front.image, detections, DescriptorParams())
        np.testing.assert_array_equal(d1, d2)

    def test_empty_input(self, room_pair):
        with pytest.raises(EmptyInputError):
            describe(room_pair.front.image, [], DescriptorParams())

    def test_identical_image_identical_descriptors(self, room_pair, detections):
        img2 = room_pair.front.image.copy()
        d1, k1 = describe(room_pair.front.image, detections, DescriptorParams())
        d2, k2 = describe(img2, detections, DescriptorParams())
        assert k1 == k2
        np.testing.assert_array_equal(d1, d2)
