"""Descriptor matching: brute force, ratio test, approximate NN.

Real descriptors (float32) compare with the euclidean distance, binary
descriptors (packed uint8 bits) with the Hamming distance. The approximate
matcher is a forest of randomized projection trees and works on real
vectors only. All strategies are deterministic; ties go to the lowest
train index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TypeMismatchError, UnsupportedMetricError

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


@dataclass(frozen=True)
class AttemptedMatch:
    index_a: int
    index_b: int
    distance: float


@dataclass(frozen=True)
class ApproxNNParams:
    n_trees: int = 8
    leaf_size: int = 16
    seed: int = 0


def is_binary(desc: np.ndarray) -> bool:
    return desc.dtype == np.uint8


def _check_compatible(a: np.ndarray, b: np.ndarray):
    if a.dtype != b.dtype or a.shape[1:] != b.shape[1:]:
        raise TypeMismatchError(
            f"descriptor sets differ: {a.dtype}{a.shape[1:]} vs {b.dtype}{b.shape[1:]}"
        )
    if a.dtype not in (np.float32, np.uint8):
        raise TypeMismatchError(f"unsupported descriptor dtype {a.dtype}")


def descriptor_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L2 for real vectors, popcount-of-xor for packed bit strings."""
    a = np.atleast_1d(np.asarray(a))
    b = np.atleast_1d(np.asarray(b))
    _check_compatible(a.reshape(1, -1), b.reshape(1, -1))
    if is_binary(a):
        return float(_POPCOUNT[np.bitwise_xor(a, b)].sum())
    return float(np.linalg.norm(a.astype(np.float64) - b.astype(np.float64)))


def distance_matrix(query: np.ndarray, train: np.ndarray) -> np.ndarray:
    _check_compatible(query, train)
    if is_binary(query):
        xor = np.bitwise_xor(query[:, None, :], train[None, :, :])
        return _POPCOUNT[xor].sum(axis=2).astype(np.float64)
    q = query.astype(np.float64)
    t = train.astype(np.float64)
    d2 = (q * q).sum(1)[:, None] + (t * t).sum(1)[None, :] - 2.0 * q @ t.T
    return np.sqrt(np.maximum(d2, 0.0))


def match_brute_force(desc_a: np.ndarray, desc_b: np.ndarray) -> list[AttemptedMatch]:
    """Global nearest train descriptor for each query (at most one match each)."""
    if len(desc_a) == 0 or len(desc_b) == 0:
        return []
    dm = distance_matrix(desc_a, desc_b)
    nearest = dm.argmin(axis=1)  # argmin takes the lowest index on ties
    return [
        AttemptedMatch(i, int(j), float(dm[i, j])) for i, j in enumerate(nearest)
    ]


def match_ratio_test(
    desc_a: np.ndarray, desc_b: np.ndarray, ratio: float = 0.8
) -> list[AttemptedMatch]:
    """Keep the nearest neighbour only when d1/d2 < ratio.

    With a single train descriptor d2 is +inf, so the lone candidate is
    accepted. Equal d1 == d2 > 0 is rejected (ratio 1 is not < ratio).
    """
    if len(desc_a) == 0 or len(desc_b) == 0:
        return []
    dm = distance_matrix(desc_a, desc_b)
    out = []
    for i in range(dm.shape[0]):
        row = dm[i]
        j = int(row.argmin())
        d1 = float(row[j])
        if dm.shape[1] == 1:
            d2 = np.inf
        else:
            rest = np.delete(row, j)
            d2 = float(rest.min())
        # d2 == 0 means identical twins on the train side: ambiguous, reject
        accept = d2 > 0.0 and d1 / d2 < ratio
        if accept:
            out.append(AttemptedMatch(i, j, d1))
    return out


class _ProjectionTree:
    """Random-hyperplane partition tree over real descriptors."""

    def __init__(self, data: np.ndarray, indices: np.ndarray, leaf_size: int, rng):
        self.leaf: np.ndarray | None = None
        if len(indices) <= leaf_size:
            self.leaf = indices
            return
        dim = data.shape[1]
        normal = rng.standard_normal(dim)
        proj = data[indices] @ normal
        thresh = float(np.median(proj))
        left = indices[proj <= thresh]
        right = indices[proj > thresh]
        if len(left) == 0 or len(right) == 0:  # degenerate split
            self.leaf = indices
            return
        self.normal, self.thresh = normal, thresh
        self.left = _ProjectionTree(data, left, leaf_size, rng)
        self.right = _ProjectionTree(data, right, leaf_size, rng)

    def query(self, vec: np.ndarray) -> np.ndarray:
        node = self
        while node.leaf is None:
            node = node.left if vec @ node.normal <= node.thresh else node.right
        return node.leaf


def match_approx_nn(
    desc_a: np.ndarray, desc_b: np.ndarray, params: ApproxNNParams = ApproxNNParams()
) -> list[AttemptedMatch]:
    """Approximate nearest neighbour via a randomized projection-tree forest.

    Recall vs brute force grows with n_trees and leaf_size (the knobs).
    Real descriptors only.
    """
    _check_compatible(desc_a, desc_b)
    if is_binary(desc_a):
        raise UnsupportedMetricError("approximate NN supports euclidean descriptors only")
    if len(desc_a) == 0 or len(desc_b) == 0:
        return []
    data = desc_b.astype(np.float64)
    rng = np.random.default_rng(params.seed)
    all_idx = np.arange(len(data))
    trees = [
        _ProjectionTree(data, all_idx, params.leaf_size, rng) for _ in range(params.n_trees)
    ]
    out = []
    for i, q in enumerate(desc_a.astype(np.float64)):
        cand = np.unique(np.concatenate([t.query(q) for t in trees]))
        d = np.linalg.norm(data[cand] - q, axis=1)
        k = int(d.argmin())
        out.append(AttemptedMatch(i, int(cand[k]), float(d[k])))
    return out


def match(
    desc_a: np.ndarray,
    desc_b: np.ndarray,
    strategy: str = "bruteforce",
    ratio: float = 0.8,
    approx_params: ApproxNNParams = ApproxNNParams(),
    cross_check: bool = False,
) -> list[AttemptedMatch]:
    """Dispatch on strategy name: bruteforce | ratiotest | approxnn."""
    if strategy == "bruteforce":
        matches = match_brute_force(desc_a, desc_b)
    elif strategy == "ratiotest":
        matches = match_ratio_test(desc_a, desc_b, ratio)
    elif strategy == "approxnn":
        matches = match_approx_nn(desc_a, desc_b, approx_params)
    else:
        raise ValueError(f"unknown matching strategy {strategy!r}")
    if cross_check and matches:
        reverse = match_brute_force(desc_b, desc_a)
        back = {m.index_a: m.index_b for m in reverse}
        matches = [m for m in matches if back.get(m.index_b) == m.index_a]
    return matches
