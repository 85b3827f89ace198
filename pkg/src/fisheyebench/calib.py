"""Spherical-epipolar self-calibration of the one-parameter fisheye model.

The camera is modelled by a single parameter a = 1/(2f) of the equisolid
projection r = 2 f sin(theta / 2), so a pixel at radial distance r lifts to
the unit sphere at theta = 2 asin(a r). Two views are related by an
essential matrix acting on sphere rays: q_b' E q_a = 0. Estimation runs
RANSAC over a grid of candidate a values, solving the eight-point problem
per sample and scoring by the angular distance of q_b from the epipolar
plane of q_a.

Hypothesis batches are solved with a batched eigendecomposition of the 9x9
normal matrices, which keeps the 50000-iteration cap tractable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateError,
    NoModelError,
    OutOfDomainError,
    TooFewMatchesError,
    TooFewRunsError,
)

STABILITY_PARAMETERS = ("a", "X_el", "Y_el", "Z_el", "X_er", "Y_er", "Z_er", "epsilon")

_CHUNK = 512


@dataclass(frozen=True)
class RansacConfig:
    a_grid: np.ndarray
    inlier_threshold: float  # radians
    max_iterations: int = 50000
    sample_size: int = 8
    confidence: float = 0.99
    seed: int = 0

    def __post_init__(self):
        grid = np.atleast_1d(np.asarray(self.a_grid, dtype=float))
        if grid.size == 0 or np.any(grid <= 0):
            raise ValueError("a_grid must hold positive values")
        object.__setattr__(self, "a_grid", grid)
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be > 0")
        if self.sample_size < 8:
            raise ValueError("sample_size must be >= 8")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")


def default_a_grid(a_nominal: float, n: int = 61) -> np.ndarray:
    return np.linspace(0.8 * a_nominal, 1.2 * a_nominal, n)


@dataclass(frozen=True)
class CalibEstimate:
    a: float
    essential: np.ndarray  # 3x3, Frobenius norm 1
    epipole_left: np.ndarray  # unit 3-vector
    epipole_right: np.ndarray
    inliers: np.ndarray  # match indices
    epsilon: float  # mean inlier angular residual, radians
    iterations_used: int


@dataclass(frozen=True)
class StabilityStats:
    mean: dict[str, float]
    std: dict[str, float]  # population convention
    avg_inliers: float
    avg_iterations: float
    ratio_attempted_det: float
    ratio_inliers_det: float
    ratio_inliers_attempted: float
    n_runs: int = 0


def rays_from_matches(pixels: np.ndarray, a: float, center: tuple[float, float]) -> np.ndarray:
    """Lift pixels to unit sphere rays under candidate parameter a.

    theta = 2 asin(a r); requires a * r <= 1 everywhere.
    """
    pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
    dx = pix[:, 0] - center[0]
    dy = pix[:, 1] - center[1]
    r = np.hypot(dx, dy)
    ar = a * r
    if np.any(ar > 1.0 + 1e-12):
        raise OutOfDomainError(f"a*r = {ar.max():.6f} exceeds 1")
    theta = 2.0 * np.arcsin(np.clip(ar, 0.0, 1.0))
    st = np.sin(theta)
    with np.errstate(invalid="ignore"):
        scale = np.where(r > 0, st / np.where(r > 0, r, 1.0), 0.0)
    return np.stack([dx * scale, dy * scale, np.cos(theta)], axis=1)


def _design_matrix(rays_a: np.ndarray, rays_b: np.ndarray) -> np.ndarray:
    # row-major E: constraint sum_ij q_b[i] E[i,j] q_a[j] = 0
    return (rays_b[:, :, None] * rays_a[:, None, :]).reshape(len(rays_a), 9)


def _project_essential(E: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(E)
    sm = (s[0] + s[1]) / 2.0
    E = u @ np.diag([sm, sm, 0.0]) @ vt
    return E / np.linalg.norm(E)


def eight_point(rays_a: np.ndarray, rays_b: np.ndarray) -> np.ndarray:
    """Least-squares essential matrix from >= 8 unit-ray pairs."""
    qa = np.asarray(rays_a, dtype=float).reshape(-1, 3)
    qb = np.asarray(rays_b, dtype=float).reshape(-1, 3)
    if len(qa) != len(qb):
        raise ValueError("ray sets differ in length")
    if len(qa) < 8:
        raise DegenerateError(f"need >= 8 pairs, got {len(qa)}")
    A = _design_matrix(qa, qb)
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    if s[7] < 1e-10 * max(s[0], 1e-300):
        raise DegenerateError("design matrix is rank deficient")
    return _project_essential(vt[-1].reshape(3, 3))


def angular_residual(
    E: np.ndarray, rays_a: np.ndarray, rays_b: np.ndarray, symmetric: bool = False
) -> np.ndarray:
    """Angle of q_b out of the epipolar plane of q_a (radians, >= 0)."""
    qa = np.asarray(rays_a, dtype=float).reshape(-1, 3)
    qb = np.asarray(rays_b, dtype=float).reshape(-1, 3)
    Eqa = qa @ E.T
    num = np.einsum("ni,ni->n", qb, Eqa)
    fwd = np.abs(np.arcsin(np.clip(num / np.maximum(np.linalg.norm(Eqa, axis=1), 1e-300), -1, 1)))
    if not symmetric:
        return fwd
    Etqb = qb @ E
    bwd = np.abs(np.arcsin(np.clip(num / np.maximum(np.linalg.norm(Etqb, axis=1), 1e-300), -1, 1)))
    return np.maximum(fwd, bwd)


def epipoles_from_E(E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(left, right) epipoles as null vectors, sign-canonicalized to +X.

    E qa = 0 at the left-image epipole (right null space), E' qb = 0 at the
    right-image epipole (left null space).
    """
    u, _, vt = np.linalg.svd(E)
    left = vt[2]
    right = u[:, 2]
    if left[0] < 0:
        left = -left
    if right[0] < 0:
        right = -right
    return left, right


def _batched_eight_point(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Essential matrices for (batch, 8, 3) ray samples via 9x9 eigh."""
    A = (qb[:, :, :, None] * qa[:, :, None, :]).reshape(qa.shape[0], qa.shape[1], 9)
    M = np.einsum("bki,bkj->bij", A, A)
    _, vecs = np.linalg.eigh(M)
    E = vecs[:, :, 0].reshape(-1, 3, 3)
    u, s, vt = np.linalg.svd(E)
    sm = (s[:, 0] + s[:, 1]) / 2.0
    diag = np.zeros_like(E)
    diag[:, 0, 0] = sm
    diag[:, 1, 1] = sm
    E = u @ diag @ vt
    return E / np.linalg.norm(E, axis=(1, 2), keepdims=True)


def _batch_residuals(E: np.ndarray, qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """(batch, n) angular residuals of all matches against each hypothesis."""
    Eqa = np.matmul(qa, E.transpose(0, 2, 1))
    num = np.einsum("bni,ni->bn", Eqa, qb)
    den = np.sqrt(np.einsum("bni,bni->bn", Eqa, Eqa))
    return np.abs(np.arcsin(np.clip(num / np.maximum(den, 1e-300), -1.0, 1.0)))


def _needed_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> float:
    w = min(max(inlier_ratio, 0.0), 1.0)
    ws = w**sample_size
    if ws >= 1.0:
        return 1.0
    if ws <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - ws)


def ransac_calibrate(
    pixels_a: np.ndarray,
    pixels_b: np.ndarray,
    center: tuple[float, float],
    config: RansacConfig,
) -> CalibEstimate:
    """Joint (a, E) RANSAC: grid over a, eight-point per sample.

    Best hypothesis ranks by (inlier count, lower mean inlier residual),
    ties resolved by iteration index then grid index, so a fixed seed gives
    a byte-identical estimate. The final model is refit on the inliers of
    the winning hypothesis.
    """
    pa = np.asarray(pixels_a, dtype=float).reshape(-1, 2)
    pb = np.asarray(pixels_b, dtype=float).reshape(-1, 2)
    if len(pa) != len(pb):
        raise ValueError("match sides differ in length")
    n = len(pa)
    if n < config.sample_size:
        raise TooFewMatchesError(f"need >= {config.sample_size} matches, got {n}")

    # candidate a values whose domain covers every match radius
    grid_rays = []
    for g, a in enumerate(config.a_grid):
        try:
            qa = rays_from_matches(pa, a, center)
            qb = rays_from_matches(pb, a, center)
        except OutOfDomainError:
            continue
        grid_rays.append((g, a, qa, qb))
    if not grid_rays:
        raise OutOfDomainError("no grid candidate covers the match radii")

    rng = np.random.default_rng(config.seed)
    best_count = -1
    best_mean = math.inf
    best = None  # (grid index, E, inlier mask)
    done = 0
    thresh = config.inlier_threshold
    # chunks grow so easy (high-inlier) problems stop after few iterations
    chunk_size = 64
    while done < config.max_iterations:
        chunk = min(chunk_size, config.max_iterations - done)
        chunk_size = min(chunk_size * 2, _CHUNK)
        samples = rng.random((chunk, n)).argsort(axis=1)[:, : config.sample_size]
        for g, a, qa, qb in grid_rays:
            E = _batched_eight_point(qa[samples], qb[samples])
            res = _batch_residuals(E, qa, qb)
            inl = res < thresh
            counts = inl.sum(axis=1)
            sums = np.where(inl, res, 0.0).sum(axis=1)
            means = np.where(counts > 0, sums / np.maximum(counts, 1), math.inf)
            order = np.lexsort((np.arange(chunk), means, -counts))
            t = int(order[0])
            c, m = int(counts[t]), float(means[t])
            if c > best_count or (c == best_count and m < best_mean):
                best_count, best_mean = c, m
                best = (g, E[t], inl[t])
        done += chunk
        if best_count >= config.sample_size:
            needed = _needed_iterations(
                best_count / n, config.sample_size, config.confidence
            )
            if done >= needed:
                break

    if best is None or best_count < config.sample_size:
        raise NoModelError(f"no hypothesis reached {config.sample_size} inliers")

    g, _, hypothesis_inliers = best
    a = float(config.a_grid[g])
    qa = rays_from_matches(pa, a, center)
    qb = rays_from_matches(pb, a, center)
    idx = np.nonzero(hypothesis_inliers)[0]
    E = eight_point(qa[idx], qb[idx])
    res = angular_residual(E, qa, qb)
    inliers = np.nonzero(res < thresh)[0]
    if len(inliers) == 0:
        inliers = idx
    epsilon = float(res[inliers].mean())
    left, right = epipoles_from_E(E)
    return CalibEstimate(
        a=a,
        essential=E,
        epipole_left=left,
        epipole_right=right,
        inliers=inliers,
        epsilon=epsilon,
        iterations_used=done,
    )


def _run_parameters(run: CalibEstimate) -> dict[str, float]:
    return {
        "a": run.a,
        "X_el": float(run.epipole_left[0]),
        "Y_el": float(run.epipole_left[1]),
        "Z_el": float(run.epipole_left[2]),
        "X_er": float(run.epipole_right[0]),
        "Y_er": float(run.epipole_right[1]),
        "Z_er": float(run.epipole_right[2]),
        "epsilon": run.epsilon,
    }


def stability_stats(
    runs: list[CalibEstimate], n_det_min: int, n_attempted: int
) -> StabilityStats:
    """Per-parameter mean and population std over repeated calibrations."""
    if len(runs) < 2:
        raise TooFewRunsError(f"need >= 2 runs, got {len(runs)}")
    table = {p: np.array([_run_parameters(r)[p] for r in runs]) for p in STABILITY_PARAMETERS}
    avg_inliers = float(np.mean([len(r.inliers) for r in runs]))
    avg_iterations = float(np.mean([r.iterations_used for r in runs]))
    return StabilityStats(
        mean={p: float(v.mean()) for p, v in table.items()},
        std={p: float(v.std()) for p, v in table.items()},
        avg_inliers=avg_inliers,
        avg_iterations=avg_iterations,
        ratio_attempted_det=n_attempted / n_det_min,
        ratio_inliers_det=avg_inliers / n_det_min,
        ratio_inliers_attempted=avg_inliers / n_attempted,
        n_runs=len(runs),
    )


def stability_csv_row(setup_id: str, stats: StabilityStats) -> tuple[list[str], list[str]]:
    """(header, row) for the stability report: setup id, Avg/Std per parameter."""
    header = ["setup"]
    row = [setup_id]
    for p in STABILITY_PARAMETERS:
        header += [f"avg_{p}", f"std_{p}"]
        row += [f"{stats.mean[p]:.9g}", f"{stats.std[p]:.9g}"]
    header += [
        "avg_inliers",
        "avg_iterations_used",
        "ratio_attempted_det",
        "ratio_inliers_det",
        "ratio_inliers_attempted",
    ]
    row += [
        f"{stats.avg_inliers:.6f}",
        f"{stats.avg_iterations:.2f}",
        f"{stats.ratio_attempted_det:.6f}",
        f"{stats.ratio_inliers_det:.6f}",
        f"{stats.ratio_inliers_attempted:.6f}",
    ]
    return header, row
