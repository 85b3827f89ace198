"""Batch experiment driver.

Subcommands:
  synth-gen        render a synthetic stereo sequence to disk
  eval-detector    n_matches + repeatability tables per setup per pair
  eval-pipeline    correct matches + matching score + drop tables
  calib-stability  N-run self-calibration statistics
  report           CSV tables to SVG metric-vs-tolerance curves

Everything is configured by a YAML file; setup grids expand as Cartesian
products with explicit include/exclude lists. A config plus a seed fully
determines every emitted byte. The dataset root may come from the
FISHEYEBENCH_DATA environment variable.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import calib, oracle, synth
from .dataset import Sequence, StereoPair, front_pose_from_record, load_sequence
from .errors import BadConfigError, FisheyeBenchError
from .features import (
    FRAME_POLAR,
    DescriptorKind,
    DescriptorParams,
    DetectorAlgorithm,
    DetectorParams,
    describe,
    detect,
)
from .matching import ApproxNNParams, AttemptedMatch, match
from .oracle import DEFAULT_TOLERANCES_M, METRIC_CSV_COLUMNS, MetricRow
from .polar import polar_rectify

DATA_ROOT_ENV = "FISHEYEBENCH_DATA"

EVAL_CSV_COLUMNS = ("pair", "setup") + METRIC_CSV_COLUMNS

_DETECTOR_KEYS = (
    "algorithm", "contrast_threshold", "edge_threshold", "sigma", "n_octave_layers",
    "block_size", "harris_k", "intensity_threshold", "levels", "scale_factor",
)
_DESCRIPTOR_KEYS = ("kind", "pattern_scale")
_MATCHER_KEYS = ("strategy", "ratio", "cross_check")


@dataclass(frozen=True)
class Setup:
    pol: bool
    detector: DetectorParams
    descriptor: DescriptorParams | None = None
    matcher: dict | None = None

    def label(self) -> str:
        parts = ["pol" if self.pol else "nopol", self.detector.setup_string()]
        if self.descriptor is not None:
            parts.append(self.descriptor.setup_string())
        if self.matcher is not None:
            parts.append(self.matcher["strategy"])
        return " ".join(parts)


# ---------------------------------------------------------------------------
# Config handling


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise BadConfigError(f"config not found: {path}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark else ""
        raise BadConfigError(f"invalid YAML in {path}{where}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise BadConfigError(f"config {path} must be a mapping")
    return cfg


def _expand_grid(section: dict, allowed: tuple, where: str) -> list[dict]:
    """Cartesian product of the grid lists, plus include, minus exclude."""
    if not isinstance(section, dict):
        raise BadConfigError(f"{where}: expected a mapping with a 'grid' key")
    grid = section.get("grid", {})
    unknown = set(grid) - set(allowed)
    if unknown:
        raise BadConfigError(f"{where}.grid: unknown fields {sorted(unknown)}")
    for key, vals in grid.items():
        if not isinstance(vals, list) or not vals:
            raise BadConfigError(f"{where}.grid.{key}: expected a non-empty list")
    keys = list(grid)
    combos = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    for extra in section.get("include", []):
        if not isinstance(extra, dict) or set(extra) - set(allowed):
            raise BadConfigError(f"{where}.include: bad entry {extra!r}")
        combos.append(extra)
    for drop in section.get("exclude", []):
        if not isinstance(drop, dict):
            raise BadConfigError(f"{where}.exclude: bad entry {drop!r}")
        combos = [c for c in combos if not all(c.get(k) == v for k, v in drop.items())]
    if not combos:
        raise BadConfigError(f"{where}: grid expands to no setups")
    return combos


def _detector_from_dict(d: dict, where: str) -> DetectorParams:
    d = dict(d)
    try:
        if "algorithm" in d:
            d["algorithm"] = DetectorAlgorithm(d["algorithm"])
        return DetectorParams(**d)
    except (ValueError, TypeError) as exc:
        raise BadConfigError(f"{where}: {exc}") from exc


def _descriptor_from_dict(d: dict, where: str) -> DescriptorParams:
    d = dict(d)
    try:
        if "kind" in d:
            d["kind"] = DescriptorKind(d["kind"])
        return DescriptorParams(**d)
    except (ValueError, TypeError) as exc:
        raise BadConfigError(f"{where}: {exc}") from exc


def _matcher_from_dict(d: dict, where: str) -> dict:
    out = {"strategy": "bruteforce", "ratio": 0.8, "cross_check": False}
    out.update(d)
    if out["strategy"] not in ("bruteforce", "ratiotest", "approxnn"):
        raise BadConfigError(f"{where}: unknown strategy {out['strategy']!r}")
    return out


def expand_setups(cfg: dict, with_pipeline: bool) -> list[Setup]:
    pols = cfg.get("pol", [False])
    if not isinstance(pols, list) or not all(isinstance(p, bool) for p in pols):
        raise BadConfigError("pol: expected a list of booleans")
    if "detectors" not in cfg:
        raise BadConfigError("missing 'detectors' section")
    detectors = [
        _detector_from_dict(d, "detectors")
        for d in _expand_grid(cfg["detectors"], _DETECTOR_KEYS, "detectors")
    ]
    if not with_pipeline:
        return [Setup(p, det) for p in pols for det in detectors]
    if "descriptors" not in cfg or "matchers" not in cfg:
        raise BadConfigError("pipeline evaluation needs 'descriptors' and 'matchers'")
    descriptors = [
        _descriptor_from_dict(d, "descriptors")
        for d in _expand_grid(cfg["descriptors"], _DESCRIPTOR_KEYS, "descriptors")
    ]
    matchers = [
        _matcher_from_dict(m, "matchers")
        for m in _expand_grid(cfg["matchers"], _MATCHER_KEYS, "matchers")
    ]
    return [
        Setup(p, det, desc, mat)
        for p in pols
        for det in detectors
        for desc in descriptors
        for mat in matchers
    ]


def _tolerances(cfg: dict, override: str | None) -> list[float]:
    if override:
        try:
            tol = [float(t) for t in override.split(",")]
        except ValueError as exc:
            raise BadConfigError(f"--tolerances: {exc}") from exc
    else:
        tol = cfg.get("tolerances", list(DEFAULT_TOLERANCES_M))
    if not tol or any(b <= a for a, b in zip(tol, tol[1:])):
        raise BadConfigError("tolerances must be a non-empty ascending list")
    return tol


# ---------------------------------------------------------------------------
# Data sources


def _build_scene(cfg: dict) -> synth.Scene:
    kind = cfg.get("scene", "urban_canyon")
    seed = int(cfg.get("scene_seed", 0))
    if kind == "urban_canyon":
        return synth.urban_canyon_scene(seed)
    if kind == "room":
        return synth.room_scene(seed=seed)
    raise BadConfigError(f"synth.scene: unknown scene {kind!r}")


def _synth_sequence(cfg: dict) -> list[StereoPair]:
    scene = _build_scene(cfg)
    rig = synth.pfseq_like_rig(int(cfg.get("size", 600)))
    trajectory = cfg.get("trajectory", [[0.0, 0.0, 0.0]])
    pairs = []
    for i, rec in enumerate(trajectory):
        if not isinstance(rec, list) or len(rec) != 3:
            raise BadConfigError(f"synth.trajectory[{i}]: expected [x, y, yaw_deg]")
        x, y, yaw = (float(v) for v in rec)
        pairs.append(synth.render_pair(scene, rig, front_pose_from_record(x, y, yaw), frame_id=str(i)))
    return pairs


def load_pairs(cfg: dict) -> list[StereoPair]:
    if "dataset" in cfg:
        manifest = Path(cfg["dataset"].get("manifest", "manifest.txt"))
        if not manifest.is_absolute():
            root = os.environ.get(DATA_ROOT_ENV)
            if root:
                manifest = Path(root) / manifest
        seq: Sequence = load_sequence(manifest)
        return seq.frames
    if "synth" in cfg:
        return _synth_sequence(cfg["synth"])
    raise BadConfigError("config needs a 'dataset' or 'synth' section")


# ---------------------------------------------------------------------------
# Evaluation


def _detect_view(view, setup: Setup):
    """Detections plus the image descriptors are computed on."""
    if setup.pol:
        polar = polar_rectify(view.image, view.model)
        kps = [
            dataclasses.replace(kp, frame=FRAME_POLAR)
            for kp in detect(polar.pixels, setup.detector)
        ]
        return kps, polar.pixels
    return detect(view.image, setup.detector), view.image


def _attempted_matches(image_a, det_a, image_b, det_b, setup: Setup) -> list[AttemptedMatch]:
    if setup.descriptor is None or not det_a or not det_b:
        return []
    desc_a, kept_a = describe(image_a, det_a, setup.descriptor)
    desc_b, kept_b = describe(image_b, det_b, setup.descriptor)
    if len(desc_a) == 0 or len(desc_b) == 0:
        return []
    m = setup.matcher
    raw = match(
        desc_a,
        desc_b,
        strategy=m["strategy"],
        ratio=m["ratio"],
        approx_params=ApproxNNParams(),
        cross_check=m["cross_check"],
    )
    # descriptor rows map back to detection indices through the kept lists
    return [AttemptedMatch(kept_a[r.index_a], kept_b[r.index_b], r.distance) for r in raw]


def evaluate_pair(
    pair: StereoPair, setup: Setup, tolerances: list[float], kind: str = "sphere"
) -> list[MetricRow]:
    det_a, img_a = _detect_view(pair.front, setup)
    det_b, img_b = _detect_view(pair.rear, setup)
    attempted = _attempted_matches(img_a, det_a, img_b, det_b, setup)
    return oracle.sweep(pair, det_a, det_b, attempted, tolerances, kind)


def _eval_task(args):
    pair, setup, tolerances, kind = args
    rows = evaluate_pair(pair, setup, tolerances, kind)
    return pair.frame_id, setup.label(), rows


def _run_eval(cfg: dict, setups: list[Setup], tolerances, out_csv: Path, jobs: int):
    pairs = load_pairs(cfg)
    kind = cfg.get("criterion", "sphere")
    if kind not in ("sphere", "angular"):
        raise BadConfigError(f"criterion: unknown kind {kind!r}")
    tasks = [(pair, setup, tolerances, kind) for pair in pairs for setup in setups]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_eval_task, tasks))
    else:
        results = [_eval_task(t) for t in tasks]
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_CSV_COLUMNS)
        for frame_id, label, rows in results:
            for r in rows:
                writer.writerow(
                    [
                        frame_id, label, r.tolerance, r.n_matches,
                        f"{r.repeatability:.6f}", r.n_correct_attempted,
                        f"{r.matching_score:.6f}", f"{r.drop:.6f}", r.n_detections_min,
                    ]
                )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth_gen(args) -> int:
    cfg = load_config(args.config).get("synth", {})
    if args.seed is not None:
        cfg["scene_seed"] = args.seed
    scene = _build_scene(cfg)
    rig = synth.pfseq_like_rig(int(cfg.get("size", 600)))
    trajectory = [tuple(float(v) for v in rec) for rec in cfg.get("trajectory", [[0, 0, 0]])]
    manifest = synth.generate_sequence(scene, rig, trajectory, args.out)
    print(manifest)
    return 0


def cmd_eval_detector(args) -> int:
    cfg = load_config(args.config)
    setups = expand_setups(cfg, with_pipeline=False)
    tol = _tolerances(cfg, args.tolerances)
    _run_eval(cfg, setups, tol, Path(args.out) / "detector_metrics.csv", args.jobs)
    return 0


def cmd_eval_pipeline(args) -> int:
    cfg = load_config(args.config)
    setups = expand_setups(cfg, with_pipeline=True)
    tol = _tolerances(cfg, args.tolerances)
    _run_eval(cfg, setups, tol, Path(args.out) / "pipeline_metrics.csv", args.jobs)
    return 0


def cmd_calib_stability(args) -> int:
    cfg = load_config(args.config)
    setups = expand_setups(cfg, with_pipeline=True)
    pairs = load_pairs(cfg)
    if not pairs:
        raise BadConfigError("no stereo pairs to calibrate on")
    pair = pairs[0]
    runs = int(cfg.get("runs", 1000))
    rcfg = cfg.get("ransac", {})
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    header = None
    for setup in setups:
        det_a, img_a = _detect_view(pair.front, setup)
        det_b, img_b = _detect_view(pair.rear, setup)
        attempted = _attempted_matches(img_a, det_a, img_b, det_b, setup)
        if len(attempted) < 8:
            raise FisheyeBenchError(f"setup '{setup.label()}' yields {len(attempted)} matches")
        model = pair.front.model
        coords_a = np.array([oracle.fisheye_coords(det_a[m.index_a], model) for m in attempted])
        coords_b = np.array(
            [oracle.fisheye_coords(det_b[m.index_b], pair.rear.model) for m in attempted]
        )
        a_nominal = 1.0 / (2.0 * model.focal)
        config = calib.RansacConfig(
            a_grid=calib.default_a_grid(a_nominal, int(rcfg.get("grid_points", 61))),
            inlier_threshold=float(rcfg.get("inlier_threshold", 0.01)),
            max_iterations=int(rcfg.get("max_iterations", 50000)),
            seed=seed,
        )
        estimates = [
            calib.ransac_calibrate(
                coords_a, coords_b, model.optical_center,
                dataclasses.replace(config, seed=seed + i),
            )
            for i in range(runs)
        ]
        stats = calib.stability_stats(
            estimates, min(len(det_a), len(det_b)), len(attempted)
        )
        header, row = calib.stability_csv_row(setup.label(), stats)
        rows.append(row)
    path = out / "stability.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(path)
    return 0


# ---------------------------------------------------------------------------
# SVG report

_PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def write_metric_svg(path, title: str, series: dict[str, list[tuple[float, float]]]):
    """Metric-vs-tolerance curves, one polyline per setup, y fixed to [0, 1]."""
    width, height = 720, 480
    left, right, top, bottom = 80, 200, 40, 60
    pw, ph = width - left - right, height - top - bottom
    xs = [x for pts in series.values() for x, _ in pts]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    span = (x1 - x0) or 1.0

    def sx(x):
        return left + (x - x0) / span * pw

    def sy(y):
        return top + (1.0 - min(max(y, 0.0), 1.0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(6):
        y = i / 5.0
        parts.append(
            f'<line x1="{left}" y1="{sy(y)}" x2="{left + pw}" y2="{sy(y)}" '
            'stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{left - 8}" y="{sy(y) + 4}" text-anchor="end">{y:.1f}</text>'
        )
    for i in range(6):
        x = x0 + span * i / 5.0
        parts.append(
            f'<text x="{sx(x)}" y="{top + ph + 18}" text-anchor="middle">{x:.3f}</text>'
        )
    parts.append(
        f'<text x="{left + pw / 2}" y="{height - 14}" text-anchor="middle">tolerance (m)</text>'
    )
    for i, (label, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in sorted(pts))
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = top + 16 * (i + 1)
        parts.append(
            f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(f'<text x="{left + pw + 36}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def cmd_report(args) -> int:
    cfg = load_config(args.config)
    if "input" not in cfg:
        raise BadConfigError("report config needs an 'input' CSV path")
    metrics = cfg.get("metrics", ["repeatability", "matching_score"])
    try:
        with open(cfg["input"], newline="") as fh:
            reader = csv.DictReader(fh)
            table = list(reader)
    except FileNotFoundError as exc:
        raise BadConfigError(f"report input not found: {cfg['input']}") from exc
    if not table:
        raise BadConfigError(f"report input {cfg['input']} is empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for metric in metrics:
        if metric not in table[0]:
            raise BadConfigError(f"metric {metric!r} not a column of {cfg['input']}")
        acc: dict[str, dict[float, list[float]]] = {}
        for row in table:
            tol = float(row["tolerance_m"])
            acc.setdefault(row["setup"], {}).setdefault(tol, []).append(float(row[metric]))
        series = {
            label: [(tol, sum(v) / len(v)) for tol, v in sorted(by_tol.items())]
            for label, by_tol in acc.items()
        }
        path = out / f"{metric}.svg"
        write_metric_svg(path, metric.replace("_", " "), series)
        print(path)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fisheyebench")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("synth-gen", cmd_synth_gen),
        ("eval-detector", cmd_eval_detector),
        ("eval-pipeline", cmd_eval_pipeline),
        ("calib-stability", cmd_calib_stability),
        ("report", cmd_report),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--tolerances", default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except BadConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FisheyeBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
