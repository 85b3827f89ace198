import csv

import pytest

from fisheyebench.cli import EVAL_CSV_COLUMNS, Setup, expand_setups, main
from fisheyebench.dataset import load_sequence
from fisheyebench.errors import BadConfigError
from fisheyebench.features import DetectorParams

SYNTH_BLOCK = """\
synth:
  scene: room
  scene_seed: 1
  size: 200
  trajectory:
    - [0.0, 0.0, 0.0]
"""

DETECTOR_BLOCK = """\
pol: [false]
detectors:
  grid:
    contrast_threshold: [0.005, 0.01]
"""

PIPELINE_BLOCK = """\
descriptors:
  grid: {}
matchers:
  grid:
    strategy: [bruteforce]
"""


def _write(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestConfig:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["eval-detector", "--config", str(tmp_path / "nope.yaml")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_invalid_yaml_reports_line(self, tmp_path, capsys):
        cfg = _write(tmp_path, "detectors:\n  grid: [\n")
        assert main(["eval-detector", "--config", cfg]) == 2
        assert "line" in capsys.readouterr().err

    def test_grid_expansion_cartesian(self):
        cfg = {
            "detectors": {
                "grid": {
                    "contrast_threshold": [0.02, 0.04],
                    "edge_threshold": [5.0, 10.0],
                }
            }
        }
        setups = expand_setups(cfg, with_pipeline=False)
        assert len(setups) == 4
        assert all(isinstance(s, Setup) for s in setups)

    def test_include_and_exclude(self):
        cfg = {
            "detectors": {
                "grid": {"contrast_threshold": [0.02, 0.04]},
                "include": [{"algorithm": "harris"}],
                "exclude": [{"contrast_threshold": 0.04}],
            }
        }
        setups = expand_setups(cfg, with_pipeline=False)
        assert len(setups) == 2

    def test_empty_grid_after_exclude_rejected(self):
        cfg = {
            "detectors": {
                "grid": {"contrast_threshold": [0.04]},
                "exclude": [{"contrast_threshold": 0.04}],
            }
        }
        with pytest.raises(BadConfigError):
            expand_setups(cfg, with_pipeline=False)

    def test_unknown_grid_field_rejected(self):
        cfg = {"detectors": {"grid": {"octaves": [3]}}}
        with pytest.raises(BadConfigError):
            expand_setups(cfg, with_pipeline=False)

    def test_setup_label(self):
        assert Setup(False, DetectorParams()).label() == "nopol dog 0.04 10.0 1.6"


class TestSynthGen:
    def test_writes_loadable_sequence(self, tmp_path, capsys):
        cfg = _write(
            tmp_path,
            "synth:\n  scene: room\n  scene_seed: 2\n  size: 120\n"
            "  trajectory:\n    - [0.0, 0.0, 0.0]\n    - [0.5, 0.0, 10.0]\n",
        )
        out = tmp_path / "seq"
        assert main(["synth-gen", "--config", cfg, "--out", str(out)]) == 0
        manifest = capsys.readouterr().out.strip()
        seq = load_sequence(manifest)
        assert len(seq.frames) == 2
        assert seq.frames[0].front.image.shape == (120, 120)


class TestEvalDetector:
    def test_csv_shape_and_determinism(self, tmp_path):
        cfg = _write(tmp_path, SYNTH_BLOCK + DETECTOR_BLOCK)
        args = ["eval-detector", "--config", cfg, "--tolerances", "0.05,0.1,0.15"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "detector_metrics.csv").read_bytes()
        b = (tmp_path / "b" / "detector_metrics.csv").read_bytes()
        assert a == b
        rows = list(csv.reader(a.decode().splitlines()))
        assert tuple(rows[0]) == EVAL_CSV_COLUMNS
        # 1 pair x 2 setups x 3 tolerances
        assert len(rows) == 1 + 1 * 2 * 3

    def test_parallel_matches_serial(self, tmp_path):
        cfg = _write(tmp_path, SYNTH_BLOCK + DETECTOR_BLOCK)
        base = ["eval-detector", "--config", cfg, "--tolerances", "0.1,0.15"]
        assert main(base + ["--out", str(tmp_path / "s"), "--jobs", "1"]) == 0
        assert main(base + ["--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
        assert (tmp_path / "s" / "detector_metrics.csv").read_bytes() == (
            tmp_path / "p" / "detector_metrics.csv"
        ).read_bytes()

    def test_bad_tolerances_flag(self, tmp_path):
        cfg = _write(tmp_path, SYNTH_BLOCK + DETECTOR_BLOCK)
        assert main(["eval-detector", "--config", cfg, "--tolerances", "0.1,0.05"]) == 2


class TestEvalPipeline:
    def test_pipeline_csv(self, tmp_path):
        cfg = _write(tmp_path, SYNTH_BLOCK + DETECTOR_BLOCK + PIPELINE_BLOCK)
        out = tmp_path / "out"
        args = ["eval-pipeline", "--config", cfg, "--out", str(out),
                "--tolerances", "0.1,0.15"]
        assert main(args) == 0
        with open(out / "pipeline_metrics.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1 * 2 * 2
        assert rows[0]["setup"].endswith("gradhist bruteforce")

    def test_missing_matcher_section(self, tmp_path):
        cfg = _write(tmp_path, SYNTH_BLOCK + DETECTOR_BLOCK + "descriptors:\n  grid: {}\n")
        assert main(["eval-pipeline", "--config", cfg]) == 2


class TestCalibStability:
    def test_writes_stability_csv(self, tmp_path):
        cfg = _write(
            tmp_path,
            "synth:\n  scene: room\n  scene_seed: 1\n  size: 300\n"
            "pol: [false]\n"
            "detectors:\n  grid:\n    contrast_threshold: [0.005]\n"
            + PIPELINE_BLOCK
            + "runs: 2\n"
            "ransac:\n  grid_points: 3\n  inlier_threshold: 0.3\n"
            "  max_iterations: 128\n",
        )
        out = tmp_path / "out"
        assert main(["calib-stability", "--config", cfg, "--out", str(out),
                     "--seed", "3"]) == 0
        with open(out / "stability.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        row = rows[0]
        assert "avg_a" in row and "std_a" in row and "avg_iterations_used" in row
        assert float(row["avg_a"]) > 0
        assert 0.0 <= float(row["ratio_inliers_attempted"]) <= 1.0


class TestReport:
    def test_svg_per_metric(self, tmp_path):
        cfg = _write(tmp_path, SYNTH_BLOCK + DETECTOR_BLOCK)
        out = tmp_path / "metrics"
        assert main(["eval-detector", "--config", cfg, "--out", str(out),
                     "--tolerances", "0.05,0.1,0.15"]) == 0
        report_cfg = _write(
            tmp_path,
            f"input: {out / 'detector_metrics.csv'}\nmetrics: [repeatability]\n",
            name="report.yaml",
        )
        figs = tmp_path / "figs"
        assert main(["report", "--config", report_cfg, "--out", str(figs)]) == 0
        svg = (figs / "repeatability.svg").read_text()
        assert svg.startswith("<svg")
        assert svg.count("<polyline") == 2  # one curve per setup
        assert "tolerance (m)" in svg

    def test_unknown_metric(self, tmp_path):
        cfg = _write(tmp_path, SYNTH_BLOCK + DETECTOR_BLOCK)
        out = tmp_path / "m"
        main(["eval-detector", "--config", cfg, "--out", str(out),
              "--tolerances", "0.1,0.15"])
        report_cfg = _write(
            tmp_path,
            f"input: {out / 'detector_metrics.csv'}\nmetrics: [bogus]\n",
            name="report.yaml",
        )
        assert main(["report", "--config", report_cfg, "--out", str(tmp_path)]) == 2
