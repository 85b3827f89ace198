"""Fisheye feature-evaluation toolkit.

Projection models and pose algebra (geometry), polar rectification (polar),
synthetic raycast scenes with exact ground truth (synth), detectors and
descriptors (features), matching strategies (matching), the 3D match oracle
and metrics (oracle), spherical-epipolar self-calibration (calib), and a
batch CLI (cli).
"""

__version__ = "0.1.0"
