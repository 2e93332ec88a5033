"""Pose-error evaluation against ground truth.

Relative errors compare frame-to-frame motion increments, absolute errors
compare per-frame poses after both trajectories were expressed in the
common marker-plate frame, per-axis errors decompose the absolute
translation error in the estimated camera frame (z along the optical axis),
and method differences apply the absolute metrics between two estimates.

Standard deviations use the unbiased (n-1) estimator, so
``rmse^2 = mean^2 + sd^2 * (n-1) / n`` holds for every emitted statistic.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import LengthMismatch
from .se3 import Pose, compose, inverse, rotation_angle, translation_error


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    mean: float
    sd: float
    n: int
    unit: str = ""

    @classmethod
    def from_values(cls, values, unit=""):
        v = np.asarray(values, dtype=float)
        n = len(v)
        if n == 0:
            return cls(0.0, 0.0, 0.0, 0, unit)
        mean = float(np.mean(v))
        rmse = float(np.sqrt(np.mean(v ** 2)))
        sd = float(np.std(v, ddof=1)) if n > 1 else 0.0
        return cls(rmse, mean, sd, n, unit)

    def to_dict(self):
        return {"rmse": self.rmse, "mean": self.mean, "sd": self.sd,
                "n": self.n, "unit": self.unit}


def _paired(est, gt):
    if len(est) != len(gt):
        raise LengthMismatch(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    pairs = [(e, g) for e, g in zip(est, gt) if e is not None and g is not None]
    skipped = len(est) - len(pairs)
    return pairs, skipped


def relative_errors(est, gt, stride=1):
    """Frame-to-frame motion error statistics.

    For each index pair (k, k+stride) the estimated and ground-truth motion
    increments are compared; ``None`` entries (occlusion gaps) skip the
    affected pairs and are reported in the count.
    """
    if len(est) != len(gt):
        raise LengthMismatch(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    t_err, r_err = [], []
    skipped = 0
    for k in range(len(est) - stride):
        quad = (est[k], est[k + stride], gt[k], gt[k + stride])
        if any(p is None for p in quad):
            skipped += 1
            continue
        d_est = compose(inverse(quad[0]), quad[1])
        d_gt = compose(inverse(quad[2]), quad[3])
        t_err.append(translation_error(d_est, d_gt))
        r_err.append(rotation_angle(d_est, d_gt))
    return (
        ErrorStats.from_values(t_err, "mm"),
        ErrorStats.from_values(r_err, "deg"),
        skipped,
    )


def absolute_errors(est, gt):
    """Per-frame pose error statistics in the common frame."""
    pairs, skipped = _paired(est, gt)
    t_err = [translation_error(e, g) for e, g in pairs]
    r_err = [rotation_angle(e, g) for e, g in pairs]
    return (
        ErrorStats.from_values(t_err, "mm"),
        ErrorStats.from_values(r_err, "deg"),
        skipped,
    )


def per_axis_errors(est, gt):
    """Absolute errors decomposed along the estimated camera axes.

    Translation components are the world-frame error vector expressed in
    the estimated camera frame (x horizontal, y vertical, z optical axis);
    rotation components are intrinsic XYZ Euler angles of the error
    rotation.  Per frame the three translation components recombine to the
    absolute translation error.
    """
    pairs, _ = _paired(est, gt)
    t_comp = np.zeros((len(pairs), 3))
    r_comp = np.zeros((len(pairs), 3))
    for i, (e, g) in enumerate(pairs):
        d = e.translation - g.translation
        t_comp[i] = e.rotation.T @ d
        r_err = e.rotation @ g.rotation.T
        r_comp[i] = np.abs(Rotation.from_matrix(r_err).as_euler("XYZ", degrees=True))
    t_stats = [ErrorStats.from_values(np.abs(t_comp[:, i]), "mm") for i in range(3)]
    r_stats = [ErrorStats.from_values(r_comp[:, i], "deg") for i in range(3)]
    return t_stats, r_stats


def method_difference(est_a, est_b):
    """Absolute-style metrics between two estimated trajectories."""
    t, r, _ = absolute_errors(est_a, est_b)
    return t, r


@dataclass
class SequenceResult:
    sequence: str
    method: str
    relative_translation: ErrorStats = None
    relative_rotation: ErrorStats = None
    absolute_translation: ErrorStats = None
    absolute_rotation: ErrorStats = None
    per_axis_translation: list = None  # three ErrorStats (x, y, z)
    per_axis_rotation: list = None
    skipped_frames: int = 0

    def to_dict(self):
        def stats(s):
            return s.to_dict() if s is not None else None

        return {
            "sequence": self.sequence,
            "method": self.method,
            "relative": {
                "translation": stats(self.relative_translation),
                "rotation": stats(self.relative_rotation),
            },
            "absolute": {
                "translation": stats(self.absolute_translation),
                "rotation": stats(self.absolute_rotation),
            },
            "per_axis": None
            if self.per_axis_translation is None
            else {
                "translation": [s.to_dict() for s in self.per_axis_translation],
                "rotation": [s.to_dict() for s in self.per_axis_rotation],
            },
            "skipped_frames": self.skipped_frames,
        }


@dataclass
class EvalReport:
    results: list = field(default_factory=list)  # SequenceResult
    method_difference: dict = field(default_factory=dict)  # sequence -> (t, r)

    def to_dict(self):
        return {
            "results": [r.to_dict() for r in self.results],
            "method_difference": {
                seq: {"translation": t.to_dict(), "rotation": r.to_dict()}
                for seq, (t, r) in sorted(self.method_difference.items())
            },
        }


CSV_COLUMNS = [
    "sequence", "method", "kind",
    "t_rmse_mm", "t_sd_mm", "r_rmse_deg", "r_sd_deg",
]


def emit_report(report: EvalReport, fmt="csv") -> bytes:
    """Render a report as CSV (table-style rows) or JSON.  Deterministic."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True).encode()
    if fmt != "csv":
        raise ValueError(f"unknown report format: {fmt!r}")
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(report.results, key=lambda r: (r.sequence, r.method)):
        for kind, t, rot in (
            ("relative", r.relative_translation, r.relative_rotation),
            ("absolute", r.absolute_translation, r.absolute_rotation),
        ):
            if t is None:
                continue
            w.writerow([
                r.sequence, r.method, kind,
                f"{t.rmse:.6f}", f"{t.sd:.6f}", f"{rot.rmse:.6f}", f"{rot.sd:.6f}",
            ])
    for seq, (t, rot) in sorted(report.method_difference.items()):
        w.writerow([
            seq, "ransac3d-vs-pnp", "difference",
            f"{t.rmse:.6f}", f"{t.sd:.6f}", f"{rot.rmse:.6f}", f"{rot.sd:.6f}",
        ])
    return out.getvalue().encode()
