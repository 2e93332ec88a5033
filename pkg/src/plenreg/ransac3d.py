"""3D RANSAC registration between two feature clouds.

Descriptor matches seed a hypothesize-and-verify loop: three correspondences
per sample, closed-form rigid fit, consensus by 3D point distance, adaptive
early exit, and a final least-squares refit on the full inlier set.  The
resulting pose maps reference-cloud coordinates into query-cloud
coordinates; chaining with the per-camera calibration poses yields the
inter-camera extrinsic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientMatches, NoConsensus
from .features import FeatureCloud, match_bruteforce_l2
from .se3 import Pose, PointCloud, compose, fit_rigid_umeyama, inverse

MIN_SAMPLE = 3


@dataclass(frozen=True)
class Ransac3dParams:
    max_iterations: int = 2000
    inlier_threshold: float = 10.0  # mm
    min_inliers: int = 10
    confidence: float = 0.999
    seed: int = 0
    keep_ratio: float = 0.8

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(frozen=True)
class RegistrationResult:
    pose: Pose
    inlier_indices: tuple  # indices into the match list
    rms_residual: float  # mm for 3D registration, px for PnP
    iterations_used: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "pose": self.pose.to_dict(),
            "inlier_indices": list(self.inlier_indices),
            "rms_residual": self.rms_residual,
            "iterations_used": self.iterations_used,
            "diagnostics": self.diagnostics,
        }


def _sample_noncollinear(rng, pts, n_candidates, max_rejects):
    """Draw a 3-subset, rejecting near-collinear picks a bounded number of times."""
    for _ in range(max_rejects):
        idx = rng.choice(n_candidates, size=MIN_SAMPLE, replace=False)
        a = pts[idx]
        centered = a - a.mean(axis=0)
        s = np.linalg.svd(centered, compute_uv=False)
        if s[1] > 1e-6 * max(s[0], 1.0):
            return idx
    return None


def adaptive_iteration_cap(inlier_ratio, confidence, sample_size, current_cap):
    """Standard (1 - w^s) RANSAC stopping criterion."""
    w = min(max(inlier_ratio, 1e-12), 1.0 - 1e-12)
    denom = np.log1p(-(w ** sample_size))
    if denom >= 0.0:
        return current_cap
    needed = int(np.ceil(np.log(1.0 - confidence) / denom))
    return min(current_cap, max(needed, 1))


def register_ransac3d(cloud0: FeatureCloud, cloudX: FeatureCloud,
                      params: Ransac3dParams = Ransac3dParams()) -> RegistrationResult:
    """Estimate the rigid transform from cloud0's frame into cloudX's frame.

    The returned pose carries ``parent=cloudX.frame`` and
    ``child=cloud0.frame`` (it maps cloud0 coordinates into cloudX
    coordinates).
    """
    matches = match_bruteforce_l2(
        cloud0.descriptors, cloudX.descriptors, keep_ratio=params.keep_ratio
    )
    if len(matches) < MIN_SAMPLE:
        raise InsufficientMatches(
            f"need >= {MIN_SAMPLE} matches, have {len(matches)}"
        )
    src = cloud0.points[[m.query_idx for m in matches]]
    dst = cloudX.points[[m.train_idx for m in matches]]
    n = len(matches)

    rng = np.random.default_rng(params.seed)
    best_count = -1
    best_mask = None
    best_rms = np.inf
    cap = params.max_iterations
    it = 0
    while it < cap:
        it += 1
        idx = _sample_noncollinear(rng, src, n, max_rejects=2)
        if idx is None:
            continue
        try:
            model = fit_rigid_umeyama(
                PointCloud(src[idx], cloud0.frame),
                PointCloud(dst[idx], cloudX.frame),
            )
        except Exception:
            continue
        residuals = np.linalg.norm(model.apply(src) - dst, axis=1)
        mask = residuals <= params.inlier_threshold
        count = int(mask.sum())
        if count > best_count or (
            count == best_count
            and count > 0
            and float(np.sqrt(np.mean(residuals[mask] ** 2))) < best_rms
        ):
            best_count = count
            best_mask = mask
            best_rms = (
                float(np.sqrt(np.mean(residuals[mask] ** 2))) if count else np.inf
            )
            cap = adaptive_iteration_cap(
                count / n, params.confidence, MIN_SAMPLE, cap
            )

    if best_mask is None or best_count < max(params.min_inliers, MIN_SAMPLE):
        raise NoConsensus(
            f"best consensus {max(best_count, 0)} below minimum "
            f"{max(params.min_inliers, MIN_SAMPLE)}"
        )

    inlier_idx = np.flatnonzero(best_mask)
    refined = fit_rigid_umeyama(
        PointCloud(src[inlier_idx], cloud0.frame),
        PointCloud(dst[inlier_idx], cloudX.frame),
    )
    residuals = np.linalg.norm(refined.apply(src) - dst, axis=1)
    final_mask = residuals <= params.inlier_threshold
    final_idx = np.flatnonzero(final_mask)
    if len(final_idx) >= MIN_SAMPLE:
        refined = fit_rigid_umeyama(
            PointCloud(src[final_idx], cloud0.frame),
            PointCloud(dst[final_idx], cloudX.frame),
        )
        residuals = np.linalg.norm(refined.apply(src) - dst, axis=1)
        final_idx = np.flatnonzero(residuals <= params.inlier_threshold)
    rms = float(np.sqrt(np.mean(residuals[final_idx] ** 2)))
    return RegistrationResult(
        pose=refined,
        inlier_indices=tuple(int(i) for i in final_idx),
        rms_residual=rms,
        iterations_used=it,
        diagnostics={
            "n_matches": n,
            "inlier_ratio": len(final_idx) / n,
            "seed": params.seed,
        },
    )


def chain_extrinsic_ransac(cloudX_to_camX: Pose, cloud0_to_cloudX: Pose,
                           cloud0_to_cam0: Pose) -> Pose:
    """Inter-camera extrinsic from the cloud alignment and both calibrations.

    All arguments follow the "A_to_B maps A coordinates into B coordinates"
    reading, i.e. ``cloud0_to_cloudX`` is the registration output.  The
    result maps reference-camera coordinates into query-camera coordinates.
    """
    return compose(compose(cloudX_to_camX, cloud0_to_cloudX),
                   inverse(cloud0_to_cam0))


def format_frame_chain(cloudX_to_camX: Pose, cloud0_to_cloudX: Pose,
                       cloud0_to_cam0: Pose) -> str:
    """Human-readable audit of the frame chain used by the extrinsic product."""
    result = chain_extrinsic_ransac(cloudX_to_camX, cloud0_to_cloudX, cloud0_to_cam0)
    steps = [
        f"({cloudX_to_camX.parent} <- {cloudX_to_camX.child})",
        f"({cloud0_to_cloudX.parent} <- {cloud0_to_cloudX.child})",
        f"({cloud0_to_cam0.parent} <- {cloud0_to_cam0.child})^-1",
    ]
    return " * ".join(steps) + f" = ({result.parent} <- {result.child})"
