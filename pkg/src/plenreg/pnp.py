"""Single-image plenoptic PnP registration.

Pipeline: undistort and perspective-correct the image keypoints when they
come from virtual-image space, match against the reference feature cloud
with mutual-kNN cross-checking, reject 2D-2D outliers with a robust
fundamental matrix, initialize the pose with RANSAC over a 6-point linear
resection, refine with Levenberg-Marquardt on the reprojection error, and
chain with the reference camera's calibration pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .camera import PlenopticIntrinsics, DistortionModel, project_to_common_plane, undistort
from .errors import (
    DegenerateConfiguration,
    InsufficientCorrespondences,
    NoConsensus,
    StageError,
)
from .features import FeatureCloud, FeatureImage, match_knn_crosscheck
from .ransac3d import RegistrationResult, adaptive_iteration_cap
from .se3 import Pose, compose, inverse

PNP_MIN_SAMPLE = 6
FM_MIN_SAMPLE = 8


@dataclass(frozen=True)
class PnpParams:
    max_iterations: int = 2000
    inlier_threshold: float = 2.0  # px, reprojection
    min_inliers: int = 10
    confidence: float = 0.999
    seed: int = 0
    fm_threshold: float = 2.0  # px, Sampson distance
    lm_max_iters: int = 100
    lm_tolerance: float = 1e-10  # relative cost decrease
    knn_k: int = 2

    def __post_init__(self):
        if self.inlier_threshold <= 0 or self.fm_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")


# --- fundamental matrix -----------------------------------------------------

def _hartley_normalize(pts):
    mu = pts.mean(axis=0)
    centered = pts - mu
    mean_dist = np.mean(np.linalg.norm(centered, axis=1))
    s = np.sqrt(2.0) / max(mean_dist, 1e-12)
    T = np.array([[s, 0, -s * mu[0]], [0, s, -s * mu[1]], [0, 0, 1.0]])
    return centered * s, T


def _eight_point(ref, query):
    """Linear fundamental matrix from >= 8 normalized correspondences."""
    a, Ta = _hartley_normalize(ref)
    b, Tb = _hartley_normalize(query)
    A = np.column_stack([
        b[:, 0] * a[:, 0], b[:, 0] * a[:, 1], b[:, 0],
        b[:, 1] * a[:, 0], b[:, 1] * a[:, 1], b[:, 1],
        a[:, 0], a[:, 1], np.ones(len(a)),
    ])
    _, s, Vt = np.linalg.svd(A)
    if s[-2] <= 1e-12 * max(s[0], 1.0):
        raise DegenerateConfiguration("eight-point system is rank deficient")
    F = Vt[-1].reshape(3, 3)
    U, sv, Vt2 = np.linalg.svd(F)
    F = U @ np.diag([sv[0], sv[1], 0.0]) @ Vt2  # enforce rank 2
    F = Tb.T @ F @ Ta
    norm = np.linalg.norm(F)
    return F / norm if norm > 0 else F


def sampson_distance(F, ref, query):
    """First-order geometric (Sampson) distance per correspondence, in px."""
    ones = np.ones((len(ref), 1))
    x = np.hstack([ref, ones])
    xp = np.hstack([query, ones])
    Fx = x @ F.T
    Ftxp = xp @ F
    num = np.sum(xp * Fx, axis=1) ** 2
    den = Fx[:, 0] ** 2 + Fx[:, 1] ** 2 + Ftxp[:, 0] ** 2 + Ftxp[:, 1] ** 2
    return np.sqrt(num / np.maximum(den, 1e-300))


def fundamental_8point_ransac(pts_ref, pts_query, threshold=2.0, seed=0,
                              max_iterations=2000, confidence=0.999):
    """Robust fundamental matrix; returns (F, inlier mask)."""
    ref = np.asarray(pts_ref, dtype=float).reshape(-1, 2)
    query = np.asarray(pts_query, dtype=float).reshape(-1, 2)
    n = len(ref)
    if n < FM_MIN_SAMPLE or len(query) != n:
        raise InsufficientCorrespondences(
            f"need >= {FM_MIN_SAMPLE} paired correspondences, have {n}"
        )
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = -1
    cap = max_iterations
    it = 0
    while it < cap:
        it += 1
        idx = rng.choice(n, size=FM_MIN_SAMPLE, replace=False)
        try:
            F = _eight_point(ref[idx], query[idx])
        except DegenerateConfiguration:
            continue
        mask = sampson_distance(F, ref, query) <= threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            cap = adaptive_iteration_cap(count / n, confidence, FM_MIN_SAMPLE, cap)
    if best_mask is None or best_count < FM_MIN_SAMPLE:
        raise DegenerateConfiguration("no fundamental-matrix consensus found")
    F = _eight_point(ref[best_mask], query[best_mask])
    mask = sampson_distance(F, ref, query) <= threshold
    if int(mask.sum()) >= FM_MIN_SAMPLE:
        F = _eight_point(ref[mask], query[mask])
        mask = sampson_distance(F, ref, query) <= threshold
    return F, mask


# --- PnP --------------------------------------------------------------------

def _normalized(pixels, k: PlenopticIntrinsics):
    p = np.asarray(pixels, dtype=float).reshape(-1, 2)
    return np.column_stack([(p[:, 0] - k.c_x) / k.f_px, (p[:, 1] - k.c_y) / k.f_px])


def _dlt_resection(world, normed, parent, child):
    """Linear 6-point camera resection in normalized image coordinates."""
    n = len(world)
    A = np.zeros((2 * n, 12))
    X = np.hstack([world, np.ones((n, 1))])
    A[0::2, 0:4] = X
    A[0::2, 8:12] = -normed[:, 0:1] * X
    A[1::2, 4:8] = X
    A[1::2, 8:12] = -normed[:, 1:2] * X
    _, s, Vt = np.linalg.svd(A)
    if s[0] / max(s[-2], 1e-300) > 1e8:
        raise DegenerateConfiguration("resection sample is (near-)degenerate")
    P = Vt[-1].reshape(3, 4)
    M = P[:, :3]
    if np.linalg.det(M) < 0:
        P = -P
        M = P[:, :3]
    U, sv, Vt2 = np.linalg.svd(M)
    scale = np.prod(sv) ** (1.0 / 3.0)
    if scale <= 0:
        raise DegenerateConfiguration("singular camera matrix")
    R = U @ Vt2
    t = P[:, 3] / scale
    pose = Pose(R, t, parent, child)
    if np.any(pose.apply(world)[:, 2] <= 0):
        raise DegenerateConfiguration("resection places points behind the camera")
    return pose


def reprojection_residuals(pose: Pose, world, pixels, k: PlenopticIntrinsics):
    """Per-correspondence reprojection error [px]; inf for points behind."""
    cam = pose.apply(world)
    z = cam[:, 2]
    out = np.full(len(world), np.inf)
    front = z > 0
    u = k.f_px * cam[front, 0] / z[front] + k.c_x
    v = k.f_px * cam[front, 1] / z[front] + k.c_y
    out[front] = np.hypot(u - pixels[front, 0], v - pixels[front, 1])
    return out


def pnp_ransac(world, pixels, k: PlenopticIntrinsics,
               params: PnpParams = PnpParams(),
               parent="CX", child="W0") -> RegistrationResult:
    """RANSAC pose from 2D-3D correspondences.

    ``world`` are 3D points (mm) in the reference cloud frame, ``pixels``
    their observations on the corrected image.  The returned pose maps the
    cloud frame into the camera frame (``parent=camera, child=cloud``).
    """
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    n = len(world)
    if n < PNP_MIN_SAMPLE or len(pixels) != n:
        raise InsufficientCorrespondences(
            f"need >= {PNP_MIN_SAMPLE} correspondences, have {n}"
        )
    normed = _normalized(pixels, k)
    rng = np.random.default_rng(params.seed)
    best_mask = None
    best_count = -1
    best_rms = np.inf
    cap = params.max_iterations
    it = 0
    while it < cap:
        it += 1
        idx = rng.choice(n, size=PNP_MIN_SAMPLE, replace=False)
        try:
            pose = _dlt_resection(world[idx], normed[idx], parent, child)
        except DegenerateConfiguration:
            continue
        residuals = reprojection_residuals(pose, world, pixels, k)
        mask = residuals <= params.inlier_threshold
        count = int(mask.sum())
        rms = float(np.sqrt(np.mean(residuals[mask] ** 2))) if count else np.inf
        if count > best_count or (count == best_count and rms < best_rms):
            best_count = count
            best_mask = mask
            best_rms = rms
            cap = adaptive_iteration_cap(
                count / n, params.confidence, PNP_MIN_SAMPLE, cap
            )
    min_needed = max(params.min_inliers, PNP_MIN_SAMPLE)
    if best_mask is None or best_count < min_needed:
        raise NoConsensus(
            f"best consensus {max(best_count, 0)} below minimum {min_needed}"
        )
    idx = np.flatnonzero(best_mask)
    pose = _dlt_resection(world[idx], normed[idx], parent, child)
    pose = refine_lm(pose, world[idx], pixels[idx], k, params)
    residuals = reprojection_residuals(pose, world, pixels, k)
    final_idx = np.flatnonzero(residuals <= params.inlier_threshold)
    rms = float(np.sqrt(np.mean(residuals[final_idx] ** 2)))
    return RegistrationResult(
        pose=pose,
        inlier_indices=tuple(int(i) for i in final_idx),
        rms_residual=rms,
        iterations_used=it,
        diagnostics={"n_correspondences": n, "inlier_ratio": len(final_idx) / n,
                     "seed": params.seed},
    )


def _skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _exp_so3(w):
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + _skew(w)
    K = _skew(w / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def reprojection_jacobian(pose: Pose, world, k: PlenopticIntrinsics):
    """Analytic Jacobian of the stacked pixel residuals.

    State is the 6-vector (rotation increment, translation increment) with a
    left-multiplicative axis-angle update ``R <- exp(dw) R, t <- t + dt``.
    Returns an array of shape (2n, 6).
    """
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    Rp = world @ pose.rotation.T
    cam = Rp + pose.translation
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    n = len(world)
    J = np.zeros((2 * n, 6))
    # d(pixel)/d(camera point)
    duv_dc = np.zeros((n, 2, 3))
    duv_dc[:, 0, 0] = k.f_px / z
    duv_dc[:, 0, 2] = -k.f_px * x / z ** 2
    duv_dc[:, 1, 1] = k.f_px / z
    duv_dc[:, 1, 2] = -k.f_px * y / z ** 2
    # d(camera point)/d(dw) = -[R p]_x ; d(camera point)/d(dt) = I
    for i in range(n):
        dc_dw = -_skew(Rp[i])
        J[2 * i:2 * i + 2, 0:3] = duv_dc[i] @ dc_dw
        J[2 * i:2 * i + 2, 3:6] = duv_dc[i]
    return J


def refine_lm(initial: Pose, world, pixels, k: PlenopticIntrinsics,
              params: PnpParams = PnpParams(), full_output=False):
    """Levenberg-Marquardt refinement of the reprojection error.

    Rotation increments live on the manifold (axis-angle, applied on the
    left).  Damping: x10 on a rejected step, /10 on acceptance.  Returns the
    refined pose; with ``full_output`` also a dict holding the accepted cost
    sequence and a convergence flag.
    """
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(world) < PNP_MIN_SAMPLE:
        raise InsufficientCorrespondences(
            f"need >= {PNP_MIN_SAMPLE} inliers to refine, have {len(world)}"
        )

    def residual_vec(pose):
        cam = pose.apply(world)
        z = cam[:, 2]
        if np.any(z <= 0):
            return None
        u = k.f_px * cam[:, 0] / z + k.c_x
        v = k.f_px * cam[:, 1] / z + k.c_y
        return np.column_stack([u - pixels[:, 0], v - pixels[:, 1]]).ravel()

    pose = initial
    r = residual_vec(pose)
    if r is None:
        raise DegenerateConfiguration("initial pose places points behind camera")
    cost = float(r @ r)
    costs = [cost]
    lam = 1e-3
    converged = False
    for _ in range(params.lm_max_iters):
        J = reprojection_jacobian(pose, world, k)
        g = J.T @ r
        if np.linalg.norm(g, np.inf) < 1e-14:
            converged = True
            break
        JtJ = J.T @ J
        accepted = False
        for _ in range(25):
            try:
                step = np.linalg.solve(JtJ + lam * np.diag(np.diag(JtJ)), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = Pose(
                _exp_so3(step[:3]) @ pose.rotation,
                pose.translation + step[3:],
                pose.parent,
                pose.child,
            )
            rc = residual_vec(candidate)
            if rc is not None:
                new_cost = float(rc @ rc)
                if new_cost < cost:
                    rel = (cost - new_cost) / max(cost, 1e-300)
                    pose, r, cost = candidate, rc, new_cost
                    costs.append(cost)
                    lam = max(lam / 10.0, 1e-12)
                    accepted = True
                    if rel < params.lm_tolerance:
                        converged = True
                    break
            lam *= 10.0
        if not accepted:
            converged = True  # no downhill step left at any damping
            break
        if converged:
            break
    info = {"costs": costs, "converged": converged, "rms": np.sqrt(cost / len(world))}
    return (pose, info) if full_output else pose


def chain_extrinsic_pnp(cloud0_to_camX: Pose, cloud0_to_cam0: Pose) -> Pose:
    """Inter-camera extrinsic from the PnP pose and camera 0's calibration."""
    return compose(cloud0_to_camX, inverse(cloud0_to_cam0))


def register_pnp_pipeline(image_features: FeatureImage, cloud0: FeatureCloud,
                          k: PlenopticIntrinsics,
                          distortion: DistortionModel = DistortionModel(),
                          params: PnpParams = PnpParams(),
                          cloud0_to_cam0: Pose = None,
                          virtual_depths=None,
                          camera_frame="CX") -> RegistrationResult:
    """Full single-image registration pipeline.

    When ``cloud0_to_cam0`` is given the result pose is the inter-camera
    extrinsic (reference camera frame into query camera frame); otherwise it
    is the raw cloud-to-camera pose.  ``virtual_depths`` must accompany
    features that were extracted from the uncorrected virtual image.
    """
    diagnostics = {"seed": params.seed}

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise StageError(name, exc) from exc

    keypoints = image_features.keypoints
    if not image_features.corrected:
        if virtual_depths is None:
            raise StageError(
                "correction", ValueError("virtual depths required for raw features")
            )
        keypoints = stage("correction", undistort, keypoints, distortion, k)
        virt = np.column_stack([keypoints, np.asarray(virtual_depths, dtype=float)])
        keypoints = stage("correction", project_to_common_plane, virt, k)

    matches = stage(
        "matching", match_knn_crosscheck,
        cloud0.descriptors, image_features.descriptors, params.knn_k,
    )
    diagnostics["n_matches"] = len(matches)
    world = cloud0.points[[m.query_idx for m in matches]]
    pixels = keypoints[[m.train_idx for m in matches]]

    if len(matches) >= FM_MIN_SAMPLE and cloud0_to_cam0 is not None:
        # 2D-2D outlier rejection needs a reference view of the cloud points.
        ref_pix = stage(
            "fundamental", _reference_projection, world, cloud0_to_cam0, k
        )
        keep_f = ref_pix is not None
        if keep_f:
            try:
                _, mask = fundamental_8point_ransac(
                    ref_pix, pixels, threshold=params.fm_threshold, seed=params.seed
                )
                if int(mask.sum()) >= PNP_MIN_SAMPLE:
                    world = world[mask]
                    pixels = pixels[mask]
                    diagnostics["fm_inliers"] = int(mask.sum())
            except (DegenerateConfiguration, InsufficientCorrespondences):
                diagnostics["fm_inliers"] = None

    result = stage(
        "pnp", pnp_ransac, world, pixels, k, params,
        camera_frame, cloud0.frame,
    )
    diagnostics.update(result.diagnostics)
    pose = result.pose
    if cloud0_to_cam0 is not None:
        pose = stage("chain", chain_extrinsic_pnp, pose, cloud0_to_cam0)
    return RegistrationResult(
        pose=pose,
        inlier_indices=result.inlier_indices,
        rms_residual=result.rms_residual,
        iterations_used=result.iterations_used,
        diagnostics=diagnostics,
    )


def _reference_projection(world, cloud0_to_cam0, k):
    """Project cloud points into the reference view; None if any lie behind."""
    cam = cloud0_to_cam0.apply(world)
    if np.any(cam[:, 2] <= 0):
        return None
    return np.column_stack([
        k.f_px * cam[:, 0] / cam[:, 2] + k.c_x,
        k.f_px * cam[:, 1] / cam[:, 2] + k.c_y,
    ])
