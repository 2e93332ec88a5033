"""Deterministic synthetic scenes with exactly known ground truth.

The generator builds a point cloud in the reference calibration frame,
derives the query camera's cloud and image observations from ground-truth
poses, injects seeded Gaussian noise and descriptor-corrupted outliers, and
exports everything in the library's ingestion formats.  Matching realism is
not attempted: inliers share identical descriptor vectors across views,
outliers get independent random vectors, which isolates the geometry from
feature-extraction quality.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import PlenopticIntrinsics, distort, project_pinhole
from .features import (
    FeatureCloud,
    FeatureImage,
    PAYLOAD_KEYPOINTS_2D,
    PAYLOAD_POINTS_3D,
    write_sidecar,
)
from .se3 import Pose, compose, inverse
from .vicon import CsvSchema, ViconSample, ViconStream, serialize_vicon_csv

W0, WX, C0, CX = "W0", "WX", "C0", "CX"


def default_intrinsics():
    """Plausible corrected-view intrinsics for a 25 mm main lens."""
    return PlenopticIntrinsics(
        B=2.0, b_L0=40.0, c_x=3280.0, c_y=2474.0,
        f_px=25.0 * 1000.0 / 3.2, pixel_size_um=3.2, width=6560, height=4948,
    )


def _random_pose(rng, parent, child, max_angle_deg=25.0, max_shift=400.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.2, max_angle_deg))
    R = Rotation.from_rotvec(angle * axis).as_matrix()
    t = rng.uniform(-max_shift, max_shift, size=3)
    return Pose(R, t, parent, child)


@dataclass(frozen=True)
class SceneSpec:
    n_points: int = 120
    extent: float = 1000.0  # mm, box edge length centered on the scene origin
    camera_distance: float = 2500.0  # mm from scene center to camera 0
    noise_3d: float = 0.0  # mm
    noise_px: float = 0.0
    outlier_fraction: float = 0.0
    descriptor_dim: int = 128
    seed: int = 0
    pose0: Pose = None  # cloud0 -> camera0 (defaults derived from seed)
    poseX: Pose = None  # cloud0 -> cameraX
    cloud_misalignment: Pose = None  # cloud0 -> cloudX frame offset

    def __post_init__(self):
        if not 0.0 <= self.outlier_fraction < 0.5:
            raise ValueError("outlier_fraction must lie in [0, 0.5) for solvable scenes")

    def to_dict(self):
        d = {
            "n_points": self.n_points, "extent": self.extent,
            "camera_distance": self.camera_distance,
            "noise_3d": self.noise_3d, "noise_px": self.noise_px,
            "outlier_fraction": self.outlier_fraction,
            "descriptor_dim": self.descriptor_dim, "seed": self.seed,
        }
        for name in ("pose0", "poseX", "cloud_misalignment"):
            p = getattr(self, name)
            if p is not None:
                d[name] = p.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for name in ("pose0", "poseX", "cloud_misalignment"):
            if name in d:
                d[name] = Pose.from_dict(d[name])
        return cls(**d)


@dataclass(frozen=True)
class Scene:
    spec: SceneSpec
    cloud0: FeatureCloud  # frame W0
    cloudX: FeatureCloud  # frame WX
    image_features: FeatureImage  # camera X view, corrected plane
    intrinsics: PlenopticIntrinsics
    cloud0_to_cam0: Pose  # C0 extrinsic w.r.t. its own cloud frame
    cloudX_to_camX: Pose
    cloud0_to_cloudX: Pose  # ground truth for the 3D registration
    cloud0_to_camX: Pose  # ground truth for PnP
    cam0_to_camX: Pose  # ground truth inter-camera extrinsic
    inlier_labels_cloud: np.ndarray  # True where the cloudX point is untainted
    inlier_labels_image: np.ndarray


def generate_scene(spec: SceneSpec, intrinsics: PlenopticIntrinsics = None) -> Scene:
    """Build a two-camera scene; a pure function of the spec."""
    rng = np.random.default_rng(spec.seed)
    k = intrinsics if intrinsics is not None else default_intrinsics()

    half = spec.extent / 2.0
    points = rng.uniform(-half, half, size=(spec.n_points, 3))

    pose0 = spec.pose0
    if pose0 is None:
        # Camera 0 on the -z side looking at the scene center.
        pose0 = Pose(np.eye(3), [0.0, 0.0, spec.camera_distance], C0, W0)
    poseX = spec.poseX
    if poseX is None:
        jitter = _random_pose(rng, C0, C0, max_angle_deg=15.0, max_shift=300.0)
        poseX = Pose(
            jitter.rotation @ pose0.rotation,
            jitter.rotation @ pose0.translation + jitter.translation * np.array([1, 1, 0.2]),
            CX, W0,
        )
    misalign = spec.cloud_misalignment
    if misalign is None:
        misalign = _random_pose(rng, WX, W0, max_angle_deg=40.0, max_shift=800.0)
        misalign = Pose(misalign.rotation, misalign.translation, WX, W0)

    n = spec.n_points
    n_out = int(round(spec.outlier_fraction * n))
    outlier_idx = rng.choice(n, size=n_out, replace=False) if n_out else np.array([], int)

    descriptors = rng.uniform(0.0, 1.0, size=(n, spec.descriptor_dim))

    # Query-camera cloud: same physical points expressed in the WX frame.
    cloudX_pts = misalign.apply(points)
    if spec.noise_3d > 0:
        cloudX_pts = cloudX_pts + rng.normal(0.0, spec.noise_3d, size=cloudX_pts.shape)
    desc_cloudX = descriptors.copy()
    labels_cloud = np.ones(n, dtype=bool)
    if n_out:
        desc_cloudX[outlier_idx] = rng.uniform(0.0, 1.0, size=(n_out, spec.descriptor_dim))
        labels_cloud[outlier_idx] = False

    # Query-camera image: project through the ground-truth extrinsic, then
    # apply forward distortion so the pipeline's undistort is exercised.
    pixels = project_pinhole(points, poseX, k)
    pixels = distort(pixels, k.distortion, k)
    if spec.noise_px > 0:
        pixels = pixels + rng.normal(0.0, spec.noise_px, size=pixels.shape)
    desc_image = descriptors.copy()
    labels_image = np.ones(n, dtype=bool)
    if n_out:
        image_out = rng.choice(n, size=n_out, replace=False)
        desc_image[image_out] = rng.uniform(0.0, 1.0, size=(n_out, spec.descriptor_dim))
        labels_image[image_out] = False

    cloudX_to_camX = compose(poseX, inverse(misalign))
    cam0_to_camX = compose(poseX, inverse(pose0))
    return Scene(
        spec=spec,
        cloud0=FeatureCloud(points, descriptors, W0),
        cloudX=FeatureCloud(cloudX_pts, desc_cloudX, WX),
        image_features=FeatureImage(pixels, desc_image, corrected=k.distortion.is_identity()),
        intrinsics=k,
        cloud0_to_cam0=pose0,
        cloudX_to_camX=cloudX_to_camX,
        cloud0_to_cloudX=misalign,
        cloud0_to_camX=poseX,
        cam0_to_camX=cam0_to_camX,
        inlier_labels_cloud=labels_cloud,
        inlier_labels_image=labels_image,
    )


def generate_trajectory(n_frames, seed=0, factor=8, objects=("cam0", "cam2", "plate"),
                        schema: CsvSchema = CsvSchema(), step_mm=20.0, step_deg=2.0):
    """Smooth random 6-DOF trajectories plus a tracker-style CSV.

    Returns ({object: [Pose] * n_frames}, csv_bytes).  The CSV holds samples
    at ``factor`` times the camera frame density; camera frame k corresponds
    to sample ``k * factor``.
    """
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    rng = np.random.default_rng(seed)
    n_samples = (n_frames - 1) * factor + 1
    streams = {}
    frame_poses = {}
    for obj in objects:
        R = Rotation.from_rotvec(rng.normal(0, 0.5, size=3)).as_matrix()
        t = rng.uniform(-1000.0, 1000.0, size=3)
        vel = rng.normal(0.0, step_mm / factor, size=3)
        rot_vel = np.radians(rng.normal(0.0, step_deg / factor, size=3))
        samples = []
        for i in range(n_samples):
            samples.append(ViconSample(i, obj, t, R))
            vel = 0.95 * vel + rng.normal(0.0, step_mm / (4 * factor), size=3)
            rot_vel = 0.95 * rot_vel + np.radians(
                rng.normal(0.0, step_deg / (4 * factor), size=3)
            )
            t = t + vel
            R = Rotation.from_rotvec(rot_vel).as_matrix() @ R
        streams[obj] = ViconStream(obj, tuple(samples))
        frame_poses[obj] = [samples[kf * factor].pose() for kf in range(n_frames)]
    return frame_poses, serialize_vicon_csv(streams, schema)


def write_scene(scene: Scene, out_dir):
    """Materialize a scene in the on-disk ingestion formats.

    Writes cloud0.lfmf, cloudX.lfmf, imageX.lfmf, intrinsics.json and
    truth.json into ``out_dir``.
    """
    os.makedirs(out_dir, exist_ok=True)
    write_sidecar(
        os.path.join(out_dir, "cloud0.lfmf"),
        scene.cloud0.points, scene.cloud0.descriptors, PAYLOAD_POINTS_3D,
    )
    write_sidecar(
        os.path.join(out_dir, "cloudX.lfmf"),
        scene.cloudX.points, scene.cloudX.descriptors, PAYLOAD_POINTS_3D,
    )
    write_sidecar(
        os.path.join(out_dir, "imageX.lfmf"),
        scene.image_features.keypoints, scene.image_features.descriptors,
        PAYLOAD_KEYPOINTS_2D, corrected=scene.image_features.corrected,
    )
    scene.intrinsics.dump_json(os.path.join(out_dir, "intrinsics.json"))
    truth = {
        "spec": scene.spec.to_dict(),
        "cloud0_to_cam0": scene.cloud0_to_cam0.to_dict(),
        "cloudX_to_camX": scene.cloudX_to_camX.to_dict(),
        "cloud0_to_cloudX": scene.cloud0_to_cloudX.to_dict(),
        "cloud0_to_camX": scene.cloud0_to_camX.to_dict(),
        "cam0_to_camX": scene.cam0_to_camX.to_dict(),
        "inlier_labels_cloud": scene.inlier_labels_cloud.tolist(),
        "inlier_labels_image": scene.inlier_labels_image.tolist(),
    }
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
