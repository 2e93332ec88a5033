"""Extrinsic registration for multi-camera rigs of focused plenoptic cameras.

Two complementary methods estimate the rigid transform between a reference
camera and a query camera: alignment of the calibration point clouds with
3D RANSAC, and a single-image plenoptic PnP pipeline.  Supporting modules
cover the plenoptic camera model, MLA calibration parsing, motion-capture
ground-truth alignment, pose-error evaluation, and a synthetic oracle used
for verification.
"""

from .se3 import (
    Pose,
    PointCloud,
    compose,
    fit_rigid_umeyama,
    identity,
    inverse,
    rotation_angle,
    translation_error,
)
from .camera import (
    DistortionModel,
    PlenopticIntrinsics,
    distort,
    project_pinhole,
    project_to_common_plane,
    undistort,
)
from .features import (
    FeatureCloud,
    FeatureImage,
    Match,
    match_bruteforce_l2,
    match_knn_crosscheck,
)
from .ransac3d import (
    Ransac3dParams,
    RegistrationResult,
    chain_extrinsic_ransac,
    register_ransac3d,
)
from .pnp import (
    PnpParams,
    chain_extrinsic_pnp,
    fundamental_8point_ransac,
    pnp_ransac,
    refine_lm,
    register_pnp_pipeline,
)
from .synth import Scene, SceneSpec, generate_scene, generate_trajectory

__version__ = "0.1.0"
