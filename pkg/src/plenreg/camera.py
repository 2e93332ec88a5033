"""Focused plenoptic camera model.

Covers lens distortion (forward Brown-Conrady and its iterative inverse),
the central perspective projection of virtual-depth points onto the common
image plane at distance 2B from the micro lens array, and the pinhole
projection used for pose-refinement residuals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, InvalidDepth, NoConvergence
from .se3 import Pose


@dataclass(frozen=True)
class DistortionModel:
    """Radial (k1..k3) and tangential (p1, p2) distortion coefficients."""

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def is_identity(self):
        return self.k1 == self.k2 == self.k3 == self.p1 == self.p2 == 0.0

    def to_dict(self):
        return {"k1": self.k1, "k2": self.k2, "k3": self.k3, "p1": self.p1, "p2": self.p2}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(d.get(k, 0.0)) for k in ("k1", "k2", "k3", "p1", "p2")})


@dataclass(frozen=True)
class PlenopticIntrinsics:
    """Main-lens / MLA geometry of one camera.

    B        -- MLA-to-sensor distance [mm]
    b_L0     -- main-lens-to-MLA distance [mm]
    c_x, c_y -- principal point [px]
    f_px     -- effective focal length of the corrected pinhole view [px]
    """

    B: float
    b_L0: float
    c_x: float
    c_y: float
    f_px: float
    pixel_size_um: float = 3.2
    width: int = 6560
    height: int = 4948
    distortion: DistortionModel = field(default_factory=DistortionModel)

    def __post_init__(self):
        if self.B <= 0 or self.b_L0 <= 0 or self.f_px <= 0:
            raise ValueError("B, b_L0 and f_px must be positive")
        if not (0 <= self.c_x < self.width and 0 <= self.c_y < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_focal_length_mm(cls, f_mm, pixel_size_um, **kwargs):
        """Fallback pinhole focal length from main-lens focal length."""
        f_px = f_mm * 1000.0 / pixel_size_um
        return cls(f_px=f_px, pixel_size_um=pixel_size_um, **kwargs)

    def to_dict(self):
        return {
            "B": self.B,
            "b_L0": self.b_L0,
            "c_x": self.c_x,
            "c_y": self.c_y,
            "f_px": self.f_px,
            "pixel_size_um": self.pixel_size_um,
            "width": self.width,
            "height": self.height,
            "distortion": self.distortion.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        dist = DistortionModel.from_dict(d.pop("distortion", {}))
        return cls(distortion=dist, **d)

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def project_to_common_plane(point, intrinsics: PlenopticIntrinsics):
    """Centrally project virtual-image points onto the common plane at 2B.

    ``point`` is (x_V, y_V, v) with v the (positive, unitless) virtual depth;
    arrays of shape (N, 3) are accepted.  Returns pixel coordinates on the
    corrected perspective image, same leading shape.
    """
    p = np.asarray(point, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    v = p[:, 2]
    if np.any(v <= 0):
        raise InvalidDepth("virtual depth must be positive")
    k = intrinsics
    scale = (2.0 * k.B + k.b_L0) / (v * k.B + k.b_L0)
    out = np.empty((p.shape[0], 2))
    out[:, 0] = (p[:, 0] - k.c_x) * scale + k.c_x
    out[:, 1] = (p[:, 1] - k.c_y) * scale + k.c_y
    # Points already on the common plane (unit magnification) pass through
    # bit-exactly instead of picking up (x - c) + c round-off.
    unit = scale == 1.0
    out[unit] = p[unit, :2]
    return out[0] if single else out


def distort(points, model: DistortionModel, intrinsics: PlenopticIntrinsics):
    """Forward Brown-Conrady distortion in pixel coordinates."""
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    k = intrinsics
    x = (p[:, 0] - k.c_x) / k.f_px
    y = (p[:, 1] - k.c_y) / k.f_px
    xd, yd = _distort_normalized(x, y, model)
    out = np.stack([xd * k.f_px + k.c_x, yd * k.f_px + k.c_y], axis=1)
    return out[0] if single else out


def _distort_normalized(x, y, m: DistortionModel):
    r2 = x * x + y * y
    radial = 1.0 + r2 * (m.k1 + r2 * (m.k2 + r2 * m.k3))
    xt = 2.0 * m.p1 * x * y + m.p2 * (r2 + 2.0 * x * x)
    yt = m.p1 * (r2 + 2.0 * y * y) + 2.0 * m.p2 * x * y
    return x * radial + xt, y * radial + yt


def undistort(points, model: DistortionModel, intrinsics: PlenopticIntrinsics,
              max_iters=20, tol_px=1e-8):
    """Invert the forward distortion by fixed-point iteration.

    Applying :func:`distort` to the result reproduces the input within the
    stopping tolerance (default 1e-8 px, well inside the 1e-6 px contract).
    """
    p = np.asarray(points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if model.is_identity():
        out = p.copy()
        return out[0] if single else out
    k = intrinsics
    xd = (p[:, 0] - k.c_x) / k.f_px
    yd = (p[:, 1] - k.c_y) / k.f_px
    x, y = xd.copy(), yd.copy()
    tol = tol_px / k.f_px
    for _ in range(max_iters):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (model.k1 + r2 * (model.k2 + r2 * model.k3))
        xt = 2.0 * model.p1 * x * y + model.p2 * (r2 + 2.0 * x * x)
        yt = model.p1 * (r2 + 2.0 * y * y) + 2.0 * model.p2 * x * y
        x_new = (xd - xt) / radial
        y_new = (yd - yt) / radial
        delta = np.hypot(x_new - x, y_new - y)
        x, y = x_new, y_new
        if np.max(delta) < tol:
            break
    else:
        fx, fy = _distort_normalized(x, y, model)
        if np.max(np.hypot(fx - xd, fy - yd)) * k.f_px > 1e-6:
            raise NoConvergence("distortion inversion did not converge")
    out = np.stack([x * k.f_px + k.c_x, y * k.f_px + k.c_y], axis=1)
    return out[0] if single else out


def project_pinhole(world_points, pose: Pose, intrinsics: PlenopticIntrinsics):
    """Project world points through ``pose`` (world -> camera) onto pixels."""
    p = np.asarray(world_points, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    cam = pose.apply(p)
    z = cam[:, 2]
    if np.any(z <= 0):
        raise BehindCamera("point at or behind the camera plane")
    k = intrinsics
    out = np.stack(
        [k.f_px * cam[:, 0] / z + k.c_x, k.f_px * cam[:, 1] / z + k.c_y], axis=1
    )
    return out[0] if single else out
