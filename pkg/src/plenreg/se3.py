"""Frame-labeled SE(3) pose algebra and closed-form rigid alignment.

Conventions
-----------
A :class:`Pose` with labels ``(parent, child)`` stores the rigid map taking
coordinates expressed in the *child* frame into the *parent* frame::

    p_parent = R @ p_child + t

Composition ``compose(a, b)`` therefore requires ``a.child == b.parent`` and
applies ``b`` first.  Translations are in millimeters throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration, FrameMismatch

_ORTHO_TOL = 1e-9


def _as_fixed(a, shape):
    out = np.array(a, dtype=float).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping child-frame coordinates into the parent frame."""

    rotation: np.ndarray
    translation: np.ndarray
    parent: str
    child: str

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_fixed(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _as_fixed(self.translation, (3,)))
        if not self.parent or not self.child:
            raise FrameMismatch("frame labels must be non-empty")
        R = self.rotation
        if np.linalg.norm(R.T @ R - np.eye(3)) >= _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) >= _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1")

    def apply(self, points):
        """Map points (Nx3 or 3-vector) from the child frame to the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def matrix(self):
        """4x4 homogeneous matrix."""
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.translation
        return H

    def to_dict(self):
        return {
            "parent": self.parent,
            "child": self.child,
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d):
        if "matrix" in d:
            H = np.array(d["matrix"], dtype=float).reshape(4, 4)
            return cls(H[:3, :3], H[:3, 3], d["parent"], d["child"])
        R = np.array(d["rotation"], dtype=float).reshape(3, 3)
        t = np.array(d["translation"], dtype=float)
        return cls(R, t, d["parent"], d["child"])

    @classmethod
    def from_matrix(cls, H, parent, child):
        H = np.asarray(H, dtype=float).reshape(4, 4)
        return cls(H[:3, :3], H[:3, 3], parent, child)

    def to_quaternion(self):
        """Unit quaternion (w, x, y, z) of the rotation, for I/O only."""
        from scipy.spatial.transform import Rotation

        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        return np.array([w, x, y, z])

    @classmethod
    def from_quaternion(cls, wxyz, translation, parent, child):
        from scipy.spatial.transform import Rotation

        w, x, y, z = np.asarray(wxyz, dtype=float)
        R = Rotation.from_quat([x, y, z, w]).as_matrix()
        return cls(R, translation, parent, child)


def identity(parent, child):
    return Pose(np.eye(3), np.zeros(3), parent, child)


def compose(a: Pose, b: Pose) -> Pose:
    """a after b.  Requires ``a.child == b.parent``."""
    if a.child != b.parent:
        raise FrameMismatch(
            f"cannot compose: a.child={a.child!r} != b.parent={b.parent!r}"
        )
    R = a.rotation @ b.rotation
    # Re-project onto SO(3) so long chains stay within the orthonormality gate.
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    t = a.rotation @ b.translation + a.translation
    return Pose(R, t, a.parent, b.child)


def inverse(p: Pose) -> Pose:
    return Pose(p.rotation.T, -p.rotation.T @ p.translation, p.child, p.parent)


def _check_same_frames(a: Pose, b: Pose):
    if a.parent != b.parent or a.child != b.child:
        raise FrameMismatch(
            f"poses live in different frames: ({a.parent},{a.child}) vs "
            f"({b.parent},{b.child})"
        )


def rotation_angle(a: Pose, b: Pose) -> float:
    """Geodesic angle between the two rotations, in degrees, in [0, 180].

    Uses atan2 of the symmetric/antisymmetric parts rather than a bare
    arccos of the clamped trace: identical up to round-off, but accurate to
    machine precision for near-identical rotations where arccos saturates.
    """
    _check_same_frames(a, b)
    R = a.rotation @ b.rotation.T
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    axis = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.degrees(np.arctan2(np.linalg.norm(axis), cos_t)))


def translation_error(a: Pose, b: Pose) -> float:
    """Euclidean distance between the two translations, in millimeters."""
    _check_same_frames(a, b)
    return float(np.linalg.norm(a.translation - b.translation))


@dataclass(frozen=True)
class PointCloud:
    """3D points (millimeters) expressed in a labeled frame."""

    points: np.ndarray
    frame: str

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


def fit_rigid_umeyama(src: PointCloud, dst: PointCloud, pairs=None) -> Pose:
    """Least-squares rigid transform mapping src points onto dst points.

    Closed-form SVD solution (Kabsch/Umeyama with unit scale) with a
    reflection guard.  ``pairs`` is an optional list of (src_idx, dst_idx)
    correspondences; by default points pair up index-wise.  The returned pose
    has ``parent=dst.frame`` and ``child=src.frame``.
    """
    if pairs is None:
        if len(src) != len(dst):
            raise DegenerateConfiguration("clouds differ in size and no pairs given")
        a = src.points
        b = dst.points
    else:
        idx = np.asarray(list(pairs), dtype=int).reshape(-1, 2)
        a = src.points[idx[:, 0]]
        b = dst.points[idx[:, 1]]
    n = a.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"need >= 3 correspondences, got {n}")
    mu_a = a.mean(axis=0)
    mu_b = b.mean(axis=0)
    A = a - mu_a
    B = b - mu_b
    # Collinearity check: the two largest principal extents must both be
    # non-negligible for the rotation to be determined.
    s_src = np.linalg.svd(A, compute_uv=False)
    if s_src[1] <= 1e-9 * max(s_src[0], 1.0):
        raise DegenerateConfiguration("correspondences are (near-)collinear")
    H = A.T @ B
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    t = mu_b - R @ mu_a
    return Pose(R, t, dst.frame, src.frame)
