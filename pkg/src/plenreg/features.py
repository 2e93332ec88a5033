"""Descriptor containers, brute-force L2 matching, and sidecar file I/O.

Descriptors are stored as (N, D) float arrays.  Matching is exhaustive with
deterministic tie-breaking (lowest train index wins), so results are stable
across runs and platforms.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySet

SIDECAR_MAGIC = b"LFMF"
SIDECAR_VERSION = 1
PAYLOAD_KEYPOINTS_2D = 0
PAYLOAD_POINTS_3D = 1
# Header flag bit: features were extracted from the distortion-corrected,
# perspective-projected image (rather than the raw virtual image).
FLAG_CORRECTED = 0x01


@dataclass(frozen=True)
class Match:
    query_idx: int
    train_idx: int
    distance: float


@dataclass(frozen=True)
class FeatureCloud:
    """3D points (mm) with parallel descriptors, expressed in ``frame``."""

    points: np.ndarray
    descriptors: np.ndarray
    frame: str

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        desc = np.atleast_2d(np.array(self.descriptors, dtype=float))
        if pts.shape[0] != desc.shape[0]:
            raise ValueError("points and descriptors differ in length")
        pts.setflags(write=False)
        desc.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "descriptors", desc)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class FeatureImage:
    """2D keypoints (px) with parallel descriptors.

    ``corrected`` records whether the keypoints live on the corrected
    (undistorted, perspective-projected) image plane.
    """

    keypoints: np.ndarray
    descriptors: np.ndarray
    corrected: bool = True

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=float).reshape(-1, 2)
        desc = np.atleast_2d(np.array(self.descriptors, dtype=float))
        if kp.shape[0] != desc.shape[0]:
            raise ValueError("keypoints and descriptors differ in length")
        kp.setflags(write=False)
        desc.setflags(write=False)
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "descriptors", desc)

    def __len__(self):
        return self.keypoints.shape[0]


def _pairwise_l2(query, train):
    q = np.asarray(query, dtype=float)
    t = np.asarray(train, dtype=float)
    if q.ndim != 2 or t.ndim != 2:
        raise DimensionMismatch("descriptor sets must be 2D arrays")
    if q.shape[0] == 0 or t.shape[0] == 0:
        raise EmptySet("empty descriptor set")
    if q.shape[1] != t.shape[1]:
        raise DimensionMismatch(
            f"descriptor dimensions differ: {q.shape[1]} vs {t.shape[1]}"
        )
    # (a-b)^2 expansion can go slightly negative from round-off; clamp.
    d2 = (
        np.sum(q * q, axis=1)[:, None]
        + np.sum(t * t, axis=1)[None, :]
        - 2.0 * q @ t.T
    )
    return np.sqrt(np.maximum(d2, 0.0))


def match_bruteforce_l2(query, train, keep_ratio=0.8):
    """Nearest train descriptor for each query, best fraction kept.

    Results are sorted ascending by distance and truncated to
    ``floor(keep_ratio * n_query)`` matches (at least one when any exist).
    Ties break toward the lowest train index.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError("keep_ratio must be in (0, 1]")
    dist = _pairwise_l2(query, train)
    nearest = np.argmin(dist, axis=1)  # argmin takes the first (lowest) index
    best = dist[np.arange(dist.shape[0]), nearest]
    matches = [Match(int(i), int(nearest[i]), float(best[i])) for i in range(len(best))]
    matches.sort(key=lambda m: (m.distance, m.query_idx))
    keep = max(1, int(np.floor(keep_ratio * len(matches))))
    return matches[:keep]


def match_knn_crosscheck(a, b, k=2):
    """Mutual k-nearest-neighbor matching between descriptor sets a and b.

    A pair (i, j) survives iff j is among i's k nearest in b *and* i is among
    j's k nearest in a.  Mutual pairs are resolved greedily by ascending
    distance so each side is matched at most once; the result is symmetric in
    the two arguments (same unordered index pairs either way).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dist = _pairwise_l2(a, b)
    kk_a = min(k, dist.shape[1])
    kk_b = min(k, dist.shape[0])
    # Stable lexicographic order (distance, index) makes ties deterministic.
    knn_ab = np.argsort(dist, axis=1, kind="stable")[:, :kk_a]
    knn_ba = np.argsort(dist.T, axis=1, kind="stable")[:, :kk_b]
    in_ba = [set(row.tolist()) for row in knn_ba]
    mutual = [
        (float(dist[i, j]), int(i), int(j))
        for i in range(dist.shape[0])
        for j in knn_ab[i]
        if i in in_ba[j]
    ]
    mutual.sort()
    used_a, used_b = set(), set()
    matches = []
    for d, i, j in mutual:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matches.append(Match(i, j, d))
    matches.sort(key=lambda m: m.query_idx)
    return matches


# --- sidecar I/O ------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIBB")  # magic, version, count, dim, kind, flags


def write_sidecar(path, coords, descriptors, kind, corrected=True):
    """Write a binary feature sidecar file.

    Layout: header {magic "LFMF", version u32, count u32, dim u32,
    payload_kind u8, flags u8}, then per record the coordinates (2 or 3
    float64) followed by the descriptor (dim float32).
    """
    coords = np.asarray(coords, dtype="<f8")
    desc = np.asarray(descriptors, dtype="<f4")
    ncoord = 2 if kind == PAYLOAD_KEYPOINTS_2D else 3
    if coords.shape != (desc.shape[0], ncoord):
        raise ValueError(f"expected coords of shape (n, {ncoord})")
    flags = FLAG_CORRECTED if corrected else 0
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                SIDECAR_MAGIC, SIDECAR_VERSION, desc.shape[0], desc.shape[1],
                kind, flags,
            )
        )
        for c, d in zip(coords, desc):
            fh.write(c.tobytes())
            fh.write(d.tobytes())


def read_sidecar(path):
    """Read a feature sidecar; returns (coords, descriptors, kind, corrected)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError("sidecar file truncated")
        magic, version, count, dim, kind, flags = _HEADER.unpack(head)
        if magic != SIDECAR_MAGIC:
            raise ValueError(f"bad sidecar magic: {magic!r}")
        if version != SIDECAR_VERSION:
            raise ValueError(f"unsupported sidecar version {version}")
        ncoord = 2 if kind == PAYLOAD_KEYPOINTS_2D else 3
        rec = np.dtype([("coords", "<f8", (ncoord,)), ("desc", "<f4", (dim,))])
        data = np.frombuffer(fh.read(), dtype=rec, count=count)
    coords = data["coords"].astype(float).reshape(count, ncoord)
    desc = data["desc"].astype(float).reshape(count, dim)
    return coords, desc, kind, bool(flags & FLAG_CORRECTED)


def write_sidecar_csv(path, coords, descriptors, kind, corrected=True):
    """Debug-friendly CSV alternative to the binary sidecar."""
    coords = np.asarray(coords, dtype=float)
    desc = np.asarray(descriptors, dtype=float)
    ncoord = coords.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# kind={kind} corrected={int(corrected)} dim={desc.shape[1]}"])
        w.writerow(list("xyz"[:ncoord]) + [f"d{i}" for i in range(desc.shape[1])])
        for c, d in zip(coords, desc):
            w.writerow([repr(float(v)) for v in c] + [repr(float(v)) for v in d])


def read_sidecar_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta = dict(item.split("=") for item in rows[0][0].lstrip("# ").split())
    kind = int(meta["kind"])
    corrected = bool(int(meta.get("corrected", 1)))
    dim = int(meta["dim"])
    ncoord = 2 if kind == PAYLOAD_KEYPOINTS_2D else 3
    body = np.array([[float(v) for v in row] for row in rows[2:]], dtype=float)
    body = body.reshape(-1, ncoord + dim)
    return body[:, :ncoord], body[:, ncoord:], kind, corrected


def load_feature_cloud(path, frame):
    """Load a 3D feature sidecar (binary or CSV by extension)."""
    reader = read_sidecar_csv if str(path).endswith(".csv") else read_sidecar
    coords, desc, kind, _ = reader(path)
    if kind != PAYLOAD_POINTS_3D:
        raise ValueError(f"{path}: expected 3D point payload, got kind={kind}")
    return FeatureCloud(coords, desc, frame)


def load_feature_image(path, require_corrected=None):
    """Load a 2D feature sidecar (binary or CSV by extension).

    ``require_corrected`` asserts the correction state recorded in the file;
    a mismatch is an ingestion error, not something to silently fix.
    """
    reader = read_sidecar_csv if str(path).endswith(".csv") else read_sidecar
    coords, desc, kind, corrected = reader(path)
    if kind != PAYLOAD_KEYPOINTS_2D:
        raise ValueError(f"{path}: expected 2D keypoint payload, got kind={kind}")
    if require_corrected is not None and corrected != require_corrected:
        raise ValueError(
            f"{path}: features are {'corrected' if corrected else 'raw'}, "
            f"expected {'corrected' if require_corrected else 'raw'}"
        )
    return FeatureImage(coords, desc, corrected)
