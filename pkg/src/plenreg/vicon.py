"""Motion-capture ground truth: CSV ingestion, handedness conversion,
trigger synchronization, and the marker-plate common reference frame.

The tracker records object poses at 80 Hz in a left-handed coordinate
system; the camera trigger runs at the sample rate divided by 8.  The CSV
column layout is configurable through a small schema because exports vary;
the default layout is one ``frame`` column followed, per object, by
``<name>.x .y .z`` position columns (mm) and a rotation block whose
encoding the schema selects (unit quaternion by default).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    CollinearMarkers,
    FrameMismatch,
    IndexOutOfRange,
    MalformedCsv,
    UnknownObject,
    ValidationFailed,
)
from .se3 import Pose, compose, inverse

VICON_FRAME = "VICON"
WORLD_FRAME = "WORLD"
DEFAULT_OBJECTS = ("cam0", "cam2", "plate")
_ROTATION_SUFFIXES = {
    "quat_wxyz": ("qw", "qx", "qy", "qz"),
    "euler_xyz_deg": ("rx", "ry", "rz"),
    "euler_xyz_rad": ("rx", "ry", "rz"),
}


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of a tracker CSV export."""

    rotation: str = "quat_wxyz"
    index_column: str = "frame"
    separator: str = "."

    def __post_init__(self):
        if self.rotation not in _ROTATION_SUFFIXES:
            raise MalformedCsv(f"unknown rotation encoding: {self.rotation!r}")

    def columns_for(self, obj):
        pos = [f"{obj}{self.separator}{s}" for s in ("x", "y", "z")]
        rot = [f"{obj}{self.separator}{s}" for s in _ROTATION_SUFFIXES[self.rotation]]
        return pos + rot

    def decode_rotation(self, values):
        if self.rotation == "quat_wxyz":
            w, x, y, z = values
            return Rotation.from_quat([x, y, z, w]).as_matrix()
        degrees = self.rotation.endswith("deg")
        return Rotation.from_euler("XYZ", values, degrees=degrees).as_matrix()

    def encode_rotation(self, R):
        if self.rotation == "quat_wxyz":
            x, y, z, w = Rotation.from_matrix(R).as_quat()
            return [w, x, y, z]
        degrees = self.rotation.endswith("deg")
        return list(Rotation.from_matrix(R).as_euler("XYZ", degrees=degrees))


@dataclass(frozen=True)
class ViconSample:
    index: int
    object: str
    position: np.ndarray  # mm
    rotation: np.ndarray  # 3x3
    # Rotation values exactly as read from the file, kept so that
    # serialization round trips byte-for-byte (matrix <-> quaternion
    # conversion is not bit-stable in the last ulp).
    raw_rotation: tuple = None
    rotation_encoding: str = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.array(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float).reshape(3, 3))

    def pose(self, frame=VICON_FRAME) -> Pose:
        return Pose(self.rotation, self.position, frame, self.object)


@dataclass(frozen=True)
class ViconStream:
    object: str
    samples: tuple  # ViconSample or None per tracker frame

    def __len__(self):
        return len(self.samples)


def parse_vicon_csv(data, schema: CsvSchema = CsvSchema(), objects=None,
                    strict=False):
    """Parse tracker CSV bytes into per-object sample streams.

    Occlusion gaps (blank fields) become ``None`` entries, never zero poses.
    With ``strict`` any object named in ``objects`` but absent from the
    header raises :class:`UnknownObject`.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    rows = list(csv.reader(io.StringIO(data)))
    if not rows:
        raise MalformedCsv("empty file")
    header = [h.strip() for h in rows[0]]
    if schema.index_column not in header:
        raise MalformedCsv(f"no {schema.index_column!r} column in header")
    col = {name: i for i, name in enumerate(header)}

    if objects is None:
        suffix = f"{schema.separator}x"
        objects = [h[: -len(suffix)] for h in header if h.endswith(suffix)]
    found = []
    for obj in objects:
        missing = [c for c in schema.columns_for(obj) if c not in col]
        if missing:
            if strict:
                raise UnknownObject(f"object {obj!r}: missing columns {missing}")
            continue
        found.append(obj)

    streams = {obj: [] for obj in found}
    for rownum, row in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in row):
            continue
        try:
            index = int(float(row[col[schema.index_column]]))
        except (ValueError, IndexError) as exc:
            raise MalformedCsv(f"row {rownum}: bad frame index") from exc
        for obj in found:
            cells = []
            for name in schema.columns_for(obj):
                i = col[name]
                cells.append(row[i].strip() if i < len(row) else "")
            if not all(cells):
                streams[obj].append(None)  # occlusion gap
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError as exc:
                raise MalformedCsv(f"row {rownum}: non-numeric field") from exc
            streams[obj].append(
                ViconSample(
                    index, obj, values[:3], schema.decode_rotation(values[3:]),
                    raw_rotation=tuple(values[3:]),
                    rotation_encoding=schema.rotation,
                )
            )
    return {obj: ViconStream(obj, tuple(samples)) for obj, samples in streams.items()}


def serialize_vicon_csv(streams, schema: CsvSchema = CsvSchema()) -> bytes:
    """Inverse of :func:`parse_vicon_csv` for the same schema."""
    objects = sorted(streams)
    header = [schema.index_column]
    for obj in objects:
        header.extend(schema.columns_for(obj))
    length = max(len(streams[obj]) for obj in objects)
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(header)
    for i in range(length):
        row = [str(i)]
        for obj in objects:
            samples = streams[obj].samples
            s = samples[i] if i < len(samples) else None
            if s is None:
                row.extend([""] * len(schema.columns_for(obj)))
            else:
                row.extend(repr(float(v)) for v in s.position)
                if s.raw_rotation is not None and s.rotation_encoding == schema.rotation:
                    rot_values = s.raw_rotation
                else:
                    rot_values = schema.encode_rotation(s.rotation)
                row.extend(repr(float(v)) for v in rot_values)
        w.writerow(row)
    return out.getvalue().encode("utf-8")


def _mirror(axis):
    try:
        i = "xyz".index(axis)
    except ValueError:
        raise ValueError(f"handedness axis must be x, y or z, not {axis!r}")
    m = np.eye(3)
    m[i, i] = -1.0
    return m


def convert_handedness(sample: ViconSample, axis="y") -> ViconSample:
    """Mirror a left-handed raw pose into right-handed coordinates.

    The chosen axis is negated: positions via ``M t`` and rotations via the
    conjugation ``M R M`` with ``M = diag(+-1)``, which keeps det = +1.
    Applying the conversion twice returns the input.
    """
    M = _mirror(axis)
    return ViconSample(
        sample.index, sample.object, M @ sample.position, M @ sample.rotation @ M
    )


def sync_frames(streams, n_frames, factor=8, offset=0):
    """Map camera frame k to tracker sample ``offset + k * factor``.

    Returns {object: [Pose or None] * n_frames}; gap samples stay ``None``.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out = {}
    for obj, stream in streams.items():
        last = offset + (n_frames - 1) * factor
        if n_frames > 0 and (offset < 0 or last >= len(stream)):
            raise IndexOutOfRange(
                f"object {obj!r}: frame mapping reaches sample {last}, "
                f"stream has {len(stream)}"
            )
        poses = []
        for k in range(n_frames):
            s = stream.samples[offset + k * factor]
            poses.append(None if s is None else s.pose())
        out[obj] = poses
    return out


@dataclass(frozen=True)
class MarkerPlate:
    """ArUco marker centers (tracker coordinates, mm) by marker id."""

    P0: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    P3: np.ndarray
    aruco_to_vicon_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("P0", "P1", "P2", "P3", "aruco_to_vicon_offset"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(3))

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["P0"], d["P1"], d["P2"], d["P3"],
            d.get("aruco_to_vicon_offset", np.zeros(3)),
        )


def plate_frame(plate: MarkerPlate, expected_p1=None, tolerance=5.0) -> Pose:
    """Right-handed world frame defined by the marker plate.

    P2 is the origin, P3 sets x, P0 sets y; z is the normalized cross
    product and the frame is completed by recomputing y from z and x so the
    rotation is exactly orthonormal even for imperfectly measured markers.
    When ``expected_p1`` (template coordinates, mm) is given, P1 expressed
    in the local frame must match it within ``tolerance``.

    The returned pose maps world (plate-local) coordinates into the tracker
    frame.
    """
    x = plate.P3 - plate.P2
    y_raw = plate.P0 - plate.P2
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y_raw)
    if nx < 1e-9 or ny < 1e-9:
        raise CollinearMarkers("coincident plate markers")
    x = x / nx
    y_raw = y_raw / ny
    z = np.cross(x, y_raw)
    nz = np.linalg.norm(z)
    if nz < 1e-9:
        raise CollinearMarkers("plate markers are collinear")
    z = z / nz
    y = np.cross(z, x)  # completes an exactly orthonormal right-handed frame
    R = np.column_stack([x, y, z])
    pose = Pose(R, plate.P2, VICON_FRAME, WORLD_FRAME)
    if expected_p1 is not None:
        p1_local = R.T @ (plate.P1 - plate.P2)
        err = np.linalg.norm(p1_local - np.asarray(expected_p1, dtype=float))
        if err > tolerance:
            raise ValidationFailed(
                f"P1 validation error {err:.3f} mm exceeds {tolerance} mm",
                measured=p1_local,
            )
    return pose


def to_common_frame(pose: Pose, world_to_vicon: Pose, offset=None) -> Pose:
    """Re-express a tracker-frame pose in the plate-defined world frame.

    ``offset`` is the printed-template translation from the world origin
    (bottom-left ArUco marker) to the tracked bottom-left marker, expressed
    in plate-local axes.
    """
    if pose.parent != world_to_vicon.parent:
        raise FrameMismatch(
            f"pose parent {pose.parent!r} != plate frame parent "
            f"{world_to_vicon.parent!r}"
        )
    if offset is not None:
        offset = np.asarray(offset, dtype=float).reshape(3)
        world_to_vicon = Pose(
            world_to_vicon.rotation,
            world_to_vicon.translation + world_to_vicon.rotation @ offset,
            world_to_vicon.parent,
            world_to_vicon.child,
        )
    return compose(inverse(world_to_vicon), pose)
