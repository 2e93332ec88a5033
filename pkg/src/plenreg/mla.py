"""Micro lens array calibration file: parsing and grid geometry.

The calibration XML describes the hexagonal grid of three interleaved micro
lens types: the MLA frame origin relative to the image center (x right,
y up), micro image diameter, grid rotation, the lattice basis vectors in
units of lens diameter, and per-type offsets and usable virtual-depth
ranges.  Parsing preserves units exactly as found in the file; geometric
interpretation happens in :func:`lens_center`.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedXml, MissingField, OutOfRange, UnknownLensType

ROOT_TAG = "mla_calibration"
KNOWN_FIELDS = {
    "offset", "diameter", "rotation", "lens_border", "tcp",
    "lens_base_x", "lens_base_y", "sub_grid_base", "lens_type",
}


@dataclass(frozen=True)
class LensType:
    id: int
    offset: tuple  # (x, y) in lens diameters, relative to type 1
    depth_range: tuple  # (min, max) in virtual depth units

    def __post_init__(self):
        if self.id not in (1, 2, 3):
            raise OutOfRange("lens_type.id", f"got {self.id}")
        if self.id == 1 and self.offset != (0.0, 0.0):
            raise OutOfRange("lens_type.offset", "type 1 offset must be (0, 0)")
        if not self.depth_range[0] < self.depth_range[1]:
            raise OutOfRange("lens_type.depth_range", "min must be < max")


@dataclass(frozen=True)
class MlaCalibration:
    offset: tuple  # px, image center -> MLA origin, x right / y up
    diameter: float  # px
    rotation: float  # radians
    lens_border: float  # px
    tcp: float  # virtual depth units
    lens_base_x: tuple  # lens diameters
    lens_base_y: tuple  # lens diameters
    sub_grid_base: tuple  # lens diameters
    lens_types: tuple  # three LensType, ids {1, 2, 3}
    warnings: tuple = ()

    def __post_init__(self):
        if self.diameter <= 0:
            raise OutOfRange("diameter", "must be positive")
        if self.lens_border < 0:
            raise OutOfRange("lens_border", "must be non-negative")
        if self.tcp <= 1:
            raise OutOfRange("tcp", "must exceed 1 virtual depth unit")
        ids = sorted(t.id for t in self.lens_types)
        if ids != [1, 2, 3]:
            raise OutOfRange("lens_type", f"need exactly ids 1,2,3; got {ids}")

    def lens_type(self, type_id) -> LensType:
        for t in self.lens_types:
            if t.id == type_id:
                return t
        raise UnknownLensType(f"no lens type {type_id}")

    def to_dict(self):
        return {
            "offset": list(self.offset),
            "diameter": self.diameter,
            "rotation": self.rotation,
            "lens_border": self.lens_border,
            "tcp": self.tcp,
            "lens_base_x": list(self.lens_base_x),
            "lens_base_y": list(self.lens_base_y),
            "sub_grid_base": list(self.sub_grid_base),
            "lens_types": [
                {
                    "id": t.id,
                    "offset": list(t.offset),
                    "depth_range": list(t.depth_range),
                }
                for t in sorted(self.lens_types, key=lambda t: t.id)
            ],
        }


def _text_float(parent, tag):
    el = parent.find(tag)
    if el is None or el.text is None or not el.text.strip():
        raise MissingField(tag)
    try:
        return float(el.text)
    except ValueError as exc:
        raise MalformedXml(f"non-numeric value in <{tag}>: {el.text!r}") from exc


def _vec2(parent, tag):
    el = parent.find(tag)
    if el is None:
        raise MissingField(tag)
    return (_text_float(el, "x"), _text_float(el, "y"))


def parse_mla_xml(data) -> MlaCalibration:
    """Parse MLA calibration XML bytes (or str).

    Unknown elements are collected into ``warnings`` rather than rejected,
    since exported files vary slightly between tool versions.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc

    warnings = tuple(
        f"unknown element <{child.tag}>"
        for child in root
        if child.tag not in KNOWN_FIELDS
    )

    lens_types = []
    for el in root.findall("lens_type"):
        if "id" not in el.attrib:
            raise MissingField("lens_type.id")
        try:
            type_id = int(el.attrib["id"])
        except ValueError as exc:
            raise MalformedXml(f"bad lens_type id: {el.attrib['id']!r}") from exc
        offset = _vec2(el, "offset")
        dr = el.find("depth_range")
        if dr is None:
            raise MissingField("depth_range")
        lens_types.append(
            LensType(type_id, offset, (_text_float(dr, "min"), _text_float(dr, "max")))
        )
    if not lens_types:
        raise MissingField("lens_type")

    return MlaCalibration(
        offset=_vec2(root, "offset"),
        diameter=_text_float(root, "diameter"),
        rotation=_text_float(root, "rotation"),
        lens_border=_text_float(root, "lens_border"),
        tcp=_text_float(root, "tcp"),
        lens_base_x=_vec2(root, "lens_base_x"),
        lens_base_y=_vec2(root, "lens_base_y"),
        sub_grid_base=_vec2(root, "sub_grid_base"),
        lens_types=tuple(lens_types),
        warnings=warnings,
    )


def _fmt(v):
    # repr round-trips doubles exactly, which keeps parse/serialize lossless.
    return repr(float(v))


def serialize_mla_xml(cal: MlaCalibration) -> bytes:
    """Render the calibration back to XML; inverse of :func:`parse_mla_xml`."""
    root = ET.Element(ROOT_TAG)

    def vec2(tag, value, parent=None):
        el = ET.SubElement(parent if parent is not None else root, tag)
        ET.SubElement(el, "x").text = _fmt(value[0])
        ET.SubElement(el, "y").text = _fmt(value[1])

    vec2("offset", cal.offset)
    for tag in ("diameter", "rotation", "lens_border", "tcp"):
        ET.SubElement(root, tag).text = _fmt(getattr(cal, tag))
    vec2("lens_base_x", cal.lens_base_x)
    vec2("lens_base_y", cal.lens_base_y)
    vec2("sub_grid_base", cal.sub_grid_base)
    for t in sorted(cal.lens_types, key=lambda t: t.id):
        el = ET.SubElement(root, "lens_type", id=str(t.id))
        vec2("offset", t.offset, el)
        dr = ET.SubElement(el, "depth_range")
        ET.SubElement(dr, "min").text = _fmt(t.depth_range[0])
        ET.SubElement(dr, "max").text = _fmt(t.depth_range[1])
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def lens_center(cal: MlaCalibration, type_id, grid_index, image_size):
    """Pixel-coordinate center of one micro lens.

    ``grid_index`` is the integer lattice coordinate (i, j) in the
    lens_base_x / lens_base_y basis.  The MLA frame has y pointing up while
    pixel rows grow downward, so the y component is negated when emitting
    pixel coordinates.
    """
    lt = cal.lens_type(type_id)
    i, j = grid_index
    width, height = image_size
    base = (
        i * np.asarray(cal.lens_base_x)
        + j * np.asarray(cal.lens_base_y)
        + np.asarray(lt.offset)
    )
    c, s = math.cos(cal.rotation), math.sin(cal.rotation)
    rotated = np.array(
        [c * base[0] - s * base[1], s * base[0] + c * base[1]]
    ) * cal.diameter
    mla = np.asarray(cal.offset) + rotated  # image-centered, y up
    center = np.array([width / 2.0, height / 2.0])
    return np.array([center[0] + mla[0], center[1] - mla[1]])


def lens_type_for_depth(cal: MlaCalibration, v):
    """Ids of every lens type whose depth range contains v (inclusive)."""
    if v <= 0:
        raise OutOfRange("v", "virtual depth must be positive")
    return {t.id for t in cal.lens_types if t.depth_range[0] <= v <= t.depth_range[1]}
