"""Command-line entry point.

Exit codes: 0 success, 1 algorithmic failure (no consensus, too few
matches, ...), 2 configuration or I/O error.  Every seeded command echoes
the resolved seed so runs are replayable; PLENREG_SEED serves as fallback
when no --seed / params-file seed is given.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import features, metrics, mla, ransac3d, pnp, synth, vicon
from .camera import PlenopticIntrinsics
from .errors import ConfigError, PlenregError
from .se3 import Pose

EXIT_ALGORITHMIC = 1
EXIT_CONFIG = 2


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_toml(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from exc


def _load_pose(path):
    try:
        with open(path) as fh:
            return Pose.from_dict(json.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad pose file {path}: {exc}") from exc


def _resolve_seed(seed, params_table):
    if seed is not None:
        return int(seed)
    if "seed" in params_table:
        return int(params_table["seed"])
    env = os.environ.get("PLENREG_SEED")
    return int(env) if env else 0


def _make_params(cls, table, seed):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise ConfigError(f"unknown parameter(s): {sorted(unknown)}")
    table = dict(table)
    table["seed"] = seed
    return cls(**table)


def _write_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path is None or path == "-":
        click.echo(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


@click.group()
def main():
    """Extrinsic registration tools for plenoptic multi-camera rigs."""


@main.command("parse-mla")
@click.argument("xml_file", type=click.Path(exists=False))
@click.option("--json", "as_json", is_flag=True, default=True,
              help="Emit normalized JSON (default).")
def cmd_parse_mla(xml_file, as_json):
    """Parse an MLA calibration XML file and print it as normalized JSON."""
    try:
        with open(xml_file, "rb") as fh:
            cal = mla.parse_mla_xml(fh.read())
    except OSError as exc:
        _fail(EXIT_CONFIG, exc)
    except PlenregError as exc:
        _fail(EXIT_ALGORITHMIC, exc)
    for warning in cal.warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(json.dumps(cal.to_dict(), indent=2, sort_keys=True))


@main.group()
def register():
    """Estimate the inter-camera extrinsic with one of the two methods."""


@register.command("ransac3d")
@click.option("--cloud0", "cloud0_path", required=True, type=click.Path())
@click.option("--cloudX", "cloudx_path", required=True, type=click.Path())
@click.option("--calib0", "calib0_path", required=True, type=click.Path(),
              help="Pose JSON: reference cloud frame into reference camera frame.")
@click.option("--calibX", "calibx_path", required=True, type=click.Path(),
              help="Pose JSON: query cloud frame into query camera frame.")
@click.option("--params", "params_path", type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--convention", is_flag=True,
              help="Print the frame chain used by the extrinsic product.")
def cmd_register_ransac3d(cloud0_path, cloudx_path, calib0_path, calibx_path,
                          params_path, seed, out_path, convention):
    """Point-cloud alignment method."""
    try:
        table = _load_toml(params_path).get("ransac3d", {})
        resolved_seed = _resolve_seed(seed, table)
        params = _make_params(ransac3d.Ransac3dParams, table, resolved_seed)
        cloud0 = features.load_feature_cloud(cloud0_path, synth.W0)
        cloudx = features.load_feature_cloud(cloudx_path, synth.WX)
        cloud0_to_cam0 = _load_pose(calib0_path)
        cloudx_to_camx = _load_pose(calibx_path)
    except (ConfigError, OSError, ValueError, TypeError) as exc:
        _fail(EXIT_CONFIG, exc)
    click.echo(f"seed: {resolved_seed}", err=True)
    try:
        result = ransac3d.register_ransac3d(cloud0, cloudx, params)
        extrinsic = ransac3d.chain_extrinsic_ransac(
            cloudx_to_camx, result.pose, cloud0_to_cam0
        )
    except PlenregError as exc:
        _fail(EXIT_ALGORITHMIC, exc)
    if convention:
        click.echo(
            ransac3d.format_frame_chain(cloudx_to_camx, result.pose, cloud0_to_cam0),
            err=True,
        )
    _write_json(out_path, {
        "method": "ransac3d",
        "seed": resolved_seed,
        "registration": result.to_dict(),
        "chain_inputs": {
            "cloudX_to_camX": cloudx_to_camx.to_dict(),
            "cloud0_to_cam0": cloud0_to_cam0.to_dict(),
        },
        "extrinsic": extrinsic.to_dict(),
    })


@register.command("pnp")
@click.option("--image-features", "image_path", required=True, type=click.Path())
@click.option("--cloud0", "cloud0_path", required=True, type=click.Path())
@click.option("--intrinsics", "intrinsics_path", required=True, type=click.Path())
@click.option("--calib0", "calib0_path", type=click.Path(), default=None,
              help="Pose JSON for the reference camera; enables the final chain.")
@click.option("--params", "params_path", type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_register_pnp(image_path, cloud0_path, intrinsics_path, calib0_path,
                     params_path, seed, out_path):
    """Single-image plenoptic PnP method."""
    try:
        table = _load_toml(params_path).get("pnp", {})
        resolved_seed = _resolve_seed(seed, table)
        params = _make_params(pnp.PnpParams, table, resolved_seed)
        image = features.load_feature_image(image_path)
        cloud0 = features.load_feature_cloud(cloud0_path, synth.W0)
        intrinsics = PlenopticIntrinsics.load_json(intrinsics_path)
        cloud0_to_cam0 = _load_pose(calib0_path) if calib0_path else None
    except (ConfigError, OSError, ValueError, TypeError, KeyError) as exc:
        _fail(EXIT_CONFIG, exc)
    click.echo(f"seed: {resolved_seed}", err=True)
    try:
        result = pnp.register_pnp_pipeline(
            image, cloud0, intrinsics, intrinsics.distortion, params,
            cloud0_to_cam0=cloud0_to_cam0,
        )
    except PlenregError as exc:
        _fail(EXIT_ALGORITHMIC, exc)
    _write_json(out_path, {
        "method": "pnp",
        "seed": resolved_seed,
        "registration": result.to_dict(),
    })


@main.command("align")
@click.option("--vicon", "vicon_path", required=True, type=click.Path())
@click.option("--plate", "plate_path", required=True, type=click.Path(),
              help="JSON with marker positions P0..P3 and aruco_to_vicon_offset.")
@click.option("--schema", "schema_path", type=click.Path(), default=None)
@click.option("--object", "object_name", default="cam0")
@click.option("--n-frames", type=int, required=True)
@click.option("--factor", type=int, default=8, show_default=True)
@click.option("--offset", type=int, default=0, show_default=True)
@click.option("--handedness-axis", type=click.Choice(["x", "y", "z", "none"]),
              default="y", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_align(vicon_path, plate_path, schema_path, object_name, n_frames,
              factor, offset, handedness_axis, out_path):
    """Convert tracker data into per-frame world-frame ground-truth poses."""
    try:
        schema = vicon.CsvSchema(**_load_toml(schema_path).get("schema", {}))
        with open(vicon_path, "rb") as fh:
            streams = vicon.parse_vicon_csv(fh.read(), schema)
        with open(plate_path) as fh:
            plate_cfg = json.load(fh)
        plate = vicon.MarkerPlate.from_dict(plate_cfg)
        expected_p1 = plate_cfg.get("expected_p1")
    except (ConfigError, OSError, ValueError, KeyError, TypeError) as exc:
        _fail(EXIT_CONFIG, exc)
    except PlenregError as exc:
        _fail(EXIT_ALGORITHMIC, exc)
    try:
        if object_name not in streams:
            raise ConfigError(f"object {object_name!r} not present in CSV")
        if handedness_axis != "none":
            streams = {
                obj: vicon.ViconStream(obj, tuple(
                    None if s is None else vicon.convert_handedness(s, handedness_axis)
                    for s in stream.samples
                ))
                for obj, stream in streams.items()
            }
        world_to_vicon = vicon.plate_frame(plate, expected_p1=expected_p1)
        frames = vicon.sync_frames(streams, n_frames, factor=factor, offset=offset)
        aligned = [
            None if p is None
            else vicon.to_common_frame(p, world_to_vicon, plate.aruco_to_vicon_offset)
            for p in frames[object_name]
        ]
    except ConfigError as exc:
        _fail(EXIT_CONFIG, exc)
    except PlenregError as exc:
        _fail(EXIT_ALGORITHMIC, exc)
    _write_json(out_path, {
        "object": object_name,
        "factor": factor,
        "offset": offset,
        "poses": [None if p is None else p.to_dict() for p in aligned],
    })


def _load_trajectory(path):
    with open(path) as fh:
        payload = json.load(fh)
    return payload.get("sequence", os.path.basename(path)), [
        None if p is None else Pose.from_dict(p) for p in payload["poses"]
    ]


@main.command("evaluate")
@click.option("--est", "est_path", required=True, type=click.Path(),
              help="Trajectory JSON {sequence, poses: [pose or null]}.")
@click.option("--gt", "gt_path", required=True, type=click.Path(),
              help="Ground-truth trajectory JSON (e.g. the align output).")
@click.option("--diff", "diff_path", type=click.Path(), default=None,
              help="Second estimate for method-difference statistics.")
@click.option("--per-axis", is_flag=True)
@click.option("--stride", type=int, default=1, show_default=True)
@click.option("--method", default="ransac3d")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Report basename; writes <out>.csv and <out>.json.")
def cmd_evaluate(est_path, gt_path, diff_path, per_axis, stride, method, out_path):
    """Relative/absolute pose-error report against ground truth."""
    try:
        sequence, est = _load_trajectory(est_path)
        _, gt = _load_trajectory(gt_path)
        diff = _load_trajectory(diff_path)[1] if diff_path else None
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        _fail(EXIT_CONFIG, exc)
    try:
        rel_t, rel_r, skipped_rel = metrics.relative_errors(est, gt, stride=stride)
        abs_t, abs_r, skipped_abs = metrics.absolute_errors(est, gt)
        result = metrics.SequenceResult(
            sequence=sequence, method=method,
            relative_translation=rel_t, relative_rotation=rel_r,
            absolute_translation=abs_t, absolute_rotation=abs_r,
            skipped_frames=max(skipped_rel, skipped_abs),
        )
        if per_axis:
            t_ax, r_ax = metrics.per_axis_errors(est, gt)
            result.per_axis_translation = t_ax
            result.per_axis_rotation = r_ax
        report = metrics.EvalReport(results=[result])
        if diff is not None:
            report.method_difference[sequence] = metrics.method_difference(est, diff)
    except PlenregError as exc:
        _fail(EXIT_ALGORITHMIC, exc)
    if out_path is None:
        click.echo(metrics.emit_report(report, "csv").decode(), nl=False)
    else:
        for fmt in ("csv", "json"):
            with open(f"{out_path}.{fmt}", "wb") as fh:
                fh.write(metrics.emit_report(report, fmt))


@main.command("synth")
@click.option("--spec", "spec_path", type=click.Path(), default=None,
              help="TOML with a [scene] table of SceneSpec fields.")
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", required=True, type=click.Path())
def cmd_synth(spec_path, seed, out_dir):
    """Generate a synthetic scene with exact ground truth."""
    try:
        table = _load_toml(spec_path).get("scene", {})
        resolved_seed = _resolve_seed(seed, table)
        table["seed"] = resolved_seed
        spec = synth.SceneSpec.from_dict(table)
    except (ConfigError, TypeError, ValueError) as exc:
        _fail(EXIT_CONFIG, exc)
    click.echo(f"seed: {resolved_seed}", err=True)
    scene = synth.generate_scene(spec)
    try:
        synth.write_scene(scene, out_dir)
        _, csv_bytes = synth.generate_trajectory(
            max(scene.spec.n_points // 10, 2), seed=resolved_seed
        )
        with open(os.path.join(out_dir, "vicon.csv"), "wb") as fh:
            fh.write(csv_bytes)
    except OSError as exc:
        _fail(EXIT_CONFIG, exc)
    click.echo(f"scene written to {out_dir}")


if __name__ == "__main__":
    main()
