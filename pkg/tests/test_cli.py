import json

import numpy as np
import pytest
from click.testing import CliRunner

from plenreg.cli import main
from plenreg.se3 import Pose, rotation_angle, translation_error
from plenreg.synth import SceneSpec, generate_scene, write_scene

from test_mla import GOLDEN_XML


@pytest.fixture
def runner():
    return CliRunner()


def make_scene_dir(tmp_path, seed=50, **kwargs):
    scene = generate_scene(SceneSpec(seed=seed, **kwargs))
    out = tmp_path / "scene"
    write_scene(scene, out)
    truth = json.loads((out / "truth.json").read_text())
    for name in ("cloud0_to_cam0", "cloudX_to_camX"):
        (out / f"{name}.json").write_text(json.dumps(truth[name]))
    return out, truth


class TestParseMla:
    def test_json_output(self, runner, tmp_path):
        path = tmp_path / "mla.xml"
        path.write_bytes(GOLDEN_XML)
        res = runner.invoke(main, ["parse-mla", str(path)])
        assert res.exit_code == 0
        doc = json.loads(res.output)
        assert doc["diameter"] == 23.45
        assert len(doc["lens_types"]) == 3

    def test_missing_file(self, runner, tmp_path):
        res = runner.invoke(main, ["parse-mla", str(tmp_path / "nope.xml")])
        assert res.exit_code == 2

    def test_malformed_xml(self, runner, tmp_path):
        path = tmp_path / "bad.xml"
        path.write_bytes(b"<mla_calibration><diameter>oops")
        res = runner.invoke(main, ["parse-mla", str(path)])
        assert res.exit_code == 1


class TestRegisterRansac3d:
    def test_recovers_truth(self, runner, tmp_path):
        out, truth = make_scene_dir(tmp_path)
        result_path = tmp_path / "reg.json"
        res = runner.invoke(main, [
            "register", "ransac3d",
            "--cloud0", str(out / "cloud0.lfmf"),
            "--cloudX", str(out / "cloudX.lfmf"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--calibX", str(out / "cloudX_to_camX.json"),
            "--seed", "7",
            "--out", str(result_path),
        ])
        assert res.exit_code == 0, res.output
        doc = json.loads(result_path.read_text())
        got = Pose.from_dict(doc["extrinsic"])
        expected = Pose.from_dict(truth["cam0_to_camX"])
        assert rotation_angle(got, expected) < 1e-6
        assert translation_error(got, expected) < 1e-4
        assert doc["seed"] == 7

    def test_convention_flag(self, runner, tmp_path):
        out, _ = make_scene_dir(tmp_path, seed=51)
        res = runner.invoke(main, [
            "register", "ransac3d",
            "--cloud0", str(out / "cloud0.lfmf"),
            "--cloudX", str(out / "cloudX.lfmf"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--calibX", str(out / "cloudX_to_camX.json"),
            "--convention",
            "--out", str(tmp_path / "r.json"),
        ])
        assert res.exit_code == 0
        assert "(CX <- WX)" in res.output
        assert "= (CX <- C0)" in res.output

    def test_missing_input_is_config_error(self, runner, tmp_path):
        out, _ = make_scene_dir(tmp_path, seed=52)
        res = runner.invoke(main, [
            "register", "ransac3d",
            "--cloud0", str(tmp_path / "missing.lfmf"),
            "--cloudX", str(out / "cloudX.lfmf"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--calibX", str(out / "cloudX_to_camX.json"),
        ])
        assert res.exit_code == 2

    def test_algorithmic_failure_exit_code(self, runner, tmp_path, rng):
        # Clouds whose geometry is unrelated: matching succeeds, consensus
        # cannot.
        from plenreg.features import PAYLOAD_POINTS_3D, write_sidecar

        out, _ = make_scene_dir(tmp_path, seed=53)
        desc = rng.normal(size=(40, 16)).astype(np.float32)
        write_sidecar(tmp_path / "a.lfmf", rng.uniform(-500, 500, (40, 3)),
                      desc, PAYLOAD_POINTS_3D)
        write_sidecar(tmp_path / "b.lfmf", rng.uniform(-500, 500, (40, 3)),
                      desc, PAYLOAD_POINTS_3D)
        res = runner.invoke(main, [
            "register", "ransac3d",
            "--cloud0", str(tmp_path / "a.lfmf"),
            "--cloudX", str(tmp_path / "b.lfmf"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--calibX", str(out / "cloudX_to_camX.json"),
        ])
        assert res.exit_code == 1

    def test_seed_from_env(self, runner, tmp_path, monkeypatch):
        out, _ = make_scene_dir(tmp_path, seed=54)
        monkeypatch.setenv("PLENREG_SEED", "99")
        res = runner.invoke(main, [
            "register", "ransac3d",
            "--cloud0", str(out / "cloud0.lfmf"),
            "--cloudX", str(out / "cloudX.lfmf"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--calibX", str(out / "cloudX_to_camX.json"),
            "--out", str(tmp_path / "r.json"),
        ])
        assert res.exit_code == 0
        assert "seed: 99" in res.output
        assert json.loads((tmp_path / "r.json").read_text())["seed"] == 99

    def test_params_file(self, runner, tmp_path):
        out, _ = make_scene_dir(tmp_path, seed=55)
        params = tmp_path / "params.toml"
        params.write_text("[ransac3d]\nseed = 5\ninlier_threshold = 4.0\n")
        res = runner.invoke(main, [
            "register", "ransac3d",
            "--cloud0", str(out / "cloud0.lfmf"),
            "--cloudX", str(out / "cloudX.lfmf"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--calibX", str(out / "cloudX_to_camX.json"),
            "--params", str(params),
            "--out", str(tmp_path / "r.json"),
        ])
        assert res.exit_code == 0
        assert "seed: 5" in res.output

    def test_unknown_param_rejected(self, runner, tmp_path):
        out, _ = make_scene_dir(tmp_path, seed=56)
        params = tmp_path / "params.toml"
        params.write_text("[ransac3d]\nbogus_knob = 1\n")
        res = runner.invoke(main, [
            "register", "ransac3d",
            "--cloud0", str(out / "cloud0.lfmf"),
            "--cloudX", str(out / "cloudX.lfmf"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--calibX", str(out / "cloudX_to_camX.json"),
            "--params", str(params),
        ])
        assert res.exit_code == 2


class TestRegisterPnp:
    def test_recovers_truth(self, runner, tmp_path):
        out, truth = make_scene_dir(tmp_path, seed=60)
        result_path = tmp_path / "pnp.json"
        res = runner.invoke(main, [
            "register", "pnp",
            "--image-features", str(out / "imageX.lfmf"),
            "--cloud0", str(out / "cloud0.lfmf"),
            "--intrinsics", str(out / "intrinsics.json"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--out", str(result_path),
        ])
        assert res.exit_code == 0, res.output
        doc = json.loads(result_path.read_text())
        got = Pose.from_dict(doc["registration"]["pose"])
        expected = Pose.from_dict(truth["cam0_to_camX"])
        assert rotation_angle(got, expected) < 1e-5
        assert translation_error(got, expected) < 0.01

    def test_without_calib0(self, runner, tmp_path):
        out, truth = make_scene_dir(tmp_path, seed=61)
        res = runner.invoke(main, [
            "register", "pnp",
            "--image-features", str(out / "imageX.lfmf"),
            "--cloud0", str(out / "cloud0.lfmf"),
            "--intrinsics", str(out / "intrinsics.json"),
            "--out", "-",
        ])
        assert res.exit_code == 0
        doc = json.loads(res.output.split("\n", 1)[1])  # after "seed:" line
        pose = doc["registration"]["pose"]
        assert (pose["parent"], pose["child"]) == ("CX", "W0")


class TestSynthAlignEvaluate:
    def test_synth_writes_scene(self, runner, tmp_path):
        out = tmp_path / "gen"
        res = runner.invoke(main, ["synth", "--seed", "3",
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        for name in ("cloud0.lfmf", "cloudX.lfmf", "imageX.lfmf",
                     "intrinsics.json", "truth.json", "vicon.csv"):
            assert (out / name).exists()

    def test_synth_spec_toml(self, runner, tmp_path):
        spec = tmp_path / "spec.toml"
        spec.write_text("[scene]\nn_points = 30\nseed = 8\n")
        out = tmp_path / "gen"
        res = runner.invoke(main, ["synth", "--spec", str(spec),
                                   "--out-dir", str(out)])
        assert res.exit_code == 0
        truth = json.loads((out / "truth.json").read_text())
        assert truth["spec"]["n_points"] == 30
        assert truth["spec"]["seed"] == 8

    def test_synth_deterministic(self, runner, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            res = runner.invoke(main, ["synth", "--seed", "4",
                                       "--out-dir", str(out)])
            assert res.exit_code == 0
        assert (a / "cloud0.lfmf").read_bytes() == (b / "cloud0.lfmf").read_bytes()
        assert (a / "vicon.csv").read_bytes() == (b / "vicon.csv").read_bytes()

    def test_align_pipeline(self, runner, tmp_path):
        out = tmp_path / "gen"
        res = runner.invoke(main, ["synth", "--seed", "5", "--out-dir", str(out)])
        assert res.exit_code == 0
        plate = tmp_path / "plate.json"
        plate.write_text(json.dumps({
            "P0": [0.0, 200.0, 0.0], "P1": [200.0, 200.0, 0.0],
            "P2": [0.0, 0.0, 0.0], "P3": [200.0, 0.0, 0.0],
            "expected_p1": [200.0, 200.0, 0.0],
        }))
        aligned = tmp_path / "gt.json"
        res = runner.invoke(main, [
            "align",
            "--vicon", str(out / "vicon.csv"),
            "--plate", str(plate),
            "--object", "cam0",
            "--n-frames", "3",
            "--handedness-axis", "none",
            "--out", str(aligned),
        ])
        assert res.exit_code == 0, res.output
        doc = json.loads(aligned.read_text())
        assert len(doc["poses"]) == 3
        pose = Pose.from_dict(doc["poses"][0])
        assert (pose.parent, pose.child) == ("WORLD", "cam0")

    def test_align_unknown_object(self, runner, tmp_path):
        out = tmp_path / "gen"
        runner.invoke(main, ["synth", "--seed", "5", "--out-dir", str(out)])
        plate = tmp_path / "plate.json"
        plate.write_text(json.dumps({
            "P0": [0.0, 200.0, 0.0], "P1": [200.0, 200.0, 0.0],
            "P2": [0.0, 0.0, 0.0], "P3": [200.0, 0.0, 0.0],
        }))
        res = runner.invoke(main, [
            "align", "--vicon", str(out / "vicon.csv"), "--plate", str(plate),
            "--object", "ghost", "--n-frames", "2",
        ])
        assert res.exit_code == 2

    def test_evaluate_known_offset(self, runner, tmp_path, rng):
        from conftest import random_pose

        gt_poses = [random_pose(rng, "WORLD", "cam0") for _ in range(5)]
        est_poses = [
            Pose(p.rotation, p.translation + [2.0, 0, 0], p.parent, p.child)
            for p in gt_poses
        ]
        gt = tmp_path / "gt.json"
        est = tmp_path / "est.json"
        gt.write_text(json.dumps({"sequence": "s", "poses": [p.to_dict() for p in gt_poses]}))
        est.write_text(json.dumps({"sequence": "s", "poses": [p.to_dict() for p in est_poses]}))
        res = runner.invoke(main, [
            "evaluate", "--est", str(est), "--gt", str(gt),
            "--out", str(tmp_path / "report"),
        ])
        assert res.exit_code == 0, res.output
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["results"][0]["absolute"]["translation"]["rmse"] == pytest.approx(2.0)
        csv_text = (tmp_path / "report.csv").read_text()
        assert csv_text.startswith("sequence,method,kind")

    def test_evaluate_diff_and_per_axis(self, runner, tmp_path, rng):
        from conftest import random_pose

        gt_poses = [random_pose(rng, "WORLD", "cam0") for _ in range(4)]
        gt = tmp_path / "gt.json"
        gt.write_text(json.dumps({"sequence": "s",
                                  "poses": [p.to_dict() for p in gt_poses]}))
        res = runner.invoke(main, [
            "evaluate", "--est", str(gt), "--gt", str(gt), "--diff", str(gt),
            "--per-axis",
        ])
        assert res.exit_code == 0
        assert "difference" in res.output

    def test_evaluate_length_mismatch(self, runner, tmp_path, rng):
        from conftest import random_pose

        def dump(path, n):
            path.write_text(json.dumps({
                "sequence": "s",
                "poses": [random_pose(rng, "W", "c").to_dict() for _ in range(n)],
            }))

        a, b = tmp_path / "a.json", tmp_path / "b.json"
        dump(a, 4)
        dump(b, 5)
        res = runner.invoke(main, ["evaluate", "--est", str(a), "--gt", str(b)])
        assert res.exit_code == 1


class TestEndToEnd:
    def test_synth_register_both_methods_agree(self, runner, tmp_path):
        out, truth = make_scene_dir(tmp_path, seed=70, noise_px=0.2, noise_3d=0.5,
                                    outlier_fraction=0.1)
        r3d, rpnp = tmp_path / "r3d.json", tmp_path / "rpnp.json"
        res = runner.invoke(main, [
            "register", "ransac3d",
            "--cloud0", str(out / "cloud0.lfmf"),
            "--cloudX", str(out / "cloudX.lfmf"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--calibX", str(out / "cloudX_to_camX.json"),
            "--out", str(r3d),
        ])
        assert res.exit_code == 0, res.output
        res = runner.invoke(main, [
            "register", "pnp",
            "--image-features", str(out / "imageX.lfmf"),
            "--cloud0", str(out / "cloud0.lfmf"),
            "--intrinsics", str(out / "intrinsics.json"),
            "--calib0", str(out / "cloud0_to_cam0.json"),
            "--out", str(rpnp),
        ])
        assert res.exit_code == 0, res.output
        a = Pose.from_dict(json.loads(r3d.read_text())["extrinsic"])
        b = Pose.from_dict(json.loads(rpnp.read_text())["registration"]["pose"])
        assert rotation_angle(a, b) < 0.5
        assert translation_error(a, b) < 10.0
