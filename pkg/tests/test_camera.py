import numpy as np
import pytest

from plenreg.camera import (
    DistortionModel,
    PlenopticIntrinsics,
    distort,
    project_pinhole,
    project_to_common_plane,
    undistort,
)
from plenreg.errors import BehindCamera, InvalidDepth
from plenreg.se3 import Pose, identity

from conftest import random_pose


def make_intrinsics(**kwargs):
    defaults = dict(B=2.0, b_L0=40.0, c_x=3280.0, c_y=2474.0, f_px=7812.5)
    defaults.update(kwargs)
    return PlenopticIntrinsics(**defaults)


class TestCommonPlaneProjection:
    def test_principal_point_fixed(self):
        k = make_intrinsics()
        for v in (0.5, 1.0, 2.0, 7.3):
            out = project_to_common_plane([k.c_x, k.c_y, v], k)
            np.testing.assert_allclose(out, [k.c_x, k.c_y])

    def test_identity_at_v2(self):
        # At v = 2 the denominator equals the projection distance 2B + b_L0.
        k = make_intrinsics()
        out = project_to_common_plane([100.0, 4000.0, 2.0], k)
        np.testing.assert_allclose(out, [100.0, 4000.0], rtol=1e-15)

    def test_hand_evaluated_value(self):
        k = PlenopticIntrinsics(B=1.0, b_L0=10.0, c_x=0.0, c_y=0.0, f_px=1000.0,
                                width=100, height=100)
        out = project_to_common_plane([7.0, 0.0, 4.0], k)
        # (7 - 0) / (4*1 + 10) * (2*1 + 10) + 0 = 6
        assert out[0] == pytest.approx(6.0, abs=1e-15)
        assert out[1] == 0.0

    def test_rejects_nonpositive_depth(self):
        k = make_intrinsics()
        with pytest.raises(InvalidDepth):
            project_to_common_plane([10.0, 10.0, 0.0], k)
        with pytest.raises(InvalidDepth):
            project_to_common_plane([10.0, 10.0, -1.0], k)

    def test_collinearity_across_depths(self, rng):
        k = make_intrinsics()
        for _ in range(200):
            xy = rng.uniform(0, [k.width, k.height], size=2)
            v1, v2 = rng.uniform(0.1, 10.0, size=2)
            o1 = project_to_common_plane([*xy, v1], k) - [k.c_x, k.c_y]
            o2 = project_to_common_plane([*xy, v2], k) - [k.c_x, k.c_y]
            n1, n2 = np.linalg.norm(o1), np.linalg.norm(o2)
            if n1 < 1e-9 or n2 < 1e-9:
                continue
            cross = o1[0] / n1 * o2[1] / n2 - o1[1] / n1 * o2[0] / n2
            assert abs(cross) < 1e-9

    def test_monotone_in_depth(self):
        k = make_intrinsics()
        x = k.c_x + 500.0
        outs = [project_to_common_plane([x, k.c_y, v], k)[0] for v in (0.5, 1, 2, 4, 8)]
        assert all(a > b for a, b in zip(outs, outs[1:]))


class TestUndistort:
    def test_zero_coefficients_identity(self, rng):
        k = make_intrinsics()
        pts = rng.uniform(0, [k.width, k.height], size=(50, 2))
        np.testing.assert_array_equal(undistort(pts, DistortionModel(), k), pts)

    def test_principal_point_fixed(self):
        k = make_intrinsics()
        model = DistortionModel(k1=-0.2, k2=0.05, p1=1e-3, p2=-2e-3)
        out = undistort([k.c_x, k.c_y], model, k)
        np.testing.assert_allclose(out, [k.c_x, k.c_y], atol=1e-9)

    @pytest.mark.parametrize("k1", [-0.3, -0.1, 0.1, 0.3])
    def test_forward_round_trip(self, rng, k1):
        k = make_intrinsics()
        model = DistortionModel(k1=k1, k2=0.01, p1=5e-4, p2=-5e-4)
        pts = rng.uniform(0, [k.width, k.height], size=(200, 2))
        distorted = distort(pts, model, k)
        recovered = undistort(distorted, model, k)
        err = np.linalg.norm(distort(recovered, model, k) - distorted, axis=1)
        assert np.max(err) < 1e-6


class TestPinholeProjection:
    def test_optical_axis(self):
        k = make_intrinsics()
        out = project_pinhole([0.0, 0.0, 1000.0], identity("C", "W"), k)
        np.testing.assert_allclose(out, [k.c_x, k.c_y])

    def test_similar_triangles(self):
        k = PlenopticIntrinsics(B=2.0, b_L0=40.0, c_x=0.0, c_y=0.0, f_px=1000.0)
        out = project_pinhole([1.0, 0.0, 1000.0], identity("C", "W"), k)
        np.testing.assert_allclose(out, [1.0, 0.0])

    def test_homogeneous_matrix_oracle(self, rng):
        # Oracle: explicit 3x4 projection matrix applied to homogeneous points.
        k = make_intrinsics()
        K = np.array([[k.f_px, 0, k.c_x], [0, k.f_px, k.c_y], [0, 0, 1.0]])
        for _ in range(10):
            pose = random_pose(rng, "C", "W", max_angle_deg=20, max_shift=100)
            P = K @ pose.matrix()[:3, :]
            point = rng.uniform(-200, 200, size=3) + [0, 0, 3000]
            h = P @ np.append(point, 1.0)
            expected = h[:2] / h[2]
            got = project_pinhole(point, pose, k)
            assert np.max(np.abs(got - expected)) < 1e-9

    def test_scale_invariance(self, rng):
        k = make_intrinsics()
        p = rng.uniform(-100, 100, size=3) + [0, 0, 2000]
        a = project_pinhole(p, identity("C", "W"), k)
        b = project_pinhole(3.7 * p, identity("C", "W"), k)
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_behind_camera(self):
        k = make_intrinsics()
        with pytest.raises(BehindCamera):
            project_pinhole([0.0, 0.0, -10.0], identity("C", "W"), k)


class TestIntrinsicsIO:
    def test_json_round_trip(self, tmp_path):
        k = make_intrinsics(distortion=DistortionModel(k1=-0.1, p1=1e-4))
        path = tmp_path / "intrinsics.json"
        k.dump_json(path)
        assert PlenopticIntrinsics.load_json(path) == k

    def test_focal_length_fallback(self):
        k = PlenopticIntrinsics.from_focal_length_mm(
            25.0, 3.2, B=2.0, b_L0=40.0, c_x=3280.0, c_y=2474.0
        )
        assert k.f_px == pytest.approx(7812.5)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            make_intrinsics(B=0.0)
        with pytest.raises(ValueError):
            make_intrinsics(c_x=1e7)
