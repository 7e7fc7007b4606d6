import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation, Slerp

from raysweep.errors import NonConvergedUndistortion, OutOfTrajectoryRange
from raysweep.geometry import (
    CameraModel,
    PoseTrajectory,
    Se3,
    intersect_ray_with_depth_plane,
    quat_from_axis_angle,
    quat_slerp,
    relative_pose,
    rotation_angle,
)

from conftest import random_pose, random_unit_quat


class TestUndistortion:
    def test_principal_point_maps_to_optical_axis(self, distorted_cam):
        u, v = distorted_cam.undistort_pixel((distorted_cam.cx, distorted_cam.cy))
        assert u == pytest.approx(0.0, abs=1e-12)
        assert v == pytest.approx(0.0, abs=1e-12)

    def test_pure_pinhole_unit_offset(self, pinhole_cam):
        u, v = pinhole_cam.undistort_pixel((pinhole_cam.cx + pinhole_cam.fx, pinhole_cam.cy))
        assert (u, v) == (1.0, 0.0)

    def test_roundtrip_through_forward_model(self):
        # pix built with the forward model must undistort back to the
        # normalized coords it came from
        cam = CameraModel(fx=200, fy=200, cx=120, cy=90, width=240, height=180,
                          dist=np.array([0.1, 0.0, 0.0, 0.0]))
        pix = cam.distort_to_pixel(np.array([0.3, -0.2]))
        u, v = cam.undistort_pixel(pix)
        back = cam.distort_to_pixel(np.array([u, v]))
        assert np.max(np.abs(back - pix)) < 1e-6
        assert u == pytest.approx(0.3, abs=1e-6)
        assert v == pytest.approx(-0.2, abs=1e-6)

    def test_random_roundtrips_small_distortion(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            dist = np.array([
                rng.uniform(-0.2, 0.2), rng.uniform(-0.05, 0.05),
                rng.uniform(-0.005, 0.005), rng.uniform(-0.005, 0.005),
            ])
            cam = CameraModel(fx=200, fy=210, cx=119.5, cy=90.5,
                              width=240, height=180, dist=dist)
            pix = np.stack([rng.uniform(0, 239, 100), rng.uniform(0, 179, 100)], axis=-1)
            norm = cam.undistort_pixels(pix)
            back = cam.distort_to_pixel(norm)
            assert np.max(np.abs(back - pix)) < 1e-6

    def test_extreme_distortion_raises(self):
        cam = CameraModel(fx=200, fy=200, cx=120, cy=90, width=240, height=180,
                          dist=np.array([-5.0, 0.0, 0.0, 0.0]))
        with pytest.raises(NonConvergedUndistortion):
            cam.undistort_pixel((239.0, 179.0))


class TestCameraValidation:
    def test_negative_focal_rejected(self):
        with pytest.raises(ValueError):
            CameraModel(fx=-1.0, fy=200, cx=120, cy=90, width=240, height=180)

    def test_principal_point_outside_rejected(self):
        with pytest.raises(ValueError):
            CameraModel(fx=200, fy=200, cx=240.0, cy=90, width=240, height=180)


class TestPoseInterpolation:
    def _traj(self):
        poses = [
            (0.0, Se3.identity()),
            (1.0, Se3.from_axis_angle([0, 0, 1], np.pi / 2, (2.0, 0.0, 0.0))),
        ]
        return PoseTrajectory.from_poses(poses)

    def test_exact_sample_returned(self):
        traj = self._traj()
        p = traj.interpolate(1.0)
        assert np.array_equal(p.quat, traj.quats[1])
        assert np.array_equal(p.trans, traj.trans[1])

    def test_translation_midpoint(self):
        traj = self._traj()
        p = traj.interpolate(0.5)
        assert np.allclose(p.trans, [1.0, 0.0, 0.0], atol=1e-12)

    def test_rotation_midpoint_matches_axis_angle_halving(self):
        # slerp between identity and a 90 deg z-rotation must land on the
        # 45 deg z-rotation computed directly from the axis-angle form
        traj = self._traj()
        p = traj.interpolate(0.5)
        expected = quat_from_axis_angle([0, 0, 1], np.pi / 4)
        assert np.max(np.abs(p.quat - expected)) < 1e-9

    def test_matches_scipy_slerp(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            q0, q1 = random_unit_quat(rng), random_unit_quat(rng)
            alpha = rng.uniform()
            ours = quat_slerp(q0, q1, alpha)
            ref = Slerp([0, 1], Rotation.from_quat([q0, q1]))(alpha).as_quat()
            # quaternions are sign-ambiguous
            err = min(np.max(np.abs(ours - ref)), np.max(np.abs(ours + ref)))
            assert err < 1e-12

    def test_angle_monotone_along_constant_axis(self):
        traj = self._traj()
        ts = np.linspace(0.0, 1.0, 33)
        angles = [rotation_angle(traj.interpolate(t).quat) for t in ts]
        assert np.all(np.diff(angles) > 0)
        assert angles[0] == 0.0
        assert angles[-1] == pytest.approx(np.pi / 2, abs=1e-12)

    def test_out_of_range_raises(self):
        traj = self._traj()
        with pytest.raises(OutOfTrajectoryRange):
            traj.interpolate(1.0001)
        with pytest.raises(OutOfTrajectoryRange):
            traj.interpolate(-0.0001)

    def test_timestamps_must_increase(self):
        with pytest.raises(ValueError):
            PoseTrajectory.from_poses([(0.0, Se3.identity()), (0.0, Se3.identity())])

    def test_double_cover_takes_short_arc(self):
        q = quat_from_axis_angle([0, 1, 0], 0.3)
        ours = quat_slerp(q, -q, 0.5)  # same rotation, negated representation
        assert rotation_angle(ours) == pytest.approx(0.3, abs=1e-12)


class TestrelativePose:
    def test_self_is_identity(self):
        rng = np.random.default_rng(5)
        T = random_pose(rng)
        rel = relative_pose(T, T)
        assert rel.is_close(Se3.identity(), tol=1e-12)

    def test_identity_base_passes_through(self):
        rng = np.random.default_rng(6)
        T = random_pose(rng)
        rel = relative_pose(Se3.identity(), T)
        assert np.allclose(rel.quat, T.quat) and np.allclose(rel.trans, T.trans)

    def test_composition_roundtrip_random_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            a, b = random_pose(rng), random_pose(rng)
            assert (a @ relative_pose(a, b)).is_close(b, tol=1e-9)


class TestSe3:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_compose_inverse_is_identity(self, seed):
        rng = np.random.default_rng(seed)
        T = random_pose(rng, trans_scale=10.0)
        assert (T @ T.inverse()).is_close(Se3.identity(), tol=1e-9)

    def test_apply_matches_matrix_form(self):
        rng = np.random.default_rng(8)
        T = random_pose(rng)
        pts = rng.normal(size=(20, 3))
        expected = pts @ T.rotation_matrix().T + T.trans
        assert np.allclose(T.apply(pts), expected, atol=1e-12)

    def test_bad_quaternion_rejected(self):
        with pytest.raises(ValueError):
            Se3(np.array([1.0, 1.0, 0.0, 1.0]), np.zeros(3))


class TestRayPlaneIntersection:
    def test_optical_axis(self):
        assert intersect_ray_with_depth_plane((0, 0, 0), (0, 0, 1), 2.0) == (0.0, 0.0)

    def test_baseline_offset(self):
        assert intersect_ray_with_depth_plane((0.1, 0, 0), (0, 0, 1), 2.0) == (0.1, 0.0)

    def test_oblique_ray_scalar_arithmetic(self):
        d = np.array([1.0, 0.0, 1.0])
        d = d / np.linalg.norm(d)
        pt = intersect_ray_with_depth_plane((0, 0, 0), d, 3.0)
        lam = 3.0 / d[2]
        assert pt == pytest.approx((lam * d[0], 0.0))
        assert pt[0] == pytest.approx(3.0, abs=1e-12)

    def test_behind_camera(self):
        assert intersect_ray_with_depth_plane((0, 0, 5.0), (0, 0, 1), 2.0) is None

    def test_parallel_ray(self):
        assert intersect_ray_with_depth_plane((0, 0, 0), (1, 0, 0), 2.0) is None

    def test_zero_lambda_is_behind(self):
        assert intersect_ray_with_depth_plane((0, 0, 2.0), (0, 0, 1), 2.0) is None
