import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcpalign import alignment as al, geometry as geo
from tcpalign.calibration import CalibrationResult
from tcpalign.errors import StaleCalibrationError
from tcpalign.geometry import Transform
from tcpalign.registration import AxisStats

angles = st.floats(-0.6, 0.6, allow_nan=False)


def rot(v):
    return geo.rotvec_to_matrix(np.asarray(v, dtype=float))


def test_relative_rotation_full_mode_is_r2_r1t():
    R1, R2 = rot([0.1, 0.2, -0.3]), rot([-0.2, 0.4, 0.1])
    assert np.allclose(al.relative_rotation(R1, R2, False), R2 @ R1.T, atol=1e-12)


@given(angles, angles, angles, angles, angles, angles)
@settings(max_examples=100, deadline=None)
def test_symmetry_mode_aligns_tool_axis_without_spin(a, b, c, d, e, f):
    R1, R2 = rot([a, b, c]), rot([d, e, f])
    Rd = al.relative_rotation(R1, R2, True)
    # the tool z axis lands on the target z axis
    assert np.allclose((Rd @ R1)[:, 2], R2[:, 2], atol=1e-9)
    # and no twist about the tool axis remains in the commanded rotation
    assert np.allclose(geo.symmetry_project(R1.T @ Rd @ R1), np.eye(3), atol=1e-9)
    full = R1.T @ (R2 @ R1.T) @ R1
    assert geo.rotation_angle(R1.T @ Rd @ R1) <= geo.rotation_angle(full) + 1e-12


def test_symmetry_mode_ignores_pure_spin():
    R1 = rot([0.2, -0.1, 0.3])
    R2 = R1 @ geo.rot_z(0.7)  # target turned about the tool axis only
    assert np.allclose(al.relative_rotation(R1, R2, True), np.eye(3), atol=1e-12)
    assert not np.allclose(al.relative_rotation(R1, R2, False), np.eye(3))


def test_orientation_reference_keeps_position():
    T1 = Transform(rot([0.1, 0, 0]), [0, 0.1, 0.3])
    T2 = Transform(rot([0, 0.2, 0]), [0, 0, 0.8])
    T_BT = Transform(rot([0.3, 0.1, 0.2]), [4, 0, 1])
    ref = al.orientation_reference(T1, T2, T_BT, False)
    assert np.array_equal(ref.translation, T_BT.translation)
    assert np.allclose(ref.rotation, T_BT.rotation @ (T2.rotation @ T1.rotation.T))


def test_position_error_camera():
    T1 = Transform(np.eye(3), [0.0, 0.1, 0.35])
    T2 = Transform(geo.rot_z(math.pi / 2), [0.02, 0.0, 0.9])
    err = al.position_error_camera(T1, T2, 0.05, (0.1, 0.0, 0.0))
    assert np.allclose(err.translation, [0.02, 0.1 - 0.1, 0.9 - 0.35 - 0.05])
    assert np.array_equal(err.rotation, np.eye(3))


def calib(R_cam, R_tcp):
    return CalibrationResult(Transform.from_rotation(R_tcp), Transform.identity(),
                             Transform.from_rotation(R_cam @ R_tcp.T),
                             AxisStats(np.zeros(3), np.zeros(3)), tcp_rotation=R_tcp)


def test_position_reference_rotates_error_into_base():
    R_tcp = rot([0.2, -1.0, 0.4])
    R_cam = R_tcp @ rot([0.01, 0.0, -0.01])
    c = calib(R_cam, R_tcp)
    assert np.allclose(c.camera_rotation, R_cam)
    T_BT = Transform(R_tcp, [4, 0, 1])
    err = Transform.from_translation([0.01, -0.02, 0.3])
    ref = al.position_reference(err, c, T_BT)
    assert np.allclose(ref.translation, T_BT.translation + R_cam @ err.translation)
    assert np.array_equal(ref.rotation, T_BT.rotation)


def test_position_reference_refuses_stale_calibration():
    R_tcp = rot([0.2, -1.0, 0.4])
    c = calib(R_tcp, R_tcp)
    turned = Transform(R_tcp @ geo.rot_x(math.radians(2)), [4, 0, 1])
    with pytest.raises(StaleCalibrationError):
        al.position_reference(Transform.identity(), c, turned)
    al.position_reference(Transform.identity(), c, turned, stale_threshold=math.radians(3))
