"""Vision-based TCP references: orientation alignment and calibrated
position alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .calibration import CalibrationResult
from .errors import StaleCalibrationError
from .geometry import Transform

DEFAULT_STALE_THRESHOLD = math.radians(1.0)


@dataclass(frozen=True)
class AlignmentConfig:
    z_offset: float = 0.0
    hole_index: int = 0
    symmetry_mode: bool = True
    stale_threshold: float = DEFAULT_STALE_THRESHOLD


def relative_rotation(R_cam_o1, R_cam_o2, symmetry_mode: bool = False) -> np.ndarray:
    """Camera-frame rotation that brings the tool orientation onto the target's.

    With ``symmetry_mode`` the tool is treated as rotationally symmetric about
    its own z-axis: the part of the tool-to-target rotation that spins about
    that axis (isolated with ``symmetry_project``) is removed, so only the
    axis-aligning part remains.
    """
    R1 = np.asarray(R_cam_o1, dtype=float)
    R2 = np.asarray(R_cam_o2, dtype=float)
    q_delta = geo.quaternion_difference(geo.quat_from_matrix(R2), geo.quat_from_matrix(R1))
    R_delta = geo.quat_to_matrix(q_delta)
    if not symmetry_mode:
        return R_delta
    R_rel = R1.T @ R2  # same rotation, expressed in the tool frame
    spin = geo.symmetry_project(R_rel)
    return R1 @ (R_rel @ spin.T) @ R1.T


def orientation_reference(T_cam_o1: Transform, T_cam_o2: Transform, T_BT: Transform,
                          symmetry_mode: bool = False) -> Transform:
    """``T_ref = T_BT @ [R_delta, 0; 0, 1]``; the TCP position is kept."""
    R_delta = relative_rotation(T_cam_o1.rotation, T_cam_o2.rotation, symmetry_mode)
    return Transform(T_BT.rotation @ R_delta, T_BT.translation)


def position_error_camera(T_cam_o1: Transform, T_cam_o2: Transform, z_o: float,
                          hole_offset=(0.0, 0.0, 0.0)) -> Transform:
    """Translation-only transform: hole minus tool in the camera frame, less the depth offset."""
    hole_cam = T_cam_o2.apply(hole_offset)
    return Transform.from_translation(hole_cam - T_cam_o1.translation - np.array([0.0, 0.0, z_o]))


def calibration_drift(calib: CalibrationResult, R_BT) -> float:
    return geo.rotation_angle(np.asarray(calib.tcp_rotation).T @ np.asarray(R_BT))


def position_reference(err: Transform, calib: CalibrationResult, T_BT: Transform,
                       stale_threshold: float = DEFAULT_STALE_THRESHOLD) -> Transform:
    """Rotate the camera-frame error with ``R_fm R_cfa`` and add it to the TCP
    position; the TCP rotation is kept.

    Raises ``StaleCalibrationError`` if the TCP has turned more than
    ``stale_threshold`` since the calibration was recorded.
    """
    drift = calibration_drift(calib, T_BT.rotation)
    if drift > stale_threshold:
        raise StaleCalibrationError(
            f"TCP rotated {math.degrees(drift):.2f} deg since calibration "
            f"(limit {math.degrees(stale_threshold):.2f} deg)")
    p_calib = calib.camera_rotation @ err.translation
    return Transform(T_BT.rotation, T_BT.translation + p_calib)
