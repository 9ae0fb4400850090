"""Motion-based camera-to-robot calibration.

The TCP is driven along a short planar path with its orientation held. The
SLAM-estimated camera positions are rotated by the initial TCP orientation,
shifted onto the TCP path's mass center, then refined by ``fine_match``. The
composite of the three transforms maps SLAM coordinates into the base frame.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import geometry as geo
from .errors import InvalidInputError
from .geometry import Transform
from .registration import AxisStats, MatchOptions, fine_match, residual_stats

MIN_SAMPLES = 10

# minimal asymmetric L: 5 cm along n, then 20 cm along s
DEFAULT_PATH_PARAMS = ((0.05, 0.0), (0.2, math.pi / 2))


@dataclass(frozen=True)
class CalibrationPath:
    waypoints: np.ndarray
    segment_params: tuple
    # orientation held along the whole path
    rotation: np.ndarray

    def __post_init__(self):
        if len(self.waypoints) != len(self.segment_params) + 1:
            raise InvalidInputError("need one more waypoint than segments")

    def poses(self) -> list[Transform]:
        return [Transform(self.rotation, p) for p in self.waypoints]


def generate_calibration_waypoints(T_BT: Transform, params: Sequence[tuple[float, float]]
                                   = DEFAULT_PATH_PARAMS) -> CalibrationPath:
    """``x_{i+1} = x_i + D_i cos(g_i) n + D_i sin(g_i) s`` from the TCP position,
    with ``n``, ``s`` the first two columns of the TCP rotation."""
    n = T_BT.rotation[:, 0]
    s = T_BT.rotation[:, 1]
    pts = [T_BT.translation.copy()]
    for D, gamma in params:
        if not D > 0:
            raise InvalidInputError("segment length must be > 0")
        pts.append(pts[-1] + D * math.cos(gamma) * n + D * math.sin(gamma) * s)
    return CalibrationPath(np.array(pts), tuple((float(D), float(g)) for D, g in params),
                           T_BT.rotation.copy())


@dataclass
class TrajectoryPair:
    slam_times: np.ndarray
    slam_poses: list
    tcp_times: np.ndarray
    tcp_poses: list

    def __post_init__(self):
        self.slam_times = np.asarray(self.slam_times, dtype=float)
        self.tcp_times = np.asarray(self.tcp_times, dtype=float)
        if len(self.slam_times) != len(self.slam_poses) or len(self.tcp_times) != len(self.tcp_poses):
            raise InvalidInputError("timestamps and poses differ in length")
        for t in (self.slam_times, self.tcp_times):
            if len(t) and (np.diff(t) < 0).any():
                raise InvalidInputError("samples must be time-sorted")

    def aligned_points(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """SLAM positions linearly interpolated onto the TCP timestamps that fall
        inside the SLAM time range. Returns ``(times, slam_pts, tcp_pts)``."""
        if len(self.slam_times) < MIN_SAMPLES or len(self.tcp_times) < MIN_SAMPLES:
            raise InvalidInputError(f"need at least {MIN_SAMPLES} samples per stream")
        lo, hi = self.slam_times[0], self.slam_times[-1]
        keep = (self.tcp_times >= lo) & (self.tcp_times <= hi)
        if keep.sum() < MIN_SAMPLES:
            raise InvalidInputError("streams overlap in fewer than the minimum samples")
        t = self.tcp_times[keep]
        S = np.array([T.translation for T in self.slam_poses])
        slam_pts = np.column_stack([np.interp(t, self.slam_times, S[:, k]) for k in range(3)])
        tcp_pts = np.array([T.translation for T, k in zip(self.tcp_poses, keep) if k])
        return t, slam_pts, tcp_pts


@dataclass
class CalibrationResult:
    rot_cfa: Transform
    pos_cfa: Transform
    T_fm: Transform
    residuals: AxisStats
    # TCP rotation at recording time; the calibration holds only near it
    tcp_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    iterations: int = 0
    coarse: bool = True

    @property
    def composed(self) -> Transform:
        """``T_fm @ pos_cfa @ rot_cfa``: SLAM coordinates to base frame."""
        return self.T_fm @ self.pos_cfa @ self.rot_cfa

    @property
    def camera_rotation(self) -> np.ndarray:
        """Rotation applied to camera-frame vectors (``R_fm @ R_cfa``)."""
        return self.T_fm.rotation @ self.rot_cfa.rotation

    def to_dict(self) -> dict:
        return {
            "rot_cfa": self.rot_cfa.matrix.tolist(),
            "pos_cfa": self.pos_cfa.matrix.tolist(),
            "T_fm": self.T_fm.matrix.tolist(),
            "composed": self.composed.matrix.tolist(),
            "residual_mean_abs": self.residuals.mean_abs.tolist(),
            "residual_max_abs": self.residuals.max_abs.tolist(),
            "tcp_rotation": np.asarray(self.tcp_rotation).tolist(),
            "iterations": self.iterations,
            "coarse": self.coarse,
        }


def coarse_rotation(tcp_samples: Sequence[Transform]) -> Transform:
    if not len(tcp_samples):
        raise InvalidInputError("no TCP samples")
    return Transform.from_rotation(tcp_samples[0].rotation)


def mass_center(points) -> np.ndarray:
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    if P.shape[0] == 0:
        raise InvalidInputError("empty point set")
    return P.mean(axis=0)


def coarse_translation(P_slam_rotated, P_tcp) -> Transform:
    return Transform.from_translation(mass_center(P_tcp) - mass_center(P_slam_rotated))


def calibrate(pair: TrajectoryPair, opts: MatchOptions | None = None,
              coarse: bool = True) -> CalibrationResult:
    """Coarse rotation, coarse translation, then fine matching.

    ``coarse=False`` skips both coarse steps (ablation); the fine matcher
    then has to find the full rotation on its own, which its rotation cap
    normally forbids.
    """
    _, slam_pts, tcp_pts = pair.aligned_points()
    if coarse:
        rot = coarse_rotation(pair.tcp_poses)
        rotated = rot.apply(slam_pts)
        pos = coarse_translation(rotated, tcp_pts)
    else:
        rot = pos = Transform.identity()
    pre = (pos @ rot).apply(slam_pts)
    match = fine_match(pre, tcp_pts, opts)
    stats = residual_stats(match.transform.apply(pre), tcp_pts)
    return CalibrationResult(rot, pos, match.transform, stats,
                             tcp_rotation=pair.tcp_poses[0].rotation.copy(),
                             iterations=match.iterations, coarse=coarse)


# -- CSV interchange ---------------------------------------------------------

CSV_HEADER = ["t", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22",
              "tx", "ty", "tz"]


def write_stream_csv(path, times, poses: Sequence[Transform]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for t, T in zip(times, poses):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in T.rotation.reshape(-1)]
                       + [repr(float(v)) for v in T.translation])


def read_stream_csv(path) -> tuple[np.ndarray, list[Transform]]:
    times, poses = [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if [h.strip() for h in header] != CSV_HEADER:
            raise InvalidInputError(f"{path}: unexpected header {header}")
        for row in rows:
            if not row:
                continue
            v = [float(x) for x in row]
            times.append(v[0])
            R = np.array(v[1:10]).reshape(3, 3)
            poses.append(Transform(geo.orthonormalize(R), v[10:13]))
    return np.array(times), poses


def load_pair(slam_csv, tcp_csv) -> TrajectoryPair:
    ts, ps = read_stream_csv(slam_csv)
    tt, pt = read_stream_csv(tcp_csv)
    return TrajectoryPair(ts, ps, tt, pt)


def save_pair(pair: TrajectoryPair, slam_csv, tcp_csv) -> None:
    write_stream_csv(slam_csv, pair.slam_times, pair.slam_poses)
    write_stream_csv(tcp_csv, pair.tcp_times, pair.tcp_poses)
