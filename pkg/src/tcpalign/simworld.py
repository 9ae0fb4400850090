"""Simulated flexible plant, scene and pose sensors, plus measurement
gating and filtering on the vision side."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import geometry as geo
from . import kinematics as kin
from .geometry import Transform
from .kinematics import KinematicChain

TOOL = "tool"
TARGET = "target"
OOI_IDS = (TOOL, TARGET)

GRAVITY_DIR = np.array([0.0, 0.0, -1.0])


# -- plant -------------------------------------------------------------------

@dataclass(frozen=True)
class FlexiblePlant:
    chain: KinematicChain
    joint_lag: np.ndarray
    deflection_coeffs: np.ndarray
    payload_mass: float = 1.0
    link_mass_per_meter: float = 1.0

    def __post_init__(self):
        n = self.chain.n
        lag = np.broadcast_to(np.asarray(self.joint_lag, dtype=float), (n,)).copy()
        coeffs = np.broadcast_to(np.asarray(self.deflection_coeffs, dtype=float), (n,)).copy()
        if (lag <= 0).any():
            raise ValueError("joint lag time constants must be > 0")
        if (coeffs < 0).any():
            raise ValueError("deflection coefficients must be >= 0")
        object.__setattr__(self, "joint_lag", lag)
        object.__setattr__(self, "deflection_coeffs", coeffs)


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    t: float = 0.0


def plant_step(plant: FlexiblePlant, state: JointState, q_command, dt: float) -> JointState:
    """Each joint lags its command: ``q+ = q + (1 - exp(-dt/tau_j)) (q_cmd - q)``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    gain = -np.expm1(-dt / plant.joint_lag)
    q = state.q + gain * (np.asarray(q_command, dtype=float) - state.q)
    return JointState(q, state.t + dt)


def gravity_moments(plant: FlexiblePlant, q) -> np.ndarray:
    """Static gravity moment about every joint axis (unit g, mass units of the plant).

    Each link's mass is proportional to its length and lumped at its midpoint;
    the payload sits at the TCP.
    """
    F = kin.frames(plant.chain, q)
    origins = F[:, :3, 3]
    masses = plant.link_mass_per_meter * np.linalg.norm(np.diff(origins, axis=0), axis=1)
    centers = 0.5 * (origins[1:] + origins[:-1])
    # mass and first moment outboard of each joint, payload included
    M = np.cumsum(masses[::-1])[::-1] + plant.payload_mass
    S = np.cumsum((masses[:, None] * centers)[::-1], axis=0)[::-1] + plant.payload_mass * origins[-1]
    z = F[:-1, :3, 2]
    # z . ((c - o) x g) == (c - o) . (g x z)
    moments = np.einsum("ij,ij->i", S - M[:, None] * origins[:-1], geo.cross(GRAVITY_DIR, z))
    return np.where(plant.chain.revolute_mask, moments, 0.0)


def deflected_joints(plant: FlexiblePlant, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if not plant.deflection_coeffs.any():
        return q
    return q + plant.deflection_coeffs * gravity_moments(plant, q)


def true_tcp_matrix(plant: FlexiblePlant, q) -> np.ndarray:
    return kin.fk_matrix(plant.chain, deflected_joints(plant, q))


def true_tcp_pose(plant: FlexiblePlant, q) -> Transform:
    """Where the TCP really is: rigid FK evaluated on gravity-deflected joints."""
    return Transform.from_matrix(true_tcp_matrix(plant, q))


# -- scene and measurements --------------------------------------------------

@dataclass(frozen=True)
class Scene:
    T_world_target: Transform
    T_tcp_tool: Transform
    hole_offsets: tuple = ((0.0, 0.0, 0.0),)
    # camera pose relative to the TCP; identity means the two frames coincide
    T_tcp_cam: Transform = field(default_factory=Transform.identity)

    def __post_init__(self):
        holes = tuple(tuple(float(v) for v in h) for h in self.hole_offsets)
        if any(len(h) != 3 or not all(math.isfinite(v) for v in h) for h in holes):
            raise ValueError("hole offsets must be finite 3-vectors")
        object.__setattr__(self, "hole_offsets", holes)

    def ooi_world_pose(self, ooi_id: str, T_world_cam: Transform) -> Transform:
        if ooi_id == TARGET:
            return self.T_world_target
        # the tool rides on the TCP; recover the TCP from the camera pose
        return T_world_cam @ self.T_tcp_cam.inverse() @ self.T_tcp_tool

    def hole_world(self, index: int) -> np.ndarray:
        return self.T_world_target.apply(self.hole_offsets[index])


@dataclass(frozen=True, eq=False)
class PoseMeasurement:
    ooi_id: str
    T_cam_ooi: Transform
    confidence: float = 1.0
    timestamp: float = 0.0


@dataclass(frozen=True)
class VisionNoise:
    """Pose-level noise of the vision stack, expressed in the camera frame."""

    sigma_pos: tuple = (0.0, 0.0, 0.0)
    sigma_rot: float = 0.0

    def __post_init__(self):
        sp = np.broadcast_to(np.asarray(self.sigma_pos, dtype=float), (3,))
        if (sp < 0).any() or self.sigma_rot < 0:
            raise ValueError("noise sigmas must be >= 0")
        object.__setattr__(self, "sigma_pos", tuple(float(v) for v in sp))


def perturb(T: Transform, sigma_pos, sigma_rot: float, rng: np.random.Generator) -> Transform:
    """Left-compose a random rigid perturbation (translation per axis, axis-angle rotation)."""
    dp = rng.normal(size=3) * np.asarray(sigma_pos, dtype=float)
    dw = rng.normal(size=3) * sigma_rot
    return Transform(geo.rotvec_to_matrix(dw) @ T.rotation, T.translation + dp)


def observe_oois(scene: Scene, T_world_cam_true: Transform, noise: VisionNoise | tuple,
                 rng, timestamp: float = 0.0, confidence: float = 1.0,
                 bias: Optional[dict] = None) -> list[PoseMeasurement]:
    """Noisy camera-frame poses of the tool and target OOIs.

    ``rng`` is a seed or a ``np.random.Generator``. ``bias`` optionally maps an
    OOI id to a fixed error whose rotation and translation are added to the
    true pose independently (like the noise), before the random noise.
    """
    if not isinstance(noise, VisionNoise):
        noise = VisionNoise(*noise)
    rng = np.random.default_rng(rng)
    cam_inv = T_world_cam_true.inverse()
    out = []
    for ooi in OOI_IDS:
        T = cam_inv @ scene.ooi_world_pose(ooi, T_world_cam_true)
        if bias and ooi in bias:
            b = bias[ooi]
            T = Transform(b.rotation @ T.rotation, T.translation + b.translation)
        T = perturb(T, noise.sigma_pos, noise.sigma_rot, rng)
        out.append(PoseMeasurement(ooi, T, confidence, timestamp))
    return out


# -- SLAM --------------------------------------------------------------------

@dataclass(frozen=True)
class SlamModel:
    T_slamworld: Transform = field(default_factory=Transform.identity)
    noise_sigma_pos: float = 0.0
    noise_sigma_rot: float = 0.0
    drift_rate: float = 0.0
    drift_seed: int = 0

    def __post_init__(self):
        if self.noise_sigma_pos < 0 or self.noise_sigma_rot < 0 or self.drift_rate < 0:
            raise ValueError("SLAM noise parameters must be >= 0")

    @property
    def drift_direction(self) -> np.ndarray:
        v = np.random.default_rng(self.drift_seed).normal(size=3)
        return v / np.linalg.norm(v)


def slam_pose(T_world_cam_true: Transform, model: SlamModel, path_length_so_far: float,
              rng) -> Transform:
    """Camera pose as a SLAM system would report it, in its own world frame."""
    rng = np.random.default_rng(rng)
    T = model.T_slamworld.inverse() @ T_world_cam_true
    T = perturb(T, (model.noise_sigma_pos,) * 3, model.noise_sigma_rot, rng)
    if model.drift_rate:
        T = Transform(T.rotation, T.translation
                      + model.drift_rate * path_length_so_far * model.drift_direction)
    return T


# -- consistency checks ------------------------------------------------------

class Verdict(NamedTuple):
    accepted: bool
    reason: Optional[str] = None


ACCEPT = Verdict(True)


@dataclass(frozen=True)
class ConsistencyRules:
    min_confidence: float = 0.5
    # upright: angle between the OOI's up axis and gravity-up, both in camera frame
    max_tilt: float = math.radians(30.0)
    ooi_up_axis: tuple = (0.0, -1.0, 0.0)
    up_in_camera: tuple = (0.0, -1.0, 0.0)
    upright_oois: tuple = (TARGET,)
    # facing: angle between the OOI z-axis and the camera optical axis
    max_facing_angle: float = math.radians(60.0)
    # per nominal frame period; scaled up when frames were skipped
    max_jump_pos: float = 0.02
    max_jump_rot: float = math.radians(5.0)
    frame_period: float = 1.0 / 30.0


def _angle(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.acos(max(-1.0, min(1.0, c)))


def consistency_check(m: PoseMeasurement, previous: Optional[PoseMeasurement],
                      rules: ConsistencyRules) -> Verdict:
    """Gate a measurement by application constraints; first violated rule wins."""
    if m.confidence < rules.min_confidence:
        return Verdict(False, "confidence")
    R = m.T_cam_ooi.rotation
    if m.ooi_id in rules.upright_oois:
        if _angle(R @ np.asarray(rules.ooi_up_axis), rules.up_in_camera) > rules.max_tilt:
            return Verdict(False, "upright")
    if _angle(R[:, 2], (0.0, 0.0, 1.0)) > rules.max_facing_angle:
        return Verdict(False, "facing")
    if previous is not None:
        frames_elapsed = max(1.0, (m.timestamp - previous.timestamp) / rules.frame_period)
        dp = np.linalg.norm(m.T_cam_ooi.translation - previous.T_cam_ooi.translation)
        if dp > rules.max_jump_pos * frames_elapsed:
            return Verdict(False, "jump")
        dr = geo.rotation_angle(previous.T_cam_ooi.rotation.T @ R)
        if dr > rules.max_jump_rot * frames_elapsed:
            return Verdict(False, "jump")
    return ACCEPT


# -- geometric moving average ------------------------------------------------

@dataclass(frozen=True)
class GmaFilterState:
    lam: float
    p_f: Optional[np.ndarray] = None
    q_f: Optional[np.ndarray] = None
    timestamp: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("filter weight must be in (0, 1]")

    @property
    def initialized(self) -> bool:
        return self.p_f is not None

    def pose(self) -> Transform:
        return Transform.from_quat_pos(self.q_f, self.p_f)


def gma_step(state: GmaFilterState, m: PoseMeasurement) -> GmaFilterState:
    """Exponential smoothing: linear on position, slerp on orientation."""
    p = m.T_cam_ooi.translation
    q = m.T_cam_ooi.quaternion
    if not state.initialized or state.lam == 1.0:
        return replace(state, p_f=p.copy(), q_f=q, timestamp=m.timestamp)
    lam = state.lam
    p_f = (1.0 - lam) * state.p_f + lam * p
    q_f = geo.quat_canonical(geo.quat_normalize(geo.slerp(state.q_f, q, lam)))
    return replace(state, p_f=p_f, q_f=q_f, timestamp=m.timestamp)
