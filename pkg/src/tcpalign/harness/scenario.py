"""Scenario files: every tunable of a simulated experiment, with defaults.

Scenarios are JSON objects whose top-level keys mirror the dataclasses below.
Missing keys fall back to the defaults, so ``{}`` is a valid scenario.
Angles in scenario files are in degrees (keys end in ``_deg``).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..errors import InvalidInputError

ABLATIONS = ("coarse", "vision", "filter")


@dataclass
class PlantConfig:
    # None selects kinematics.reference_chain()
    chain: Optional[dict] = None
    joint_lag: list = field(default_factory=lambda: [0.06, 0.08, 0.08, 0.05, 0.05, 0.05])
    deflection_coeffs: list = field(default_factory=lambda: [0.0, 3e-4, 3e-4, 0.0, 0.0, 0.0])
    payload_mass: float = 1.0
    link_mass_per_meter: float = 1.0


@dataclass
class SceneConfig:
    # target placement, re-drawn per case: radial distance / bearing from the
    # pillar, height, and yaw/tilt of the target face
    target_radius: list = field(default_factory=lambda: [4.3, 4.7])
    target_bearing_deg: list = field(default_factory=lambda: [-15.0, 15.0])
    target_height: list = field(default_factory=lambda: [0.9, 1.3])
    target_yaw_deg: float = 8.0
    target_tilt_deg: float = 3.0
    hole_offsets: list = field(default_factory=lambda: [[-0.1, 0.0, 0.0], [0.0, 0.0, 0.0],
                                                        [0.1, 0.0, 0.0]])
    tool_position: list = field(default_factory=lambda: [0.0, 0.12, 0.35])
    tool_euler_deg: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    camera_mount_euler_deg: list = field(default_factory=lambda: [0.6, -0.8, 0.5])
    # initial TCP pose relative to the aligned pose: extra stand-off along the
    # optical axis, lateral offset and rotation bounds (uniform)
    initial_standoff: float = 0.5
    initial_lateral: float = 0.08
    initial_rotation_deg: float = 6.0


@dataclass
class VisionConfig:
    sigma_pos: list = field(default_factory=lambda: [0.001, 0.001, 0.004])
    sigma_rot_deg: float = 0.5
    # fixed per-case estimator bias (drawn once per OOI and case)
    bias_pos: list = field(default_factory=lambda: [0.0005, 0.0005, 0.003])
    bias_rot_deg: float = 0.2
    rate: float = 30.0
    latency: float = 0.306
    confidence: list = field(default_factory=lambda: [0.8, 1.0])
    dropout_rate: float = 0.0
    outlier_rate: float = 0.0
    outlier_pos: float = 0.1
    outlier_rot_deg: float = 20.0


@dataclass
class SlamConfig:
    sigma_pos: float = 0.001
    sigma_rot_deg: float = 0.1
    drift_rate: float = 0.0
    # extra rotation of the SLAM world frame relative to the first camera frame
    frame_offset_deg: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    rate: float = 30.0


@dataclass
class ControlConfig:
    dt: float = 0.001
    clik_kp: float = 20.0
    clik_ktheta: float = 20.0
    damping: float = 1e-3
    k_v: list = field(default_factory=lambda: [1.0] * 6)
    pt1_joints: list = field(default_factory=lambda: [1, 2])
    pt1_gain: float = 1.5
    pt1_tau: float = 0.02


@dataclass
class FilterConfig:
    lam: float = 0.1


@dataclass
class RulesConfig:
    min_confidence: float = 0.5
    max_tilt_deg: float = 30.0
    max_facing_deg: float = 60.0
    max_jump_pos: float = 0.02
    max_jump_rot_deg: float = 5.0


@dataclass
class AlignConfig:
    z_offset: float = 0.05
    hole_index: int = 1
    symmetry_mode: bool = True
    stale_threshold_deg: float = 1.0


@dataclass
class CalibConfig:
    # (D [m], gamma [deg]) per segment
    segments: list = field(default_factory=lambda: [[0.05, 0.0], [0.2, 90.0]])
    speed: float = 0.05
    min_segment_time: float = 1.0
    dwell_start: float = 4.0
    dwell_between: float = 1.0
    dwell_end: float = 1.0
    max_iterations: int = 50
    convergence_tol: float = 1e-9
    robust_loss_scale: float = 0.005
    rotation_cap_deg: float = 30.0


@dataclass
class ScheduleConfig:
    orientation_updates: int = 3
    position_updates: int = 4
    orientation_rate_deg: float = 5.0
    position_speed: float = 0.25
    min_move_time: float = 2.0
    initial_wait: float = 2.0
    settle_window: float = 1.0
    settle_rel: float = 0.05
    settle_floor_deg: float = 0.05
    settle_floor_pos: float = 0.0005
    max_wait: float = 5.0
    final_hold: float = 6.0
    metric_window: float = 5.0
    starvation_timeout: float = 3.0


@dataclass
class Acceptance:
    """Thresholds that decide the campaign exit status."""

    orient_x_deg: float = 1.5
    orient_y_deg: float = 1.0
    pos_x_mm: float = 2.0
    pos_y_mm: float = 2.0
    pos_z_mm: float = 6.0
    true_lateral_mm: float = 3.0
    residual_mean_mm: float = 3.0
    residual_max_mm: float = 6.0


SECTIONS = {
    "plant": PlantConfig, "scene": SceneConfig, "vision": VisionConfig, "slam": SlamConfig,
    "control": ControlConfig, "filter": FilterConfig, "rules": RulesConfig,
    "alignment": AlignConfig, "calibration": CalibConfig, "schedule": ScheduleConfig,
    "acceptance": Acceptance,
}


@dataclass
class Scenario:
    name: str = "default"
    seed: int = 0
    cases: int = 1
    ablate: list = field(default_factory=list)
    plant: PlantConfig = field(default_factory=PlantConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    vision: VisionConfig = field(default_factory=VisionConfig)
    slam: SlamConfig = field(default_factory=SlamConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    rules: RulesConfig = field(default_factory=RulesConfig)
    alignment: AlignConfig = field(default_factory=AlignConfig)
    calibration: CalibConfig = field(default_factory=CalibConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    acceptance: Acceptance = field(default_factory=Acceptance)

    def __post_init__(self):
        bad = [a for a in self.ablate if a not in ABLATIONS]
        if bad:
            raise InvalidInputError(f"unknown ablation(s) {bad}; choose from {ABLATIONS}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Scenario":
        data = dict(data)
        kwargs: dict[str, Any] = {}
        for key, section in SECTIONS.items():
            raw = data.pop(key, {}) or {}
            names = {f.name for f in dataclasses.fields(section)}
            unknown = set(raw) - names
            if unknown:
                raise InvalidInputError(f"unknown key(s) in [{key}]: {sorted(unknown)}")
            kwargs[key] = section(**raw)
        top = {f.name for f in dataclasses.fields(cls)} - set(SECTIONS)
        unknown = set(data) - top
        if unknown:
            raise InvalidInputError(f"unknown top-level key(s): {sorted(unknown)}")
        kwargs.update(data)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def load(cls, path) -> "Scenario":
        s = cls.from_dict(json.loads(Path(path).read_text()))
        if s.name == "default":
            s.name = Path(path).stem
        return s

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def with_overrides(self, **changes) -> "Scenario":
        """Copy with dotted-key overrides, e.g. ``{"vision.sigma_rot_deg": 0}``."""
        d = self.to_dict()
        for key, value in changes.items():
            node = d
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise InvalidInputError(f"unknown scenario key {key!r}")
            node[leaf] = value
        return Scenario.from_dict(d)


def noiseless(s: Scenario, deflection: bool = False) -> Scenario:
    """Zero every noise source (and, unless asked, structural deflection)."""
    changes = {
        "vision.sigma_pos": [0.0, 0.0, 0.0], "vision.sigma_rot_deg": 0.0,
        "vision.bias_pos": [0.0, 0.0, 0.0], "vision.bias_rot_deg": 0.0,
        "vision.confidence": [1.0, 1.0],
        "slam.sigma_pos": 0.0, "slam.sigma_rot_deg": 0.0, "slam.drift_rate": 0.0,
    }
    if not deflection:
        changes["plant.deflection_coeffs"] = [0.0] * len(s.plant.deflection_coeffs)
    return s.with_overrides(**changes)


def deg(v):
    return math.radians(v)
