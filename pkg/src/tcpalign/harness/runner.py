"""Fixed-step co-simulation of the three-phase look-then-move experiment.

Control runs every ``control.dt`` (1 ms by default). Vision frames are
captured at ``vision.rate``, encoded into pose datagrams and delivered over a
loopback link after ``vision.latency``; the control side gates and filters
whatever has arrived. Everything random is drawn from generators spawned from
``(scenario.seed, case_index)``, so a case is reproducible bit for bit.
"""

from __future__ import annotations

import logging
import math
import queue
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .. import alignment, calibration, control, geometry as geo, kinematics as kin
from .. import simworld as sim
from .. import transport
from ..errors import PhaseOrderError, TcpAlignError, VisionStarvationError
from ..geometry import Transform
from ..registration import MatchOptions
from .scenario import Scenario

log = logging.getLogger(__name__)

UP = np.array([0.0, 0.0, 1.0])


def _euler_deg(e: list) -> Transform:
    return Transform.from_rotation(geo.rotation_from_euler_xyz([math.radians(v) for v in e]))


class Motion:
    """Rest-to-rest Cartesian move: quintic position, quintic-timed slerp."""

    def __init__(self, start: Transform, goal: Transform, duration: float, t0: float):
        self.t0 = t0
        self.T = duration
        self.pos = control.quintic_plan(start.translation, goal.translation, duration)
        self.s = control.quintic_plan(0.0, 1.0, duration)
        self.q0 = start.quaternion
        # rotation vector of the whole turn, base frame
        self.phi = geo.matrix_to_rotvec(goal.rotation @ start.rotation.T)

    def desired(self, t: float):
        tau = t - self.t0
        p, v, _ = control.quintic_eval(self.pos, tau)
        s, sd, _ = control.quintic_eval(self.s, tau)
        quat = geo.quat_multiply(geo.quat_from_rotvec(self.phi * s[0]), self.q0)
        return p, quat, v, self.phi * sd[0]

    def done(self, t: float) -> bool:
        return t - self.t0 >= self.T


@dataclass
class PhaseLog:
    columns: list
    rows: list = field(default_factory=list)
    commands: list = field(default_factory=list)

    def add(self, *values):
        self.rows.append([float(v) for v in values])

    def array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(self.columns))


def window_mean(log_: PhaseLog, window: float, cols) -> np.ndarray:
    """Mean of |value| over the final ``window`` seconds (column 0 is time)."""
    A = log_.array()
    if not len(A):
        return np.full(len(cols), np.nan)
    sel = A[:, 0] >= A[-1, 0] - window
    return np.abs(A[sel][:, cols]).mean(axis=0)


class VisionWorker:
    """Runs the vision side on its own thread.

    The control loop hands over the capture time and the true camera pose and
    waits until the frame has been encoded and pushed into the link, so both
    timelines interleave exactly as in the single-threaded mode.
    """

    def __init__(self, capture: Callable[[float, Transform], None]):
        self._capture = capture
        self._requests: queue.Queue = queue.Queue()
        self._done: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._loop, name="vision", daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            job = self._requests.get()
            if job is None:
                return
            try:
                self._capture(*job)
                self._done.put(None)
            except BaseException as exc:  # hand the failure to the control thread
                self._done.put(exc)

    def capture(self, tc: float, T_world_cam: Transform):
        self._requests.put((tc, T_world_cam))
        err = self._done.get()
        if err is not None:
            raise err

    def stop(self):
        self._requests.put(None)
        self._thread.join()


class CaseSim:
    """State of one simulated measurement case (plant, sensors, estimator)."""

    def __init__(self, scenario: Scenario, case_index: int = 0, threaded: bool = False):
        self.sc = scenario
        self.case_index = case_index
        ss = np.random.SeedSequence([int(scenario.seed), int(case_index)])
        place, vis, slam, bias, link = (np.random.default_rng(s) for s in ss.spawn(5))
        self.rng_vision = vis
        self.rng_slam = slam
        self.ablate = set(scenario.ablate)

        pc = scenario.plant
        chain = kin.KinematicChain.from_dict(pc.chain) if pc.chain else kin.reference_chain()
        self.chain = chain
        self.plant = sim.FlexiblePlant(chain, pc.joint_lag, pc.deflection_coeffs,
                                       pc.payload_mass, pc.link_mass_per_meter)
        self.scene, T_tcp0 = self._place(place)
        self.dt = scenario.control.dt
        q0 = kin.solve_ik(chain, T_tcp0, self._ik_seed())
        self.state = sim.JointState(q0.copy(), 0.0)
        self.q_d = q0.copy()
        cc = scenario.control
        self.controller = control.JointController(np.asarray(cc.k_v, dtype=float),
                                                  tuple(cc.pt1_joints), cc.pt1_gain, cc.pt1_tau)
        self.k = 0
        self.motion: Optional[Motion] = None

        vc = scenario.vision
        self.noise = sim.VisionNoise(tuple(vc.sigma_pos), math.radians(vc.sigma_rot_deg))
        self.bias = {
            ooi: Transform(geo.rotvec_to_matrix(bias.normal(size=3) * math.radians(vc.bias_rot_deg)),
                           bias.normal(size=3) * np.asarray(vc.bias_pos, dtype=float))
            for ooi in sim.OOI_IDS
        }
        self.frame_period = 1.0 / vc.rate
        self.next_capture = 0.0
        self.channel = transport.LoopbackChannel(latency=vc.latency, seed=int(link.integers(2**31)))
        self.sender = transport.PoseSender(self.channel)
        self.receiver = transport.PoseReceiver()
        rc = scenario.rules
        self.rules = sim.ConsistencyRules(
            min_confidence=rc.min_confidence, max_tilt=math.radians(rc.max_tilt_deg),
            max_facing_angle=math.radians(rc.max_facing_deg), max_jump_pos=rc.max_jump_pos,
            max_jump_rot=math.radians(rc.max_jump_rot_deg), frame_period=self.frame_period)
        lam = 1.0 if "filter" in self.ablate else scenario.filter.lam
        self.filters = {ooi: sim.GmaFilterState(lam) for ooi in sim.OOI_IDS}
        self.last_accepted: dict[str, sim.PoseMeasurement] = {}
        self.last_accept_time: dict[str, float] = {}
        self.rejections: dict[str, int] = {}
        self.frame_count = 0
        self.hooks: list[Callable[[float], None]] = []
        self.calibration: Optional[calibration.CalibrationResult] = None
        self.vision = VisionWorker(self._capture) if threaded else None

    # -- setup ---------------------------------------------------------------

    def _place(self, rng: np.random.Generator) -> tuple[sim.Scene, Transform]:
        s = self.sc.scene
        r = rng.uniform(*s.target_radius)
        bearing = math.radians(rng.uniform(*s.target_bearing_deg))
        h = rng.uniform(*s.target_height)
        yaw = math.radians(rng.uniform(-s.target_yaw_deg, s.target_yaw_deg))
        tilt = np.radians(rng.uniform(-s.target_tilt_deg, s.target_tilt_deg, size=2))
        z_t = geo.rot_z(bearing + yaw) @ np.array([1.0, 0.0, 0.0])
        y_t = np.array([0.0, 0.0, -1.0])
        R_t = np.column_stack([np.cross(y_t, z_t), y_t, z_t]) @ geo.rot_x(tilt[0]) @ geo.rot_z(tilt[1])
        T_target = Transform(R_t, [r * math.cos(bearing), r * math.sin(bearing), h])

        T_tool = Transform(_euler_deg(s.tool_euler_deg).rotation, s.tool_position)
        scene = sim.Scene(T_target, T_tool, tuple(map(tuple, s.hole_offsets)),
                          _euler_deg(s.camera_mount_euler_deg))

        T_tcp_goal = self.aligned_tcp_pose(scene)
        lat = rng.uniform(-s.initial_lateral, s.initial_lateral, size=2)
        rot = np.radians(rng.uniform(-s.initial_rotation_deg, s.initial_rotation_deg, size=3))
        offset = Transform(geo.rotation_from_euler_xyz(rot), [lat[0], lat[1], -s.initial_standoff])
        return scene, T_tcp_goal @ offset

    def aligned_tcp_pose(self, scene: sim.Scene) -> Transform:
        """TCP pose (ground truth) with the tool aligned to the chosen hole."""
        a = self.sc.alignment
        R_t = scene.T_world_target.rotation
        tool_goal = Transform(R_t, scene.hole_world(a.hole_index) - a.z_offset * R_t[:, 2])
        return tool_goal @ scene.T_tcp_tool.inverse()

    def _ik_seed(self) -> np.ndarray:
        p = self.scene.T_world_target.translation
        return np.array([math.atan2(p[1], p[0]), 0.4, -1.2, 0.0, 0.8, math.pi / 2])

    # -- state access --------------------------------------------------------

    @property
    def t(self) -> float:
        return self.k * self.dt

    def tcp_rigid(self) -> Transform:
        return kin.forward_kinematics(self.chain, self.state.q)

    def tcp_true(self) -> Transform:
        return sim.true_tcp_pose(self.plant, self.state.q)

    def camera_true(self) -> Transform:
        return self.tcp_true() @ self.scene.T_tcp_cam

    def filtered(self, ooi: str) -> Transform:
        return self.filters[ooi].pose()

    def vision_ready(self) -> bool:
        return all(f.initialized for f in self.filters.values())

    # -- stepping ------------------------------------------------------------

    def step(self):
        cc = self.sc.control
        t = self.t
        if self.motion is not None:
            p, quat, v, w = self.motion.desired(t)
            self.q_d = kin.clik_step(self.chain, self.q_d, p, quat, v, w,
                                     cc.clik_kp, cc.clik_ktheta, cc.damping, self.dt)
            if self.motion.done(t):
                self.motion = None
        u = self.controller(self.q_d, self.state.q, self.dt)
        self.state = sim.plant_step(self.plant, self.state, self.state.q + u, self.dt)
        self.k += 1
        t = self.t
        if t >= self.next_capture - 1e-12:
            if self.vision is not None:
                self.vision.capture(self.next_capture, self.camera_true())
            else:
                self._capture(self.next_capture, self.camera_true())
            self.next_capture += self.frame_period
        payloads = self.channel.recv(t)
        if payloads:
            self._deliver(payloads, t)
        for hook in self.hooks:
            hook(t)

    def run_for(self, duration: float):
        end = self.k + int(round(duration / self.dt))
        while self.k < end:
            self.step()

    def run_until(self, done: Callable[[], bool], max_time: float) -> bool:
        end = self.k + int(round(max_time / self.dt))
        while self.k < end:
            self.step()
            if done():
                return True
        return False

    def execute(self, goal: Transform, duration: float, hold: float = 0.5):
        start = kin.forward_kinematics(self.chain, self.q_d)
        self.motion = Motion(start, goal, duration, self.t)
        self.run_for(duration + self.dt)
        if hold > 0:
            # keep closing the kinematic loop on the goal for a moment
            self.motion = Motion(goal, goal, hold, self.t)
            self.run_for(hold)
            self.motion = None

    # -- vision side ---------------------------------------------------------

    def _capture(self, tc: float, T_world_cam: Transform):
        vc = self.sc.vision
        rng = self.rng_vision
        meas = sim.observe_oois(self.scene, T_world_cam, self.noise, rng, tc, 1.0, self.bias)
        for m in meas:
            drop = rng.random() < vc.dropout_rate
            outlier = rng.random() < vc.outlier_rate
            conf = float(rng.uniform(*vc.confidence))
            if drop:
                continue
            T = m.T_cam_ooi
            if outlier:
                T = sim.perturb(T, (vc.outlier_pos,) * 3, math.radians(vc.outlier_rot_deg), rng)
            self.sender.send(sim.PoseMeasurement(m.ooi_id, T, conf, tc), tc)

    def _deliver(self, payloads, t: float):
        R_BT = kin.fk_matrix(self.chain, self.state.q)[:3, :3]
        rules = replace(self.rules, up_in_camera=tuple(R_BT.T @ UP))
        for d in self.receiver.accept(payloads):
            m = transport.measurement_from_datagram(d)
            verdict = sim.consistency_check(m, self.last_accepted.get(m.ooi_id), rules)
            if not verdict.accepted:
                self.rejections[verdict.reason] = self.rejections.get(verdict.reason, 0) + 1
                continue
            self.last_accepted[m.ooi_id] = m
            self.last_accept_time[m.ooi_id] = t
            self.filters[m.ooi_id] = sim.gma_step(self.filters[m.ooi_id], m)
            self.frame_count += 1

    def close(self):
        if self.vision is not None:
            self.vision.stop()
            self.vision = None

    def wait_for_vision(self):
        """Block (in sim time) until both OOIs have fresh accepted measurements."""
        timeout = self.sc.schedule.starvation_timeout

        def fresh():
            return self.vision_ready() and all(
                self.t - self.last_accept_time.get(o, -math.inf) <= timeout for o in sim.OOI_IDS)

        if not fresh() and not self.run_until(fresh, timeout):
            raise VisionStarvationError(
                f"no accepted measurement for {timeout:.1f} s (rejections: {self.rejections})")

    def settle(self, signal: Callable[[], float], floor: float):
        """Wait until ``signal`` changed by less than ``settle_rel`` (or the
        absolute ``floor``) over the last ``settle_window`` seconds."""
        sch = self.sc.schedule
        self.run_for(self.sc.vision.latency + 0.5)
        hist: list[tuple[float, float]] = []

        seen = [self.frame_count]

        def stable():
            if self.frame_count == seen[0]:
                return False
            seen[0] = self.frame_count
            hist.append((self.t, signal()))
            if hist[-1][0] - hist[0][0] < sch.settle_window:
                return False
            recent = [v for tt, v in hist if tt >= hist[-1][0] - sch.settle_window]
            spread = max(recent) - min(recent)
            return spread <= max(sch.settle_rel * abs(hist[-1][1]), floor)

        self.run_until(stable, sch.max_wait)

    # -- sim-only ground truth -----------------------------------------------

    def true_tool(self) -> Transform:
        return self.tcp_true() @ self.scene.T_tcp_tool

    def true_position_errors(self) -> tuple[float, float]:
        """Lateral and depth error of the tool relative to its goal at the hole,
        in the target frame (meters)."""
        a = self.sc.alignment
        R_t = self.scene.T_world_target.rotation
        r = R_t.T @ (self.true_tool().translation - self.scene.hole_world(a.hole_index))
        return math.hypot(r[0], r[1]), r[2] + a.z_offset

    def true_axis_error(self) -> float:
        """Angle between the tool axis and the target (hole) axis, radians."""
        z_tool = self.true_tool().rotation[:, 2]
        z_t = self.scene.T_world_target.rotation[:, 2]
        return math.acos(max(-1.0, min(1.0, float(z_tool @ z_t))))


# -- phases ------------------------------------------------------------------

def _relative_rotation(cs: CaseSim) -> np.ndarray:
    return alignment.relative_rotation(cs.filtered(sim.TOOL).rotation,
                                       cs.filtered(sim.TARGET).rotation,
                                       cs.sc.alignment.symmetry_mode)


def _position_error(cs: CaseSim) -> np.ndarray:
    a = cs.sc.alignment
    err = alignment.position_error_camera(cs.filtered(sim.TOOL), cs.filtered(sim.TARGET),
                                          a.z_offset, cs.scene.hole_offsets[a.hole_index])
    return err.translation


def run_phase_orientation(cs: CaseSim) -> dict:
    sch = cs.sc.schedule
    plog = PhaseLog(["t", "err_x_deg", "err_y_deg", "err_z_deg", "true_axis_deg"])

    seen = [cs.frame_count]

    def record(t):
        if cs.frame_count != seen[0] and cs.vision_ready():
            seen[0] = cs.frame_count
            e = geo.euler_xyz_from_rotation(_relative_rotation(cs))
            plog.add(t, math.degrees(e.rx), math.degrees(e.ry), math.degrees(e.rz),
                     math.degrees(cs.true_axis_error()))

    cs.hooks.append(record)
    try:
        cs.run_for(sch.initial_wait)
        for i in range(sch.orientation_updates):
            T_BT = cs.tcp_rigid()
            if "vision" in cs.ablate:
                R_ref = cs.scene.T_world_target.rotation @ cs.scene.T_tcp_tool.rotation.T
                T_ref = Transform(R_ref, T_BT.translation)
            else:
                cs.wait_for_vision()
                T_BT = cs.tcp_rigid()
                T_ref = alignment.orientation_reference(cs.filtered(sim.TOOL), cs.filtered(sim.TARGET),
                                                        T_BT, cs.sc.alignment.symmetry_mode)
            angle = geo.rotation_angle(T_BT.rotation.T @ T_ref.rotation)
            plog.commands.append(cs.t)
            duration = max(sch.min_move_time, math.degrees(angle) / sch.orientation_rate_deg)
            cs.execute(T_ref, duration)
            if i < sch.orientation_updates - 1:
                cs.settle(lambda: geo.rotation_angle(_relative_rotation(cs)),
                          math.radians(sch.settle_floor_deg))
        cs.run_for(sch.final_hold)
    finally:
        cs.hooks.remove(record)
    mean = window_mean(plog, sch.metric_window, [1, 2, 3])
    true_axis = window_mean(plog, sch.metric_window, [4])[0]
    return {"log": plog, "mean_abs_deg": mean, "true_axis_deg": true_axis,
            "commands": len(plog.commands)}


def run_phase_calibration(cs: CaseSim) -> dict:
    cal = cs.sc.calibration
    sc = cs.sc.slam
    T_BT = cs.tcp_rigid()
    path = calibration.generate_calibration_waypoints(
        T_BT, [(D, math.radians(g)) for D, g in cal.segments])
    # SLAM initializes its world frame at the current camera pose
    T_slamworld = cs.camera_true() @ _euler_deg(sc.frame_offset_deg)
    model = sim.SlamModel(T_slamworld, sc.sigma_pos, math.radians(sc.sigma_rot_deg), sc.drift_rate,
                          drift_seed=int(cs.rng_slam.integers(2**31)))
    times, slam_poses, tcp_times, tcp_poses = [], [], [], []
    state = {"next": cs.t, "length": 0.0, "last": cs.camera_true().translation}
    period = 1.0 / sc.rate

    def record(t):
        if t < state["next"] - 1e-12:
            return
        state["next"] += period
        cam = cs.camera_true()
        state["length"] += float(np.linalg.norm(cam.translation - state["last"]))
        state["last"] = cam.translation
        times.append(t)
        slam_poses.append(sim.slam_pose(cam, model, state["length"], cs.rng_slam))
        tcp_times.append(t)
        tcp_poses.append(cs.tcp_rigid())

    cs.hooks.append(record)
    try:
        cs.run_for(cal.dwell_start)
        for i, (D, _) in enumerate(path.segment_params):
            goal = Transform(path.rotation, path.waypoints[i + 1])
            cs.execute(goal, max(cal.min_segment_time, D / cal.speed), hold=0.0)
            last = i == len(path.segment_params) - 1
            cs.run_for(cal.dwell_end if last else cal.dwell_between)
    finally:
        cs.hooks.remove(record)
    pair = calibration.TrajectoryPair(times, slam_poses, tcp_times, tcp_poses)
    opts = MatchOptions(cal.max_iterations, cal.convergence_tol, cal.robust_loss_scale,
                        math.radians(cal.rotation_cap_deg))
    result = calibration.calibrate(pair, opts, coarse="coarse" not in cs.ablate)
    cs.calibration = result
    # ground truth: the composed map should equal the SLAM world frame's rotation,
    # and R_fm R_cfa should equal the current true camera rotation
    rot_err = geo.rotation_angle(result.composed.rotation.T @ T_slamworld.rotation)
    cam_err = geo.rotation_angle(result.camera_rotation.T @ cs.camera_true().rotation)
    return {"pair": pair, "result": result,
            "residual_mean_mm": result.residuals.mean_abs * 1e3,
            "residual_max_mm": result.residuals.max_abs * 1e3,
            "rotation_error_deg": math.degrees(rot_err),
            "camera_rotation_error_deg": math.degrees(cam_err),
            "iterations": result.iterations}


def run_phase_position(cs: CaseSim) -> dict:
    sch = cs.sc.schedule
    a = cs.sc.alignment
    vision = "vision" not in cs.ablate
    if vision and cs.calibration is None:
        raise PhaseOrderError("position alignment needs a calibration result first")
    plog = PhaseLog(["t", "err_x_mm", "err_y_mm", "err_z_mm", "true_lateral_mm", "true_depth_mm"])

    seen = [cs.frame_count]

    def record(t):
        if cs.frame_count != seen[0] and cs.vision_ready():
            seen[0] = cs.frame_count
            e = _position_error(cs) * 1e3
            lat, depth = cs.true_position_errors()
            plog.add(t, e[0], e[1], e[2], lat * 1e3, depth * 1e3)

    cs.hooks.append(record)
    try:
        cs.run_for(sch.initial_wait)
        for i in range(sch.position_updates):
            T_BT = cs.tcp_rigid()
            if vision:
                cs.wait_for_vision()
                T_BT = cs.tcp_rigid()
                err = alignment.position_error_camera(
                    cs.filtered(sim.TOOL), cs.filtered(sim.TARGET), a.z_offset,
                    cs.scene.hole_offsets[a.hole_index])
                T_ref = alignment.position_reference(err, cs.calibration, T_BT,
                                                     math.radians(a.stale_threshold_deg))
            else:
                # rigid model + perfectly known target: what the kinematics alone can do
                R_t = cs.scene.T_world_target.rotation
                tool_goal = cs.scene.hole_world(a.hole_index) - a.z_offset * R_t[:, 2]
                T_ref = Transform(T_BT.rotation,
                                  tool_goal - T_BT.rotation @ cs.scene.T_tcp_tool.translation)
            dist = float(np.linalg.norm(T_ref.translation - T_BT.translation))
            plog.commands.append(cs.t)
            cs.execute(T_ref, max(sch.min_move_time, 1.875 * dist / sch.position_speed))
            if i < sch.position_updates - 1:
                cs.settle(lambda: float(np.linalg.norm(_position_error(cs))), sch.settle_floor_pos)
        cs.run_for(sch.final_hold)
    finally:
        cs.hooks.remove(record)
    mean = window_mean(plog, sch.metric_window, [1, 2, 3])
    true = window_mean(plog, sch.metric_window, [4, 5])
    return {"log": plog, "mean_abs_mm": mean, "true_lateral_mm": true[0],
            "true_depth_mm": true[1], "commands": len(plog.commands)}


@dataclass
class CaseResult:
    case: int
    ok: bool
    error: Optional[str] = None
    orientation: Optional[dict] = None
    calibration: Optional[dict] = None
    position: Optional[dict] = None
    rejections: dict = field(default_factory=dict)
    deflection_mm: float = 0.0


def run_case(scenario: Scenario, case_index: int = 0, threaded: bool = False) -> CaseResult:
    """Orient, calibrate, position. A phase error stops the case and is recorded.

    ``threaded`` moves the vision side onto a second thread; results are
    identical to the default single-threaded interleave.
    """
    cs = CaseSim(scenario, case_index, threaded)
    res = CaseResult(case_index, ok=False)
    res.deflection_mm = 1e3 * float(np.linalg.norm(cs.tcp_true().translation
                                                   - cs.tcp_rigid().translation))
    try:
        res.orientation = run_phase_orientation(cs)
        if "vision" not in cs.ablate:
            res.calibration = run_phase_calibration(cs)
        res.position = run_phase_position(cs)
        res.ok = True
    except TcpAlignError as exc:  # the campaign records the failure and moves on
        log.warning("case %d failed: %s", case_index, exc)
        res.error = f"{type(exc).__name__}: {exc}"
    finally:
        cs.close()
    res.rejections = dict(sorted(cs.rejections.items()))
    return res
