"""Joint controllers and point-to-point quintic trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError


def p_control(q_d, q, k_v) -> np.ndarray:
    """Joint P-control ``u = K_v (q_d - q)``; ``k_v`` is a scalar, a vector of
    diagonal gains or a full matrix."""
    q_d = np.asarray(q_d, dtype=float)
    q = np.asarray(q, dtype=float)
    if q_d.shape != q.shape:
        raise InvalidInputError("q_d and q differ in dimension")
    e = q_d - q
    k_v = np.asarray(k_v, dtype=float)
    if k_v.ndim == 2:
        return k_v @ e
    if k_v.ndim == 1 and k_v.shape != e.shape:
        raise InvalidInputError("gain vector does not match joint count")
    return k_v * e


@dataclass(frozen=True)
class Pt1State:
    y: float = 0.0
    k_p: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidInputError("tau must be > 0")


def pt1_step(state: Pt1State, u: float, dt: float) -> Pt1State:
    """Advance ``K_p / (tau s + 1)`` by ``dt`` with input held constant (exact ZOH)."""
    if not dt > 0:
        raise InvalidInputError("dt must be > 0")
    a = math.exp(-dt / state.tau)
    return replace(state, y=a * state.y + (1.0 - a) * state.k_p * u)


@dataclass(frozen=True)
class QuinticSegment:
    p0: np.ndarray
    p1: np.ndarray
    T: float
    # rows: polynomial coefficient of t**k, k = 0..5; columns: axes
    coefficients: np.ndarray


def quintic_plan(p0, p1, T: float) -> QuinticSegment:
    """Rest-to-rest quintic (zero velocity and acceleration at both ends)."""
    if not T > 0:
        raise InvalidInputError("duration must be > 0")
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    p1 = np.atleast_1d(np.asarray(p1, dtype=float))
    h = p1 - p0
    zero = np.zeros_like(h)
    coeffs = np.stack([p0, zero, zero, 10.0 * h / T**3, -15.0 * h / T**4, 6.0 * h / T**5])
    return QuinticSegment(p0, p1, float(T), coeffs)


def quintic_eval(seg: QuinticSegment, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position, velocity and acceleration at ``t`` (clamped to [0, T])."""
    t = min(max(t, 0.0), seg.T)
    c = seg.coefficients
    tp = np.array([1.0, t, t * t, t**3, t**4, t**5])
    pos = tp @ c
    vel = np.array([0.0, 1.0, 2 * t, 3 * t * t, 4 * t**3, 5 * t**4]) @ c
    acc = np.array([0.0, 0.0, 2.0, 6 * t, 12 * t * t, 20 * t**3]) @ c
    return pos, vel, acc


@dataclass
class JointController:
    """Per-joint controller bank: P-control everywhere except the joints listed
    in ``pt1_joints``, whose error goes through ``K_p / (tau s + 1)``.

    The output is a position increment for the actuator command, i.e. the
    plant is driven toward ``q + u``.
    """

    k_v: np.ndarray
    pt1_joints: tuple[int, ...] = (1, 2)
    pt1_gain: float = 1.5
    pt1_tau: float = 0.02

    def __post_init__(self):
        self.k_v = np.asarray(self.k_v, dtype=float)
        self._idx = np.asarray(self.pt1_joints, dtype=int)
        if not self.pt1_tau > 0:
            raise InvalidInputError("tau must be > 0")
        self.reset()

    def reset(self):
        self._y = np.zeros(len(self._idx))

    def __call__(self, q_d, q, dt: float) -> np.ndarray:
        if not dt > 0:
            raise InvalidInputError("dt must be > 0")
        u = p_control(q_d, q, self.k_v)
        if len(self._idx):
            e = np.asarray(q_d, dtype=float)[self._idx] - np.asarray(q, dtype=float)[self._idx]
            # same exact-ZOH update as pt1_step, for all PT-1 joints at once
            a = math.exp(-dt / self.pt1_tau)
            self._y = a * self._y + (1.0 - a) * self.pt1_gain * e
            u[self._idx] = self._y
        return u
