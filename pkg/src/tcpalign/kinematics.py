"""DH serial chains: forward kinematics, geometric Jacobian, differential IK."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import InvalidInputError, SingularityError
from .geometry import Transform

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

DEFAULT_DAMPING = 1e-3


@dataclass(frozen=True)
class DHParameters:
    theta_offset: float = 0.0
    d: float = 0.0
    alpha: float = 0.0
    a: float = 0.0
    joint_kind: str = REVOLUTE

    def __post_init__(self):
        if self.joint_kind not in (REVOLUTE, PRISMATIC):
            raise InvalidInputError(f"unknown joint kind {self.joint_kind!r}")
        if not all(math.isfinite(v) for v in (self.theta_offset, self.d, self.alpha, self.a)):
            raise InvalidInputError("DH parameters must be finite")


@dataclass(frozen=True)
class KinematicChain:
    links: tuple[DHParameters, ...]
    joint_limits: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        limits = tuple(tuple(map(float, lim)) for lim in self.joint_limits)
        if not limits:
            limits = tuple((-math.pi, math.pi) if l.joint_kind == REVOLUTE else (-1.0, 1.0)
                           for l in self.links)
        if len(limits) != len(self.links):
            raise InvalidInputError("one [min, max] limit pair per link is required")
        if any(lo >= hi for lo, hi in limits):
            raise InvalidInputError("joint limits need min < max")
        object.__setattr__(self, "joint_limits", limits)
        mask = np.array([l.joint_kind == REVOLUTE for l in self.links], dtype=bool)
        mask.flags.writeable = False
        object.__setattr__(self, "revolute_mask", mask)

    @property
    def n(self) -> int:
        return len(self.links)

    def __add__(self, other: "KinematicChain") -> "KinematicChain":
        return KinematicChain(self.links + other.links, self.joint_limits + other.joint_limits)

    def clamp(self, q) -> np.ndarray:
        lim = np.asarray(self.joint_limits)
        return np.clip(q, lim[:, 0], lim[:, 1])

    @classmethod
    def from_dict(cls, data: dict) -> "KinematicChain":
        """Build from ``{"links": [{"theta_offset", "d", "alpha", "a", "kind", "limits"}, ...]}``."""
        links, limits = [], []
        for item in data["links"]:
            links.append(DHParameters(
                theta_offset=float(item.get("theta_offset", 0.0)),
                d=float(item.get("d", 0.0)),
                alpha=float(item.get("alpha", 0.0)),
                a=float(item.get("a", 0.0)),
                joint_kind=item.get("kind", REVOLUTE),
            ))
            if "limits" in item:
                limits.append(tuple(item["limits"]))
        if limits and len(limits) != len(links):
            raise InvalidInputError("either all links or none carry limits")
        return cls(tuple(links), tuple(limits))

    def to_dict(self) -> dict:
        return {"links": [
            {"theta_offset": l.theta_offset, "d": l.d, "alpha": l.alpha, "a": l.a,
             "kind": l.joint_kind, "limits": list(lim)}
            for l, lim in zip(self.links, self.joint_limits)
        ]}

    @classmethod
    def load(cls, path) -> "KinematicChain":
        return cls.from_dict(json.loads(Path(path).read_text()))


def reference_chain() -> KinematicChain:
    """6-DOF long-reach stand-in: pillar, lift, tilt and a spherical wrist.

    Link lengths (1.2 m pillar, 2.4 m boom, 2.2 m jib, 0.35 m flange) give
    about 5 m reach. The values are placeholders, not a real crane's data.
    """
    half = math.pi / 2
    links = (
        DHParameters(0.0, 1.2, half, 0.0),     # pillar rotation
        DHParameters(0.0, 0.0, 0.0, 2.4),      # lift
        DHParameters(half, 0.0, half, 0.0),    # tilt
        DHParameters(0.0, 2.2, -half, 0.0),    # wrist roll
        DHParameters(0.0, 0.0, half, 0.0),     # wrist pitch
        DHParameters(0.0, 0.35, 0.0, 0.0),     # wrist yaw
    )
    limits = (
        (-math.pi, math.pi),
        (-1.2, 1.4),
        (-2.6, 0.6),
        (-math.pi, math.pi),
        (-2.0, 2.0),
        (-math.pi, math.pi),
    )
    return KinematicChain(links, limits)


def _link_matrix(p: DHParameters, qi: float) -> np.ndarray:
    theta, d = p.theta_offset, p.d
    if p.joint_kind == REVOLUTE:
        theta += qi
    else:
        d += qi
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(p.alpha), math.sin(p.alpha)
    return np.array([
        [ct, -st * ca, st * sa, p.a * ct],
        [st, ct * ca, -ct * sa, p.a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def dh_link_transform(p: DHParameters, q_i: float) -> Transform:
    if not math.isfinite(q_i):
        raise InvalidInputError("joint value must be finite")
    return Transform.from_matrix(_link_matrix(p, q_i))


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != chain.n:
        raise InvalidInputError(f"expected {chain.n} joint values, got {q.shape[0]}")
    return q


def frames(chain: KinematicChain, q) -> np.ndarray:
    """Cumulative 4x4 frames ``T_0 .. T_n`` (``T_0`` is the base, identity)."""
    q = _check_q(chain, q)
    out = np.empty((chain.n + 1, 4, 4))
    out[0] = np.eye(4)
    for i, (link, qi) in enumerate(zip(chain.links, q)):
        out[i + 1] = out[i] @ _link_matrix(link, qi)
    return out


def fk_matrix(chain: KinematicChain, q) -> np.ndarray:
    return frames(chain, q)[-1]


def forward_kinematics(chain: KinematicChain, q) -> Transform:
    return Transform.from_matrix(fk_matrix(chain, q))


def _jacobian_from_frames(chain: KinematicChain, F: np.ndarray) -> np.ndarray:
    z = F[:-1, :3, 2]
    lever = F[-1, :3, 3] - F[:-1, :3, 3]
    revolute = chain.revolute_mask
    J = np.empty((6, chain.n))
    J[:3] = np.where(revolute[:, None], geo.cross(z, lever), z).T
    J[3:] = np.where(revolute[:, None], z, 0.0).T
    return J


def geometric_jacobian(chain: KinematicChain, q) -> np.ndarray:
    """6xn Jacobian: rows 0-2 map to TCP linear velocity, rows 3-5 to angular
    velocity, both expressed in the base frame."""
    return _jacobian_from_frames(chain, frames(chain, q))


def fk_and_jacobian(chain: KinematicChain, q) -> tuple[np.ndarray, np.ndarray]:
    F = frames(chain, q)
    return F[-1], _jacobian_from_frames(chain, F)


def inverse_velocity(J, xdot, damping: float = DEFAULT_DAMPING) -> np.ndarray:
    """Damped least squares ``J^T (J J^T + damping^2 I)^-1 xdot``."""
    J = np.asarray(J, dtype=float)
    xdot = np.asarray(xdot, dtype=float)
    if damping < 0:
        raise InvalidInputError("damping must be >= 0")
    m = J.shape[0]
    A = J @ J.T
    if damping > 0:
        A = A + (damping * damping) * np.eye(m)
    elif np.linalg.cond(A) > 1e12:
        raise SingularityError("Jacobian is singular and no damping was given")
    try:
        return J.T @ np.linalg.solve(A, xdot)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(str(exc)) from exc


def orientation_error(q_desired, q_current) -> np.ndarray:
    """Vector part of ``q_desired * q_current^-1`` with the scalar kept >= 0."""
    e = geo.quat_multiply(q_desired, geo.quat_conjugate(q_current))
    if e[0] < 0:
        e = -e
    return e[1:]


def _gain(k, e: np.ndarray) -> np.ndarray:
    return np.asarray(k, dtype=float) @ e if np.ndim(k) else float(k) * e


def clik_step(chain: KinematicChain, q, p_d, quat_d, pdot_d, omega_d,
              k_p, k_theta, damping: float = DEFAULT_DAMPING, dt: float = 1e-3,
              fk_jac: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """One explicit-Euler step of closed-loop inverse kinematics.

    ``k_p`` / ``k_theta`` are scalars or 3x3 gain matrices. ``fk_jac`` lets a
    caller reuse an already computed ``(T, J)`` pair for ``q``.
    """
    q = _check_q(chain, q)
    T, J = fk_jac if fk_jac is not None else fk_and_jacobian(chain, q)
    quat = geo.quat_from_matrix(T[:3, :3])
    dp = np.asarray(p_d, dtype=float) - T[:3, 3]
    dr = orientation_error(quat_d, quat)
    v = np.asarray(pdot_d, dtype=float) + _gain(k_p, dp)
    w = np.asarray(omega_d, dtype=float) + _gain(k_theta, dr)
    qdot = inverse_velocity(J, np.concatenate([v, w]), damping)
    return q + qdot * dt


def solve_ik(chain: KinematicChain, target: Transform, q0, *, damping: float = 1e-2,
             tol: float = 1e-10, max_iter: int = 500) -> np.ndarray:
    """Iterative damped least-squares position+orientation IK (numerical)."""
    q = _check_q(chain, q0).copy()
    qt = target.quaternion
    for _ in range(max_iter):
        T, J = fk_and_jacobian(chain, q)
        err = np.concatenate([target.translation - T[:3, 3],
                              2.0 * orientation_error(qt, geo.quat_from_matrix(T[:3, :3]))])
        if float(err @ err) < tol * tol:
            break
        q = chain.clamp(q + inverse_velocity(J, err, damping))
    else:
        raise SingularityError("numerical IK did not converge")
    return q
