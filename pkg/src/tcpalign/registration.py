"""Rigid point-set registration with known correspondences.

``rigid_fit`` is the weighted closed-form (SVD) least-squares solution;
``fine_match`` wraps it in Huber-weighted iterative reweighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import geometry as geo
from .errors import DegenerateConfigurationError, InvalidInputError, RegistrationError
from .geometry import Transform


@dataclass(frozen=True)
class MatchOptions:
    max_iterations: int = 50
    convergence_tol: float = 1e-9
    robust_loss_scale: float = 0.005
    rotation_cap: float = math.radians(30.0)

    def __post_init__(self):
        if not (self.max_iterations > 0 and self.convergence_tol > 0
                and self.robust_loss_scale > 0 and self.rotation_cap > 0):
            raise InvalidInputError("match options must all be positive")


class AxisStats(NamedTuple):
    mean_abs: np.ndarray
    max_abs: np.ndarray


@dataclass
class MatchResult:
    transform: Transform
    stats: AxisStats
    iterations: int
    rms: float
    # Huber cost after each iteration, starting with the initial guess
    cost_history: list = field(default_factory=list)
    rms_history: list = field(default_factory=list)
    weights: np.ndarray | None = None


def _as_points(P, name: str) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3:
        raise InvalidInputError(f"{name} must have shape (N, 3)")
    return P


def rigid_fit(P_source, P_target, weights=None) -> Transform:
    """Rotation + translation minimizing ``sum w_i |R p_i + t - q_i|^2`` (det R = +1)."""
    P = _as_points(P_source, "P_source")
    Q = _as_points(P_target, "P_target")
    if P.shape != Q.shape:
        raise InvalidInputError("point sets differ in length")
    if P.shape[0] < 3:
        raise DegenerateConfigurationError("need at least 3 point pairs")
    w = np.ones(P.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (P.shape[0],) or (w < 0).any() or w.sum() <= 0:
        raise InvalidInputError("weights must be non-negative with positive sum")
    w = w / w.sum()
    cp = w @ P
    cq = w @ Q
    Pc = P - cp
    Qc = Q - cq
    # rotation about a line through collinear points is unobservable
    for X in (Pc, Qc):
        s = np.linalg.svd(np.sqrt(w)[:, None] * X, compute_uv=False)
        if s[0] <= 1e-12 or s[1] <= 1e-9 * max(1.0, s[0]):
            raise DegenerateConfigurationError("points are collinear or coincident")
    H = (w[:, None] * Pc).T @ Qc
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ U.T
    return Transform(R, cq - R @ cp)


def residual_stats(P_source_transformed, P_target) -> AxisStats:
    """Per-axis mean and max of the absolute point differences."""
    P = _as_points(P_source_transformed, "P_source_transformed")
    Q = _as_points(P_target, "P_target")
    if P.shape != Q.shape:
        raise InvalidInputError("point sets differ in length")
    d = np.abs(P - Q)
    return AxisStats(d.mean(axis=0), d.max(axis=0))


def _huber_weights(r: np.ndarray, c: float) -> np.ndarray:
    return np.where(r <= c, 1.0, c / np.maximum(r, 1e-300))


def _huber_cost(r: np.ndarray, c: float) -> float:
    return float(np.where(r <= c, 0.5 * r * r, c * (r - 0.5 * c)).sum())


def fine_match(P_source, P_target, opts: MatchOptions | None = None) -> MatchResult:
    """Iteratively reweighted rigid fit with Huber weights.

    Starts from the identity, i.e. it assumes a coarse alignment has already
    been applied. Raises ``RegistrationError`` when the result rotates by more
    than ``opts.rotation_cap`` or does not settle within ``max_iterations``.
    """
    opts = opts or MatchOptions()
    P = _as_points(P_source, "P_source")
    Q = _as_points(P_target, "P_target")
    c = opts.robust_loss_scale

    T = Transform.identity()
    r = np.linalg.norm(P - Q, axis=1)
    costs = [_huber_cost(r, c)]
    rms_hist = [float(np.sqrt(np.mean(r * r)))]
    converged = False
    it = 0
    w = _huber_weights(r, c)
    for it in range(1, opts.max_iterations + 1):
        T_new = rigid_fit(P, Q, w)
        r_new = np.linalg.norm(T_new.apply(P) - Q, axis=1)
        cost_new = _huber_cost(r_new, c)
        if cost_new > costs[-1]:
            # IRLS is monotone in exact arithmetic; anything else is round-off
            converged = True
            break
        T, r = T_new, r_new
        costs.append(cost_new)
        rms_hist.append(float(np.sqrt(np.mean(r * r))))
        w = _huber_weights(r, c)
        if abs(rms_hist[-2] - rms_hist[-1]) < opts.convergence_tol:
            converged = True
            break
    if not converged:
        raise RegistrationError(f"no convergence within {opts.max_iterations} iterations")
    angle = geo.rotation_angle(T.rotation)
    if angle > opts.rotation_cap:
        raise RegistrationError(
            f"fine-match rotation {math.degrees(angle):.1f} deg exceeds the "
            f"{math.degrees(opts.rotation_cap):.1f} deg cap", reason="rotation_cap")
    return MatchResult(T, residual_stats(T.apply(P), Q), it, rms_hist[-1], costs, rms_hist, w)
