import math

import numpy as np
import pytest

from tcpalign import control
from tcpalign.errors import InvalidInputError


def test_p_control_gain_shapes():
    qd, q = np.array([1.0, 2.0]), np.array([0.5, 1.0])
    assert np.allclose(control.p_control(qd, q, 2.0), [1.0, 2.0])
    assert np.allclose(control.p_control(qd, q, [1.0, 3.0]), [0.5, 3.0])
    assert np.allclose(control.p_control(qd, q, np.diag([1.0, 3.0])), [0.5, 3.0])
    with pytest.raises(InvalidInputError):
        control.p_control(qd, q, [1.0, 2.0, 3.0])


def test_pt1_step_response_is_exact():
    st = control.Pt1State(0.0, k_p=1.5, tau=0.02)
    dt = 1e-3
    for k in range(1, 101):
        st = control.pt1_step(st, 1.0, dt)
        assert st.y == pytest.approx(1.5 * (1 - math.exp(-k * dt / 0.02)), rel=1e-12)


def test_pt1_independent_of_step_split():
    a = control.pt1_step(control.Pt1State(0.3, 2.0, 0.1), 1.0, 0.01)
    b = control.Pt1State(0.3, 2.0, 0.1)
    for _ in range(10):
        b = control.pt1_step(b, 1.0, 0.001)
    assert a.y == pytest.approx(b.y, rel=1e-12)


def test_pt1_rejects_bad_tau():
    with pytest.raises(InvalidInputError):
        control.Pt1State(0.0, 1.0, 0.0)


def test_quintic_boundary_conditions():
    seg = control.quintic_plan([0.0, 1.0], [2.0, -1.0], 3.0)
    p, v, a = control.quintic_eval(seg, 0.0)
    assert np.allclose(p, [0, 1]) and np.allclose(v, 0) and np.allclose(a, 0)
    p, v, a = control.quintic_eval(seg, 3.0)
    assert np.allclose(p, [2, -1]) and np.allclose(v, 0, atol=1e-12) and np.allclose(a, 0, atol=1e-12)
    p, v, _ = control.quintic_eval(seg, 1.5)
    assert np.allclose(p, [1, 0])
    # peak velocity of the 10-15-6 profile is 15/8 h/T
    assert np.allclose(v, [15 / 8 * 2 / 3, -15 / 8 * 2 / 3])


def test_quintic_derivatives_consistent():
    seg = control.quintic_plan(0.0, 1.0, 2.0)
    h = 1e-6
    for t in (0.3, 1.0, 1.7):
        p1, v1, a1 = control.quintic_eval(seg, t + h)
        p0, v0, a0 = control.quintic_eval(seg, t - h)
        _, v, a = control.quintic_eval(seg, t)
        assert (p1 - p0) / (2 * h) == pytest.approx(v, abs=1e-8)
        assert (v1 - v0) / (2 * h) == pytest.approx(a, abs=1e-6)


def test_quintic_rejects_nonpositive_duration():
    with pytest.raises(InvalidInputError):
        control.quintic_plan(0.0, 1.0, 0.0)


def test_joint_controller_matches_pt1_step():
    ctl = control.JointController(np.ones(6), (1, 2), 1.5, 0.02)
    states = {j: control.Pt1State(0.0, 1.5, 0.02) for j in (1, 2)}
    rng = np.random.default_rng(0)
    for _ in range(20):
        qd, q = rng.normal(size=6), rng.normal(size=6)
        u = ctl(qd, q, 1e-3)
        for j in (1, 2):
            states[j] = control.pt1_step(states[j], qd[j] - q[j], 1e-3)
            assert u[j] == pytest.approx(states[j].y, rel=1e-12)
        for j in (0, 3, 4, 5):
            assert u[j] == pytest.approx(qd[j] - q[j])
