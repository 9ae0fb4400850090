import json
import math

import numpy as np
import pytest

from tcpalign import geometry as geo, kinematics as kin
from tcpalign.errors import InvalidInputError, SingularityError
from tcpalign.geometry import Transform


def elementary(theta, d, alpha, a):
    """Rz(theta) Tz(d) Tx(a) Rx(alpha), built from 4x4 elementary transforms."""
    Rz = np.eye(4)
    Rz[:3, :3] = geo.rot_z(theta)
    Tz = np.eye(4)
    Tz[2, 3] = d
    Tx = np.eye(4)
    Tx[0, 3] = a
    Rx = np.eye(4)
    Rx[:3, :3] = geo.rot_x(alpha)
    return Rz @ Tz @ Tx @ Rx


def random_chain(rng, n=None):
    n = n or int(rng.integers(2, 8))
    links = [kin.DHParameters(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-math.pi, math.pi),
                              rng.uniform(-1, 1),
                              kin.PRISMATIC if rng.random() < 0.2 else kin.REVOLUTE)
             for _ in range(n)]
    return kin.KinematicChain(links)


def test_reference_chain_home_pose():
    chain = kin.reference_chain()
    T = kin.forward_kinematics(chain, np.zeros(6))
    assert np.allclose(T.translation, [4.95, 0.0, 1.2], atol=1e-12)
    assert np.allclose(T.rotation[:, 2], [1, 0, 0], atol=1e-12)


def test_link_transform_matches_elementary_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = kin.DHParameters(*rng.uniform(-2, 2, size=4))
        q = rng.uniform(-3, 3)
        got = kin.dh_link_transform(p, q).matrix
        assert np.abs(got - elementary(p.theta_offset + q, p.d, p.alpha, p.a)).max() <= 1e-12


def test_prismatic_joint_moves_d():
    p = kin.DHParameters(0.2, 0.5, 0.3, 0.1, kin.PRISMATIC)
    got = kin.dh_link_transform(p, 0.25).matrix
    assert np.abs(got - elementary(0.2, 0.75, 0.3, 0.1)).max() <= 1e-12


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(20):
        chain = random_chain(rng)
        q = rng.uniform(-1.5, 1.5, size=chain.n)
        J = kin.geometric_jacobian(chain, q)
        h = 1e-6
        for i in range(chain.n):
            dq = np.zeros(chain.n)
            dq[i] = h
            Tp = kin.forward_kinematics(chain, q + dq)
            Tm = kin.forward_kinematics(chain, q - dq)
            v = (Tp.translation - Tm.translation) / (2 * h)
            w = geo.matrix_to_rotvec(Tp.rotation @ Tm.rotation.T) / (2 * h)
            assert np.allclose(J[:3, i], v, atol=1e-7)
            assert np.allclose(J[3:, i], w, atol=1e-7)


def test_inverse_velocity_matches_pinv_for_small_damping():
    rng = np.random.default_rng(5)
    J = rng.normal(size=(6, 6))
    x = rng.normal(size=6)
    assert np.allclose(kin.inverse_velocity(J, x, 0.0), np.linalg.solve(J, x), atol=1e-9)
    lam = 1e-3
    ref = J.T @ np.linalg.solve(J @ J.T + lam**2 * np.eye(6), x)
    assert np.allclose(kin.inverse_velocity(J, x, lam), ref, atol=1e-12)


def test_inverse_velocity_singular_without_damping():
    J = np.zeros((6, 6))
    J[0, 0] = 1.0
    with pytest.raises(SingularityError):
        kin.inverse_velocity(J, np.ones(6), 0.0)
    # damping keeps it finite
    assert np.isfinite(kin.inverse_velocity(J, np.ones(6), 1e-3)).all()


def test_joint_count_mismatch():
    with pytest.raises(InvalidInputError):
        kin.forward_kinematics(kin.reference_chain(), np.zeros(5))


def test_clik_tracks_a_fixed_target():
    chain = kin.reference_chain()
    q = np.array([0.0, 0.6, -1.4, 0.0, 0.8, 1.57])
    T0 = kin.forward_kinematics(chain, q)
    goal = Transform(T0.rotation @ geo.rot_x(0.05), T0.translation + [0.02, -0.03, 0.01])
    for _ in range(2000):
        q = kin.clik_step(chain, q, goal.translation, goal.quaternion, np.zeros(3), np.zeros(3),
                          20.0, 20.0, 1e-3, 1e-3)
    T = kin.forward_kinematics(chain, q)
    # first-order convergence; the quaternion error is ~theta/2, so orientation
    # decays at half the gain rate: 0.05 exp(-20) after 2 s
    assert np.linalg.norm(T.translation - goal.translation) < 1e-6
    assert geo.rotation_angle(T.rotation.T @ goal.rotation) < 1e-6


def test_orientation_error_sign_invariant():
    qd = geo.quat_from_rotvec([0.1, -0.2, 0.05])
    q = geo.quat_from_rotvec([0.0, 0.1, 0.0])
    assert np.allclose(kin.orientation_error(qd, q), kin.orientation_error(-qd, q))
    assert np.allclose(kin.orientation_error(q, q), 0)


def test_solve_ik_round_trip():
    chain = kin.reference_chain()
    q_true = np.array([0.1, 0.5, -1.3, 0.05, 0.7, 1.5])
    target = kin.forward_kinematics(chain, q_true)
    q = kin.solve_ik(chain, target, q_true + 0.1)
    assert kin.forward_kinematics(chain, q).allclose(target, atol=1e-8)


def test_chain_json_round_trip(tmp_path):
    chain = kin.reference_chain()
    path = tmp_path / "chain.json"
    path.write_text(json.dumps(chain.to_dict()))
    again = kin.KinematicChain.load(path)
    q = np.linspace(-0.5, 0.5, 6)
    assert np.allclose(kin.fk_matrix(again, q), kin.fk_matrix(chain, q), atol=1e-15)
