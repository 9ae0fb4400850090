import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation, Slerp

from tcpalign import geometry as geo
from tcpalign.errors import DegenerateInputError, InvalidInputError
from tcpalign.geometry import Transform

RNG = np.random.default_rng(1234)
ROTS = Rotation.random(50, random_state=7)

unit = st.floats(-1.0, 1.0, allow_nan=False)
quats = st.tuples(unit, unit, unit, unit).filter(lambda v: np.linalg.norm(v) > 0.1).map(
    lambda v: np.array(v) / np.linalg.norm(v))


def from_sp(q):
    # scipy quaternions are scalar-last
    return geo.quat_canonical(np.array([q[3], q[0], q[1], q[2]]))


@pytest.mark.parametrize("i", range(0, 50, 7))
def test_quaternion_matrix_agree_with_scipy(i):
    R = ROTS[i].as_matrix()
    q = geo.quat_from_matrix(R)
    assert q[0] >= 0
    assert np.allclose(q, from_sp(ROTS[i].as_quat()), atol=1e-12)
    assert np.allclose(geo.quat_to_matrix(q), R, atol=1e-12)


def test_quat_from_matrix_near_pi():
    for axis in np.eye(3):
        R = Rotation.from_rotvec(axis * (math.pi - 1e-9)).as_matrix()
        assert np.allclose(geo.quat_to_matrix(geo.quat_from_matrix(R)), R, atol=1e-12)


def test_rotvec_round_trip_against_scipy():
    for r in ROTS[:20]:
        v = r.as_rotvec()
        assert np.allclose(geo.rotvec_to_matrix(v), r.as_matrix(), atol=1e-12)
        assert np.allclose(geo.matrix_to_rotvec(r.as_matrix()), v, atol=1e-9)
    assert np.allclose(geo.rotvec_to_matrix([1e-12, 0, 0]), np.eye(3), atol=1e-12)


def test_cross_matches_numpy():
    a, b = RNG.normal(size=(5, 3)), RNG.normal(size=(5, 3))
    assert np.allclose(geo.cross(a, b), np.cross(a, b), atol=1e-15)
    assert np.allclose(geo.cross(a[0], b[0]), np.cross(a[0], b[0]), atol=1e-15)


@given(quats, quats)
@settings(max_examples=200, deadline=None)
def test_quaternion_difference_maps_o1_to_o2(q1, q2):
    d = geo.quaternion_difference(q2, q1)
    assert d[0] >= 0
    assert abs(np.linalg.norm(d) - 1) < 1e-12
    assert np.allclose(geo.quat_to_matrix(d) @ geo.quat_to_matrix(q1), geo.quat_to_matrix(q2),
                       atol=1e-9)


def test_quaternion_difference_identity_and_sign():
    q = geo.quat_from_matrix(ROTS[3].as_matrix())
    assert np.allclose(geo.quaternion_difference(q, q), [1, 0, 0, 0], atol=1e-12)
    # -q is the same rotation
    assert np.allclose(geo.quaternion_difference(-q, q), [1, 0, 0, 0], atol=1e-12)


def test_quaternion_difference_rejects_non_unit():
    with pytest.raises(InvalidInputError):
        geo.quaternion_difference([1.0, 1e-2, 0, 0], [1, 0, 0, 0])
    # within tolerance is fine
    geo.quaternion_difference([1.0 + 5e-7, 0, 0, 0], [1, 0, 0, 0])


def test_slerp_matches_scipy():
    for i in range(10):
        r0, r1 = ROTS[2 * i], ROTS[2 * i + 1]
        q0 = from_sp(r0.as_quat())
        q1 = from_sp(r1.as_quat())
        ref = Slerp([0, 1], Rotation.concatenate([r0, r1]))
        for f in (0.0, 0.1, 0.5, 0.9, 1.0):
            got = geo.quat_to_matrix(geo.slerp(q0, q1, f))
            assert np.allclose(got, ref([f]).as_matrix()[0], atol=1e-9)


def test_slerp_takes_short_arc():
    q0 = np.array([1.0, 0, 0, 0])
    q1 = -geo.quat_from_rotvec([0, 0, 0.2])
    mid = geo.slerp(q0, q1, 0.5)
    assert geo.rotation_angle(geo.quat_to_matrix(mid)) == pytest.approx(0.1, abs=1e-12)


def test_symmetry_project_recovers_z_rotation():
    for a in np.linspace(-3.1, 3.1, 13):
        Rz = geo.rot_z(a)
        assert np.allclose(geo.symmetry_project(Rz), Rz, atol=1e-12)
        # nearest z-rotation to a slightly tilted matrix keeps the angle
        tilted = Rz @ geo.rot_x(0.05)
        assert np.allclose(geo.symmetry_project(tilted), Rz, atol=1e-12)


def test_symmetry_project_is_nearest_in_frobenius_norm():
    for r in ROTS[:10]:
        R = r.as_matrix()
        P = geo.symmetry_project(R)
        assert np.allclose(P[2], [0, 0, 1])
        best = min(np.linalg.norm(R - geo.rot_z(a)) for a in np.linspace(-math.pi, math.pi, 20001))
        assert np.linalg.norm(R - P) <= best + 1e-9


def test_symmetry_project_degenerate():
    with pytest.raises(DegenerateInputError):
        geo.symmetry_project(geo.rot_x(math.pi))


def test_euler_xyz_matches_scipy_intrinsic():
    for r in ROTS[:30]:
        R = r.as_matrix()
        e = geo.euler_xyz_from_rotation(R)
        ref = r.as_euler("XYZ")
        assert not e.gimbal_lock
        assert np.allclose([e.rx, e.ry, e.rz], ref, atol=1e-9)
        assert np.allclose(geo.rotation_from_euler_xyz(e[:3]), R, atol=1e-12)
    assert np.allclose(geo.rotation_from_euler_xyz([0.1, 0.2, 0.3]),
                       geo.rot_x(0.1) @ geo.rot_y(0.2) @ geo.rot_z(0.3))


def test_euler_gimbal_lock_flag_and_reconstruction():
    R = geo.rotation_from_euler_xyz([0.3, math.pi / 2, 0.2])
    e = geo.euler_xyz_from_rotation(R)
    assert e.gimbal_lock and e.rz == 0.0
    assert np.allclose(geo.rotation_from_euler_xyz(e[:3]), R, atol=1e-9)


def test_transform_algebra():
    A = Transform(ROTS[0].as_matrix(), [1, 2, 3])
    B = Transform(ROTS[1].as_matrix(), [-0.5, 0.1, 4])
    assert np.allclose((A @ B).matrix, A.matrix @ B.matrix)
    assert (A @ A.inverse()).allclose(Transform.identity(), atol=1e-12)
    p = RNG.normal(size=(4, 3))
    assert np.allclose(A.apply(p), (A.matrix @ np.c_[p, np.ones(4)].T).T[:, :3])
    assert Transform.from_quat_pos(A.quaternion, A.translation).allclose(A, atol=1e-12)


def test_transform_validates_and_is_immutable():
    with pytest.raises(InvalidInputError):
        Transform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(InvalidInputError):
        Transform(np.eye(3) * 1.01, np.zeros(3))
    T = Transform.identity()
    with pytest.raises(ValueError):
        T.translation[0] = 1.0


def test_orthonormalize_is_polar_factor():
    M = ROTS[5].as_matrix() + 1e-3 * RNG.normal(size=(3, 3))
    R = geo.orthonormalize(M)
    assert geo.is_rotation(R, 1e-12)
    # polar factor: R^T M is symmetric
    S = R.T @ M
    assert np.allclose(S, S.T, atol=1e-12)
