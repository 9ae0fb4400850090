import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from tcpalign import geometry as geo
from tcpalign.errors import DegenerateConfigurationError, RegistrationError
from tcpalign.geometry import Transform
from tcpalign.registration import MatchOptions, fine_match, residual_stats, rigid_fit


def cloud(n=40, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 3))


def test_rigid_fit_recovers_transform():
    P = cloud()
    T = Transform(Rotation.random(random_state=1).as_matrix(), [0.3, -2, 1])
    est = rigid_fit(P, T.apply(P))
    assert est.allclose(T, atol=1e-12)


def test_rigid_fit_matches_scipy_align_vectors():
    P = cloud(seed=4)
    Q = Transform(Rotation.random(random_state=2).as_matrix(), [1, 2, 3]).apply(P)
    Q = Q + 0.01 * np.random.default_rng(5).normal(size=Q.shape)
    w = np.random.default_rng(6).uniform(0.5, 1.5, size=len(P))
    est = rigid_fit(P, Q, w)
    # oracle: weighted Wahba problem on centered points
    pc = P - np.average(P, axis=0, weights=w)
    qc = Q - np.average(Q, axis=0, weights=w)
    ref, _ = Rotation.align_vectors(qc, pc, weights=w)
    assert np.allclose(est.rotation, ref.as_matrix(), atol=1e-9)


def test_rigid_fit_never_returns_a_reflection():
    P = cloud(seed=8)
    Q = P * np.array([1, 1, -1])  # mirrored target
    R = rigid_fit(P, Q).rotation
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_rigid_fit_degenerate_inputs():
    with pytest.raises(DegenerateConfigurationError):
        rigid_fit(cloud(2), cloud(2))
    line = np.outer(np.linspace(0, 1, 10), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError):
        rigid_fit(line, line)


def test_fine_match_is_robust_to_outliers():
    P = cloud(100, seed=9)
    T = Transform(geo.rotvec_to_matrix([0.05, -0.1, 0.08]), [0.02, 0.01, -0.03])
    Q = T.apply(P) + 0.001 * np.random.default_rng(1).normal(size=P.shape)
    Q[:8] += 0.5  # gross outliers
    res = fine_match(P, Q, MatchOptions(robust_loss_scale=0.005))
    plain = rigid_fit(P, Q)
    err = geo.rotation_angle(res.transform.rotation.T @ T.rotation)
    assert err < math.radians(0.2)
    assert err < geo.rotation_angle(plain.rotation.T @ T.rotation)
    assert res.weights[:8].max() < 0.05
    # Huber cost never increases across iterations
    assert all(b <= a + 1e-15 for a, b in zip(res.cost_history, res.cost_history[1:]))


def test_fine_match_rotation_cap():
    P = cloud(seed=3)
    Q = Transform(geo.rot_z(math.radians(150)), [0, 0, 0]).apply(P)
    with pytest.raises(RegistrationError) as err:
        fine_match(P, Q)
    assert err.value.reason == "rotation_cap"
    # raising the cap lets the same problem through
    res = fine_match(P, Q, MatchOptions(rotation_cap=math.pi))
    assert geo.rotation_angle(res.transform.rotation) == pytest.approx(math.radians(150))


def test_fine_match_non_convergence():
    P = cloud(seed=3)
    Q = Transform(geo.rot_z(0.1), [0, 0, 0]).apply(P) + 0.2 * cloud(seed=4)
    with pytest.raises(RegistrationError) as err:
        fine_match(P, Q, MatchOptions(max_iterations=1, convergence_tol=1e-300))
    assert err.value.reason == "non-convergence"


def test_residual_stats_per_axis():
    A = np.zeros((3, 3))
    B = np.array([[1.0, -2, 0], [-1, 0, 0], [1, 2, 3]])
    st = residual_stats(A, B)
    assert np.allclose(st.mean_abs, [1, 4 / 3, 1])
    assert np.allclose(st.max_abs, [1, 2, 3])
