import numpy as np
import pytest

from unismooth.akf import akf_run, augment
from unismooth.discretization import DiscreteStateSpace, SensorConfig, build_discrete_system
from unismooth.harness import sensor_configuration, shear_frame
from unismooth.smoother import SmootherError
from unismooth.structural import build_shear_frame, modal_reduce


def two_dof(R=None):
    frame = build_shear_frame(2, [1.0, 1.5], [400.0, 300.0], 0.05, 0.002, input_floors=[2])
    sensors = SensorConfig([("disp", 1), ("acc", 2)])
    R = np.diag([1e-8, 1e-6]) if R is None else R
    return build_discrete_system(modal_reduce(frame, 2), sensors, 0.02, np.zeros((4, 4)), R)


def simulate(system, P, x0=None):
    x = np.zeros(system.n) if x0 is None else x0
    X, Y = [], []
    for p in P:
        x = system.A @ x + system.G @ p
        X.append(x)
        Y.append(system.C @ x + system.H @ p)
    return np.array(X), np.array(Y)


def test_augmented_block_layout():
    sys = two_dof()
    sys = DiscreteStateSpace(sys.A[:2, :2], sys.G[:2], sys.C[:, :2], np.zeros((2, 1)), sys.dt,
                             np.zeros((2, 2)), sys.R)
    aug = augment(sys, 1e-3, 1e-1)
    assert aug.Aa.shape == (3, 3)
    np.testing.assert_array_equal(aug.Aa[2], [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(aug.Aa[:2, 2], sys.G[:, 0])
    np.testing.assert_array_equal(aug.Ca, np.hstack([sys.C, np.zeros((2, 1))]))
    for coupled in (True, False):
        Qa = augment(sys, 1e-3, 1e-1, input_coupling=coupled).Qa
        assert np.array_equal(Qa, Qa.T) and np.linalg.eigvalsh(Qa).min() >= -1e-15
    plain = augment(sys, 1e-3, 1e-1, input_coupling=False).Qa
    np.testing.assert_array_equal(plain, np.diag([1e-3, 1e-3, 1e-1]))
    coupled = augment(sys, 1e-3, 1e-1).Qa
    L = np.vstack([sys.G, [[1.0]]])
    np.testing.assert_allclose(coupled - np.diag([1e-3, 1e-3, 0.0]), 1e-1 * L @ L.T)
    with pytest.raises(ValueError):
        augment(sys, -1.0, 0.0)


def test_constant_input_is_learned_without_input_noise():
    sys = two_dof()
    T, p_true = 3000, 3.0
    _, Y = simulate(sys, np.full((T, 1), p_true))
    aug = augment(sys.with_noise(Q=1e-12 * np.eye(4)), 1e-12, 0.0)
    P0 = np.zeros((5, 5))
    P0[4, 4] = 100.0  # prior on the constant
    tr = akf_run(aug, Y, P0=P0)
    assert np.abs(tr.p_hat[-500:, 0] - p_true).max() <= 0.01 * p_true


def test_sinusoid_tracked_with_large_input_noise():
    frame = shear_frame((2,))
    red = modal_reduce(frame, 8)
    base = build_discrete_system(red, sensor_configuration("1.2"), 0.01)
    t = np.arange(1, 1001) * 0.01
    P = (5e3 * np.sin(8 * t))[:, None]
    _, Y = simulate(base, P)
    std = 1e-6 * np.sqrt(np.mean(Y ** 2, axis=0))  # near noise-free observations
    sys = base.with_noise(Q=np.zeros((16, 16)), R=np.diag(std ** 2))
    tr = akf_run(augment(sys, 1e-20, 1e8), Y)
    err = np.abs(tr.p_hat[100:, 0] - P[100:, 0]).max()
    assert err <= 0.05 * 5e3


def test_huge_observation_noise_freezes_the_input():
    sys = two_dof(R=1e12 * np.eye(2))
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((200, 2))
    x0 = np.array([1e-3, 0.0, 0.0, 0.0])
    tr = akf_run(augment(sys, 1e-6, 1e-2), Y, x0=x0, p0=[2.0])
    np.testing.assert_allclose(tr.p_hat[:, 0], 2.0, rtol=1e-6)
    # state follows the pure prediction
    x, pred = x0, []
    for _ in range(200):
        x = sys.A @ x + sys.G @ [2.0]
        pred.append(x)
    np.testing.assert_allclose(tr.x_hat, np.array(pred), rtol=1e-5, atol=1e-12)


def textbook_kalman(A, C, Q, R, Y, x0, P0):
    x, P, xs, Ps = x0, P0, [], []
    for y in Y:
        x = A @ x
        P = A @ P @ A.T + Q
        S = C @ P @ C.T + R
        K = P @ C.T @ np.linalg.inv(S)
        x = x + K @ (y - C @ x)
        P = (np.eye(len(x)) - K @ C) @ P
        xs.append(x)
        Ps.append(P)
    return np.array(xs), np.array(Ps)


def test_reduces_to_plain_kalman_filter():
    rng = np.random.default_rng(4)
    A = np.array([[0.95, 0.1], [-0.2, 0.9]])
    C = np.array([[1.0, 0.0], [0.3, 1.0]])
    R = np.diag([0.1, 0.2])
    sys = DiscreteStateSpace(A, np.zeros((2, 1)), C, np.zeros((2, 1)), 0.1, np.eye(2), R)
    Y = rng.standard_normal((80, 2))
    x0, P0 = np.array([0.5, -0.2]), np.diag([1.0, 2.0])
    tr = akf_run(augment(sys, 0.05, 0.0), Y, x0=x0, P0=P0)
    xs, Ps = textbook_kalman(A, C, 0.05 * np.eye(2), R, Y, x0, P0)
    np.testing.assert_allclose(tr.x_hat, xs, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(tr.x_var, np.einsum("kii->ki", Ps), rtol=1e-10, atol=1e-12)
    assert not np.any(tr.p_hat)


def test_covariance_blocks_symmetric_psd():
    sys = two_dof()
    rng = np.random.default_rng(5)
    tr = akf_run(augment(sys, 1e-8, 1e2), rng.standard_normal((300, 2)) * 1e-3)
    assert np.all(tr.x_var >= 0)
    for Pp in tr.p_cov:
        assert np.allclose(Pp, Pp.T) and np.linalg.eigvalsh(Pp).min() >= -1e-9 * np.abs(Pp).max()
    np.testing.assert_array_equal(tr.steps, np.arange(1, 301))


def test_singular_innovation_covariance_fails():
    sys = two_dof(R=np.zeros((2, 2)))
    with pytest.raises(SmootherError, match="step k=1"):
        akf_run(augment(sys, 0.0, 0.0), np.ones((5, 2)))


def test_channel_mismatch_rejected():
    with pytest.raises(ValueError):
        akf_run(augment(two_dof(), 0.0, 1.0), np.ones((5, 3)))
