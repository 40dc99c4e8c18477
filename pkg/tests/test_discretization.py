import numpy as np
import pytest
from scipy.integrate import solve_ivp

from unismooth.discretization import (ContinuousStateSpace, DiscreteStateSpace, SensorConfig,
                                      build_discrete_system, build_output_matrices,
                                      discretize_zoh, physical_output_matrix, to_continuous)
from unismooth.harness import sensor_configuration
from unismooth.structural import (ModalBasis, ReducedModel, build_shear_frame, modal_reduce)


def sdof(k=4.0, c=0.0):
    return modal_reduce(build_shear_frame(1, [1.0], [k], 0.0, c / k if c else 0.0), 1)


def test_sdof_continuous_form():
    cont = to_continuous(sdof())
    np.testing.assert_allclose(cont.system_matrix, [[0, 1], [-4, 0]], atol=1e-12)
    np.testing.assert_allclose(cont.input_matrix, [[0], [1]], atol=1e-12)


def test_mass_normalized_block_is_minus_omega_squared():
    red = modal_reduce(build_shear_frame(8, 625e3, 1e9, 0.01, 0.01, (2,)), 3)
    Psi = to_continuous(red).system_matrix
    np.testing.assert_array_equal(Psi[:3, :3], 0.0)
    np.testing.assert_array_equal(Psi[:3, 3:], np.eye(3))
    np.testing.assert_allclose(Psi[3:, :3], -np.diag(red.basis.frequencies ** 2), rtol=1e-10,
                               atol=1e-8)


def test_two_dof_hand_inverse():
    # M^-1 = [[2,-1],[-1,2]]/3 for M = [[2,1],[1,2]]
    model = build_shear_frame(2, 1.0, 1.0)
    basis = ModalBasis(np.eye(2), np.ones(2))
    red = ReducedModel(np.array([[2.0, 1.0], [1.0, 2.0]]), np.array([[1.0, 0.0], [0.0, 0.0]]),
                       np.array([[3.0, 0.0], [0.0, 5.0]]), np.array([[1.0], [0.0]]),
                       basis, model)
    cont = to_continuous(red)
    np.testing.assert_allclose(cont.system_matrix[2:, :2], [[-2.0, 5 / 3], [1.0, -10 / 3]])
    np.testing.assert_allclose(cont.system_matrix[2:, 2:], [[-2 / 3, 0.0], [1 / 3, 0.0]])
    np.testing.assert_allclose(cont.input_matrix[2:, 0], [2 / 3, -1 / 3])


def test_singular_reduced_mass_rejected():
    model = build_shear_frame(2, 1.0, 1.0)
    red = ReducedModel(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), np.ones((2, 1)),
                       ModalBasis(np.eye(2), np.ones(2)), model)
    with pytest.raises(ValueError):
        to_continuous(red)


def test_zoh_integrator():
    A, G = discretize_zoh(ContinuousStateSpace(np.zeros((1, 1)), np.ones((1, 1))), 0.5)
    assert A[0, 0] == pytest.approx(1.0) and G[0, 0] == pytest.approx(0.5)


@pytest.mark.parametrize("a,b,dt", [(2.0, 3.0, 0.1), (0.5, -1.0, 1.0), (40.0, 1.0, 0.01)])
def test_zoh_scalar_closed_form(a, b, dt):
    A, G = discretize_zoh(ContinuousStateSpace(np.array([[-a]]), np.array([[b]])), dt)
    assert A[0, 0] == pytest.approx(np.exp(-a * dt), rel=1e-12)
    assert G[0, 0] == pytest.approx(b * (1 - np.exp(-a * dt)) / a, rel=1e-12)


def test_zoh_harmonic_oscillator():
    w, dt = 2.0, 0.01
    A, _ = discretize_zoh(to_continuous(sdof()), dt)
    c, s = np.cos(w * dt), np.sin(w * dt)
    np.testing.assert_allclose(A, [[c, s / w], [-w * s, c]], rtol=1e-12, atol=1e-14)


def test_block_exponential_matches_inverse_formula():
    red = modal_reduce(build_shear_frame(8, 625e3, 1e9, 0.01, 0.01, (2, 5)), 8)
    cont = to_continuous(red)
    A, G = discretize_zoh(cont, 0.01)
    G_inv = (A - np.eye(16)) @ np.linalg.solve(cont.system_matrix, cont.input_matrix)
    np.testing.assert_allclose(G, G_inv, rtol=1e-8, atol=1e-10 * np.abs(G).max())


def test_zoh_rejects_bad_input():
    cont = ContinuousStateSpace(np.array([[np.nan]]), np.ones((1, 1)))
    with pytest.raises(ValueError):
        discretize_zoh(cont, 0.1)
    with pytest.raises(ValueError):
        discretize_zoh(ContinuousStateSpace(np.zeros((1, 1)), np.ones((1, 1))), 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_zoh_matches_adaptive_ode(seed):
    rng = np.random.default_rng(seed)
    n, m, dt = 4, 2, 0.05
    X = rng.standard_normal((n, n))
    Psi = X - (np.abs(np.linalg.eigvals(X).real).max() + 0.3) * np.eye(n)
    Xi = rng.standard_normal((n, m))
    A, G = discretize_zoh(ContinuousStateSpace(Psi, Xi), dt)
    P = rng.standard_normal((100, m))
    x_disc, x_ode = np.zeros(n), np.zeros(n)
    disc, ode = [], []
    for p in P:
        x_disc = A @ x_disc + G @ p
        sol = solve_ivp(lambda t, x: Psi @ x + Xi @ p, (0.0, dt), x_ode, method="DOP853",
                        rtol=1e-12, atol=1e-14)
        x_ode = sol.y[:, -1]
        disc.append(x_disc)
        ode.append(x_ode)
    disc, ode = np.array(disc), np.array(ode)
    assert np.abs(disc - ode).max() <= 1e-6 * np.abs(ode).max()


def test_displacement_only_has_no_feedthrough():
    red = modal_reduce(build_shear_frame(8, 625e3, 1e9, 0.01, 0.01, (2,)), 8)
    C, H = build_output_matrices(red, sensor_configuration("2.2"))
    assert C.shape == (4, 16)
    assert np.all(H == 0.0)


def test_sdof_accelerometer():
    C, H = build_output_matrices(sdof(), SensorConfig([("acceleration", 1)]))
    np.testing.assert_allclose(C, [[-4.0, 0.0]], atol=1e-12)
    np.testing.assert_allclose(H, [[1.0]], atol=1e-12)


def test_config_12_feedthrough_rows():
    sensors = sensor_configuration("1.2")
    model = build_shear_frame(8, 625e3, 1e9, 0.01, 0.01, (2,))
    # lumped masses: the F1 acceleration responds instantly only to a load on F1,
    # so with the floor-2 load the full-order row is (M^-1 B)[F1] = 0
    C, H = build_output_matrices(modal_reduce(model, 8), sensors)
    assert C.shape[0] == 5 and sensors.entries[4] == ("acceleration", 1)
    assert np.abs(H).max() <= 1e-15 * np.abs(np.linalg.solve(model.mass_matrix,
                                                              model.input_distribution)).max()
    # a truncated basis spreads the load, leaving exactly one nonzero row
    _, H3 = build_output_matrices(modal_reduce(model, 3), sensors)
    assert [i for i in range(5) if np.any(H3[i] != 0)] == [4]
    # a load on the instrumented floor gives a full-order feedthrough of 1/m
    _, H1 = build_output_matrices(modal_reduce(build_shear_frame(8, 625e3, 1e9, 0.01, 0.01, (1,)),
                                               8), sensors)
    assert [i for i in range(5) if np.any(H1[i] != 0)] == [4]
    assert H1[4, 0] == pytest.approx(1 / 625e3, rel=1e-10)


def test_acceleration_row_matches_equation_of_motion():
    model = build_shear_frame(3, [1.0, 2.0, 3.0], [10.0, 20.0, 30.0], 0.1, 0.01, (2,))
    red = modal_reduce(model, 3)
    C, H = build_output_matrices(red, SensorConfig([("acc", 2)]))
    rng = np.random.default_rng(1)
    u, v, p = rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(1)
    acc = np.linalg.solve(model.mass_matrix, model.input_distribution @ p
                          - model.damping_matrix @ v - model.stiffness_matrix @ u)
    Zinv = red.basis.mode_shapes.T @ model.mass_matrix  # Z^-1 for mass-normalized Z
    x = np.concatenate([Zinv @ u, Zinv @ v])
    assert (C @ x + H @ p)[0] == pytest.approx(acc[1], rel=1e-10)


@pytest.mark.parametrize("entries", [[("strain", 1)], [("disp", 0)], [("disp", 1.5)], []])
def test_sensor_config_rejects_bad_entries(entries):
    with pytest.raises(ValueError):
        SensorConfig(entries)


def test_sensor_index_out_of_range():
    red = modal_reduce(build_shear_frame(2, 1.0, 1.0), 2)
    with pytest.raises(ValueError):
        build_output_matrices(red, SensorConfig([("disp", 3)]))


def test_discrete_shape_validation():
    with pytest.raises(ValueError):
        DiscreteStateSpace(np.eye(2), np.ones((2, 1)), np.ones((1, 2)), np.zeros((1, 1)), 0.1,
                           np.eye(3), np.eye(1))
    with pytest.raises(ValueError):
        DiscreteStateSpace(np.eye(2), np.ones((2, 1)), np.ones((1, 2)), np.zeros((1, 1)), 0.0,
                           np.eye(2), np.eye(1))


def test_physical_outputs_do_not_depend_on_mode_scaling():
    model = build_shear_frame(8, 625e3, 1e9, 0.01, 0.01, (2,))
    red = modal_reduce(model, 3)
    scale = np.array([3.0, -0.2, 7.0])
    Z = red.basis.mode_shapes * scale
    S = np.diag(scale)
    scaled = ReducedModel(S @ red.mass @ S, S @ red.damping @ S, S @ red.stiffness @ S,
                          S @ red.input_matrix, ModalBasis(Z, red.basis.frequencies), model)
    sensors = sensor_configuration("1.2")
    rng = np.random.default_rng(0)
    P = 5e3 * rng.standard_normal((200, 1))
    out = []
    for r in (red, scaled):
        sys = build_discrete_system(r, sensors, 0.01)
        x, ys, us = np.zeros(6), [], []
        D = physical_output_matrix(r, "displacement")
        for p in P:
            x = sys.A @ x + sys.G @ p
            ys.append(sys.C @ x + sys.H @ p)
            us.append(D @ x)
        out.append((np.array(ys), np.array(us)))
    for a, b in zip(out[0], out[1]):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9 * np.abs(a).max())
