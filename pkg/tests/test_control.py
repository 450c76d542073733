import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from uav_scc.control import (PREDICTION_POWER_CAP, ControllerState, CovariancePredictor, Mode, control_input,
                             estimation_error_map, lqr_gain, predict_mode_covariances, predict_state,
                             solve_riccati, spectral_radius, update_counter)
from uav_scc.errors import InvalidParameterError
from uav_scc.sensing import SensingModel

from conftest import symmetric_beacons
from oracles import moment_zscores, rollout_states


@pytest.fixture(scope="module")
def R_eta():
    return SensingModel().covariance_at([0.0, 0.0], symmetric_beacons(), 50.0)


def test_riccati_matches_scipy(model):
    Q, R = np.diag([1, 1, 1, 1, 0.1, 0.1]), np.eye(2)
    P = solve_riccati(model.A, model.B, Q, R)
    assert np.allclose(P, solve_discrete_are(model.A, model.B, Q, R), rtol=1e-7, atol=1e-8)


def test_lqr_gain_stabilises(model, gain):
    assert gain.shape == (2, 6)
    assert spectral_radius(model.A + model.B @ gain) < 1.0


def test_custom_weights_change_gain(model, gain):
    K2 = lqr_gain(model, Qlqr=np.diag([10, 10, 1, 1, 0.1, 0.1]))
    assert not np.allclose(K2, gain)
    assert spectral_radius(model.A + model.B @ K2) < 1.0


def test_counter_updates(gain, R_eta):
    c = ControllerState(K=gain, dtc=5, last_xhat=np.zeros(6), last_Reta=R_eta)
    assert update_counter(c, Mode.OL).dtc == 6
    assert update_counter(c, Mode.CL, xhat=np.ones(6), R_eta=R_eta).dtc == 1
    seq = []
    for mode in (Mode.CL, Mode.OL, Mode.OL):
        c = update_counter(c, mode, xhat=np.zeros(6), R_eta=R_eta)
        seq.append(c.dtc)
    assert seq == [1, 2, 3]


def test_counter_cl_requires_estimate(gain):
    with pytest.raises(InvalidParameterError):
        update_counter(ControllerState.at_rest(gain), Mode.CL)


def test_negative_counter_rejected(gain):
    with pytest.raises(InvalidParameterError):
        ControllerState(K=gain, dtc=-1, last_xhat=np.zeros(6), last_Reta=np.zeros((6, 6)))


def test_zero_estimates_give_zero_input(model, gain):
    c = ControllerState.at_rest(gain)
    assert np.all(control_input(c, model, Mode.CL, np.zeros(6)) == 0)
    assert np.all(control_input(c, model, Mode.OL) == 0)
    with pytest.raises(InvalidParameterError):
        control_input(c, model, Mode.CL)


def test_two_slot_closed_loop_hand_expansion(model, gain, rng):
    """CL with a noisy estimate reproduces x' = Ac x + BK eta + w."""
    A, B, K = model.A, model.B, gain
    x = rng.standard_normal(6)
    c = ControllerState.at_rest(K)
    for _ in range(2):
        eta, w = rng.standard_normal(6), rng.standard_normal(6)
        u = control_input(c, model, Mode.CL, x + eta)
        expected = (A + B @ K) @ x + B @ K @ eta + w
        x = A @ x + B @ u + w
        assert np.allclose(x, expected)


def test_prediction_power_is_capped(model, gain):
    xh = np.ones(6)
    a = predict_state(ControllerState(K=gain, dtc=PREDICTION_POWER_CAP, last_xhat=xh, last_Reta=np.zeros((6, 6))), model)
    b = predict_state(ControllerState(K=gain, dtc=PREDICTION_POWER_CAP + 40, last_xhat=xh, last_Reta=np.zeros((6, 6))), model)
    assert np.array_equal(a, b)


def test_estimation_error_map_telescopes(model, gain):
    BK = model.B @ gain
    Ac = model.A + BK
    for n in range(0, 8):
        assert np.allclose(estimation_error_map(model.A, BK, Ac, n), -np.linalg.matrix_power(model.A, n), atol=1e-10)


def test_noise_only_moments(model, gain):
    """Zero estimate and zero sensing error leave only process-noise sums."""
    c = ControllerState(K=gain, dtc=1, last_xhat=np.zeros(6), last_Reta=np.zeros((6, 6)))
    mc = predict_mode_covariances(c, model, np.zeros((6, 6)))
    A, Qw, Ac = model.A, model.Qw, model.A + model.B @ gain
    assert np.allclose(mc.Qx_cl, Qw + Ac @ Qw @ Ac.T)
    assert np.allclose(mc.Qx_ol, Qw + A @ Qw @ A.T)


def test_moments_symmetric_and_psd(model, gain, R_eta):
    c = ControllerState(K=gain, dtc=4, last_xhat=np.array([2.0, -1, 0.5, 0.2, 0.1, 0]), last_Reta=R_eta)
    mc = predict_mode_covariances(c, model, R_eta)
    for Q in (mc.Qx_cl, mc.Qx_ol):
        assert np.allclose(Q, Q.T, atol=1e-10)
        assert np.linalg.eigvalsh(Q).min() > -1e-9
    assert mc.Qdq_cl.shape == (2, 2)


def test_open_loop_trace_nondecreasing(model, gain, R_eta):
    tr = [np.trace(predict_mode_covariances(
        ControllerState(K=gain, dtc=n, last_xhat=np.zeros(6), last_Reta=R_eta), model, R_eta).Qdq_ol)
        for n in range(1, 21)]
    assert np.all(np.diff(tr) >= -1e-12)


def test_table_predictor_matches_direct(model, gain, R_eta, rng):
    pred = CovariancePredictor(model, gain, R_eta, R_eta)
    for n in (0, 1, 2, 5, 13, 70):
        xh = rng.standard_normal(6)
        mc = predict_mode_covariances(ControllerState(K=gain, dtc=n, last_xhat=xh, last_Reta=R_eta), model, R_eta)
        cl, ol = pred.qdq(n, xh)
        assert np.allclose(cl, mc.Qdq_cl, rtol=1e-9, atol=1e-9)
        assert np.allclose(ol, mc.Qdq_ol, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("dtc", [1, 2, 5])
def test_moments_match_sampled_loop(model, gain, R_eta, dtc):
    rng = np.random.default_rng(dtc)
    xh = np.array([3.0, -2.0, 0.5, 0.3, 0.1, -0.1])
    c = ControllerState(K=gain, dtc=dtc, last_xhat=xh, last_Reta=R_eta)
    mc = predict_mode_covariances(c, model, R_eta)
    x_cl, x_ol = rollout_states(model, gain, xh, R_eta, R_eta, dtc, 40000, rng)
    # 36 entries per matrix: a 4.5-sigma band keeps false alarms negligible
    assert np.abs(moment_zscores(x_cl, mc.Qx_cl)).max() < 4.5
    assert np.abs(moment_zscores(x_ol, mc.Qx_ol)).max() < 4.5
