import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uav_scc.control import Mode
from uav_scc.errors import InvalidParameterError
from uav_scc.positioning import (SensingEventTable, UeGeometry, expected_mse, expected_uncertainty_diag,
                                 ils_estimate, ils_estimate_batch, mse_for_event, ue_jacobian)

from oracles import empirical_ue_mse

HPS = np.array([[1000.0, 0.0], [-500.0, 866.0], [-500.0, -866.0]])


def test_jacobian_rows_are_slant_unit_vectors():
    H, P, S = ue_jacobian([100.0, 50.0], HPS, 50.0)
    slant = np.sqrt(np.sum((np.array([100.0, 50.0]) - HPS) ** 2, axis=1) + 50.0**2)
    assert np.allclose(H, (np.array([100.0, 50.0]) - HPS) / slant[:, None])
    assert np.allclose(P, np.linalg.inv(H.T @ H))
    assert np.allclose(S @ H, np.eye(2))


def test_noise_free_ils_recovers_position():
    p = np.array([123.0, -321.0])
    r = UeGeometry.at(p, HPS, 50.0).ranges()
    est, n_iter = ils_estimate(r, HPS, 50.0, full_output=True)
    assert np.allclose(est, p, atol=1e-5)
    assert n_iter < 20


def test_batch_matches_scalar(rng):
    ps = rng.uniform(-400, 400, size=(20, 2))
    meas = np.stack([UeGeometry.at(p, HPS, 50.0).ranges() for p in ps]) + rng.standard_normal((20, 3))
    hps = np.broadcast_to(HPS, (20, 3, 2))
    batch = ils_estimate_batch(meas, hps, 50.0, np.broadcast_to(HPS.mean(axis=0), (20, 2)))
    single = np.stack([ils_estimate(m, HPS, 50.0) for m in meas])
    assert np.allclose(batch, single, atol=1e-5)


def test_needs_three_anchors():
    with pytest.raises(InvalidParameterError):
        UeGeometry.at([0, 0], HPS[:2], 50.0)


def test_mse_with_exact_anchors_is_measurement_floor():
    g = UeGeometry.at([10.0, 20.0], HPS, 50.0)
    assert mse_for_event(g, np.zeros((3, 2, 2)), 1.0) == pytest.approx(np.trace(g.P_mat))


def test_mse_adds_weighted_projections():
    g = UeGeometry.at([10.0, 20.0], HPS, 50.0)
    Q = np.stack([np.diag([4.0, 1.0]), np.eye(2) * 2.0, np.diag([0.5, 3.0])])
    proj = np.einsum("ni,nij,nj->n", g.H, Q, g.H)
    assert mse_for_event(g, Q, 1.0) == pytest.approx(np.trace(g.P_mat) + g.weights @ proj)


def test_mse_matches_ils_trials(rng):
    g = UeGeometry.at([150.0, -80.0], HPS, 50.0)
    Q = np.stack([np.diag([3.0, 1.0]), np.diag([1.0, 2.0]), np.array([[2.0, 0.5], [0.5, 1.0]])])
    emp = empirical_ue_mse(g, Q, 1.0, 20000, rng)
    assert emp == pytest.approx(mse_for_event(g, Q, 1.0), rel=0.06)


def test_event_table_probabilities_sum_to_one():
    t = SensingEventTable.from_cl_probabilities([0.9, 0.3, 0.5])
    assert len(t.events) == 8
    assert t.probabilities.sum() == pytest.approx(1.0)
    assert t.events[0] == (Mode.CL, Mode.CL, Mode.CL)
    assert t.probabilities[0] == pytest.approx(0.9 * 0.3 * 0.5)
    with pytest.raises(InvalidParameterError):
        SensingEventTable.from_cl_probabilities([1.2, 0, 0])


@settings(max_examples=40, deadline=None)
@given(p=st.lists(st.floats(0, 1), min_size=3, max_size=3), seed=st.integers(0, 10_000))
def test_event_expectation_is_linear_in_modes(p, seed):
    """Enumerating all events equals the per-UAV mixture of CL/OL projections."""
    rng = np.random.default_rng(seed)
    g = UeGeometry.at(rng.uniform(-300, 300, 2), HPS, 50.0)
    mk = lambda s: np.stack([(lambda M: s * M @ M.T)(rng.standard_normal((2, 2))) for _ in range(3)])
    qcl, qol = mk(1.0), mk(10.0)
    br = expected_mse(g, p, qcl, qol, 1.0)
    d = expected_uncertainty_diag(g, p, qcl, qol)
    assert br.total == pytest.approx(br.base + g.weights @ d, rel=1e-9, abs=1e-9)
    assert br.uncertainty >= -1e-12
