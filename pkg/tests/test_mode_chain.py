import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from npcbound.mode_chain import NoRecoveryError, phase_weights, stationary, transition_matrix


def test_first_row():
    assert transition_matrix(0.5)[0].tolist() == [0.5, 0.5, 0.0, 0.0, 0.0]


@given(st.floats(0.0, 1.0))
def test_rows_sum_to_one(p_d):
    assert np.all(np.abs(transition_matrix(p_d).sum(axis=1) - 1.0) <= 1e-15)


def test_no_loss_absorbs_in_nominal():
    w = stationary(0.0)
    assert w.pi.tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]
    assert w.rho.tolist() == [1.0, 0.0, 0.0]


def test_half():
    w = stationary(0.5)
    assert w.pi == pytest.approx([0.125, 0.25, 0.25, 0.25, 0.125], abs=1e-15)
    assert w.rho == pytest.approx([0.125, 0.5, 0.375], abs=1e-15)


@given(st.floats(0.0, 0.99))
def test_fixed_point_and_normalization(p_d):
    w = stationary(p_d)
    assert np.max(np.abs(w.pi @ transition_matrix(p_d) - w.pi)) <= 1e-12
    assert abs(w.pi.sum() - 1.0) <= 1e-12 and abs(w.rho.sum() - 1.0) <= 1e-12
    assert np.all((w.pi >= 0) & (w.pi <= 1))


def test_matches_eigenvector():
    for p_d in np.linspace(0.01, 0.99, 25):
        assert np.max(np.abs(stationary(p_d).pi - oracles.stationary_eig(transition_matrix(p_d)))) < 1e-10


def test_phase_weights_shape():
    grid = np.linspace(0.01, 0.99, 60)
    rho = np.array([stationary(p).rho for p in grid])
    assert np.all(np.diff(rho[:, 0]) < 0)
    assert np.all(np.diff(rho[:, 1]) > 0)
    # rho3 = p(2 - p)/(2p + 1) peaks where p^2 + p = 1
    peak = (np.sqrt(5.0) - 1.0) / 2.0
    rising, falling = grid < peak, grid > peak
    assert np.all(np.diff(rho[rising, 2]) > 0)
    assert np.all(np.diff(rho[falling, 2]) < 0)
    assert stationary(peak).rho[2] == pytest.approx(peak * (2 - peak) / (2 * peak + 1))


def test_phase_weights_collapse():
    assert phase_weights([0.1, 0.2, 0.3, 0.25, 0.15]).tolist() == pytest.approx([0.1, 0.5, 0.4])


def test_rejects_total_loss():
    with pytest.raises(NoRecoveryError):
        stationary(1.0)
    with pytest.raises(ValueError):
        transition_matrix(1.5)
