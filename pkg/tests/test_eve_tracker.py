from dataclasses import replace

import numpy as np
import pytest

from nfsecure_utils.channel_model import PolarPosition, array_response
from nfsecure_utils.data_validation import UnobservableTargetError
from nfsecure_utils.eve_tracker import (
    EveState,
    EveTracker,
    MeasurementConstants,
    TrackBelief,
    draw_swerling_rcs,
    information_gain_matrix,
    jacobian_F,
    jacobian_G,
    measurement_fn,
    measurement_noise_cov,
    nees,
    nees_band,
    posterior_covariance,
    predict,
    sensing_snr,
    snr_coefficient,
    state_transition,
    synthesize_measurement,
    update,
)

DT = 0.2


@pytest.fixture
def consts():
    return MeasurementConstants(
        a_tau=1e-6, a_nu=600.0, a_theta=0.1, symbols=1e4, sensing_noise=1e-11, rcs=1.0,
        sigma_angle=np.deg2rad(0.02), sigma_distance=0.2, sigma_vx=0.15, sigma_vy=0.15, slot_duration=DT,
    )


@pytest.fixture
def state():
    return EveState(np.deg2rad(63.0), 3.0, 0.4, -0.3)


@pytest.fixture
def belief(state, consts):
    return TrackBelief(state, np.diag([1e-5, 0.04, 0.0225, 0.0225]))


def _central_jacobian(fn, x):
    columns = []
    for i in range(x.size):
        h = 1e-6 * max(1.0, abs(x[i]))
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        columns.append((fn(up) - fn(down)) / (2 * h))
    return np.column_stack(columns)


def _assert_relative_close(analytic, numeric, rtol=1e-5):
    # entries far below their row's scale are compared against that scale
    scale = np.maximum(np.abs(analytic), 1e-3 * np.abs(analytic).max(axis=1, keepdims=True))
    assert np.max(np.abs(analytic - numeric) / scale) <= rtol


def test_static_target_does_not_move(state):
    still = EveState(state.angle, state.distance, 0.0, 0.0)
    assert state_transition(still, DT) == still


@pytest.mark.parametrize("velocity", [(0.4, -0.3), (0.0, 0.5), (-12.0, 3.0)])
def test_transition_jacobian_matches_central_differences(state, velocity):
    moving = EveState(state.angle, state.distance, *velocity)

    def f(x):
        return state_transition(EveState.from_array(x), DT).as_array()
    _assert_relative_close(jacobian_F(moving, DT), _central_jacobian(f, moving.as_array()))


@pytest.mark.parametrize("velocity", [(0.4, -0.3), (0.0, 0.5), (-12.0, 3.0)])
def test_measurement_jacobian_matches_central_differences(state, geometry, velocity):
    moving = EveState(state.angle, state.distance, *velocity)

    def g(x):
        return measurement_fn(EveState.from_array(x), geometry.wavelength).as_array()
    numeric = _central_jacobian(g, moving.as_array())
    _assert_relative_close(jacobian_G(moving, geometry.wavelength), numeric)


def test_predict_adds_process_noise(belief, consts):
    pred = predict(belief, DT, consts.process_covariance)
    assert np.allclose(pred.covariance, pred.covariance.T)
    assert pred.trace > belief.trace
    assert np.all(np.linalg.eigvalsh(pred.covariance - consts.process_covariance) > -1e-12)


def test_information_and_gain_forms_agree(belief, consts, geometry):
    G = jacobian_G(belief.state, geometry.wavelength)
    Q_m = measurement_noise_cov(50.0, consts)
    info = posterior_covariance(belief.covariance, G, Q_m, form="information")
    gain = posterior_covariance(belief.covariance, G, Q_m, form="gain")
    assert np.allclose(info, gain, rtol=1e-6, atol=1e-12)


def test_update_never_increases_trace(belief, consts, geometry):
    pred = predict(belief, DT, consts.process_covariance)
    Q_m = measurement_noise_cov(50.0, consts)
    u = measurement_fn(pred.state, geometry.wavelength)
    post = update(pred, u, Q_m, geometry.wavelength)
    assert post.trace <= pred.trace + 1e-10
    # zero innovation leaves the mean in place
    assert np.allclose(post.state.as_array(), pred.state.as_array())


def test_more_snr_means_smaller_posterior(belief, consts, geometry):
    pred = predict(belief, DT, consts.process_covariance)
    u = measurement_fn(pred.state, geometry.wavelength)
    weak = update(pred, u, measurement_noise_cov(1.0, consts), geometry.wavelength)
    strong = update(pred, u, measurement_noise_cov(100.0, consts), geometry.wavelength)
    assert strong.trace < weak.trace


def test_unobservable_target(consts):
    with pytest.raises(UnobservableTargetError):
        measurement_noise_cov(0.0, consts)


def test_sensing_snr_of_focused_beam(consts, geometry):
    pos = PolarPosition.from_degrees(63.0, 3.0)
    a = array_response(geometry, pos)
    power = 2.0
    Z = power * np.outer(a, a.conj()) / geometry.num_antennas
    expected = power * geometry.num_antennas * snr_coefficient(geometry, pos.distance, consts)
    assert sensing_snr(Z, pos, consts, geometry) == pytest.approx(expected)


def test_information_gain_is_psd(state, consts, geometry):
    M = information_gain_matrix(state, consts, geometry)
    assert np.allclose(M, M.T)
    assert np.linalg.eigvalsh(M).min() > -1e-9 * np.abs(M).max()


def test_swerling_rcs_mean_power():
    rng = np.random.default_rng(1)
    draws = np.array([draw_swerling_rcs(2.0, rng) for _ in range(20000)])
    assert np.mean(draws ** 2) == pytest.approx(4.0, rel=0.05)


def test_synthesized_measurement_is_seeded(state, consts, geometry):
    a = array_response(geometry, state.position)
    Z = np.outer(a, a.conj()) / geometry.num_antennas
    u1, g1 = synthesize_measurement(state, Z, consts, geometry, rng=5)
    u2, g2 = synthesize_measurement(state, Z, consts, geometry, rng=5)
    assert u1 == u2 and g1 == g2 > 0


def test_nees_band_is_chi_square():
    low, high = nees_band(4, 0.95)
    assert low == pytest.approx(0.4844, abs=1e-3)
    assert high == pytest.approx(11.1433, abs=1e-3)


def test_nees_zero_at_truth(belief):
    assert nees(belief.state, belief) == pytest.approx(0.0)


def test_matched_model_nees_stays_in_band(state, consts, geometry):
    consts = replace(consts, sigma_distance=0.05, sigma_vx=0.05, sigma_vy=0.05)
    C0 = np.diag([1e-6, 0.01, 0.0025, 0.0025])
    root = np.linalg.cholesky(C0)
    process_root = np.sqrt(np.diag(consts.process_covariance))
    rng = np.random.default_rng(11)
    low, high = nees_band(4, 0.95)

    values = []
    for _ in range(100):
        truth = EveState.from_array(state.as_array() + root @ rng.standard_normal(4))
        tracker = EveTracker(TrackBelief(state, C0), consts, geometry)
        for _ in range(10):
            truth = EveState.from_array(state_transition(truth, DT).as_array()
                                        + process_root * rng.standard_normal(4))
            prior = tracker.prior()
            a = array_response(geometry, prior.state.position)
            Z = 10.0 * np.outer(a, a.conj()) / geometry.num_antennas
            u, gamma = synthesize_measurement(truth, Z, consts, geometry, rng)
            values.append(nees(truth, tracker.step(prior, u, gamma)))

    values = np.array(values)
    assert values.size == 1000
    assert np.mean((values >= low) & (values <= high)) >= 0.90


def test_tracker_skips_without_echo(belief, consts, geometry):
    tracker = EveTracker(belief, consts, geometry)
    prior = tracker.prior()
    out = tracker.step(prior, None, 0.0)
    assert out is prior and tracker.belief is prior
    assert tracker.skipped == 1 and tracker.updates == 0


def test_conventional_tracker_keeps_estimate(belief, consts, geometry):
    tracker = EveTracker(belief, consts, geometry, predictive=False)
    prior = tracker.prior()
    assert prior.state == belief.state
    assert np.allclose(prior.covariance, belief.covariance + consts.process_covariance)
