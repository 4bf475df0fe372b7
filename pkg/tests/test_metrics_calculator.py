import numpy as np
import pytest

from nfsecure_utils.benders_decomposition import Design
from nfsecure_utils.channel_model import DesignPoint, array_response
from nfsecure_utils.data_validation import DataValidationError
from nfsecure_utils.episode_simulator import SlotRecord
from nfsecure_utils.eve_tracker import EveState, wrap_angle
from nfsecure_utils.metrics_calculator import EpisodeMetricsCalculator, metrics
from nfsecure_utils.uncertainty_region import UncertaintyBox


def _record(slot, power, served, true_distance, estimated_distance, trace, true_angle=None, estimated_angle=None):
    truth = EveState(np.deg2rad(90.0) if true_angle is None else true_angle, true_distance, 0.0, 0.0)
    estimate = EveState(np.deg2rad(90.0) if estimated_angle is None else estimated_angle, estimated_distance, 0.0, 0.0)
    schedule = np.array([1] * served + [0] * (2 - served))
    return SlotRecord(
        slot=slot, policy="gbd", status="optimal", schedule=schedule, transmit_power_w=power,
        predicted_state=estimate, true_state=truth, estimated_state=estimate,
        predicted_trace=2 * trace, planned_trace=trace, posterior_trace=trace,
        rates=np.zeros(2), leakages=np.zeros(2), echo_snr=10.0, nees=1.0, wall_time_s=0.0,
    )


def test_empty_records_rejected():
    with pytest.raises(DataValidationError):
        metrics([])


def test_time_averages_and_errors():
    records = [
        _record(1, 2.0, 1, 5.0, 5.1, 0.2),
        _record(2, 4.0, 2, 5.0, 4.9, 0.1),
    ]
    summary = metrics(records)
    assert summary['slots'] == 2
    assert summary['average_power_w'] == pytest.approx(3.0)
    assert summary['mean_served'] == pytest.approx(1.5)
    assert summary['mean_posterior_trace'] == pytest.approx(0.15)
    assert summary['posterior_trace'] == [0.2, 0.1]
    assert summary['distance_rmse_m'] == pytest.approx(0.1)
    assert summary['angle_rmse_deg'] == pytest.approx(0.0)
    assert summary['tracking_mse_m2'] == pytest.approx(0.01)
    assert summary['feasible_slots'] == 2
    assert summary['rate_shortfall_slots'] == 0
    assert np.isnan(summary['leakage_violation_rate'])


def test_angle_errors_are_wrapped():
    # same bearing one turn apart, then an estimate just past the array axis
    records = [
        _record(1, 1.0, 1, 5.0, 5.0, 0.1, true_angle=0.01, estimated_angle=0.01 + 2 * np.pi),
        _record(2, 1.0, 1, 5.0, 5.0, 0.1, true_angle=0.01, estimated_angle=-0.01),
    ]
    summary = metrics(records)
    assert summary['angle_rmse_deg'] == pytest.approx(np.rad2deg(np.sqrt(0.02 ** 2 / 2)))
    assert summary['tracking_mse_m2'] == pytest.approx((2 * 5.0 * np.sin(0.01)) ** 2 / 2)


def test_wrap_angle_range():
    wrapped = wrap_angle(np.array([-np.pi, np.pi, 3 * np.pi / 2, -3 * np.pi / 2, 0.3]))
    assert np.allclose(wrapped, [np.pi, np.pi, -np.pi / 2, np.pi / 2, 0.3])
    assert isinstance(wrap_angle(4.0), float)


def _focused_point(geometry, box, power):
    a = array_response(geometry, box.center)
    W = power * np.outer(a, a.conj()) / geometry.num_antennas
    return DesignPoint([W], np.zeros_like(W), [1])


def test_leakage_check_extremes(geometry):
    box = UncertaintyBox(np.deg2rad(80.0), 4.0, np.deg2rad(0.01), 0.02)
    calculator = EpisodeMetricsCalculator(leakage_samples=500)
    loud = calculator.leakage_check(_focused_point(geometry, box, 1.0), geometry, box, 1e-12, [0.05])
    assert loud['violation_rate'] == 1.0
    quiet = calculator.leakage_check(_focused_point(geometry, box, 1e-30), geometry, box, 1e-12, [0.05])
    assert quiet['violation_rate'] == 0.0
    assert quiet['worst_leakage'] < loud['worst_leakage']


def test_leakage_check_needs_samples(geometry):
    box = UncertaintyBox(1.0, 4.0, 1e-4, 0.01)
    with pytest.raises(DataValidationError):
        EpisodeMetricsCalculator().leakage_check(_focused_point(geometry, box, 1.0), geometry, box, 1e-12, [0.05],
                                                 samples=0)


def test_verify_rejects_infeasible_design(instance, geometry):
    box = UncertaintyBox(1.0, 4.0, 1e-4, 0.01)
    with pytest.raises(DataValidationError):
        EpisodeMetricsCalculator().verify_design(Design.infeasible("gbd", 2), instance, geometry, box)
