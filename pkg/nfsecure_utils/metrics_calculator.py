# Episode Metrics Calculator
import logging
import numpy as np
from typing import Any, Dict, Optional, Sequence

from .channel_model import ArrayGeometry, DesignPoint, achievable_rate, array_responses
from .data_validation import DataValidationError
from .eve_tracker import wrap_angle
from .uncertainty_region import UncertaintyBox

logger = logging.getLogger(__name__)


def _cartesian(state) -> np.ndarray:
    return state.distance * np.array([np.cos(state.angle), np.sin(state.angle)])


class EpisodeMetricsCalculator:
    """Summaries of slot records and sampled robustness checks of single designs"""

    def __init__(self, leakage_samples: int = 10_000, leakage_tolerance: float = 0.01, seed: int = 0):
        self.leakage_samples = leakage_samples
        self.leakage_tolerance = leakage_tolerance
        self.seed = seed

    def calculate(self, records: Sequence[Any], geometry: Optional[ArrayGeometry] = None,
                  eve_noise: Optional[float] = None) -> Dict[str, Any]:
        """Time averages, tracking errors and the empirical leakage violation rate"""
        if not records:
            raise DataValidationError("cannot summarize an empty list of slot records")

        powers = np.array([r.transmit_power_w for r in records])
        served = np.array([r.served for r in records])
        feasible = np.array([r.design is None or r.design.feasible for r in records])

        summary: Dict[str, Any] = {
            'slots': len(records),
            'average_power_w': float(np.mean(powers)),
            'mean_served': float(np.mean(served)),
            'feasible_slots': int(np.sum(feasible)),
            'infeasible_slots': int(np.sum(~feasible)),
            'posterior_trace': [float(r.posterior_trace) for r in records],
            'mean_posterior_trace': float(np.mean([r.posterior_trace for r in records])),
            'mean_planned_trace': float(np.mean([r.planned_trace for r in records])),
        }
        summary.update(self._tracking_errors(records))
        summary['rate_shortfall_slots'] = self._rate_shortfalls(records)

        if self.leakage_samples > 0 and geometry is not None and eve_noise is not None:
            summary['leakage_violation_rate'] = self._episode_violation_rate(records, geometry, eve_noise)
        else:
            summary['leakage_violation_rate'] = float("nan")
        return summary

    def _tracking_errors(self, records: Sequence[Any]) -> Dict[str, float]:
        angle_err = wrap_angle([r.estimated_state.angle - r.true_state.angle for r in records])
        dist_err = np.array([r.estimated_state.distance - r.true_state.distance for r in records])
        # EKF means may leave (0, pi), so no PolarPosition here
        est = np.array([_cartesian(r.estimated_state) for r in records])
        true = np.array([_cartesian(r.true_state) for r in records])
        return {
            'angle_rmse_deg': float(np.rad2deg(np.sqrt(np.mean(angle_err ** 2)))),
            'distance_rmse_m': float(np.sqrt(np.mean(dist_err ** 2))),
            'tracking_mse_m2': float(np.mean(np.sum((est - true) ** 2, axis=1))),
        }

    def _rate_shortfalls(self, records: Sequence[Any]) -> int:
        count = 0
        for r in records:
            if r.instance is None:
                continue
            served = np.flatnonzero(r.schedule)
            if np.any(r.rates[served] < r.instance.rate_info[served] - 1e-6):
                count += 1
        return count

    def _episode_violation_rate(self, records: Sequence[Any], geometry: ArrayGeometry, eve_noise: float) -> float:
        rng = np.random.default_rng(self.seed)
        rates = []
        for r in records:
            if r.design is None or not r.design.feasible or r.belief is None or r.served == 0:
                continue
            box = UncertaintyBox.from_belief(r.belief)
            check = self.leakage_check(r.design.point(), geometry, box, eve_noise, r.instance.rate_leak, rng)
            rates.append(check['violation_rate'])
        return float(np.mean(rates)) if rates else 0.0

    def leakage_check(self, point: DesignPoint, geometry: ArrayGeometry, box: UncertaintyBox, eve_noise: float,
                      rate_leak: np.ndarray, rng: Optional[np.random.Generator] = None,
                      samples: Optional[int] = None) -> Dict[str, float]:
        """Sample eavesdropper positions in the box and count leakage-threshold violations"""
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        samples = self.leakage_samples if samples is None else samples
        if samples <= 0:
            raise DataValidationError("leakage check needs a positive sample count")
        draws = box.sample(samples, rng)
        angles = box.center_angle + draws[:, 0]
        distances = box.center_distance + draws[:, 1]
        H = np.sqrt(geometry.alpha) / distances[:, None] * array_responses(geometry, angles, distances)

        def quad(M):
            return np.real(np.einsum('sn,nm,sm->s', H.conj(), M, H))

        jamming = quad(point.sensing_covariance) + eve_noise
        violated = np.zeros(samples, dtype=bool)
        worst = 0.0
        rate_leak = np.broadcast_to(np.asarray(rate_leak, dtype=float), (point.num_users,))
        for k in np.flatnonzero(point.schedule):
            leak = np.log2(1.0 + quad(point.covariances[k]) / jamming)
            worst = max(worst, float(np.max(leak)))
            violated |= leak > rate_leak[k] + self.leakage_tolerance
        return {'violation_rate': float(np.mean(violated)), 'worst_leakage': worst}

    def verify_design(self, design: Any, instance: Any, geometry: ArrayGeometry, box: UncertaintyBox,
                      channels: Optional[np.ndarray] = None) -> Dict[str, Any]:
        """Recompute rates, sampled worst-case leakage and the planned Tr(C) of a design"""
        if not design.feasible:
            raise DataValidationError("cannot verify an infeasible design")
        point = design.point()
        channels = instance.channels if channels is None else channels
        rates = np.array([achievable_rate(k, point, channels, instance.noise_powers[k])
                          for k in range(instance.num_users)])
        served = np.flatnonzero(point.schedule)
        check = self.leakage_check(point, geometry, box, instance.eve_noise, instance.rate_leak)
        planned = instance.planned_trace(point.sensing_covariance)
        return {
            'rates': rates,
            'rate_ok': bool(np.all(rates[served] >= instance.rate_info[served] - 1e-6)),
            'worst_leakage': check['worst_leakage'],
            'leakage_violation_rate': check['violation_rate'],
            'planned_trace': planned,
            'tracking_ok': bool(planned <= instance.gamma2 * (1 + 1e-6)),
            'served': int(served.size),
            'transmit_power_w': point.transmit_power(),
        }


# Convenience functions
def metrics(records: Sequence[Any], scenario: Any = None, leakage_samples: int = 10_000,
            leakage_tolerance: float = 0.01, seed: int = 0) -> Dict[str, Any]:
    """Summarize an episode; the leakage check needs the scenario's geometry and noise"""
    calculator = EpisodeMetricsCalculator(leakage_samples, leakage_tolerance, seed)
    if scenario is None:
        return calculator.calculate(records)
    return calculator.calculate(records, scenario.geometry, scenario.eve_noise)


def verify_design(design: Any, instance: Any, geometry: ArrayGeometry, box: UncertaintyBox,
                  samples: int = 10_000, tolerance: float = 0.01, seed: int = 0,
                  channels: Optional[np.ndarray] = None) -> Dict[str, Any]:
    return EpisodeMetricsCalculator(samples, tolerance, seed).verify_design(design, instance, geometry, box, channels)
