"""
Closed-loop episodes: predict the eavesdropper, design the slot, move the
true eavesdropper, synthesize the radar echo and update the track.
"""

import logging
import time
import numpy as np
import pandas as pd
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .benders_decomposition import Design, SoopInstance, design_for_schedule, gbd_solve
from .channel_model import (
    ArrayGeometry,
    DesignPoint,
    PolarPosition,
    achievable_rate,
    channel_correlation,
    channel_vector,
    leakage_rate,
    rayleigh_distance,
)
from .conic_solver import ConicSolver
from .data_validation import (
    DataValidationError,
    DegenerateGeometryError,
    NumericalFailureError,
    ScenarioValidator,
    UnobservableTargetError,
)
from .eve_tracker import (
    EveState,
    EveTracker,
    Measurement,
    MeasurementConstants,
    TrackBelief,
    measurement_fn,
    nees,
    predict,
    sensing_snr,
    state_transition,
    draw_swerling_rcs,
    synthesize_measurement,
)
from .metrics_calculator import metrics
from .zf_sca_design import zfsca_solve

logger = logging.getLogger(__name__)

POLICIES = ("gbd", "zfsca", "correlation_baseline", "conventional")
SUBSTREAMS = ("truth", "measurement", "rcs")


@dataclass(frozen=True)
class Scenario:
    """Static users, one moving eavesdropper and the radar/tracking constants"""
    geometry: ArrayGeometry
    user_positions: Tuple[PolarPosition, ...]
    eve_truth: EveState
    initial_belief: TrackBelief
    consts: MeasurementConstants
    noise_powers: np.ndarray
    eve_noise: float
    p_max: float
    rate_info: np.ndarray
    rate_leak: np.ndarray
    num_slots: int = 20
    seed: int = 0
    waypoints: Tuple[Tuple[int, float, float], ...] = ()
    far_field: bool = False
    safety_factor: float = 1.0
    measurement_noise: bool = True

    def __post_init__(self):
        validator = ScenarioValidator()
        positions = tuple(self.user_positions)
        if len(positions) < 1:
            raise DataValidationError("a scenario needs at least one user")
        object.__setattr__(self, "user_positions", positions)
        K = len(positions)
        for name in ("noise_powers", "rate_info", "rate_leak"):
            values = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (K,)).copy()
            object.__setattr__(self, name, values)
        validator.validate_positive(self.eve_noise, "eve_noise")
        validator.validate_positive(self.p_max, "p_max")
        if int(self.num_slots) != self.num_slots or self.num_slots < 1:
            raise DataValidationError(f"num_slots must be a positive integer, got {self.num_slots}")
        object.__setattr__(self, "waypoints", tuple(sorted(tuple(w) for w in self.waypoints)))

        boundary = self.rayleigh_distance
        for k, pos in enumerate(positions):
            if pos.distance > boundary:
                logger.warning(f"User {k} at {pos.distance:.1f} m is beyond the Rayleigh distance {boundary:.1f} m")

    @property
    def num_users(self) -> int:
        return len(self.user_positions)

    @property
    def rayleigh_distance(self) -> float:
        return rayleigh_distance(self.geometry.aperture, self.geometry.wavelength)

    def user_channels(self) -> np.ndarray:
        return np.array([channel_vector(self.geometry, pos).entries for pos in self.user_positions])

    def with_speed(self, speed: float) -> "Scenario":
        """Same heading (x-axis when static), new speed for the truth and the initial belief"""
        velocity = np.array([self.eve_truth.vx, self.eve_truth.vy])
        norm = float(np.linalg.norm(velocity))
        heading = velocity / norm if norm > 0 else np.array([1.0, 0.0])
        vx, vy = speed * heading
        belief_state = replace(self.initial_belief.state, vx=float(vx), vy=float(vy))
        return replace(self,
                       eve_truth=replace(self.eve_truth, vx=float(vx), vy=float(vy)),
                       initial_belief=replace(self.initial_belief, state=belief_state),
                       waypoints=())

    def with_users(self, count: int) -> "Scenario":
        """Keep the first count users"""
        if not 1 <= count <= self.num_users:
            raise DataValidationError(f"cannot keep {count} of {self.num_users} users")
        return replace(self,
                       user_positions=self.user_positions[:count],
                       noise_powers=self.noise_powers[:count],
                       rate_info=self.rate_info[:count],
                       rate_leak=self.rate_leak[:count])

    def random_streams(self, seed: Optional[int] = None) -> Dict[str, np.random.Generator]:
        """Independent generators for the truth, measurement and RCS draws"""
        seed = self.seed if seed is None else seed
        return {name: np.random.default_rng([seed, i]) for i, name in enumerate(SUBSTREAMS)}


@dataclass
class SlotRecord:
    """Everything observed and decided in one slot"""
    slot: int
    policy: str
    status: str
    schedule: np.ndarray
    transmit_power_w: float
    predicted_state: EveState
    true_state: EveState
    estimated_state: EveState
    predicted_trace: float
    planned_trace: float
    posterior_trace: float
    rates: np.ndarray
    leakages: np.ndarray
    echo_snr: float
    nees: float
    wall_time_s: float
    design: Optional[Design] = field(default=None, repr=False)
    instance: Optional[SoopInstance] = field(default=None, repr=False)
    belief: Optional[TrackBelief] = field(default=None, repr=False)

    @property
    def served(self) -> int:
        return int(np.sum(self.schedule))

    def to_row(self) -> Dict:
        return {
            'slot': self.slot,
            'policy': self.policy,
            'status': self.status,
            'schedule': "".join(str(int(b)) for b in self.schedule),
            'served': self.served,
            'transmit_power_w': self.transmit_power_w,
            'predicted_angle_deg': np.rad2deg(self.predicted_state.angle),
            'predicted_distance_m': self.predicted_state.distance,
            'true_angle_deg': np.rad2deg(self.true_state.angle),
            'true_distance_m': self.true_state.distance,
            'estimated_angle_deg': np.rad2deg(self.estimated_state.angle),
            'estimated_distance_m': self.estimated_state.distance,
            'predicted_trace': self.predicted_trace,
            'planned_trace': self.planned_trace,
            'posterior_trace': self.posterior_trace,
            'min_rate_margin': _min_margin(self.rates - self.design_rate_targets(), self.schedule),
            'max_leakage': float(np.max(self.leakages)) if self.leakages.size else 0.0,
            'echo_snr': self.echo_snr,
            'nees': self.nees,
        }

    def design_rate_targets(self) -> np.ndarray:
        if self.instance is None:
            return np.zeros_like(self.rates)
        return self.instance.rate_info


RECORD_COLUMNS = [
    'slot', 'policy', 'status', 'schedule', 'served', 'transmit_power_w',
    'predicted_angle_deg', 'predicted_distance_m', 'true_angle_deg', 'true_distance_m',
    'estimated_angle_deg', 'estimated_distance_m', 'predicted_trace', 'planned_trace',
    'posterior_trace', 'min_rate_margin', 'max_leakage', 'echo_snr', 'nees',
]


def _min_margin(margins: np.ndarray, schedule: np.ndarray) -> float:
    served = np.flatnonzero(schedule)
    return float(np.min(margins[served])) if served.size else float("nan")


def records_frame(records: Sequence[SlotRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in records], columns=RECORD_COLUMNS)


def build_slot_instance(scenario: Scenario, belief: TrackBelief, gamma1: int, gamma2: float) -> SoopInstance:
    """SOOP instance around a (predicted or previous) eavesdropper belief"""
    return SoopInstance.assemble(
        scenario.geometry,
        scenario.user_positions,
        belief,
        scenario.consts,
        noise_powers=scenario.noise_powers,
        eve_noise=scenario.eve_noise,
        p_max=scenario.p_max,
        rate_info=scenario.rate_info,
        rate_leak=scenario.rate_leak,
        gamma1=gamma1,
        gamma2=gamma2,
        safety_factor=scenario.safety_factor,
        far_field=scenario.far_field,
    )


def frozen_slot_instance(scenario: Scenario, gamma1: int, gamma2: float) -> SoopInstance:
    """Instance of the first slot, used for Pareto grids and threshold sweeps"""
    prior = predict(scenario.initial_belief, scenario.consts.slot_duration, scenario.consts.process_covariance)
    return build_slot_instance(scenario, prior, gamma1, gamma2)


def correlation_schedule(channels: np.ndarray, eve_channel: np.ndarray, gamma1: int) -> np.ndarray:
    """Serve the gamma1 users least correlated with the predicted eavesdropper channel"""
    channels = np.atleast_2d(channels)
    K = channels.shape[0]
    gamma1 = ScenarioValidator().validate_gamma1(gamma1, K)
    correlation = np.array([channel_correlation(h, eve_channel) for h in channels])
    e = np.zeros(K, dtype=int)
    e[np.argsort(correlation, kind="stable")[:gamma1]] = 1
    return e


def correlation_design(instance: SoopInstance, solver: Optional[ConicSolver] = None) -> Design:
    e = correlation_schedule(instance.channels, instance.eve_channel, instance.gamma1)
    return design_for_schedule(instance, e, solver, method="correlation_baseline")


def conventional_policy(scenario: Scenario, previous: TrackBelief, gamma1: int, gamma2: float,
                        solver: Optional[ConicSolver] = None, epsilon: float = 1e-4) -> Design:
    """Design around last slot's estimate and posterior covariance, without prediction"""
    instance = build_slot_instance(scenario, previous, gamma1, gamma2)
    design, _ = gbd_solve(instance, epsilon, solver)
    design.method = "conventional"
    return design


def solve_slot(policy: str, instance: SoopInstance, solver: Optional[ConicSolver] = None,
               epsilon: float = 1e-4) -> Design:
    if policy in ("gbd", "conventional"):
        design, _ = gbd_solve(instance, epsilon, solver)
        design.method = policy
        return design
    if policy == "zfsca":
        design, _ = zfsca_solve(instance, epsilon=epsilon, solver=solver)
        return design
    if policy == "correlation_baseline":
        return correlation_design(instance, solver)
    raise DataValidationError(f"unknown policy '{policy}', expected one of {POLICIES}")


def fallback_sensing(previous_Z: Optional[np.ndarray], instance: SoopInstance) -> np.ndarray:
    """Previous sensing covariance rescaled to P_max, else a focused beam at full power"""
    if previous_Z is not None and np.real(np.trace(previous_Z)) > 0:
        return previous_Z * instance.p_max / float(np.real(np.trace(previous_Z)))
    a = instance.eve_response
    return instance.p_max * np.outer(a, a.conj()) / instance.num_antennas


def _advance_truth(truth: EveState, consts: MeasurementConstants, rng: np.random.Generator) -> EveState:
    moved = state_transition(truth, consts.slot_duration).as_array()
    moved = moved + rng.standard_normal(4) * np.sqrt(np.diag(consts.process_covariance))
    return EveState.from_array(moved)


def _observe(scenario: Scenario, truth: EveState, Z: np.ndarray, streams: Dict[str, np.random.Generator]
             ) -> Tuple[Optional[Measurement], float]:
    rcs = draw_swerling_rcs(scenario.consts.rcs, streams["rcs"])
    try:
        if scenario.measurement_noise:
            return synthesize_measurement(truth, Z, scenario.consts, scenario.geometry, streams["measurement"], rcs)
        gamma = sensing_snr(Z, truth.position, scenario.consts, scenario.geometry, rcs)
        if gamma <= 0:
            raise UnobservableTargetError("no echo energy on target")
        return measurement_fn(truth, scenario.geometry.wavelength), gamma
    except UnobservableTargetError as err:
        logger.warning(f"No measurement this slot: {err}")
        return None, 0.0


def run_episode(scenario: Scenario, policy: str, gamma1: int, gamma2: float,
                solver: Optional[ConicSolver] = None, epsilon: float = 1e-4,
                seed: Optional[int] = None) -> List[SlotRecord]:
    """Simulate scenario.num_slots slots under one scheduling/beamforming policy"""
    if policy not in POLICIES:
        raise DataValidationError(f"unknown policy '{policy}', expected one of {POLICIES}")
    solver = solver or ConicSolver()
    streams = scenario.random_streams(seed)
    waypoints = {int(w[0]): (float(w[1]), float(w[2])) for w in scenario.waypoints}
    tracker = EveTracker(scenario.initial_belief, scenario.consts, scenario.geometry,
                         predictive=(policy != "conventional"))
    user_channels = scenario.user_channels()
    truth = scenario.eve_truth
    previous_Z: Optional[np.ndarray] = None
    records: List[SlotRecord] = []

    for slot in range(1, scenario.num_slots + 1):
        prior = tracker.prior()
        design_belief = prior if tracker.predictive else tracker.belief
        instance = build_slot_instance(scenario, design_belief, gamma1, gamma2)

        start = time.perf_counter()
        try:
            design = solve_slot(policy, instance, solver, epsilon)
        except DegenerateGeometryError as err:
            logger.warning(f"Slot {slot}: {err}")
            design = Design.infeasible(policy, scenario.num_users, reason="degenerate geometry")
        elapsed = time.perf_counter() - start

        if design.feasible:
            point = design.point()
            Z = point.sensing_covariance
            previous_Z = Z
        else:
            Z = fallback_sensing(previous_Z, instance)
            zeros = [np.zeros_like(Z) for _ in range(scenario.num_users)]
            point = DesignPoint(zeros, Z, np.zeros(scenario.num_users, dtype=int))
            logger.info(f"Slot {slot}: design infeasible, sensing-only fallback at P_max")

        if slot in waypoints:
            vx, vy = waypoints[slot]
            truth = replace(truth, vx=vx, vy=vy)
        truth = _advance_truth(truth, scenario.consts, streams["truth"])

        measurement, gamma = _observe(scenario, truth, Z, streams)
        try:
            posterior = tracker.step(prior, measurement, gamma)
        except NumericalFailureError as err:
            logger.warning(f"Slot {slot}: update skipped, {err}")
            tracker.belief = prior
            posterior = prior

        eve_channel = channel_vector(scenario.geometry, truth.position).entries
        rates = np.array([achievable_rate(k, point, user_channels, scenario.noise_powers[k])
                          for k in range(scenario.num_users)])
        leakages = np.array([leakage_rate(k, point, eve_channel, scenario.eve_noise)
                             for k in range(scenario.num_users)])

        records.append(SlotRecord(
            slot=slot,
            policy=policy,
            status=design.status,
            schedule=point.schedule.copy(),
            transmit_power_w=point.transmit_power(),
            predicted_state=design_belief.state,
            true_state=truth,
            estimated_state=posterior.state,
            predicted_trace=design_belief.trace,
            planned_trace=instance.planned_trace(Z),
            posterior_trace=posterior.trace,
            rates=rates,
            leakages=leakages,
            echo_snr=gamma,
            nees=nees(truth, posterior),
            wall_time_s=elapsed,
            design=design,
            instance=instance,
            belief=design_belief,
        ))
        logger.info(f"Slot {slot}/{scenario.num_slots} [{policy}]: status={design.status} "
                    f"served={point.schedule.sum()} power={point.transmit_power():.4g} W "
                    f"Tr(C)={posterior.trace:.3e}")
    return records


def speed_study(scenario: Scenario, speeds: Sequence[float], policies: Sequence[str] = ("gbd", "conventional"),
                gamma1: int = 1, gamma2: float = 1.0, repetitions: int = 1, solver: Optional[ConicSolver] = None,
                max_workers: int = 1) -> pd.DataFrame:
    """Tracking accuracy versus eavesdropper speed for each policy"""
    jobs = [(speed, policy, rep) for speed in speeds for policy in policies for rep in range(repetitions)]

    def run(job):
        speed, policy, rep = job
        records = run_episode(scenario.with_speed(speed), policy, gamma1, gamma2, solver, seed=scenario.seed + rep)
        summary = metrics(records, scenario, leakage_samples=0)
        return {
            'speed_mps': speed,
            'policy': policy,
            'repetition': rep,
            'mean_posterior_trace': summary['mean_posterior_trace'],
            'tracking_mse_m2': summary['tracking_mse_m2'],
            'angle_rmse_deg': summary['angle_rmse_deg'],
            'distance_rmse_m': summary['distance_rmse_m'],
            'average_power_w': summary['average_power_w'],
            'mean_served': summary['mean_served'],
        }

    rows: Dict[int, Dict] = {}
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            future_to_index = {executor.submit(run, job): i for i, job in enumerate(jobs)}
            for future in as_completed(future_to_index):
                rows[future_to_index[future]] = future.result()
    else:
        for i, job in enumerate(jobs):
            rows[i] = run(job)
            logger.info(f"Speed study: {job[0]} m/s, {job[1]}, repetition {job[2]} done")

    return pd.DataFrame([rows[i] for i in range(len(jobs))],
                        columns=['speed_mps', 'policy', 'repetition', 'mean_posterior_trace', 'tracking_mse_m2',
                                 'angle_rmse_deg', 'distance_rmse_m', 'average_power_w', 'mean_served'])
