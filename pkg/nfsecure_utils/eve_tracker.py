import logging
import numpy as np
from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

from scipy import linalg, stats

from .channel_model import SPEED_OF_LIGHT, ArrayGeometry, PolarPosition, array_response
from .data_validation import (
    DataValidationError,
    NumericalFailureError,
    ScenarioValidator,
    UnobservableTargetError,
)

logger = logging.getLogger(__name__)

RandomSource = Union[int, np.random.Generator, None]


@dataclass(frozen=True)
class EveState:
    """Eavesdropper kinematic state s = [theta, d, vx, vy]"""
    angle: float
    distance: float
    vx: float = 0.0
    vy: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.angle, self.distance, self.vx, self.vy], dtype=float)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "EveState":
        values = np.asarray(values, dtype=float)
        return cls(float(values[0]), float(values[1]), float(values[2]), float(values[3]))

    @property
    def position(self) -> PolarPosition:
        return PolarPosition(self.angle, self.distance)

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vx, self.vy))


@dataclass(frozen=True)
class TrackBelief:
    """Mean state and 4x4 error covariance"""
    state: EveState
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (4, 4):
            raise DataValidationError(f"track covariance must be 4x4, got {cov.shape}")
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))

    @property
    def sigma_angle(self) -> float:
        return float(np.sqrt(max(self.covariance[0, 0], 0.0)))

    @property
    def sigma_distance(self) -> float:
        return float(np.sqrt(max(self.covariance[1, 1], 0.0)))


@dataclass(frozen=True)
class MeasurementConstants:
    """Radar measurement and motion-model constants"""
    a_tau: float
    a_nu: float
    a_theta: float
    symbols: float
    sensing_noise: float
    rcs: float
    sigma_angle: float
    sigma_distance: float
    sigma_vx: float
    sigma_vy: float
    slot_duration: float

    def __post_init__(self):
        validator = ScenarioValidator()
        for name in ("a_tau", "a_nu", "a_theta", "symbols", "sensing_noise", "rcs", "slot_duration"):
            validator.validate_positive(getattr(self, name), name)
        for name in ("sigma_angle", "sigma_distance", "sigma_vx", "sigma_vy"):
            validator.validate_positive(getattr(self, name), name, allow_zero=True)

    @property
    def process_covariance(self) -> np.ndarray:
        return np.diag([self.sigma_angle ** 2, self.sigma_distance ** 2, self.sigma_vx ** 2, self.sigma_vy ** 2])

    @property
    def accuracy_diagonal(self) -> np.ndarray:
        return np.array([self.a_tau ** 2, self.a_nu ** 2, self.a_theta ** 2])


@dataclass(frozen=True)
class Measurement:
    """Round-trip delay, Doppler shift and angle of arrival"""
    delay: float
    doppler: float
    angle: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delay, self.doppler, self.angle], dtype=float)


def wrap_angle(x):
    """Map angles (scalar or array) into (-pi, pi]"""
    wrapped = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return float(wrapped) if wrapped.ndim == 0 else wrapped


def _rng(source: RandomSource) -> np.random.Generator:
    if isinstance(source, np.random.Generator):
        return source
    return np.random.default_rng(source)


def state_transition(s: EveState, dt: float) -> EveState:
    """Constant-velocity motion expressed in polar coordinates"""
    cos_t, sin_t = np.cos(s.angle), np.sin(s.angle)
    angle = s.angle + (s.vy * cos_t - s.vx * sin_t) * dt / s.distance
    distance = s.distance + (s.vx * cos_t + s.vy * sin_t) * dt
    return EveState(float(angle), float(distance), s.vx, s.vy)


def jacobian_F(s: EveState, dt: float) -> np.ndarray:
    cos_t, sin_t = np.cos(s.angle), np.sin(s.angle)
    d = s.distance
    tangential = s.vy * cos_t - s.vx * sin_t
    radial = s.vx * cos_t + s.vy * sin_t

    F = np.eye(4)
    F[0, 0] = 1.0 - radial * dt / d
    F[0, 1] = -tangential * dt / d ** 2
    F[0, 2] = -sin_t * dt / d
    F[0, 3] = cos_t * dt / d
    F[1, 0] = tangential * dt
    F[1, 2] = cos_t * dt
    F[1, 3] = sin_t * dt
    return F


def predict(belief: TrackBelief, dt: float, process_covariance: np.ndarray) -> TrackBelief:
    """EKF time update"""
    F = jacobian_F(belief.state, dt)
    covariance = F @ belief.covariance @ F.T + np.asarray(process_covariance, dtype=float)
    return TrackBelief(state_transition(belief.state, dt), covariance)


def measurement_fn(s: EveState, wavelength: float) -> Measurement:
    """Noiseless delay, Doppler and angle"""
    delay = 2 * s.distance / SPEED_OF_LIGHT
    doppler = -(2 / wavelength) * (s.vx * np.cos(s.angle) + s.vy * np.sin(s.angle))
    return Measurement(float(delay), float(doppler), float(s.angle))


def jacobian_G(s: EveState, wavelength: float) -> np.ndarray:
    cos_t, sin_t = np.cos(s.angle), np.sin(s.angle)
    G = np.zeros((3, 4))
    G[0, 1] = 2 / SPEED_OF_LIGHT
    G[1, 0] = -(2 / wavelength) * (-s.vx * sin_t + s.vy * cos_t)
    G[1, 2] = -(2 / wavelength) * cos_t
    G[1, 3] = -(2 / wavelength) * sin_t
    G[2, 0] = 1.0
    return G


def snr_coefficient(geometry: ArrayGeometry, distance: float, consts: MeasurementConstants,
                    rcs: Optional[float] = None) -> float:
    """gamma per unit of a^H Z a"""
    beta = consts.rcs if rcs is None else rcs
    return (geometry.alpha ** 2 * beta ** 2 * consts.symbols * geometry.num_antennas
            / (distance ** 4 * consts.sensing_noise))


def sensing_snr(Z: np.ndarray, pos: PolarPosition, consts: MeasurementConstants, geometry: ArrayGeometry,
                rcs: Optional[float] = None, tol: float = 1e-12) -> float:
    """Echo SNR produced by the sensing covariance at a position"""
    a = array_response(geometry, pos)
    focus = float(np.real(np.vdot(a, np.asarray(Z) @ a)))
    scale = max(1.0, float(np.max(np.abs(Z)))) if np.size(Z) else 1.0
    if focus < -tol * scale:
        raise DataValidationError(f"sensing covariance is not PSD along the target direction (a^H Z a = {focus:.3e})")
    return max(focus, 0.0) * snr_coefficient(geometry, pos.distance, consts, rcs)


def measurement_noise_cov(gamma: float, consts: MeasurementConstants) -> np.ndarray:
    if gamma <= 0:
        raise UnobservableTargetError(f"echo SNR {gamma} leaves the target unobservable")
    return np.diag(consts.accuracy_diagonal / gamma)


def information_gain_matrix(state: EveState, consts: MeasurementConstants, geometry: ArrayGeometry) -> np.ndarray:
    """M with C^-1 = C_pred^-1 + (a^H Z a) M, evaluated at a (predicted) state"""
    G = jacobian_G(state, geometry.wavelength)
    weight = snr_coefficient(geometry, state.distance, consts)
    M = weight * G.T @ np.diag(1.0 / consts.accuracy_diagonal) @ G
    return 0.5 * (M + M.T)


def kalman_gain(pred_cov: np.ndarray, G: np.ndarray, Q_m: np.ndarray) -> np.ndarray:
    """K = C G^T S^-1, solved on the unit-diagonal rescaling of S"""
    S = G @ pred_cov @ G.T + Q_m
    S = 0.5 * (S + S.T)
    scale = np.sqrt(np.diag(S)) if np.all(np.isfinite(S)) else np.zeros(S.shape[0])
    if np.any(scale <= 0):
        raise NumericalFailureError("innovation covariance is singular")
    S_unit = S / np.outer(scale, scale)
    if np.linalg.cond(S_unit) > 1e15:
        raise NumericalFailureError("innovation covariance is singular")
    try:
        return (linalg.solve(S_unit, (G @ pred_cov) / scale[:, None], assume_a='sym') / scale[:, None]).T
    except linalg.LinAlgError as e:
        raise NumericalFailureError(f"innovation covariance is singular: {e}")


def posterior_covariance(pred_cov: np.ndarray, G: np.ndarray, Q_m: np.ndarray, form: str = "information") -> np.ndarray:
    """Posterior covariance in information form or gain form (I - K G) C"""
    if form == "information":
        info = linalg.inv(pred_cov) + G.T @ linalg.inv(Q_m) @ G
        cov = linalg.inv(info)
    elif form == "gain":
        K = kalman_gain(pred_cov, G, Q_m)
        cov = (np.eye(pred_cov.shape[0]) - K @ G) @ pred_cov
    else:
        raise DataValidationError(f"unknown covariance form '{form}'")
    return 0.5 * (cov + cov.T)


def update(pred: TrackBelief, u: Measurement, Q_m: np.ndarray, wavelength: float) -> TrackBelief:
    """EKF measurement update"""
    s = pred.state
    C = pred.covariance
    G = jacobian_G(s, wavelength)

    innovation = u.as_array() - measurement_fn(s, wavelength).as_array()
    innovation[2] = wrap_angle(innovation[2])

    K = kalman_gain(C, G, Q_m)

    mean = s.as_array() + K @ innovation

    # information form needs an invertible prior; otherwise use the Joseph form
    try:
        linalg.cholesky(C)
        cov = posterior_covariance(C, G, Q_m, form="information")
    except (linalg.LinAlgError, ValueError):
        I_KG = np.eye(4) - K @ G
        cov = I_KG @ C @ I_KG.T + K @ Q_m @ K.T
        cov = 0.5 * (cov + cov.T)
    return TrackBelief(EveState.from_array(mean), cov)


def draw_swerling_rcs(nominal: float, rng: RandomSource = None) -> float:
    """Swerling-I: |beta|^2 exponentially distributed around the nominal"""
    generator = _rng(rng)
    return float(np.sqrt(generator.exponential(nominal ** 2)))


def synthesize_measurement(true_state: EveState, Z: np.ndarray, consts: MeasurementConstants,
                           geometry: ArrayGeometry, rng: RandomSource = None,
                           rcs: Optional[float] = None) -> Tuple[Measurement, float]:
    """Draw a noisy measurement at the true state; returns the measurement and the realized SNR"""
    generator = _rng(rng)
    gamma = sensing_snr(Z, true_state.position, consts, geometry, rcs)
    noise_cov = measurement_noise_cov(gamma, consts)
    clean = measurement_fn(true_state, geometry.wavelength).as_array()
    noisy = clean + generator.standard_normal(3) * np.sqrt(np.diag(noise_cov))
    return Measurement(float(noisy[0]), float(noisy[1]), float(noisy[2])), gamma


def nees(true_state: EveState, belief: TrackBelief) -> float:
    """Normalized estimation error squared"""
    error = true_state.as_array() - belief.state.as_array()
    error[0] = wrap_angle(error[0])
    return float(error @ linalg.solve(belief.covariance, error, assume_a='pos'))


def nees_band(dof: int = 4, confidence: float = 0.95) -> Tuple[float, float]:
    """Two-sided chi-square acceptance band for single-run NEES"""
    tail = (1.0 - confidence) / 2
    return float(stats.chi2.ppf(tail, dof)), float(stats.chi2.ppf(1.0 - tail, dof))


class EveTracker:
    """Stateful EKF wrapper used by the episode simulator"""

    def __init__(self, belief: TrackBelief, consts: MeasurementConstants, geometry: ArrayGeometry,
                 predictive: bool = True):
        self.belief = belief
        self.consts = consts
        self.geometry = geometry
        self.predictive = predictive
        self.updates = 0
        self.skipped = 0

    def prior(self) -> TrackBelief:
        """Prior for the coming slot; the non-predictive tracker keeps the last estimate"""
        if self.predictive:
            return predict(self.belief, self.consts.slot_duration, self.consts.process_covariance)
        return replace(self.belief, covariance=self.belief.covariance + self.consts.process_covariance)

    def step(self, prior: TrackBelief, measurement: Optional[Measurement], gamma: float) -> TrackBelief:
        """Fold one slot's measurement into the track; gamma <= 0 keeps the prior"""
        if measurement is None or gamma <= 0:
            logger.debug("No echo energy on target, prediction only")
            self.skipped += 1
            self.belief = prior
            return prior
        Q_m = measurement_noise_cov(gamma, self.consts)
        self.belief = update(prior, measurement, Q_m, self.geometry.wavelength)
        self.updates += 1
        return self.belief
