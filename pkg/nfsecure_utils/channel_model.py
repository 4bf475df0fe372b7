import logging
import numpy as np
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

from .data_validation import DataValidationError, ScenarioValidator

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array centred at the origin along the x-axis"""
    num_antennas: int
    spacing: float
    wavelength: float

    def __post_init__(self):
        validator = ScenarioValidator()
        if int(self.num_antennas) != self.num_antennas or self.num_antennas < 1:
            raise DataValidationError(f"num_antennas must be a positive integer, got {self.num_antennas}")
        validator.validate_positive(self.spacing, "spacing")
        validator.validate_positive(self.wavelength, "wavelength")

    @classmethod
    def from_aperture(cls, num_antennas: int, aperture: float, carrier_frequency: float) -> "ArrayGeometry":
        """Spacing derived as aperture / (N - 1)"""
        wavelength = SPEED_OF_LIGHT / carrier_frequency
        if num_antennas == 1:
            return cls(1, wavelength / 2, wavelength)
        return cls(num_antennas, aperture / (num_antennas - 1), wavelength)

    @property
    def index_set(self) -> np.ndarray:
        # half-integer indices for even N
        return np.arange(self.num_antennas) - (self.num_antennas - 1) / 2.0

    @property
    def aperture(self) -> float:
        return (self.num_antennas - 1) * self.spacing

    @property
    def alpha(self) -> float:
        return (self.wavelength / (4 * np.pi)) ** 2

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength


@dataclass(frozen=True)
class PolarPosition:
    """Angle (rad, measured from the array axis) and distance (m) from the array centre"""
    angle: float
    distance: float

    def __post_init__(self):
        validator = ScenarioValidator()
        validator.validate_range(self.angle, "angle", 0.0, np.pi)
        validator.validate_positive(self.distance, "distance")

    def to_cartesian(self) -> np.ndarray:
        return self.distance * np.array([np.cos(self.angle), np.sin(self.angle)])

    @classmethod
    def from_degrees(cls, angle_deg: float, distance: float) -> "PolarPosition":
        return cls(float(np.deg2rad(angle_deg)), float(distance))


@dataclass(frozen=True)
class ChannelVector:
    """LoS near-field channel h = sqrt(alpha)/d * a(theta, d)"""
    entries: np.ndarray
    alpha: float
    distance: float

    @property
    def gain(self) -> float:
        return float(np.real(np.vdot(self.entries, self.entries)))


@dataclass
class DesignPoint:
    """Per-user beamformers (or covariances), sensing covariance and schedule"""
    covariances: List[np.ndarray]
    sensing_covariance: np.ndarray
    schedule: np.ndarray
    beamformers: Optional[List[Optional[np.ndarray]]] = None

    def __post_init__(self):
        validator = ScenarioValidator()
        self.schedule = validator.validate_schedule(self.schedule, len(self.covariances))
        self.covariances = [validator.validate_psd(W, f"W[{k}]") for k, W in enumerate(self.covariances)]
        self.sensing_covariance = validator.validate_psd(self.sensing_covariance, "Z")

    @classmethod
    def from_beamformers(cls, beamformers: Sequence[Optional[np.ndarray]], sensing_covariance: np.ndarray,
                         schedule: Sequence[int]) -> "DesignPoint":
        """Build covariances w w^H from vectors, None meaning an idle user"""
        n = sensing_covariance.shape[0]
        covariances = []
        for w in beamformers:
            if w is None:
                covariances.append(np.zeros((n, n), dtype=complex))
            else:
                w = np.asarray(w, dtype=complex)
                covariances.append(np.outer(w, w.conj()))
        return cls(covariances, sensing_covariance, np.asarray(schedule), list(beamformers))

    @property
    def num_users(self) -> int:
        return len(self.covariances)

    def transmit_power(self) -> float:
        served = sum(float(np.real(np.trace(W))) for W, e in zip(self.covariances, self.schedule) if e)
        return served + float(np.real(np.trace(self.sensing_covariance)))


def array_response(geometry: ArrayGeometry, pos: PolarPosition, far_field: bool = False) -> np.ndarray:
    """Near-field response vector; far_field=True drops the quadratic phase term"""
    n = geometry.index_set
    d = geometry.spacing
    phase = -n * d * np.cos(pos.angle)
    if not far_field:
        phase = phase + (n * d) ** 2 * np.sin(pos.angle) ** 2 / (2 * pos.distance)
    return np.exp(-1j * geometry.wavenumber * phase)


def array_responses(geometry: ArrayGeometry, angles: Sequence[float], distances: Sequence[float],
                    far_field: bool = False) -> np.ndarray:
    """Stacked responses, one row per (angle, distance) pair"""
    angles = np.asarray(angles, dtype=float).reshape(-1, 1)
    distances = np.asarray(distances, dtype=float).reshape(-1, 1)
    if np.any(distances <= 0):
        raise DataValidationError("distances must be positive")
    nd = geometry.index_set * geometry.spacing
    phase = -nd * np.cos(angles)
    if not far_field:
        phase = phase + nd ** 2 * np.sin(angles) ** 2 / (2 * distances)
    return np.exp(-1j * geometry.wavenumber * phase)


def channel_vector(geometry: ArrayGeometry, pos: PolarPosition, far_field: bool = False) -> ChannelVector:
    """Scale the array response by sqrt(alpha)/distance"""
    a = array_response(geometry, pos, far_field)
    return ChannelVector(np.sqrt(geometry.alpha) / pos.distance * a, geometry.alpha, pos.distance)


def _quad(h: np.ndarray, W: np.ndarray) -> float:
    return float(np.real(np.vdot(h, W @ h)))


def _check_noise(noise_power: float, field_name: str):
    if noise_power < 0:
        raise DataValidationError(f"{field_name} must be non-negative, got {noise_power}")


def achievable_rate(k: int, design: DesignPoint, channels: Sequence[np.ndarray], noise_power: float) -> float:
    """Rate of user k with interference from scheduled users and the sensing signal"""
    _check_noise(noise_power, "noise_power")
    if not design.schedule[k]:
        return 0.0
    h = np.asarray(channels[k])
    signal = _quad(h, design.covariances[k])
    interference = sum(
        _quad(h, W) for j, W in enumerate(design.covariances) if j != k and design.schedule[j]
    )
    interference += _quad(h, design.sensing_covariance)
    denominator = interference + noise_power
    if denominator <= 0:
        raise DataValidationError("zero interference-plus-noise power makes the rate unbounded")
    return float(np.log2(1.0 + signal / denominator))


def leakage_rate(k: int, design: DesignPoint, eve_channel: np.ndarray, eve_noise_power: float) -> float:
    """Worst-case leakage of user k's stream: the eavesdropper cancels other users' streams"""
    _check_noise(eve_noise_power, "eve_noise_power")
    if not design.schedule[k]:
        return 0.0
    h = np.asarray(eve_channel)
    signal = _quad(h, design.covariances[k])
    denominator = _quad(h, design.sensing_covariance) + eve_noise_power
    if denominator <= 0:
        raise DataValidationError("zero jamming-plus-noise power makes the leakage unbounded")
    return float(np.log2(1.0 + signal / denominator))


def beampattern(weight_or_cov: np.ndarray, geometry: ArrayGeometry, angles: Sequence[float],
                distances: Sequence[float]) -> np.ndarray:
    """Normalized radiated power over a polar grid, rows indexed by distance and columns by angle"""
    angles = np.asarray(angles, dtype=float).ravel()
    distances = np.asarray(distances, dtype=float).ravel()
    if angles.size == 0 or distances.size == 0:
        raise DataValidationError("beampattern grid must be nonempty")

    weights = np.asarray(weight_or_cov, dtype=complex)
    grid = np.empty((distances.size, angles.size))
    for i, r in enumerate(distances):
        responses = array_responses(geometry, angles, np.full(angles.size, r))
        if weights.ndim == 1:
            grid[i] = np.abs(responses.conj() @ weights) ** 2
        else:
            grid[i] = np.real(np.einsum('an,nm,am->a', responses.conj(), weights, responses))

    peak = float(np.max(grid))
    if peak <= 0:
        raise DataValidationError("beampattern is identically zero, cannot normalize")
    return np.clip(grid / peak, 0.0, 1.0)


def rayleigh_distance(aperture: float, wavelength: float) -> float:
    """Boundary between the radiating near field and the far field"""
    return 2 * aperture ** 2 / wavelength


def steering_vector(geometry: ArrayGeometry, angle: float) -> np.ndarray:
    """Planar-wave steering vector exp(j 2pi/lambda n d cos(theta))"""
    return np.exp(1j * geometry.wavenumber * geometry.index_set * geometry.spacing * np.cos(angle))


def channel_correlation(h_user: np.ndarray, h_eve: np.ndarray) -> float:
    """|h_k^H h_E| / (||h_k|| ||h_E||)"""
    return float(np.abs(np.vdot(h_user, h_eve)) / (np.linalg.norm(h_user) * np.linalg.norm(h_eve)))
