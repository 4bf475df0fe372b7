import numpy as np
from dataclasses import dataclass
from typing import Tuple, Union

from .channel_model import ArrayGeometry, PolarPosition, array_response
from .data_validation import ScenarioValidator
from .eve_tracker import TrackBelief


@dataclass(frozen=True)
class UncertaintyBox:
    """Three-sigma box around the predicted eavesdropper position"""
    center_angle: float
    center_distance: float
    sigma_angle: float
    sigma_distance: float

    def __post_init__(self):
        validator = ScenarioValidator()
        validator.validate_positive(self.sigma_angle, "sigma_angle", allow_zero=True)
        validator.validate_positive(self.sigma_distance, "sigma_distance", allow_zero=True)
        validator.validate_positive(self.center_distance, "center_distance")

    @classmethod
    def from_belief(cls, belief: TrackBelief) -> "UncertaintyBox":
        """Box from the diagonal angle and distance variances of a (predicted) belief"""
        return cls(belief.state.angle, belief.state.distance, belief.sigma_angle, belief.sigma_distance)

    @property
    def center(self) -> PolarPosition:
        return PolarPosition(self.center_angle, self.center_distance)

    @property
    def half_widths(self) -> Tuple[float, float]:
        return 3 * self.sigma_angle, 3 * self.sigma_distance

    def vertices(self) -> np.ndarray:
        h_angle, h_dist = self.half_widths
        return np.array([[sa * h_angle, sd * h_dist] for sa in (-1, 1) for sd in (-1, 1)])

    def sample(self, count: int, rng: Union[int, np.random.Generator, None] = None) -> np.ndarray:
        """Uniform (d_angle, d_distance) draws inside the box"""
        generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        h_angle, h_dist = self.half_widths
        return np.column_stack([
            generator.uniform(-h_angle, h_angle, count),
            generator.uniform(-h_dist, h_dist, count),
        ])


@dataclass(frozen=True)
class RobustRadii:
    """Bounds on ||delta a||^2 and on delta d^2"""
    beta_a: float
    beta_d: float


def delta_a_exact(geometry: ArrayGeometry, center: PolarPosition, d_angle: float, d_distance: float) -> np.ndarray:
    perturbed = PolarPosition(center.angle + d_angle, center.distance + d_distance)
    return array_response(geometry, perturbed) - array_response(geometry, center)


def phi_exact(geometry: ArrayGeometry, angle: float, distance: float, d_angle: float, d_distance: float) -> float:
    """Re{a(theta_bar, d_bar)^H a(theta, d)} as a sum of cosines"""
    n = geometry.index_set
    d = geometry.spacing
    theta = angle + d_angle
    r = distance + d_distance
    phase = geometry.wavenumber * (
        n * d * (np.cos(angle) - np.cos(theta))
        + (n * d) ** 2 / 2 * (np.sin(theta) ** 2 / r - np.sin(angle) ** 2 / distance)
    )
    return float(np.sum(np.cos(phase)))


def vartheta_coeffs(geometry: ArrayGeometry, angle: float, distance: float) -> Tuple[np.ndarray, np.ndarray]:
    """First-order phase sensitivities (A_n, B_n) to angle and distance errors"""
    n = geometry.index_set
    d = geometry.spacing
    k = geometry.wavenumber
    A = k * (n * d * np.sin(angle) + (n * d) ** 2 / 2 * np.sin(2 * angle) / distance)
    B = -k * (n * d) ** 2 / 2 * np.sin(angle) ** 2 / distance ** 2
    return A, B


def quadratic_deviation(A: np.ndarray, B: np.ndarray, d_angle, d_distance):
    """sum_n (A_n d_angle + B_n d_distance)^2, broadcasting over the error arguments"""
    d_angle = np.asarray(d_angle, dtype=float)
    d_distance = np.asarray(d_distance, dtype=float)
    saa, sab, sbb = float(A @ A), float(A @ B), float(B @ B)
    return saa * d_angle ** 2 + 2 * sab * d_angle * d_distance + sbb * d_distance ** 2


def beta_a(geometry: ArrayGeometry, box: UncertaintyBox, safety_factor: float = 1.0) -> float:
    """Worst-case ||delta a||^2 over the box from the quadratic surrogate, at a vertex"""
    A, B = vartheta_coeffs(geometry, box.center_angle, box.center_distance)
    vertices = box.vertices()
    worst = float(np.max(quadratic_deviation(A, B, vertices[:, 0], vertices[:, 1])))
    worst *= safety_factor
    return float(np.clip(worst, 0.0, 4.0 * geometry.num_antennas))


def beta_d(box: UncertaintyBox) -> float:
    return 9.0 * box.sigma_distance ** 2


def robust_radii(geometry: ArrayGeometry, box: UncertaintyBox, safety_factor: float = 1.0) -> RobustRadii:
    return RobustRadii(beta_a(geometry, box, safety_factor), beta_d(box))
