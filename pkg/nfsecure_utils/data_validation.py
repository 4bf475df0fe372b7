# Data Validation Module
import numpy as np
from typing import Any, Optional, Sequence


class NfSecureError(Exception):
    """Base exception for the near-field secure ISAC toolkit"""
    pass


class DataValidationError(NfSecureError):
    """Custom exception for data validation errors"""
    pass


class ConfigValidationError(DataValidationError):
    """Raised when a scenario file is missing a key or carries a bad value"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class DegenerateGeometryError(NfSecureError):
    """Stacked channels are rank deficient (user collocated with the eavesdropper)"""
    pass


class UnobservableTargetError(NfSecureError):
    """No sensing energy reaches the target, measurement variance is infinite"""
    pass


class NumericalFailureError(NfSecureError):
    """Singular innovation covariance, degenerate cut or similar breakdown"""
    pass


class SolverFailureError(NfSecureError):
    """The conic backend failed or did not converge"""
    pass


class ScenarioValidator:
    """Validation of physical inputs shared by every module"""
    
    def __init__(self, psd_tolerance: float = 1e-9, symmetry_tolerance: float = 1e-12):
        self.psd_tolerance = psd_tolerance
        self.symmetry_tolerance = symmetry_tolerance
        
    def validate_positive(self, value: Any, field_name: str, allow_zero: bool = False) -> float:
        """Validate a finite, strictly positive scalar"""
        validated = self._validate_numeric(value, field_name)
        if validated < 0 or (validated == 0 and not allow_zero):
            raise DataValidationError(f"{field_name} must be positive, got {validated}")
        return validated
    
    def validate_range(self, value: Any, field_name: str, low: float, high: float,
                       inclusive: bool = False) -> float:
        """Validate a finite scalar inside (low, high) or [low, high]"""
        validated = self._validate_numeric(value, field_name)
        if inclusive:
            inside = low <= validated <= high
        else:
            inside = low < validated < high
        if not inside:
            bracket = "[]" if inclusive else "()"
            raise DataValidationError(
                f"{field_name} must lie in {bracket[0]}{low}, {high}{bracket[1]}, got {validated}"
            )
        return validated
        
    def validate_psd(self, matrix: np.ndarray, field_name: str = "matrix") -> np.ndarray:
        """Validate a Hermitian positive semidefinite matrix and return its Hermitian part"""
        matrix = np.asarray(matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DataValidationError(f"{field_name} must be square, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise DataValidationError(f"{field_name} contains non-finite entries")
        
        scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
        asymmetry = float(np.max(np.abs(matrix - matrix.conj().T))) if matrix.size else 0.0
        if asymmetry > max(self.symmetry_tolerance, 1e-10 * scale):
            raise DataValidationError(f"{field_name} is not Hermitian (max asymmetry {asymmetry:.3e})")
        
        hermitian = 0.5 * (matrix + matrix.conj().T)
        if hermitian.size:
            smallest = float(np.linalg.eigvalsh(hermitian)[0])
            if smallest < -self.psd_tolerance * scale:
                raise DataValidationError(f"{field_name} is not PSD (min eigenvalue {smallest:.3e})")
        return hermitian
    
    def validate_schedule(self, schedule: Sequence[Any], num_users: Optional[int] = None) -> np.ndarray:
        """Validate a binary scheduling vector"""
        e = np.asarray(schedule, dtype=float).ravel()
        if num_users is not None and e.size != num_users:
            raise DataValidationError(f"schedule must have {num_users} entries, got {e.size}")
        if not np.all((e == 0.0) | (e == 1.0)):
            raise DataValidationError(f"schedule must be binary, got {e.tolist()}")
        return e.astype(int)
    
    def validate_gamma1(self, gamma1: Any, num_users: int) -> int:
        """Validate the minimum number of served users"""
        if int(gamma1) != gamma1:
            raise DataValidationError(f"gamma1 must be an integer, got {gamma1}")
        gamma1 = int(gamma1)
        if gamma1 < 0 or gamma1 > num_users:
            raise DataValidationError(f"gamma1 must lie in [0, {num_users}], got {gamma1}")
        return gamma1
    
    def _validate_numeric(self, value: Any, field_name: str) -> float:
        """Validate numeric values"""
        if isinstance(value, bool) or value is None:
            raise DataValidationError(f"{field_name} must be numeric, got {value!r}")
        try:
            validated = float(value)
        except (TypeError, ValueError):
            raise DataValidationError(f"{field_name} must be numeric, got {value!r}")
        if np.isnan(validated) or np.isinf(validated):
            raise DataValidationError(f"{field_name} must be finite, got {validated}")
        return validated


# Convenience functions
def validate_positive(value: Any, field_name: str, allow_zero: bool = False) -> float:
    """Validate a strictly positive scalar"""
    validator = ScenarioValidator()
    return validator.validate_positive(value, field_name, allow_zero)

def validate_psd(matrix: np.ndarray, field_name: str = "matrix", tolerance: float = 1e-9) -> np.ndarray:
    """Validate a Hermitian PSD matrix"""
    validator = ScenarioValidator(psd_tolerance=tolerance)
    return validator.validate_psd(matrix, field_name)

def validate_schedule(schedule: Sequence[Any], num_users: Optional[int] = None) -> np.ndarray:
    """Validate a binary schedule"""
    validator = ScenarioValidator()
    return validator.validate_schedule(schedule, num_users)

def validate_gamma1(gamma1: Any, num_users: int) -> int:
    """Validate Gamma1 against the number of users"""
    validator = ScenarioValidator()
    return validator.validate_gamma1(gamma1, num_users)

