import numpy as np
import pytest

from nfsecure_utils.data_validation import (
    ConfigValidationError,
    DataValidationError,
    NfSecureError,
    ScenarioValidator,
    validate_gamma1,
    validate_positive,
    validate_psd,
    validate_schedule,
)


@pytest.mark.parametrize("value", [0.0, -1.0, float("nan"), float("inf"), True, None, "abc"])
def test_validate_positive_rejects(value):
    with pytest.raises(DataValidationError):
        validate_positive(value, "x")


def test_validate_positive_allows_zero_when_asked():
    assert validate_positive(0, "x", allow_zero=True) == 0.0
    assert validate_positive("2.5", "x") == 2.5


def test_validate_range_bounds():
    validator = ScenarioValidator()
    assert validator.validate_range(1.0, "angle", 0.0, np.pi) == 1.0
    with pytest.raises(DataValidationError):
        validator.validate_range(0.0, "angle", 0.0, np.pi)
    assert validator.validate_range(0.0, "angle", 0.0, np.pi, inclusive=True) == 0.0


def test_validate_psd_returns_hermitian_part():
    v = np.array([1.0, 1j])
    H = np.outer(v, v.conj())
    out = validate_psd(H)
    assert np.allclose(out, H)
    assert np.allclose(out, out.conj().T)


def test_validate_psd_rejects_indefinite_and_non_hermitian():
    with pytest.raises(DataValidationError, match="not PSD"):
        validate_psd(np.diag([1.0, -0.5]))
    with pytest.raises(DataValidationError, match="not Hermitian"):
        validate_psd(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(DataValidationError, match="square"):
        validate_psd(np.ones((2, 3)))


def test_validate_schedule():
    assert validate_schedule([1, 0, 1.0]).tolist() == [1, 0, 1]
    with pytest.raises(DataValidationError):
        validate_schedule([1, 0.5])
    with pytest.raises(DataValidationError):
        validate_schedule([1, 0], num_users=3)


def test_validate_gamma1_range():
    assert validate_gamma1(0, 3) == 0
    assert validate_gamma1(3.0, 3) == 3
    for bad in (-1, 4, 1.5):
        with pytest.raises(DataValidationError):
            validate_gamma1(bad, 3)


def test_config_error_carries_key():
    err = ConfigValidationError("array.num_antennas", "missing key")
    assert err.key == "array.num_antennas"
    assert str(err).startswith("array.num_antennas")
    assert isinstance(err, DataValidationError)
    assert isinstance(err, NfSecureError)
