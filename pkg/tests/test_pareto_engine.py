import numpy as np
import pytest

from nfsecure_utils.data_validation import DataValidationError, NumericalFailureError
from nfsecure_utils.pareto_engine import (
    PARETO_COLUMNS,
    SWEEP_COLUMNS,
    ParetoEngine,
    ParetoPoint,
    assert_pareto_monotone,
    monotonicity_violations,
    pareto_frame,
    pareto_sweep,
    threshold_sweep,
)

INF = float("inf")


def _grid(powers):
    """powers[g1][g2] on gamma1 = 0, 1 and gamma2 = 0.1, 0.5"""
    return [ParetoPoint(g1, g2, powers[g1][j], np.isfinite(powers[g1][j]))
            for g1 in range(2) for j, g2 in enumerate((0.1, 0.5))]


def test_monotone_grid_passes():
    points = _grid([[2.0, 1.0], [3.0, 2.5]])
    assert monotonicity_violations(points) == []
    assert_pareto_monotone(points)


def test_infeasible_corner_is_monotone():
    assert monotonicity_violations(_grid([[2.0, 1.0], [INF, 2.5]])) == []


def test_power_drop_in_gamma1_flagged():
    problems = monotonicity_violations(_grid([[2.0, 1.0], [1.5, 0.9]]))
    assert len(problems) == 2
    assert all(p.startswith("power drops") for p in problems)


def test_power_rise_in_gamma2_raises():
    with pytest.raises(NumericalFailureError):
        assert_pareto_monotone(_grid([[1.0, 2.0], [3.0, 3.0]]))


def test_tolerance_absorbs_solver_noise():
    assert monotonicity_violations(_grid([[2.0, 2.00001], [3.0, 2.5]]), rtol=1e-4) == []


def test_pareto_frame_sorted():
    points = list(reversed(_grid([[2.0, 1.0], [3.0, 2.5]])))
    frame = pareto_frame(points)
    assert list(frame.columns) == PARETO_COLUMNS
    assert frame[['gamma1', 'gamma2']].values.tolist() == [[0, 0.1], [0, 0.5], [1, 0.1], [1, 0.5]]


def test_unknown_method(instance):
    with pytest.raises(DataValidationError):
        ParetoEngine(instance, method="greedy")


def test_empty_grid(instance):
    with pytest.raises(DataValidationError):
        ParetoEngine(instance).run([], [0.1])


def test_threshold_sweep_rejects_bad_input(instance, solver):
    with pytest.raises(DataValidationError):
        threshold_sweep(instance, "rate_info", [], 1, 0.15, solver=solver)
    with pytest.raises(DataValidationError):
        threshold_sweep(instance, "bandwidth", [1.0], 1, 0.15, solver=solver)
    with pytest.raises(DataValidationError):
        threshold_sweep(instance, "rate_info", [1.0], 1, 0.15, policy="greedy", solver=solver)


def test_unattainable_point_is_infinite(instance, solver):
    point = ParetoEngine(instance, solver).solve_point(1, 1e-9)
    assert not point.feasible
    assert point.power_w == INF
    assert point.status == "infeasible"


@pytest.mark.slow
def test_two_user_boundary(instance, solver):
    points = pareto_sweep(instance, [0, 1, 2], [0.15, 0.5], solver=solver, max_workers=2)
    assert len(points) == 6
    assert [(p.gamma1, p.gamma2) for p in points] == sorted((p.gamma1, p.gamma2) for p in points)
    assert monotonicity_violations(points) == []
    for p in points:
        if p.feasible:
            assert p.schedule.count("1") >= p.gamma1


@pytest.mark.slow
def test_rate_sweep_power_grows(instance, solver):
    table = threshold_sweep(instance, "rate_info", [2.0, 4.0, 6.0], 1, 0.5, solver=solver)
    assert list(table.columns) == SWEEP_COLUMNS
    powers = table.loc[table['feasible'], 'power_w'].to_numpy()
    assert np.all(np.diff(powers) >= -1e-6 * powers.max())
