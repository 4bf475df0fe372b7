import logging
import numpy as np
import pandas as pd
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .benders_decomposition import Design, SoopInstance, enumerate_optimal, gbd_solve
from .conic_solver import ConicSolver
from .data_validation import DataValidationError, DegenerateGeometryError, NumericalFailureError
from .episode_simulator import correlation_design
from .zf_sca_design import zfsca_solve

logger = logging.getLogger(__name__)

PARETO_COLUMNS = ['gamma1', 'gamma2', 'power_w', 'feasible', 'schedule', 'status']
SWEEP_COLUMNS = ['parameter', 'value', 'gamma1', 'gamma2', 'policy', 'power_w', 'feasible', 'served',
                 'schedule', 'status']


@dataclass
class ParetoPoint:
    """Minimized power for one (gamma1, gamma2) pair"""
    gamma1: int
    gamma2: float
    power_w: float
    feasible: bool
    schedule: str = ""
    status: str = ""

    def to_row(self) -> Dict:
        return {
            'gamma1': self.gamma1,
            'gamma2': self.gamma2,
            'power_w': self.power_w,
            'feasible': self.feasible,
            'schedule': self.schedule,
            'status': self.status,
        }


def _schedule_text(design: Design) -> str:
    return "".join(str(int(b)) for b in design.schedule) if design.feasible else ""


class ParetoEngine:
    """Grid of constrained power minimizations on one frozen slot"""

    def __init__(self, instance: SoopInstance, solver: Optional[ConicSolver] = None, epsilon: float = 1e-4,
                 max_workers: int = 1, method: str = "gbd"):
        if method not in ("gbd", "enumeration", "zfsca"):
            raise DataValidationError(f"unknown Pareto method '{method}'")
        self.instance = instance
        self.solver = solver or ConicSolver()
        self.epsilon = epsilon
        self.max_workers = max_workers
        self.method = method

    def solve_point(self, gamma1: int, gamma2: float) -> ParetoPoint:
        instance = self.instance.with_thresholds(gamma1, gamma2)
        try:
            if self.method == "gbd":
                design, _ = gbd_solve(instance, self.epsilon, self.solver)
            elif self.method == "enumeration":
                design = enumerate_optimal(instance, self.solver)
            else:
                design, _ = zfsca_solve(instance, epsilon=self.epsilon, solver=self.solver)
        except DegenerateGeometryError as e:
            logger.warning(f"Point ({gamma1}, {gamma2}): {e}")
            return ParetoPoint(gamma1, gamma2, float("inf"), False, "", "infeasible")
        power = design.objective if design.feasible else float("inf")
        return ParetoPoint(gamma1, gamma2, power, design.feasible, _schedule_text(design), design.status)

    def run(self, gamma1_values: Sequence[int], gamma2_values: Sequence[float], check: bool = True) -> List[ParetoPoint]:
        """Solve every grid point; results sorted by (gamma1, gamma2)"""
        grid = [(int(g1), float(g2)) for g1 in gamma1_values for g2 in gamma2_values]
        if not grid:
            raise DataValidationError("Pareto grid is empty")
        print(f"🔍 Sweeping {len(grid)} (gamma1, gamma2) points...")

        points: Dict[Tuple[int, float], ParetoPoint] = {}
        if self.max_workers > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                future_to_key = {
                    executor.submit(self.solve_point, g1, g2): (g1, g2)
                    for g1, g2 in grid
                }
                for future in as_completed(future_to_key):
                    key = future_to_key[future]
                    points[key] = future.result()
                    logger.info(f"Pareto point {key}: {points[key].power_w:.6g} W")
        else:
            for key in grid:
                points[key] = self.solve_point(*key)
                logger.info(f"Pareto point {key}: {points[key].power_w:.6g} W")

        ordered = [points[key] for key in sorted(points)]
        feasible = sum(p.feasible for p in ordered)
        print(f"🎯 Pareto sweep complete: {feasible}/{len(ordered)} feasible points")
        if check and self.method != "zfsca":
            assert_pareto_monotone(ordered)
        return ordered


def monotonicity_violations(points: Sequence[ParetoPoint], rtol: float = 1e-4) -> List[str]:
    """Pairs breaking non-decreasing power in gamma1 or non-increasing power in gamma2"""
    table = {(p.gamma1, p.gamma2): p.power_w for p in points}
    gamma1s = sorted({p.gamma1 for p in points})
    gamma2s = sorted({p.gamma2 for p in points})

    def exceeds(a: float, b: float) -> bool:
        # a > b beyond the solver tolerance
        if np.isinf(a) and np.isinf(b):
            return False
        return a > b + rtol * max(1.0, abs(b)) if np.isfinite(b) else False

    problems = []
    for g2 in gamma2s:
        for lo, hi in zip(gamma1s, gamma1s[1:]):
            if (lo, g2) in table and (hi, g2) in table and exceeds(table[(lo, g2)], table[(hi, g2)]):
                problems.append(f"power drops from gamma1={lo} to {hi} at gamma2={g2}")
    for g1 in gamma1s:
        for lo, hi in zip(gamma2s, gamma2s[1:]):
            if (g1, lo) in table and (g1, hi) in table and exceeds(table[(g1, hi)], table[(g1, lo)]):
                problems.append(f"power rises from gamma2={lo} to {hi} at gamma1={g1}")
    return problems


def assert_pareto_monotone(points: Sequence[ParetoPoint], rtol: float = 1e-4):
    problems = monotonicity_violations(points, rtol)
    if problems:
        raise NumericalFailureError("Pareto boundary is not monotone: " + "; ".join(problems))


def _with_rate(instance: SoopInstance, parameter: str, value: float) -> SoopInstance:
    if parameter == "rate_info":
        return replace(instance, rate_info=np.full(instance.num_users, value))
    if parameter == "rate_leak":
        return replace(instance, rate_leak=np.full(instance.num_users, value))
    raise DataValidationError(f"unknown sweep parameter '{parameter}', expected rate_info or rate_leak")


def _solve_policy(instance: SoopInstance, policy: str, solver: ConicSolver, epsilon: float) -> Design:
    if policy == "gbd":
        return gbd_solve(instance, epsilon, solver)[0]
    if policy == "zfsca":
        return zfsca_solve(instance, epsilon=epsilon, solver=solver)[0]
    if policy == "correlation_baseline":
        return correlation_design(instance, solver)
    raise DataValidationError(f"unknown sweep policy '{policy}'")


# Convenience functions
def pareto_sweep(instance: SoopInstance, gamma1_values: Sequence[int], gamma2_values: Sequence[float],
                 solver: Optional[ConicSolver] = None, epsilon: float = 1e-4, max_workers: int = 1,
                 method: str = "gbd", check: bool = True) -> List[ParetoPoint]:
    return ParetoEngine(instance, solver, epsilon, max_workers, method).run(gamma1_values, gamma2_values, check)


def pareto_frame(points: Sequence[ParetoPoint]) -> pd.DataFrame:
    frame = pd.DataFrame([p.to_row() for p in points], columns=PARETO_COLUMNS)
    return frame.sort_values(['gamma1', 'gamma2'], kind="stable").reset_index(drop=True)


def threshold_sweep(instance: SoopInstance, parameter: str, values: Sequence[float], gamma1: int, gamma2: float,
                    policy: str = "gbd", solver: Optional[ConicSolver] = None, epsilon: float = 1e-4,
                    max_workers: int = 1) -> pd.DataFrame:
    """Minimum power versus the information-rate or leakage threshold"""
    if len(values) == 0:
        raise DataValidationError("threshold sweep needs at least one value")
    solver = solver or ConicSolver()
    base = instance.with_thresholds(gamma1, gamma2)

    def run(value: float) -> Dict:
        design = _solve_policy(_with_rate(base, parameter, value), policy, solver, epsilon)
        return {
            'parameter': parameter,
            'value': float(value),
            'gamma1': gamma1,
            'gamma2': gamma2,
            'policy': policy,
            'power_w': design.objective if design.feasible else float("inf"),
            'feasible': design.feasible,
            'served': design.served,
            'schedule': _schedule_text(design),
            'status': design.status,
        }

    rows: Dict[int, Dict] = {}
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            future_to_index = {executor.submit(run, v): i for i, v in enumerate(values)}
            for future in as_completed(future_to_index):
                rows[future_to_index[future]] = future.result()
    else:
        for i, value in enumerate(values):
            rows[i] = run(value)
            logger.info(f"{parameter}={value}: {rows[i]['power_w']:.6g} W ({rows[i]['status']})")
    return pd.DataFrame([rows[i] for i in range(len(values))], columns=SWEEP_COLUMNS)
