"""
Low-complexity design: zero-forcing beam directions with penalty-based
successive convex approximation of the scheduling variables.

Only the powers p_k, p_bar_k = e_k p_k, p_E and the relaxed schedule e are
optimized; the beam directions are the pseudo-inverse columns of the
stacked user and predicted-eavesdropper channels.
"""

import logging
import numpy as np
import cvxpy as cp
import pandas as pd
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from scipy import linalg

from .benders_decomposition import (
    Design,
    PowerScaling,
    SoopInstance,
    add_robust_leakage,
    add_tracking_bound,
)
from .channel_model import ArrayGeometry
from .conic_solver import INFEASIBLE, ConicProgram, ConicSolution, ConicSolver, HermitianExpr
from .data_validation import DataValidationError, DegenerateGeometryError, SolverFailureError

logger = logging.getLogger(__name__)

ZF_CONDITION_LIMIT = 1e10
BINARINESS_TOLERANCE = 1e-3


@dataclass
class ZfBasis:
    """Unnormalized pseudo-inverse columns for the users and the eavesdropper"""
    user_beams: np.ndarray
    eve_beam: np.ndarray
    gram_condition: float
    zf_error: float

    @property
    def num_users(self) -> int:
        return int(self.user_beams.shape[0])

    @property
    def user_norms_sq(self) -> np.ndarray:
        return np.sum(np.abs(self.user_beams) ** 2, axis=1)

    @property
    def eve_norm_sq(self) -> float:
        return float(np.real(np.vdot(self.eve_beam, self.eve_beam)))

    def scaled(self, factor: float) -> "ZfBasis":
        return ZfBasis(self.user_beams * factor, self.eve_beam * factor, self.gram_condition, self.zf_error)


def zf_beamformers(channels: np.ndarray, geometry: Optional[ArrayGeometry] = None) -> ZfBasis:
    """W = H (H^H H)^-1 for channels stacked as rows (users first, eavesdropper last)"""
    channels = np.atleast_2d(np.asarray(channels, dtype=complex))
    count, N = channels.shape
    if geometry is not None and geometry.num_antennas != N:
        raise DataValidationError(f"channels have {N} entries but the array has {geometry.num_antennas} antennas")
    if count < 2:
        raise DataValidationError("need at least one user channel and the eavesdropper channel")
    if count > N:
        raise DegenerateGeometryError(f"{count} channels cannot be zero-forced with {N} antennas")

    H = channels.T
    gram = H.conj().T @ H
    condition = float(np.linalg.cond(gram))
    if not np.isfinite(condition) or condition > ZF_CONDITION_LIMIT:
        raise DegenerateGeometryError(
            f"stacked channel Gram matrix has condition number {condition:.3e}; "
            "a user is unresolvable from the eavesdropper"
        )
    beams = linalg.solve(gram, H.conj().T, assume_a='her').conj().T
    error = float(np.max(np.abs(H.conj().T @ beams - np.eye(count))))
    logger.debug(f"ZF basis: cond={condition:.3e}, max |h^H w - delta| = {error:.3e}")
    return ZfBasis(beams[:, :-1].T.copy(), beams[:, -1].copy(), condition, error)


@dataclass
class ScaState:
    """Iterate of the penalized SCA loop; powers in watts"""
    e: np.ndarray
    p: np.ndarray
    p_bar: np.ndarray
    p_eve: float
    penalty: float
    iteration: int = 0
    objective_history: List[float] = field(default_factory=list)
    restarts: int = 0
    rows: List[Dict] = field(default_factory=list)

    @property
    def binariness_gap(self) -> float:
        return float(np.sum(self.e - self.e ** 2))

    def is_monotone(self, tol: float = 1e-6) -> bool:
        """Penalized objective non-increasing within the current penalty stage"""
        h = self.objective_history
        return all(b <= a + tol * max(1.0, abs(a)) for a, b in zip(h, h[1:]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=['stage', 'iteration', 'penalized_objective_w', 'power_w',
                                                'binariness_gap'])


@dataclass
class ScaProgram:
    """Compiled SCA subproblem with its parameters"""
    program: ConicProgram
    instance: SoopInstance
    scaling: PowerScaling
    basis: ZfBasis
    p: List[cp.Variable]
    p_bar: List[cp.Variable]
    p_eve: cp.Variable
    e: List[cp.Variable]
    weights: cp.Parameter
    offset: cp.Parameter
    lower: cp.Parameter
    upper: cp.Parameter
    big_m: np.ndarray

    def set_penalty(self, e_prev: Sequence[float], penalty: float):
        """Linearize -e^2 at e_prev; penalty in watts"""
        e_prev = np.asarray(e_prev, dtype=float)
        rho = penalty / self.scaling.power_unit
        self.weights.value = rho * (1.0 - 2.0 * e_prev)
        self.offset.value = rho * float(np.sum(e_prev ** 2))
        self.lower.value = np.zeros(len(self.e))
        self.upper.value = np.ones(len(self.e))

    def fix_schedule(self, e: Sequence[int]):
        e = np.asarray(e, dtype=float)
        self.weights.value = np.zeros(len(self.e))
        self.offset.value = 0.0
        self.lower.value = e.copy()
        self.upper.value = e.copy()

    def read(self, solution: ConicSolution) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        """Schedule and scaled powers from a solution"""
        K = len(self.e)
        e = np.clip([solution.primal[f"e[{k}]"] for k in range(K)], 0.0, 1.0)
        p = np.clip([solution.primal[f"p[{k}]"] for k in range(K)], 0.0, None)
        p_bar = np.clip([solution.primal[f"pbar[{k}]"] for k in range(K)], 0.0, None)
        return e, p, p_bar, max(float(solution.primal["pE"]), 0.0)

    def power(self, p_bar: np.ndarray, p_eve: float) -> float:
        """Scaled transmit power sum_k p_bar_k ||w_k||^2 + p_E ||w_E||^2"""
        return float(p_bar @ self.basis.user_norms_sq + p_eve * self.basis.eve_norm_sq)


def _rank_one(scalar, w: np.ndarray) -> HermitianExpr:
    W = np.outer(w, w.conj())
    return HermitianExpr(scalar * W.real, scalar * W.imag)


def stacked_channels(instance: SoopInstance) -> np.ndarray:
    return np.vstack([instance.channels, instance.eve_channel])


def build_sca_subproblem(instance: SoopInstance, zf: Optional[ZfBasis] = None,
                         e_prev: Optional[Sequence[float]] = None, penalty: Optional[float] = None) -> ScaProgram:
    """Convex subproblem of the penalized ZF design, linearized at e_prev"""
    K = instance.num_users
    if instance.gamma1 > K:
        raise DataValidationError(f"gamma1={instance.gamma1} exceeds the number of users {K}")
    if zf is None:
        zf = zf_beamformers(stacked_channels(instance))
    if zf.num_users != K:
        raise DataValidationError(f"ZF basis has {zf.num_users} users, instance has {K}")

    scaling = PowerScaling.for_instance(instance)
    basis = zf.scaled(np.sqrt(scaling.channel_gain))
    P = instance.p_max / scaling.power_unit
    h = scaling.scale_channels(instance.channels)
    noise = scaling.scale_noise(instance.noise_powers)
    R_info = instance.info_targets
    R_leak = instance.leak_targets
    big_m = P / basis.user_norms_sq

    prog = ConicProgram("zf-sca", schedule_size=0)
    p = [prog.add_scalar(f"p[{k}]", nonneg=True) for k in range(K)]
    p_bar = [prog.add_scalar(f"pbar[{k}]") for k in range(K)]
    p_eve = prog.add_scalar("pE", nonneg=True)
    e = [prog.add_scalar(f"e[{k}]") for k in range(K)]
    weights = cp.Parameter(K, name="penalty_weights")
    offset = cp.Parameter(name="penalty_offset")
    lower = cp.Parameter(K, name="e_lower")
    upper = cp.Parameter(K, name="e_upper")

    for k in range(K):
        gain = float(np.abs(np.vdot(h[k], basis.user_beams[k])) ** 2)
        prog.add_ge(f"C1[{k}]", gain * p_bar[k] - R_info[k] * noise[k] * e[k], group="C1")

    for k in range(K):
        S_bar = _rank_one(p_bar[k], basis.user_beams[k]) - R_leak[k] * _rank_one(p_eve, basis.eve_beam)
        add_robust_leakage(prog, k, S_bar, instance, scaling)

    focus = p_eve * float(np.abs(np.vdot(instance.eve_response, basis.eve_beam)) ** 2)
    add_tracking_bound(prog, focus, instance, scaling)

    for k in range(K):
        prog.add_ge(f"C12a[{k}]", big_m[k] * e[k] - p_bar[k], group="C12a")
        prog.add_ge(f"C12b[{k}]", p_bar[k] - p[k] + big_m[k] * (1 - e[k]), group="C12b")
        prog.add_ge(f"C12c[{k}]", p[k] - p_bar[k], group="C12c")
        prog.add_ge(f"C12d[{k}]", p_bar[k], group="C12d")
        prog.add_ge(f"cap_p[{k}]", big_m[k] - p[k], group="cap")
    prog.add_ge("cap_pE", P - p_eve * basis.eve_norm_sq, group="cap")

    prog.add_ge("C4", sum(e) - instance.gamma1, group="C4")
    for k in range(K):
        prog.add_ge(f"C3b_lo[{k}]", e[k] - lower[k], group="C3b")
        prog.add_ge(f"C3b_hi[{k}]", upper[k] - e[k], group="C3b")

    power = sum(basis.user_norms_sq[k] * p_bar[k] for k in range(K)) + basis.eve_norm_sq * p_eve
    prog.minimize(power + weights @ cp.hstack(e) + offset)

    sca = ScaProgram(prog, instance, scaling, basis, p, p_bar, p_eve, e, weights, offset, lower, upper, big_m)
    sca.set_penalty(np.zeros(K) if e_prev is None else e_prev,
                    10.0 * instance.p_max if penalty is None else penalty)
    return sca


def round_and_repair(e_frac: Sequence[float], instance_or_gamma1: Union[SoopInstance, int]) -> np.ndarray:
    """Threshold at 0.5, then switch on the largest remaining entries until gamma1 users are served"""
    e = np.asarray(e_frac, dtype=float).ravel()
    if np.any(e < -1e-6) or np.any(e > 1 + 1e-6):
        raise DataValidationError(f"relaxed schedule leaves [0, 1]: {e}")
    gamma1 = instance_or_gamma1.gamma1 if isinstance(instance_or_gamma1, SoopInstance) else int(instance_or_gamma1)
    if gamma1 > e.size:
        raise DataValidationError(f"gamma1={gamma1} exceeds the number of users {e.size}")

    binary = (e >= 0.5).astype(int)
    missing = gamma1 - int(binary.sum())
    if missing > 0:
        candidates = [k for k in np.argsort(-e, kind="stable") if not binary[k]]
        binary[candidates[:missing]] = 1
    return binary


def _solve_or_raise(solver: ConicSolver, sca: ScaProgram, what: str) -> ConicSolution:
    solution = solver.solve(sca.program)
    if solution.status != INFEASIBLE and not solution.is_optimal:
        raise SolverFailureError(f"{what} ended with {solution.backend_status}")
    return solution


def zfsca_solve(instance: SoopInstance, penalty: Optional[float] = None, epsilon: float = 1e-4,
                max_iterations: int = 30, solver: Optional[ConicSolver] = None,
                max_restarts: int = 3) -> Tuple[Design, ScaState]:
    """Penalty SCA loop, rounding, and a final fixed-schedule power allocation"""
    if epsilon <= 0:
        raise DataValidationError(f"epsilon must be positive, got {epsilon}")
    solver = solver or ConicSolver()
    K = instance.num_users
    zf = zf_beamformers(stacked_channels(instance))
    penalty = 10.0 * instance.p_max if penalty is None else penalty
    sca = build_sca_subproblem(instance, zf, np.zeros(K), penalty)
    unit = sca.scaling.power_unit

    state = ScaState(np.zeros(K), np.zeros(K), np.zeros(K), 0.0, penalty)
    e_prev = np.zeros(K)
    converged = False
    total = 0
    for stage in range(max_restarts + 1):
        state.objective_history = []
        converged = False
        for i in range(1, max_iterations + 1):
            sca.set_penalty(e_prev, state.penalty)
            solution = _solve_or_raise(solver, sca, f"SCA subproblem {i}")
            total += 1
            if solution.status == INFEASIBLE:
                logger.info(f"SCA subproblem infeasible: (gamma1={instance.gamma1}, gamma2={instance.gamma2}) "
                            "unattainable with zero-forcing beams")
                return Design.infeasible("zfsca", K, reason="zero-forcing restriction", iterations=total), state

            e, p, p_bar, p_eve = sca.read(solution)
            penalized = solution.objective * unit
            watts = unit * sca.scaling.channel_gain
            state.e, state.p, state.p_bar, state.p_eve = e, p * watts, p_bar * watts, p_eve * watts
            state.iteration = i
            state.objective_history.append(penalized)
            state.rows.append({
                'stage': stage,
                'iteration': i,
                'penalized_objective_w': penalized,
                'power_w': sca.power(p_bar, p_eve) * unit,
                'binariness_gap': state.binariness_gap,
            })
            logger.info(f"SCA stage {stage} iteration {i}: objective={penalized:.6g} W gap={state.binariness_gap:.3e}")

            e_prev = e
            history = state.objective_history
            if len(history) > 1 and abs(history[-1] - history[-2]) <= epsilon * max(abs(history[-1]), 1e-300):
                converged = True
                break

        if state.binariness_gap <= BINARINESS_TOLERANCE or stage == max_restarts:
            break
        state.penalty *= 2.0
        state.restarts += 1
        logger.warning(f"Relaxed schedule not binary (gap {state.binariness_gap:.3e}), "
                       f"penalty raised to {state.penalty:.3e} W")

    schedule = round_and_repair(state.e, instance)
    sca.fix_schedule(schedule)
    final = _solve_or_raise(solver, sca, "fixed-schedule power allocation")
    if final.status == INFEASIBLE:
        logger.info(f"Rounded schedule {schedule.tolist()} is infeasible under zero-forcing")
        return Design.infeasible("zfsca", K, reason="rounded schedule", iterations=total), state

    _, _, p_bar, p_eve = sca.read(final)
    watts = unit * sca.scaling.channel_gain
    user_powers = np.where(schedule == 1, p_bar * watts, 0.0)
    eve_power = p_eve * watts

    beamformers: List[Optional[np.ndarray]] = [
        np.sqrt(user_powers[k]) * zf.user_beams[k] if schedule[k] else None for k in range(K)
    ]
    covariances = [np.outer(w, w.conj()) if w is not None else np.zeros((instance.num_antennas,) * 2, dtype=complex)
                   for w in beamformers]
    sensing_beam = np.sqrt(eve_power) * zf.eve_beam
    Z = np.outer(sensing_beam, sensing_beam.conj())
    objective = float(user_powers @ zf.user_norms_sq + eve_power * zf.eve_norm_sq)

    status = "optimal" if converged and state.binariness_gap <= BINARINESS_TOLERANCE else "not_converged"
    design = Design(
        status=status,
        schedule=schedule,
        covariances=covariances,
        sensing_covariance=Z,
        beamformers=beamformers,
        objective=objective,
        method="zfsca",
        diagnostics={
            'iterations': total,
            'restarts': state.restarts,
            'penalty_w': state.penalty,
            'binariness_gap': state.binariness_gap,
            'relaxed_schedule': state.e.tolist(),
            'sensing_beam': sensing_beam,
            'user_powers_w': user_powers,
            'sensing_power_w': eve_power,
            'zf_condition': zf.gram_condition,
            'planned_trace': instance.planned_trace(Z),
        },
    )
    return design, state
