"""
Robust secure-ISAC power minimization with binary user scheduling.

The relaxed problem (SDR, big-M linearized products e_k W_k, e_k Z and
e_k e_k' W_k') is a semidefinite program once the schedule e is fixed.
Generalized Benders decomposition alternates between that program (or its
feasibility version) and an exact master over all schedules.

Internally every program is scaled: channels are normalized to unit mean
gain and powers are measured in units of the matched-filter power needed
by the most demanding user. Reported objectives, covariances and traces
are in watts.
"""

import itertools
import logging
import numpy as np
import cvxpy as cp
import pandas as pd
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from scipy import linalg

from .channel_model import (
    ArrayGeometry,
    DesignPoint,
    PolarPosition,
    achievable_rate,
    array_response,
    channel_vector,
    leakage_rate,
)
from .conic_solver import (
    INFEASIBLE,
    ConicProgram,
    ConicSolution,
    ConicSolver,
    HermitianExpr,
    extract_rank_one,
    lagrangian_value,
)
from .data_validation import (
    DataValidationError,
    NumericalFailureError,
    ScenarioValidator,
    SolverFailureError,
)
from .eve_tracker import MeasurementConstants, TrackBelief, information_gain_matrix
from .uncertainty_region import RobustRadii, UncertaintyBox, robust_radii

logger = logging.getLogger(__name__)

COUPLING_GROUPS = ("C1", "C7a", "C7b", "C8a", "C8b", "C9a", "C9b", "C9c")
FEASIBILITY_THRESHOLD = 1e-7


@dataclass(frozen=True)
class SoopInstance:
    """One slot's scheduling and beamforming problem"""
    channels: np.ndarray
    eve_response: np.ndarray
    eve_position: PolarPosition
    radii: RobustRadii
    rate_info: np.ndarray
    rate_leak: np.ndarray
    noise_powers: np.ndarray
    eve_noise: float
    p_max: float
    gamma1: int
    gamma2: float
    prior_information: np.ndarray
    sensing_gain: np.ndarray
    alpha: float
    user_angles: Optional[np.ndarray] = None

    def __post_init__(self):
        validator = ScenarioValidator()
        channels = np.atleast_2d(np.asarray(self.channels, dtype=complex))
        object.__setattr__(self, "channels", channels)
        K = channels.shape[0]
        for name in ("rate_info", "rate_leak", "noise_powers"):
            values = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (K,)).copy()
            object.__setattr__(self, name, values)
        validator.validate_gamma1(self.gamma1, K)
        validator.validate_positive(self.gamma2, "gamma2")
        validator.validate_positive(self.p_max, "p_max")
        validator.validate_positive(self.eve_noise, "eve_noise")
        if np.any(self.rate_info <= 0) or np.any(self.rate_leak <= 0):
            raise DataValidationError("rate thresholds must be positive")
        validator.validate_psd(self.sensing_gain, "sensing_gain")
        validator.validate_psd(self.prior_information, "prior_information")

    @classmethod
    def assemble(cls, geometry: ArrayGeometry, user_positions: Sequence[PolarPosition], prior: TrackBelief,
                 consts: MeasurementConstants, noise_powers, eve_noise: float, p_max: float, rate_info, rate_leak,
                 gamma1: int, gamma2: float, safety_factor: float = 1.0, far_field: bool = False) -> "SoopInstance":
        """Build an instance around a (predicted) eavesdropper belief"""
        channels = np.array([channel_vector(geometry, pos, far_field).entries for pos in user_positions])
        box = UncertaintyBox.from_belief(prior)
        return cls(
            channels=channels,
            eve_response=array_response(geometry, prior.state.position, far_field),
            eve_position=prior.state.position,
            radii=robust_radii(geometry, box, safety_factor),
            rate_info=rate_info,
            rate_leak=rate_leak,
            noise_powers=noise_powers,
            eve_noise=eve_noise,
            p_max=p_max,
            gamma1=gamma1,
            gamma2=gamma2,
            prior_information=linalg.inv(prior.covariance),
            sensing_gain=information_gain_matrix(prior.state, consts, geometry),
            alpha=geometry.alpha,
            user_angles=np.array([pos.angle for pos in user_positions]),
        )

    @property
    def num_users(self) -> int:
        return int(self.channels.shape[0])

    @property
    def num_antennas(self) -> int:
        return int(self.channels.shape[1])

    @property
    def info_targets(self) -> np.ndarray:
        return 2.0 ** self.rate_info - 1.0

    @property
    def leak_targets(self) -> np.ndarray:
        return 2.0 ** self.rate_leak - 1.0

    @property
    def eve_channel(self) -> np.ndarray:
        return np.sqrt(self.alpha) / self.eve_position.distance * self.eve_response

    def with_thresholds(self, gamma1: Optional[int] = None, gamma2: Optional[float] = None) -> "SoopInstance":
        return replace(self,
                       gamma1=self.gamma1 if gamma1 is None else gamma1,
                       gamma2=self.gamma2 if gamma2 is None else gamma2)

    def planned_trace(self, Z: np.ndarray) -> float:
        """Tr of the posterior covariance the sensing covariance would produce"""
        focus = float(np.real(np.vdot(self.eve_response, Z @ self.eve_response)))
        return float(np.trace(linalg.inv(self.prior_information + max(focus, 0.0) * self.sensing_gain)))

    def minimum_sensing_focus(self) -> Optional[float]:
        """Smallest a^H Z a meeting gamma2, None when gamma2 is unattainable at full power"""
        best = self.num_antennas * self.p_max
        def trace_at(q):
            return float(np.trace(linalg.inv(self.prior_information + q * self.sensing_gain)))
        if trace_at(best) > self.gamma2:
            return None
        if trace_at(0.0) <= self.gamma2:
            return 0.0
        lo, hi = 0.0, best
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if trace_at(mid) <= self.gamma2:
                hi = mid
            else:
                lo = mid
        return hi


@dataclass(frozen=True)
class PowerScaling:
    """Unit mean channel gain, powers in units of the largest matched-filter requirement"""
    power_unit: float
    channel_gain: float

    @classmethod
    def for_instance(cls, instance: SoopInstance) -> "PowerScaling":
        gain = float(np.mean(np.sum(np.abs(instance.channels) ** 2, axis=1)))
        unit = float(np.max(instance.info_targets * instance.noise_powers)) / gain
        return cls(unit, gain)

    def scale_channels(self, channels: np.ndarray) -> np.ndarray:
        return np.asarray(channels) / np.sqrt(self.channel_gain)

    def scale_noise(self, noise_powers) -> np.ndarray:
        return np.asarray(noise_powers, dtype=float) / (self.channel_gain * self.power_unit)


@dataclass
class SoopProgram:
    """Compiled program plus handles to its variables"""
    program: ConicProgram
    instance: SoopInstance
    scaling: PowerScaling
    mode: str
    W: list
    Z: object
    W_bar: list
    Z_bar: list
    W_pair: dict
    chi: Optional[cp.Variable] = None


@dataclass
class Cut:
    """Affine function of the schedule: constant + coefficients . e"""
    kind: str
    constant: float
    coefficients: np.ndarray
    schedule: Tuple[int, ...]
    generator_value: float
    iteration: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.constant) and np.all(np.isfinite(self.coefficients))):
            raise NumericalFailureError(f"{self.kind} cut has non-finite coefficients")

    def value(self, e: Sequence[float]) -> float:
        return float(self.constant + self.coefficients @ np.asarray(e, dtype=float))


@dataclass
class GbdIteration:
    iteration: int
    upper_bound: float
    lower_bound: float
    schedule: Tuple[int, ...]
    cut_kind: str


@dataclass
class GbdTrace:
    iterations: List[GbdIteration] = field(default_factory=list)

    def record(self, entry: GbdIteration):
        self.iterations.append(entry)

    def is_monotone(self, tol: float = 1e-9) -> bool:
        ub = [it.upper_bound for it in self.iterations]
        lb = [it.lower_bound for it in self.iterations]
        return (all(b <= a + tol * max(1.0, abs(a)) for a, b in zip(ub, ub[1:]) if np.isfinite(a))
                and all(b >= a - tol * max(1.0, abs(a)) for a, b in zip(lb, lb[1:])))

    def to_frame(self) -> pd.DataFrame:
        rows = [{
            'iteration': it.iteration,
            'upper_bound_w': it.upper_bound,
            'lower_bound_w': it.lower_bound,
            'schedule_bitmask': int("".join(str(b) for b in it.schedule), 2) if it.schedule else 0,
            'schedule': "".join(str(b) for b in it.schedule),
            'cut_kind': it.cut_kind,
        } for it in self.iterations]
        return pd.DataFrame(rows, columns=['iteration', 'upper_bound_w', 'lower_bound_w',
                                           'schedule_bitmask', 'schedule', 'cut_kind'])


@dataclass
class Design:
    """A joint scheduling, beamforming and sensing decision"""
    status: str
    schedule: Optional[np.ndarray]
    covariances: List[np.ndarray]
    sensing_covariance: Optional[np.ndarray]
    beamformers: List[Optional[np.ndarray]]
    objective: float
    method: str
    diagnostics: Dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.schedule is not None and self.sensing_covariance is not None

    @property
    def served(self) -> int:
        return int(np.sum(self.schedule)) if self.schedule is not None else 0

    def point(self) -> DesignPoint:
        """DesignPoint with rank-one beamformers where available"""
        n = self.sensing_covariance.shape[0]
        covariances = []
        for k, W in enumerate(self.covariances):
            w = self.beamformers[k] if k < len(self.beamformers) else None
            if not self.schedule[k]:
                covariances.append(np.zeros((n, n), dtype=complex))
            elif w is not None:
                covariances.append(np.outer(w, w.conj()))
            else:
                covariances.append(W)
        return DesignPoint(covariances, self.sensing_covariance, self.schedule, list(self.beamformers))

    @classmethod
    def infeasible(cls, method: str, num_users: int, **diagnostics) -> "Design":
        return cls("infeasible", None, [], None, [None] * num_users, float("nan"), method, dict(diagnostics))


def _scalar(expr):
    return cp.reshape(expr, (1, 1))


def add_robust_leakage(prog: ConicProgram, k: int, S_bar: HermitianExpr, instance: SoopInstance,
                       scaling: PowerScaling):
    """S-procedure LMIs C2a/C2b bounding a^H S_bar a over the angle and distance error sets"""
    N = instance.num_antennas
    d_bar = instance.eve_position.distance
    leak_weight = instance.alpha * scaling.power_unit / (instance.leak_targets[k] * instance.eve_noise)
    kappa1 = prog.add_scalar(f"kappa1[{k}]", nonneg=True)
    kappa2 = prog.add_scalar(f"kappa2[{k}]", nonneg=True)
    eta = prog.add_scalar(f"eta[{k}]", nonneg=True)

    U = np.hstack([np.eye(N), instance.eve_response.reshape(-1, 1)])
    multiplier = cp.bmat([
        [kappa1 * np.eye(N), np.zeros((N, 1))],
        [np.zeros((1, N)), _scalar(eta - kappa1 * instance.radii.beta_a)],
    ])
    prog.add_lmi(f"C2a[{k}]", HermitianExpr(multiplier, np.zeros((N + 1, N + 1))) - S_bar.sandwich(U),
                 group="C2a")
    prog.add_lmi(f"C2b[{k}]", cp.bmat([
        [_scalar(kappa2 + 1), np.array([[d_bar]])],
        [np.array([[d_bar]]), _scalar(d_bar ** 2 - kappa2 * instance.radii.beta_d - leak_weight * eta)],
    ]), group="C2b")


def add_tracking_bound(prog: ConicProgram, focus, instance: SoopInstance, scaling: PowerScaling):
    """Schur-complement LMIs C5a and the trace budget C5b for a given a^H Z a expression"""
    # congruence scaling of the 4x4 information block
    s = np.sqrt(np.diag(linalg.inv(instance.prior_information)))
    D = np.diag(s)
    info_prior = D @ instance.prior_information @ D
    info_gain = scaling.power_unit * D @ instance.sensing_gain @ D
    info_prior = 0.5 * (info_prior + info_prior.T)
    info_gain = 0.5 * (info_gain + info_gain.T)

    zeta = [prog.add_scalar(f"zeta[{m}]", nonneg=True) for m in range(4)]
    information = info_prior + focus * info_gain
    for m in range(4):
        unit = np.zeros((4, 1))
        unit[m, 0] = 1.0
        prog.add_lmi(f"C5a[{m}]", cp.bmat([[information, unit], [unit.T, _scalar(zeta[m])]]), group="C5a")
    prog.add_ge("C5b", instance.gamma2 - sum(s[m] ** 2 * zeta[m] for m in range(4)), group="C5b")


def build_soop(instance: SoopInstance, e: Optional[Sequence[int]] = None, mode: str = "primal") -> SoopProgram:
    """Relaxed program with the schedule as a parameter; mode 'feasibility' minimizes the C1 violation"""
    if mode not in ("primal", "feasibility"):
        raise DataValidationError(f"unknown SOOP mode '{mode}'")
    K, N = instance.num_users, instance.num_antennas
    if instance.gamma1 > K:
        raise DataValidationError(f"gamma1={instance.gamma1} exceeds the number of users {K}")

    scaling = PowerScaling.for_instance(instance)
    P = instance.p_max / scaling.power_unit
    h = scaling.scale_channels(instance.channels)
    noise = scaling.scale_noise(instance.noise_powers)
    R_info = instance.info_targets
    R_leak = instance.leak_targets

    prog = ConicProgram(f"soop-{mode}", schedule_size=K)
    sched = prog.schedule
    W = [prog.add_hermitian(f"W[{k}]", N, group="psd") for k in range(K)]
    Z = prog.add_hermitian("Z", N, group="psd")
    W_bar = [prog.add_hermitian(f"Wbar[{k}]", N, psd=False) for k in range(K)]
    Z_bar = [prog.add_hermitian(f"Zbar[{k}]", N, psd=False) for k in range(K)]
    pairs = [(k, j) for k in range(K) for j in range(K) if j != k]
    W_pair = {(k, j): prog.add_hermitian(f"Wpair[{k},{j}]", N, psd=False) for k, j in pairs}
    chi = prog.add_scalar("chi", nonneg=True) if mode == "feasibility" else None

    for k in range(K):
        rate_slack = (W_bar[k].quad(h[k])
                      - R_info[k] * sum((W_pair[(k, j)].quad(h[k]) for j in range(K) if j != k), 0.0)
                      - R_info[k] * Z_bar[k].quad(h[k])
                      - R_info[k] * noise[k] * sched[k])
        prog.add_ge(f"C1[{k}]", rate_slack + chi if chi is not None else rate_slack, group="C1")

    for k in range(K):
        add_robust_leakage(prog, k, W_bar[k] - R_leak[k] * Z, instance, scaling)
    add_tracking_bound(prog, Z.quad(instance.eve_response), instance, scaling)

    def bound(weight):
        return HermitianExpr.identity(N, weight * P)

    for k in range(K):
        prog.add_lmi(f"C7a[{k}]", bound(sched[k]) - W_bar[k], group="C7a")
        prog.add_lmi(f"C7b[{k}]", W_bar[k] - W[k] + bound(1 - sched[k]), group="C7b")
        prog.add_lmi(f"C7c[{k}]", W[k] - W_bar[k], group="C7c")
        prog.add_lmi(f"C7d[{k}]", W_bar[k], group="C7d")
    for k in range(K):
        prog.add_lmi(f"C8a[{k}]", bound(sched[k]) - Z_bar[k], group="C8a")
        prog.add_lmi(f"C8b[{k}]", Z_bar[k] - Z + bound(1 - sched[k]), group="C8b")
        prog.add_lmi(f"C8c[{k}]", Z - Z_bar[k], group="C8c")
        prog.add_lmi(f"C8d[{k}]", Z_bar[k], group="C8d")
    for k, j in pairs:
        X = W_pair[(k, j)]
        prog.add_lmi(f"C9a[{k},{j}]", bound(sched[k]) - X, group="C9a")
        prog.add_lmi(f"C9b[{k},{j}]", bound(sched[j]) - X, group="C9b")
        prog.add_lmi(f"C9c[{k},{j}]", X - W[j] + bound(2 - sched[k] - sched[j]), group="C9c")
        prog.add_lmi(f"C9d[{k},{j}]", W[j] - X, group="C9d")
        prog.add_lmi(f"C9e[{k},{j}]", X, group="C9e")

    for k in range(K):
        prog.add_ge(f"cap_W[{k}]", P - W[k].trace(), group="cap")
    prog.add_ge("cap_Z", P - Z.trace(), group="cap")

    if chi is not None:
        prog.minimize(chi)
    else:
        prog.minimize(sum((Wb.trace() for Wb in W_bar), 0.0) + Z.trace())

    if e is not None:
        prog.set_schedule(ScenarioValidator().validate_schedule(e, K))
    return SoopProgram(prog, instance, scaling, mode, W, Z, W_bar, Z_bar, W_pair, chi)


def count_constraints(soop: SoopProgram, family: str) -> int:
    """Number of constraints in a family such as 'C7' (all of C7a-C7d) or 'C5a'"""
    return sum(1 for r in soop.program.constraints if r.group.startswith(family))


@dataclass
class PrimalResult:
    schedule: Tuple[int, ...]
    solution: ConicSolution
    objective: float
    duals: Dict[str, object]


@dataclass
class FeasibilityResult:
    schedule: Tuple[int, ...]
    solution: ConicSolution
    chi: float
    multiplier_sum: float


def _coupling_duals(soop: SoopProgram, solution: ConicSolution) -> Dict[str, object]:
    return {r.name: solution.duals.get(r.name) for r in soop.program.constraints if r.group in COUPLING_GROUPS}


def _lagrangian_cut(soop: SoopProgram, solution: ConicSolution, kind: str, schedule: Tuple[int, ...],
                    generator_value: float, iteration: int) -> Cut:
    """Read the affine-in-e partial Lagrangian off the stored primal/dual pair"""
    prog = soop.program
    prog.load(solution)
    if soop.chi is not None:
        soop.chi.value = np.array(0.0)
    K = soop.instance.num_users
    saved = None if prog.schedule.value is None else np.array(prog.schedule.value)
    try:
        def at(e):
            prog.set_schedule(e)
            return lagrangian_value(prog, solution, COUPLING_GROUPS)
        constant = at(np.zeros(K))
        coefficients = np.array([at(np.eye(K)[k]) - constant for k in range(K)])
    finally:
        if saved is not None:
            prog.set_schedule(saved)
    return Cut(kind, constant, coefficients, tuple(int(b) for b in schedule), generator_value, iteration)


class BendersSolver:
    """Generalized Benders decomposition for one SoopInstance"""

    def __init__(self, instance: SoopInstance, solver: Optional[ConicSolver] = None, epsilon: float = 1e-4,
                 max_iterations: Optional[int] = None, mu_floor: float = 0.0,
                 feasibility_threshold: float = FEASIBILITY_THRESHOLD):
        if epsilon <= 0:
            raise DataValidationError(f"epsilon must be positive, got {epsilon}")
        self.instance = instance
        self.solver = solver or ConicSolver()
        self.epsilon = epsilon
        self.max_iterations = max_iterations or 2 ** instance.num_users + 2
        self.mu_floor = mu_floor
        self.feasibility_threshold = feasibility_threshold
        self._programs: Dict[str, SoopProgram] = {}

    def soop(self, mode: str) -> SoopProgram:
        if mode not in self._programs:
            self._programs[mode] = build_soop(self.instance, mode=mode)
        return self._programs[mode]

    @property
    def power_unit(self) -> float:
        return self.soop("primal").scaling.power_unit

    def solve_primal(self, e: Sequence[int]) -> PrimalResult:
        soop = self.soop("primal")
        schedule = tuple(int(b) for b in ScenarioValidator().validate_schedule(e, self.instance.num_users))
        soop.program.set_schedule(schedule)
        solution = self.solver.solve(soop.program)
        objective = solution.objective * soop.scaling.power_unit if solution.is_optimal else float("nan")
        return PrimalResult(schedule, solution, objective, _coupling_duals(soop, solution))

    def solve_feasibility(self, e: Sequence[int]) -> FeasibilityResult:
        soop = self.soop("feasibility")
        schedule = tuple(int(b) for b in ScenarioValidator().validate_schedule(e, self.instance.num_users))
        soop.program.set_schedule(schedule)
        solution = self.solver.solve(soop.program)
        if solution.status == INFEASIBLE:
            return FeasibilityResult(schedule, solution, float("inf"), float("nan"))
        if not solution.is_optimal:
            raise SolverFailureError(f"feasibility problem for e={schedule} ended with {solution.backend_status}")
        chi = max(float(solution.objective), 0.0)
        multiplier_sum = float(sum(solution.duals.get(f"C1[{k}]", 0.0) for k in range(self.instance.num_users)))
        if chi > self.feasibility_threshold and abs(multiplier_sum - 1.0) > 1e-6:
            logger.warning(f"C1 multipliers of the feasibility problem sum to {multiplier_sum:.8f}")
        return FeasibilityResult(schedule, solution, chi, multiplier_sum)

    def make_optimality_cut(self, result: PrimalResult, iteration: int = 0) -> Cut:
        return _lagrangian_cut(self.soop("primal"), result.solution, "optimality", result.schedule,
                               result.solution.objective, iteration)

    def make_feasibility_cut(self, result: FeasibilityResult, iteration: int = 0) -> Cut:
        cut = _lagrangian_cut(self.soop("feasibility"), result.solution, "feasibility", result.schedule,
                              result.chi, iteration)
        if cut.value(result.schedule) <= 1e-12:
            raise NumericalFailureError(
                f"feasibility cut does not exclude its generator e={result.schedule} (value {cut.value(result.schedule):.3e})"
            )
        return cut

    def initial_schedule(self) -> np.ndarray:
        """All users when gamma1 = K, else the gamma1 users angularly farthest from the eavesdropper"""
        K, gamma1 = self.instance.num_users, self.instance.gamma1
        if gamma1 == K:
            return np.ones(K, dtype=int)
        if self.instance.user_angles is not None:
            separation = np.abs(self.instance.user_angles - self.instance.eve_position.angle)
        else:
            separation = -np.abs(self.instance.channels.conj() @ self.instance.eve_response)
        chosen = np.argsort(-separation, kind="stable")[:gamma1]
        e = np.zeros(K, dtype=int)
        e[chosen] = 1
        return e

    def run(self) -> Tuple[Design, GbdTrace]:
        K = self.instance.num_users
        trace = GbdTrace()
        cuts: List[Cut] = []
        excluded = set()
        evaluated: Dict[Tuple[int, ...], PrimalResult] = {}
        upper, lower = float("inf"), self.mu_floor
        incumbent: Optional[PrimalResult] = None
        e = tuple(int(b) for b in self.initial_schedule())
        status = "not_converged"

        for iteration in range(1, self.max_iterations + 1):
            feasibility = self.solve_feasibility(e)
            if not np.isfinite(feasibility.chi):
                # gamma2 cannot be met at any schedule
                logger.info("Tracking constraint unattainable, SOOP infeasible")
                trace.record(GbdIteration(iteration, upper * self.power_unit, lower * self.power_unit, e, "none"))
                return Design.infeasible("gbd", K, reason="tracking"), trace

            if feasibility.chi <= self.feasibility_threshold:
                primal = self.solve_primal(e)
                if primal.solution.is_optimal:
                    cuts.append(self.make_optimality_cut(primal, iteration))
                    evaluated[e] = primal
                    kind = "optimality"
                    if primal.solution.objective < upper:
                        upper = primal.solution.objective
                        incumbent = primal
                else:
                    logger.warning(f"Primal at e={e} failed ({primal.solution.backend_status}), schedule excluded")
                    excluded.add(e)
                    kind = "excluded"
            else:
                try:
                    cuts.append(self.make_feasibility_cut(feasibility, iteration))
                    kind = "feasibility"
                except NumericalFailureError as err:
                    logger.warning(str(err))
                    kind = "excluded"
                excluded.add(e)

            master = solve_relaxed_master(cuts, self.instance.gamma1, K, self.mu_floor, excluded)
            if master is not None:
                lower = max(lower, master[1])
            trace.record(GbdIteration(iteration, upper * self.power_unit, min(lower, upper) * self.power_unit
                                      if np.isfinite(upper) else lower * self.power_unit, e, kind))
            logger.info(f"GBD iteration {iteration}: e={e} cut={kind} UBD={upper:.6g} LBD={lower:.6g}")

            if master is None:
                status = "optimal" if incumbent is not None else "infeasible"
                break
            if np.isfinite(upper) and upper - lower <= self.epsilon * max(1.0, abs(upper)):
                status = "optimal"
                break
            next_e = tuple(int(b) for b in master[0])
            if next_e in evaluated:
                status = "optimal"
                break
            e = next_e

        if incumbent is None:
            if status == "infeasible":
                return Design.infeasible("gbd", K, reason="schedules"), trace
            return Design.infeasible("gbd", K, reason="iteration cap"), trace
        design = _design_from_primal(self, incumbent, "gbd")
        design.status = status
        design.diagnostics.update({
            'iterations': len(trace.iterations),
            'upper_bound_w': upper * self.power_unit,
            'lower_bound_w': min(lower, upper) * self.power_unit,
            'cuts': len(cuts),
        })
        return design, trace


def _design_from_primal(solver: BendersSolver, result: PrimalResult, method: str) -> Design:
    """Unscale a primal solution and recover rank-one beamformers for the served users"""
    instance = solver.instance
    soop = solver.soop("primal")
    unit = soop.scaling.power_unit
    schedule = np.array(result.schedule, dtype=int)
    covariances = [_psd_part(unit * result.solution.primal[f"W[{k}]"]) for k in range(instance.num_users)]
    Z = _psd_part(unit * result.solution.primal["Z"])
    served_cov = [W if schedule[k] else np.zeros_like(W) for k, W in enumerate(covariances)]

    beamformers: List[Optional[np.ndarray]] = [None] * instance.num_users
    methods = {}
    for k in np.flatnonzero(schedule):
        def verify(w, k=k):
            trial = list(served_cov)
            trial[k] = np.outer(w, w.conj())
            point = DesignPoint(trial, Z, schedule)
            rate_ok = achievable_rate(k, point, instance.channels, instance.noise_powers[k]) >= instance.rate_info[k] - 1e-6
            leak_ok = leakage_rate(k, point, instance.eve_channel, instance.eve_noise) <= instance.rate_leak[k] + 1e-6
            return rate_ok and leak_ok
        try:
            extracted = extract_rank_one(covariances[k], instance.channels[k], verify)
            beamformers[k] = extracted.vector
            methods[int(k)] = extracted.method
        except DataValidationError as err:
            logger.warning(f"User {k}: {err}")

    return Design(
        status="optimal",
        schedule=schedule,
        covariances=covariances,
        sensing_covariance=Z,
        beamformers=beamformers,
        objective=result.objective,
        method=method,
        diagnostics={
            'rank_one_method': methods,
            'planned_trace': instance.planned_trace(Z),
            'solve_time': result.solution.solve_time,
        },
    )


def _psd_part(H: np.ndarray) -> np.ndarray:
    """Clip the negative eigenvalues left by the interior-point tolerance"""
    values, vectors = linalg.eigh(0.5 * (H + H.conj().T))
    values = np.clip(values, 0.0, None)
    return (vectors * values) @ vectors.conj().T


def solve_relaxed_master(cuts: Sequence[Cut], gamma1: int, num_users: int, mu_floor: float = 0.0,
                         excluded=(), feasibility_tol: float = 1e-6) -> Optional[Tuple[np.ndarray, float]]:
    """Exact master by enumeration; ties go to the lexicographically smallest schedule"""
    if gamma1 > num_users:
        raise DataValidationError(f"gamma1={gamma1} exceeds the number of users {num_users}")
    optimality = [c for c in cuts if c.kind == "optimality"]
    feasibility = [c for c in cuts if c.kind == "feasibility"]
    excluded = set(excluded)

    best_e, best_mu = None, float("inf")
    for bits in itertools.product((0, 1), repeat=num_users):
        if sum(bits) < gamma1 or bits in excluded:
            continue
        e = np.array(bits, dtype=float)
        if any(c.value(e) > feasibility_tol for c in feasibility):
            continue
        mu = max([mu_floor] + [c.value(e) for c in optimality])
        if best_e is None or mu < best_mu - 1e-12 * max(1.0, abs(best_mu)):
            best_e, best_mu = np.array(bits, dtype=int), mu
    if best_e is None:
        return None
    return best_e, float(best_mu)


def gbd_solve(instance: SoopInstance, epsilon: float = 1e-4, solver: Optional[ConicSolver] = None,
              max_iterations: Optional[int] = None) -> Tuple[Design, GbdTrace]:
    """Convenience function running the Benders loop to epsilon-optimality"""
    return BendersSolver(instance, solver, epsilon, max_iterations).run()


def solve_primal(instance: SoopInstance, e: Sequence[int], solver: Optional[ConicSolver] = None) -> PrimalResult:
    return BendersSolver(instance, solver).solve_primal(e)


def solve_feasibility(instance: SoopInstance, e: Sequence[int], solver: Optional[ConicSolver] = None) -> FeasibilityResult:
    return BendersSolver(instance, solver).solve_feasibility(e)


def design_for_schedule(instance: SoopInstance, e: Sequence[int], solver: Optional[ConicSolver] = None,
                        method: str = "fixed") -> Design:
    """Optimal beamforming for a given schedule, or an infeasible Design"""
    benders = BendersSolver(instance, solver)
    feasibility = benders.solve_feasibility(e)
    if feasibility.chi > benders.feasibility_threshold:
        return Design.infeasible(method, instance.num_users, chi=feasibility.chi)
    result = benders.solve_primal(e)
    if not result.solution.is_optimal:
        return Design.infeasible(method, instance.num_users, backend=result.solution.backend_status)
    return _design_from_primal(benders, result, method)


def _evaluate_schedule(benders: BendersSolver, bits: Tuple[int, ...]) -> Tuple[Tuple[int, ...], float]:
    feasibility = benders.solve_feasibility(bits)
    if feasibility.chi > benders.feasibility_threshold:
        return bits, float("inf")
    result = benders.solve_primal(bits)
    return bits, (result.objective if result.solution.is_optimal else float("inf"))


def enumerate_optimal(instance: SoopInstance, solver: Optional[ConicSolver] = None, max_workers: int = 1) -> Design:
    """Exhaustive search over every schedule with at least gamma1 users"""
    K = instance.num_users
    if K > 12:
        raise DataValidationError(f"exhaustive search is limited to 12 users, got {K}")
    schedules = [bits for bits in itertools.product((0, 1), repeat=K) if sum(bits) >= instance.gamma1]

    objectives: Dict[Tuple[int, ...], float] = {}
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            future_to_bits = {
                executor.submit(_evaluate_schedule, BendersSolver(instance, solver), bits): bits
                for bits in schedules
            }
            for future in as_completed(future_to_bits):
                bits, value = future.result()
                objectives[bits] = value
    else:
        benders = BendersSolver(instance, solver)
        for bits in schedules:
            objectives[bits] = _evaluate_schedule(benders, bits)[1]

    best_bits, best_value = None, float("inf")
    for bits in schedules:
        value = objectives[bits]
        if value < best_value - 1e-12 * max(1.0, abs(best_value) if np.isfinite(best_value) else 1.0):
            best_bits, best_value = bits, value
    if best_bits is None:
        return Design.infeasible("enumeration", K, schedule_objectives=objectives)

    design = design_for_schedule(instance, best_bits, solver, method="enumeration")
    design.diagnostics['schedule_objectives'] = objectives
    return design
