"""
Dense conic programs over nonnegative and PSD cones.

Programs are modelled with cvxpy. Complex Hermitian matrix variables are
carried as a symmetric real part plus a skew-symmetric imaginary part, and
every complex LMI is embedded into the real symmetric form
[[Re H, -Im H], [Im H, Re H]] before it reaches the backend. Duals of
embedded LMIs are mapped back to Hermitian matrices by averaging the two
real blocks.

A program may carry a binary schedule as a cvxpy Parameter; fixing the
schedule and re-solving reuses the compiled problem.
"""

import logging
import time
import numpy as np
import cvxpy as cp
import scipy.sparse as sp
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from scipy import linalg

from .data_validation import DataValidationError, SolverFailureError

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible_detected"
NOT_CONVERGED = "not_converged"


def embed_hermitian(H: np.ndarray) -> np.ndarray:
    """[[Re H, -Im H], [Im H, Re H]]"""
    H = np.asarray(H, dtype=complex)
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


def unembed_hermitian(S: np.ndarray) -> np.ndarray:
    """Inverse of embed_hermitian, averaging the duplicated blocks"""
    S = np.asarray(S, dtype=float)
    n = S.shape[0] // 2
    real = 0.5 * (S[:n, :n] + S[n:, n:])
    imag = 0.5 * (S[n:, :n] - S[:n, n:])
    H = real + 1j * imag
    return 0.5 * (H + H.conj().T)


def _skew_map(n: int) -> sp.csc_matrix:
    """Sparse map from the strict upper triangle to a column-major skew-symmetric matrix"""
    rows, cols, vals = [], [], []
    j = 0
    for a in range(n):
        for b in range(a + 1, n):
            rows += [a + b * n, b + a * n]
            cols += [j, j]
            vals += [1.0, -1.0]
            j += 1
    return sp.csc_matrix((vals, (rows, cols)), shape=(n * n, max(j, 1)))


class HermitianExpr:
    """Affine Hermitian matrix expression held as (real part, imaginary part)"""

    def __init__(self, re, im):
        self.re = re
        self.im = im

    @classmethod
    def constant(cls, H: np.ndarray) -> "HermitianExpr":
        H = np.asarray(H, dtype=complex)
        if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(H), initial=0.0)):
            raise DataValidationError("LMI constant is not Hermitian")
        return cls(H.real.copy(), H.imag.copy())

    @classmethod
    def identity(cls, n: int, scale=1.0) -> "HermitianExpr":
        return cls(scale * np.eye(n), np.zeros((n, n)))

    @property
    def size(self) -> int:
        return int(self.re.shape[0])

    def __add__(self, other: "HermitianExpr") -> "HermitianExpr":
        return HermitianExpr(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "HermitianExpr") -> "HermitianExpr":
        return HermitianExpr(self.re - other.re, self.im - other.im)

    def __neg__(self) -> "HermitianExpr":
        return HermitianExpr(-self.re, -self.im)

    def __mul__(self, scalar) -> "HermitianExpr":
        return HermitianExpr(self.re * scalar, self.im * scalar)

    __rmul__ = __mul__

    def quad(self, v: np.ndarray):
        """Re(v^H X v) as a real affine scalar"""
        v = np.asarray(v, dtype=complex)
        p, q = v.real, v.imag
        return p @ self.re @ p + q @ self.re @ q - 2 * (p @ self.im @ q)

    def inner(self, H: np.ndarray):
        """Re Tr(H X) for a constant Hermitian H"""
        H = np.asarray(H, dtype=complex)
        return cp.sum(cp.multiply(H.real, self.re)) + cp.sum(cp.multiply(H.imag, self.im))

    def trace(self):
        return cp.trace(self.re)

    def sandwich(self, U: np.ndarray) -> "HermitianExpr":
        """U^H X U for a constant complex U"""
        U = np.asarray(U, dtype=complex)
        Ur, Ui = U.real, U.imag
        XrUr, XrUi = self.re @ Ur, self.re @ Ui
        XiUr, XiUi = self.im @ Ur, self.im @ Ui
        real = Ur.T @ (XrUr - XiUi) + Ui.T @ (XrUi + XiUr)
        imag = Ur.T @ (XrUi + XiUr) - Ui.T @ (XrUr - XiUi)
        return HermitianExpr(real, imag)

    def embed(self):
        return cp.bmat([[self.re, -self.im], [self.im, self.re]])


class HermitianVariable(HermitianExpr):
    """N x N Hermitian decision variable"""

    def __init__(self, name: str, n: int):
        self.name = name
        self.n = n
        self.real_part = cp.Variable((n, n), symmetric=True, name=f"{name}.re")
        self.skew_part = cp.Variable(max(n * (n - 1) // 2, 1), name=f"{name}.im") if n > 1 else None
        if self.skew_part is not None:
            imag = cp.reshape(_skew_map(n) @ self.skew_part, (n, n), order='F')
        else:
            imag = np.zeros((1, 1))
        super().__init__(self.real_part, imag)

    @property
    def leaves(self) -> List[cp.Variable]:
        return [self.real_part] + ([self.skew_part] if self.skew_part is not None else [])

    @property
    def value(self) -> Optional[np.ndarray]:
        if self.real_part.value is None:
            return None
        imag = np.asarray(self.im.value) if self.skew_part is not None else np.zeros((1, 1))
        return self.real_part.value + 1j * imag

    def assign(self, H: np.ndarray):
        """Load a Hermitian value into the underlying real variables"""
        H = np.asarray(H, dtype=complex)
        self.real_part.value = 0.5 * (H.real + H.real.T)
        if self.skew_part is not None:
            # column-major pairs (a, b) with a < b, ordered by a then b
            pairs = [(a, b) for a in range(self.n) for b in range(a + 1, self.n)]
            self.skew_part.value = np.array([H.imag[a, b] for a, b in pairs])


@dataclass
class ConstraintRecord:
    name: str
    group: str
    kind: str
    expression: Any
    constraint: Any
    hermitian: bool = False


@dataclass
class ConicSolution:
    """Primal and dual values of one solve"""
    status: str
    objective: float
    primal: Dict[str, Any] = field(default_factory=dict)
    duals: Dict[str, Any] = field(default_factory=dict)
    gap: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    lagrangian_objective: float = float("nan")
    backend: str = ""
    solve_time: float = 0.0
    backend_status: str = ""
    raw_values: Dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    raw_duals: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class ResidualReport:
    primal_infeasibility: float
    dual_infeasibility: float
    complementarity: float
    stationarity: float
    primal_objective: float
    lagrangian_objective: float
    per_constraint: Dict[str, float] = field(default_factory=dict)

    def within(self, tol: float) -> bool:
        return max(self.primal_infeasibility, self.dual_infeasibility) <= tol


class ConicProgram:
    """Named variables and grouped constraints of one convex program"""

    def __init__(self, name: str = "program", schedule_size: int = 0):
        self.name = name
        self.schedule = cp.Parameter(schedule_size, name="e") if schedule_size > 0 else None
        self.scalars: Dict[str, cp.Variable] = {}
        self.hermitians: Dict[str, HermitianVariable] = {}
        self.constraints: List[ConstraintRecord] = []
        self._names = set()
        self._objective = cp.Constant(0.0)
        self._problem: Optional[cp.Problem] = None

    # Declarations
    def add_scalar(self, name: str, nonneg: bool = False) -> cp.Variable:
        self._claim(name)
        var = cp.Variable(name=name)
        self.scalars[name] = var
        if nonneg:
            self.add_ge(f"{name}>=0", var, group="sign")
        return var

    def add_hermitian(self, name: str, n: int, psd: bool = True, group: str = "psd") -> HermitianVariable:
        self._claim(name)
        var = HermitianVariable(name, n)
        self.hermitians[name] = var
        if psd:
            self.add_lmi(f"{name}>=0", var, group=group)
        return var

    def add_ge(self, name: str, expr, group: str = "linear") -> ConstraintRecord:
        """expr >= 0 (scalar or elementwise)"""
        return self._add(name, group, "ge", expr, expr >= 0)

    def add_eq(self, name: str, expr, group: str = "linear") -> ConstraintRecord:
        return self._add(name, group, "eq", expr, expr == 0)

    def add_lmi(self, name: str, expr: Union[HermitianExpr, Any], group: str = "lmi") -> ConstraintRecord:
        """expr >= 0 in the PSD order; Hermitian expressions are embedded first"""
        hermitian = isinstance(expr, HermitianExpr)
        matrix = expr.embed() if hermitian else expr
        record = self._add(name, group, "lmi", matrix, matrix >> 0)
        record.hermitian = hermitian
        return record

    def minimize(self, expr):
        self._check_declared(expr, "objective")
        self._objective = expr
        self._problem = None

    def set_schedule(self, e: Sequence[float]):
        if self.schedule is None:
            return
        self.schedule.value = np.asarray(e, dtype=float).reshape(self.schedule.shape)

    # Introspection
    @property
    def objective(self):
        return self._objective

    @property
    def problem(self) -> cp.Problem:
        if self._problem is None:
            self._problem = cp.Problem(cp.Minimize(self._objective), [r.constraint for r in self.constraints])
        return self._problem

    def leaves(self) -> List[cp.Variable]:
        out = list(self.scalars.values())
        for var in self.hermitians.values():
            out.extend(var.leaves)
        return out

    def group(self, name: str) -> List[ConstraintRecord]:
        return [r for r in self.constraints if r.group == name]

    def count(self, group: str) -> int:
        return len(self.group(group))

    def record(self, name: str) -> ConstraintRecord:
        for r in self.constraints:
            if r.name == name:
                return r
        raise KeyError(name)

    def load(self, solution: ConicSolution):
        """Write a solution's primal values back into the cvxpy variables"""
        for var in self.leaves():
            if var.id in solution.raw_values:
                var.value = solution.raw_values[var.id]

    def _claim(self, name: str):
        if name in self._names:
            raise DataValidationError(f"duplicate name '{name}' in program {self.name}")
        self._names.add(name)

    def _check_declared(self, expr, where: str):
        if not isinstance(expr, cp.Expression):
            return
        declared = {v.id for v in self.leaves()}
        stray = [v.name() for v in expr.variables() if v.id not in declared]
        if stray:
            raise DataValidationError(f"{where} references undeclared variables {stray}")

    def _add(self, name, group, kind, expr, constraint) -> ConstraintRecord:
        self._claim(name)
        self._check_declared(expr, name)
        record = ConstraintRecord(name, group, kind, expr, constraint)
        self.constraints.append(record)
        self._problem = None
        return record


def _value(expr) -> np.ndarray:
    if isinstance(expr, cp.Expression):
        return np.asarray(expr.value, dtype=float)
    return np.asarray(expr, dtype=float)


def _violation(kind: str, value: np.ndarray) -> float:
    if value.size == 0:
        return 0.0
    if kind == "ge":
        return float(max(0.0, -np.min(value)))
    if kind == "eq":
        return float(np.max(np.abs(value)))
    sym = 0.5 * (value + value.T)
    return float(max(0.0, -np.linalg.eigvalsh(sym)[0]))


def _inner(dual: np.ndarray, value: np.ndarray) -> float:
    return float(np.sum(np.asarray(dual, dtype=float) * np.asarray(value, dtype=float)))


def lagrangian_value(program: ConicProgram, solution: ConicSolution, groups: Optional[Iterable[str]] = None) -> float:
    """f(x) - sum <dual, g(x)> at the variables' current values, restricted to some groups"""
    selected = set(groups) if groups is not None else None
    total = float(_value(program.objective))
    for r in program.constraints:
        if selected is not None and r.group not in selected:
            continue
        dual = solution.raw_duals.get(r.name)
        if dual is None:
            continue
        total -= _inner(dual, _value(r.expression))
    return total


def residuals(program: ConicProgram, solution: ConicSolution,
              primal_override: Optional[Dict[str, Any]] = None, seed: int = 0) -> ResidualReport:
    """Recompute KKT residuals from scratch at the solution (optionally with some primal values replaced)"""
    program.load(solution)
    for name, value in (primal_override or {}).items():
        if name in program.scalars:
            program.scalars[name].value = np.asarray(value, dtype=float).reshape(program.scalars[name].shape)
        elif name in program.hermitians:
            program.hermitians[name].assign(value)
        else:
            raise KeyError(name)

    per_constraint = {}
    dual_infeasibility = 0.0
    complementarity = 0.0
    for r in program.constraints:
        value = _value(r.expression)
        per_constraint[r.name] = _violation(r.kind, value)
        dual = solution.raw_duals.get(r.name)
        if dual is None:
            continue
        dual = np.asarray(dual, dtype=float)
        if r.kind != "eq":
            dual_infeasibility = max(dual_infeasibility, _violation(r.kind, dual))
        complementarity += abs(_inner(dual, value))

    primal_objective = float(_value(program.objective))
    lagrangian_objective = lagrangian_value(program, solution)

    # the Lagrangian is affine in x, so a flat direction check measures stationarity
    stationarity = 0.0
    leaves = [v for v in program.leaves() if v.value is not None]
    if leaves and solution.raw_duals:
        rng = np.random.default_rng(seed)
        base = {v.id: np.array(v.value, dtype=float) for v in leaves}
        steps = {}
        for v in leaves:
            step = rng.standard_normal(v.shape) if v.shape else np.array(rng.standard_normal())
            if v.attributes.get('symmetric'):
                step = 0.5 * (step + step.T)
            steps[v.id] = step
        norm = np.sqrt(sum(float(np.sum(s ** 2)) for s in steps.values()))
        for v in leaves:
            v.value = base[v.id] + steps[v.id] / norm
        shifted = lagrangian_value(program, solution)
        for v in leaves:
            v.value = base[v.id]
        stationarity = abs(shifted - lagrangian_objective)

    return ResidualReport(
        primal_infeasibility=max(per_constraint.values(), default=0.0),
        dual_infeasibility=dual_infeasibility,
        complementarity=complementarity,
        stationarity=stationarity,
        primal_objective=primal_objective,
        lagrangian_objective=lagrangian_objective,
        per_constraint=per_constraint,
    )


class ConicSolver:
    """Interior-point solves through cvxpy (Clarabel by default, SCS as fallback)

    A solve that raises inside the backend or stops short of a status is
    retried at a relaxed tolerance, then on SCS when it is installed.
    """

    RELAXATION = 100.0
    RELAXED_FLOOR = 1e-6

    def __init__(self, tolerance: float = 1e-7, max_iterations: int = 200, backend: Optional[str] = None,
                 verbose: bool = False, retries: bool = True):
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.backend = backend or self.default_backend()
        self.verbose = verbose
        self.retries = retries

    @staticmethod
    def default_backend() -> str:
        installed = cp.installed_solvers()
        for name in ("CLARABEL", "SCS"):
            if name in installed:
                return name
        raise SolverFailureError(f"no PSD-capable cvxpy backend installed (found {installed})")

    def _options(self, backend: str, tolerance: float) -> Dict[str, Any]:
        if backend == "CLARABEL":
            return {
                "max_iter": self.max_iterations,
                "tol_gap_abs": tolerance,
                "tol_gap_rel": tolerance,
                "tol_feas": tolerance,
            }
        if backend == "SCS":
            return {"eps_abs": tolerance, "eps_rel": tolerance, "max_iters": max(self.max_iterations, 50_000)}
        return {}

    def attempts(self) -> List[Tuple[str, float]]:
        """(backend, tolerance) pairs tried in order"""
        ladder = [(self.backend, self.tolerance)]
        if not self.retries:
            return ladder
        relaxed = max(self.tolerance * self.RELAXATION, self.RELAXED_FLOOR)
        if relaxed > self.tolerance:
            ladder.append((self.backend, relaxed))
        if self.backend != "SCS" and "SCS" in cp.installed_solvers():
            ladder.append(("SCS", relaxed))
        return ladder

    def solve(self, program: ConicProgram) -> ConicSolution:
        ladder = self.attempts()
        solution = None
        for index, (backend, tolerance) in enumerate(ladder):
            if index > 0:
                logger.warning(f"{program.name}: retrying on {backend} at tolerance {tolerance:.0e} "
                               f"after {solution.backend_status}")
            solution = self._solve_once(program, backend, tolerance)
            if solution.status != NOT_CONVERGED:
                return solution
        return solution

    def _solve_once(self, program: ConicProgram, backend: str, tolerance: float) -> ConicSolution:
        problem = program.problem
        start = time.perf_counter()
        try:
            problem.solve(solver=backend, verbose=self.verbose, **self._options(backend, tolerance))
        except cp.error.SolverError as e:
            logger.warning(f"{program.name}: backend {backend} failed: {e}")
            return ConicSolution(NOT_CONVERGED, float("nan"), solve_time=time.perf_counter() - start,
                                 backend_status="solver_error", backend=backend)
        elapsed = time.perf_counter() - start
        backend_status = str(problem.status)

        if backend_status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE, cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return ConicSolution(INFEASIBLE, float("nan"), solve_time=elapsed, backend_status=backend_status,
                                 backend=backend)
        if backend_status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return ConicSolution(NOT_CONVERGED, float("nan"), solve_time=elapsed, backend_status=backend_status,
                                 backend=backend)

        solution = ConicSolution(OPTIMAL, float(problem.value), solve_time=elapsed, backend_status=backend_status,
                                 backend=backend)
        for var in program.leaves():
            if var.value is not None:
                solution.raw_values[var.id] = np.array(var.value, dtype=float)
        for name, var in program.scalars.items():
            solution.primal[name] = float(var.value) if var.value is not None else float("nan")
        for name, var in program.hermitians.items():
            solution.primal[name] = var.value
        for r in program.constraints:
            dual = r.constraint.dual_value
            if dual is None:
                continue
            dual = np.array(dual, dtype=float)
            solution.raw_duals[r.name] = dual
            if r.kind == "lmi" and r.hermitian:
                solution.duals[r.name] = unembed_hermitian(dual)
            elif dual.size == 1:
                solution.duals[r.name] = float(dual.reshape(-1)[0])
            else:
                solution.duals[r.name] = dual

        report = residuals(program, solution)
        scale = 1.0 + abs(solution.objective)
        solution.primal_residual = report.primal_infeasibility
        solution.dual_residual = report.dual_infeasibility
        solution.lagrangian_objective = report.lagrangian_objective
        # L(x*, y*) equals the optimum when complementary slackness holds
        solution.gap = abs(solution.objective - report.lagrangian_objective) / scale
        if backend_status == cp.OPTIMAL_INACCURATE and not report.within(np.sqrt(tolerance) * scale):
            logger.warning(f"{program.name}: inaccurate solve, residuals {report.primal_infeasibility:.2e}")
            solution.status = NOT_CONVERGED
        return solution


def solve(program: ConicProgram, tol: float = 1e-7, max_iterations: int = 200,
          backend: Optional[str] = None) -> ConicSolution:
    """Convenience wrapper around ConicSolver"""
    return ConicSolver(tol, max_iterations, backend).solve(program)


@dataclass
class RankOneResult:
    vector: np.ndarray
    method: str
    verified: bool


def extract_rank_one(W: np.ndarray, h: np.ndarray, verify: Optional[Callable[[np.ndarray], bool]] = None,
                     tol: float = 1e-12) -> RankOneResult:
    """w = (h^H W h)^(-1/2) W h, falling back to the scaled dominant eigenvector"""
    W = np.asarray(W, dtype=complex)
    W = 0.5 * (W + W.conj().T)
    h = np.asarray(h, dtype=complex)
    power = float(np.real(np.vdot(h, W @ h)))
    scale = max(float(np.max(np.abs(W), initial=0.0)), 1e-300) * float(np.real(np.vdot(h, h)))
    if power <= tol * scale:
        raise DataValidationError(f"h^H W h = {power:.3e}: user is unserved or degenerate")

    w = W @ h / np.sqrt(power)
    if verify is None or verify(w):
        return RankOneResult(w, "projection", True)

    values, vectors = linalg.eigh(W)
    u = vectors[:, -1]
    inner = np.vdot(h, u)
    if abs(inner) > 0:
        u = u * np.exp(-1j * np.angle(inner))
    w = np.sqrt(max(values[-1], 0.0)) * u
    verified = verify(w)
    logger.warning(f"rank-one projection failed re-verification, dominant eigenvector used (verified={verified})")
    return RankOneResult(w, "eigenvector", verified)


def dump_triplets(program: ConicProgram, path: str) -> int:
    """
    Write the program as sparse triplets, one nonzero per line:
        constraint_id variable_id row col real imag
    Variable id 0 is the constant term; variables are numbered from 1 in
    declaration order and suffixed with the flat (column-major) entry,
    e.g. 3.17. Rows and columns index the (embedded) constraint
    expression. Returns the number of lines written.
    """
    leaves = program.leaves()
    if program.schedule is not None and program.schedule.value is None:
        program.set_schedule(np.zeros(program.schedule.shape))
    saved = {v.id: v.value for v in leaves}
    for v in leaves:
        v.value = np.zeros(v.shape)
    ids = {v.id: j + 1 for j, v in enumerate(leaves)}
    lines = [f"# program {program.name}", "# constraint_id variable_id row col real imag"]
    for v in leaves:
        lines.append(f"# variable {ids[v.id]} {v.name()} shape={v.shape}")
    try:
        for i, r in enumerate(program.constraints, start=1):
            expr = r.expression
            shape = expr.shape if expr.shape else (1,)
            m = shape[0]
            constant = np.asarray(expr.value, dtype=float).reshape(-1, order='F')
            for idx in np.flatnonzero(constant):
                lines.append(f"{i} 0 {idx % m} {idx // m} {constant[idx]:.17g} 0")
            grads = expr.grad
            for var, jac in grads.items():
                if jac is None:
                    continue
                coo = sp.coo_matrix(jac)
                for var_idx, expr_idx, val in zip(coo.row, coo.col, coo.data):
                    if val != 0:
                        lines.append(f"{i} {ids[var.id]}.{var_idx} {expr_idx % m} {expr_idx // m} {val:.17g} 0")
    finally:
        for v in leaves:
            v.value = saved[v.id]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    return len(lines)
