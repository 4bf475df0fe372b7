import cvxpy as cp
import numpy as np
import pytest

from nfsecure_utils.conic_solver import (
    NOT_CONVERGED,
    OPTIMAL,
    INFEASIBLE,
    ConicProgram,
    ConicSolver,
    HermitianExpr,
    dump_triplets,
    embed_hermitian,
    extract_rank_one,
    residuals,
    unembed_hermitian,
)
from nfsecure_utils.data_validation import DataValidationError


def _hermitian_psd(n, rng):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T / n


def test_scalar_program_and_dual_sign(solver):
    prog = ConicProgram("lp")
    x = prog.add_scalar("x")
    prog.add_ge("lower", x - 1.0)
    prog.minimize(x)
    solution = solver.solve(prog)
    assert solution.status == OPTIMAL
    assert solution.objective == pytest.approx(1.0, abs=1e-6)
    assert solution.primal["x"] == pytest.approx(1.0, abs=1e-6)
    assert solution.duals["lower"] == pytest.approx(1.0, abs=1e-6)


def test_infeasible_program_is_a_status(solver):
    prog = ConicProgram("empty")
    x = prog.add_scalar("x", nonneg=True)
    prog.add_ge("negative", -1.0 - x)
    prog.minimize(x)
    assert solver.solve(prog).status == INFEASIBLE


def test_hermitian_lmi_recovers_constant(solver, rng):
    H = _hermitian_psd(3, rng)
    prog = ConicProgram("sdp")
    X = prog.add_hermitian("X", 3, psd=False)
    prog.add_lmi("X>=H", X - HermitianExpr.constant(H))
    prog.minimize(X.trace())
    solution = solver.solve(prog)
    assert solution.status == OPTIMAL
    assert solution.objective == pytest.approx(np.trace(H).real, rel=1e-5)
    assert np.allclose(solution.primal["X"], H, atol=1e-5)
    dual = solution.duals["X>=H"]
    assert np.allclose(dual, dual.conj().T)
    assert np.linalg.eigvalsh(dual).min() > -1e-6


def test_residuals_small_at_optimum(solver, rng):
    H = _hermitian_psd(2, rng)
    v = np.array([1.0, 1j])
    prog = ConicProgram("sdp")
    X = prog.add_hermitian("X", 2)
    prog.add_ge("focus", X.quad(v) - 1.0)
    prog.add_ge("budget", 10.0 - X.trace())
    prog.minimize(X.inner(H))
    solution = solver.solve(prog)
    report = residuals(prog, solution)
    assert report.primal_infeasibility <= 1e-6
    assert report.dual_infeasibility <= 1e-6
    assert solution.gap <= 1e-5


def test_duplicate_names_rejected():
    prog = ConicProgram("dup")
    prog.add_scalar("x")
    with pytest.raises(DataValidationError):
        prog.add_scalar("x")


def test_group_bookkeeping():
    prog = ConicProgram("groups", schedule_size=2)
    a = prog.add_scalar("a", nonneg=True)
    prog.add_ge("c[0]", a - prog.schedule[0], group="C1")
    prog.add_ge("c[1]", a - prog.schedule[1], group="C1")
    assert prog.count("C1") == 2
    assert prog.count("sign") == 1
    assert prog.record("c[1]").group == "C1"


def test_non_hermitian_constant_rejected():
    with pytest.raises(DataValidationError):
        HermitianExpr.constant(np.array([[0, 1], [0, 0]], dtype=complex))


def test_embedding_preserves_spectrum(rng):
    H = _hermitian_psd(3, rng)
    S = embed_hermitian(H)
    assert np.allclose(unembed_hermitian(S), H)
    doubled = np.sort(np.repeat(np.linalg.eigvalsh(H), 2))
    assert np.allclose(np.linalg.eigvalsh(S), doubled)


def test_rank_one_projection_is_exact_for_rank_one(rng):
    v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    W = np.outer(v, v.conj())
    result = extract_rank_one(W, h)
    assert result.method == "projection"
    assert np.allclose(np.outer(result.vector, result.vector.conj()), W)


def test_rank_one_falls_back_to_eigenvector(rng):
    W = np.diag([3.0, 1.0, 0.0]).astype(complex)
    h = np.array([1.0, 1.0, 0.0], dtype=complex)
    result = extract_rank_one(W, h, verify=lambda w: False)
    assert result.method == "eigenvector" and not result.verified
    assert np.abs(result.vector[0]) ** 2 == pytest.approx(3.0)


def test_rank_one_rejects_unserved_user():
    with pytest.raises(DataValidationError):
        extract_rank_one(np.diag([1.0, 0.0]).astype(complex), np.array([0.0, 1.0]))


def test_dump_triplets_writes_every_constraint(tmp_path):
    prog = ConicProgram("dump")
    x = prog.add_scalar("x", nonneg=True)
    prog.add_ge("c", 2.0 - x)
    prog.minimize(x)
    path = tmp_path / "program.txt"
    count = dump_triplets(prog, str(path))
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    assert count >= 3
    assert {l.split()[0] for l in lines} == {"1", "2"}


def _lp(name="lp"):
    prog = ConicProgram(name)
    x = prog.add_scalar("x")
    prog.add_ge("lower", x - 1.0)
    prog.minimize(x)
    return prog


def test_retry_ladder_relaxes_then_switches_backend():
    solver = ConicSolver(tolerance=1e-8, backend="CLARABEL")
    ladder = solver.attempts()
    assert ladder[:2] == [("CLARABEL", 1e-8), ("CLARABEL", 1e-6)]
    if "SCS" in cp.installed_solvers():
        assert ladder[2] == ("SCS", 1e-6)
    assert ConicSolver(tolerance=1e-8, backend="CLARABEL", retries=False).attempts() == [("CLARABEL", 1e-8)]


def test_backend_error_is_retried(solver, monkeypatch):
    prog = _lp()
    problem = prog.problem
    real_solve = problem.solve
    calls = []

    def flaky_solve(*args, **kwargs):
        calls.append(kwargs)
        if len(calls) == 1:
            raise cp.error.SolverError("numerical trouble")
        return real_solve(*args, **kwargs)

    monkeypatch.setattr(problem, "solve", flaky_solve)
    solution = solver.solve(prog)
    assert len(calls) == 2
    assert solution.status == OPTIMAL
    assert solution.objective == pytest.approx(1.0, abs=1e-5)
    assert solution.backend == solver.attempts()[1][0]


def test_exhausted_retries_report_not_converged(solver, monkeypatch):
    prog = _lp()
    calls = []

    def broken_solve(*args, **kwargs):
        calls.append(kwargs.get("solver"))
        raise cp.error.SolverError("numerical trouble")

    monkeypatch.setattr(prog.problem, "solve", broken_solve)
    solution = solver.solve(prog)
    assert solution.status == NOT_CONVERGED
    assert solution.backend_status == "solver_error"
    assert calls == [backend for backend, _ in solver.attempts()]


@pytest.mark.parametrize("n,seed", [(2, 1), (3, 2), (4, 3)])
def test_strictly_complementary_sdp_meets_kkt(n, seed):
    # min <C, X> s.t. tr X >= 1, X >= 0 has X* = v v^H for the bottom eigenvector
    rng = np.random.default_rng(seed)
    C = _hermitian_psd(n, rng) + 0.5 * np.eye(n)
    eigenvalues, eigenvectors = np.linalg.eigh(C)
    assert eigenvalues[1] - eigenvalues[0] > 1e-3

    prog = ConicProgram("sdp")
    X = prog.add_hermitian("X", n)
    prog.add_ge("unit_trace", X.trace() - 1.0)
    prog.minimize(X.inner(C))
    solution = ConicSolver(tolerance=1e-10, max_iterations=500).solve(prog)
    assert solution.status == OPTIMAL

    v = eigenvectors[:, 0]
    assert solution.objective == pytest.approx(eigenvalues[0], abs=1e-7)
    assert np.allclose(solution.primal["X"], np.outer(v, v.conj()), atol=1e-6)
    assert solution.duals["unit_trace"] == pytest.approx(eigenvalues[0], abs=1e-6)

    report = residuals(prog, solution)
    assert report.primal_infeasibility <= 1e-7
    assert report.dual_infeasibility <= 1e-7
    assert report.complementarity <= 1e-7
    assert report.stationarity <= 1e-7
    assert solution.gap <= 1e-7
