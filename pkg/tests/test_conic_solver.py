import numpy as np
import pytest
import scipy.sparse as sp
from pydantic import ValidationError
from scipy.optimize import linprog

from modules.conic_program import BlockKind, ConeBlock, ConicProgram, svec
from modules.conic_solver import SolverSettings, SolveStatus, kkt_residuals, solve


def program(c, A, b, blocks, name="test"):
    A = sp.csr_matrix(np.atleast_2d(np.asarray(A, dtype=float))) if len(b) else sp.csr_matrix((0, len(c)))
    prog = ConicProgram(
        c=np.asarray(c, dtype=float), A=A, b=np.asarray(b, dtype=float),
        blocks=tuple(blocks), var_map={"x": np.arange(len(c))}, row_map={}, name=name,
    )
    prog.validate()
    return prog


def random_lp(rng, m=5, n=10):
    A = rng.standard_normal((m, n))
    b = A @ rng.uniform(0.5, 1.5, n)
    c = A.T @ rng.standard_normal(m) + rng.uniform(0.1, 1.0, n)
    return A, b, c


def test_nonnegative_variable_minimum():
    sol = solve(program([1.0], [], [], [ConeBlock(BlockKind.NONNEG, 0, 1)]))
    assert sol.status == SolveStatus.OPTIMAL
    assert sol.primal_objective == pytest.approx(0.0, abs=1e-7)


def test_second_order_cone_norm():
    prog = program([1.0, 0.0, 0.0], [[0, 1, 0], [0, 0, 1]], [3.0, 4.0], [ConeBlock(BlockKind.SOC, 0, 3)])
    sol = solve(prog)
    assert sol.ok
    assert sol.x[0] == pytest.approx(5.0, rel=1e-6)


def test_rotated_cone_product_bound():
    prog = program([1.0, 1.0, 0.0], [[0, 0, 1]], [2.0], [ConeBlock(BlockKind.RSOC, 0, 3)])
    sol = solve(prog)
    assert sol.ok
    assert sol.primal_objective == pytest.approx(2 * np.sqrt(2), rel=1e-6)
    assert sol.x[0] == pytest.approx(np.sqrt(2), rel=1e-3)


def test_free_variables_with_offset():
    # min y + 10  s.t.  y - x = 1, x >= 0
    prog = ConicProgram(
        c=np.array([1.0, 0.0]), A=sp.csr_matrix([[1.0, -1.0]]), b=np.array([1.0]),
        blocks=(ConeBlock(BlockKind.FREE, 0, 1), ConeBlock(BlockKind.NONNEG, 1, 1)),
        var_map={"y": np.array([0]), "x": np.array([1])}, row_map={}, offset=10.0,
    )
    sol = solve(prog)
    assert sol.ok
    assert sol.primal_objective == pytest.approx(11.0, rel=1e-7)
    assert sol.values(prog, "y") == pytest.approx([1.0], rel=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_lp_matches_highs(seed):
    rng = np.random.default_rng(seed)
    A, b, c = random_lp(rng)
    reference = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    sol = solve(program(c, A, b, [ConeBlock(BlockKind.NONNEG, 0, c.size)]))
    assert sol.ok
    assert sol.primal_objective == pytest.approx(reference.fun, rel=1e-6, abs=1e-7)
    assert sol.dual_objective == pytest.approx(reference.fun, rel=1e-6, abs=1e-7)
    assert np.all(sol.x >= -1e-8)


@pytest.mark.parametrize("seed", [3, 4])
def test_trace_constrained_psd_gives_smallest_eigenvalue(seed):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((3, 3))
    C = C + C.T
    prog = program(svec(C), [svec(np.eye(3))], [1.0], [ConeBlock(BlockKind.PSD, 0, 6, 3)])
    sol = solve(prog)
    assert sol.ok
    assert sol.primal_objective == pytest.approx(np.linalg.eigvalsh(C)[0], rel=1e-6, abs=1e-7)


def test_mixed_cones():
    # min t - s  s.t. ||(x1, x2)|| <= t, x1 + x2 = 2, s + x1 = 1, s >= 0
    c = np.array([1.0, 0.0, 0.0, -1.0])
    A = [[0, 1, 1, 0], [0, 1, 0, 1]]
    blocks = [ConeBlock(BlockKind.SOC, 0, 3), ConeBlock(BlockKind.NONNEG, 3, 1)]
    sol = solve(program(c, A, [2.0, 1.0], blocks))
    assert sol.ok
    t, x1, x2, s = sol.x
    assert t >= np.hypot(x1, x2) - 1e-6
    assert sol.primal_objective == pytest.approx(1.0, abs=1e-6)
    assert x1 == pytest.approx(0.0, abs=1e-3)


def test_primal_infeasibility_certificate():
    prog = program([1.0, 1.0], [[1.0, 1.0]], [-1.0], [ConeBlock(BlockKind.NONNEG, 0, 2)])
    sol = solve(prog)
    assert sol.status == SolveStatus.PRIMAL_INFEASIBLE
    assert not sol.usable()
    cert = sol.certificate
    assert prog.b @ cert > 0
    assert np.all(-(prog.A.T @ cert) >= -1e-6)


def test_iteration_limit_keeps_best_iterate(rng):
    A, b, c = random_lp(rng)
    sol = solve(program(c, A, b, [ConeBlock(BlockKind.NONNEG, 0, c.size)]), SolverSettings(max_iterations=2))
    assert sol.status == SolveStatus.ITERATION_LIMIT
    assert np.all(np.isfinite(sol.x))
    assert not sol.usable(1e-12)
    assert len(sol.history) == 3


def test_solves_are_deterministic(rng):
    A, b, c = random_lp(rng)
    prog = program(c, A, b, [ConeBlock(BlockKind.NONNEG, 0, c.size)])
    first, second = solve(prog), solve(prog)
    assert np.array_equal(first.x, second.x)
    assert first.iterations == second.iterations


def test_callback_receives_iteration_lines(rng):
    A, b, c = random_lp(rng)
    records = []
    sol = solve(program(c, A, b, [ConeBlock(BlockKind.NONNEG, 0, c.size)]), callback=records.append)
    assert len(records) == sol.iterations + 1
    assert records[0].to_line().startswith("ITER k=0 ")
    assert records[-1].pres <= 1e-8
    assert set(sol.summary()) == {"status", "objective", "iterations", "seconds", "pres", "dres", "gap"}


def test_both_linear_solvers_agree(rng):
    A, b, c = random_lp(rng)
    prog = program(c, A, b, [ConeBlock(BlockKind.NONNEG, 0, c.size)])
    a = solve(prog, SolverSettings(linear_solver="superlu"))
    b_ = solve(prog, SolverSettings(linear_solver="scipy"))
    assert a.primal_objective == pytest.approx(b_.primal_objective, rel=1e-6)


def test_kkt_residuals_at_zero():
    prog = ConicProgram(
        c=np.array([1.0, 2.0]), A=sp.csr_matrix([[1.0, 1.0]]), b=np.array([3.0]),
        blocks=(ConeBlock(BlockKind.FREE, 0, 1), ConeBlock(BlockKind.NONNEG, 1, 1)),
        var_map={}, row_map={},
    )
    r_p, r_d, gap = kkt_residuals(prog, np.zeros(2), np.zeros(1), np.array([5.0, 0.0]))
    assert r_p == pytest.approx(3.0)
    assert r_d == pytest.approx(np.sqrt(5.0))
    assert gap == 0.0


def test_settings_validation():
    with pytest.raises(ValidationError):
        SolverSettings(linear_solver="mumps")
    with pytest.raises(ValidationError):
        SolverSettings(max_iterations=0)
    with pytest.raises(ValidationError):
        SolverSettings(step_fraction=1.5)
    assert SolverSettings().stall_iterations == 25
