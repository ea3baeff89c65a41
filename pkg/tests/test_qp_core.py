"""Tests for the dense interior-point QP solver."""

import itertools

import numpy as np
import pytest

from taskwarden.exceptions import QpError
from taskwarden.qp_core import (
    QpProblem,
    QpSettings,
    QpStatus,
    dump_problem,
    kkt_residual,
    load_problem,
    solve_qp,
)


def _random_problem(seed: int, n: int = 4, m: int = 6, p: int = 0) -> QpProblem:
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    P = M @ M.T + 0.5 * np.eye(n)
    x_feasible = rng.normal(size=n)
    G = rng.normal(size=(m, n))
    h = G @ x_feasible + rng.uniform(0.1, 1.0, size=m)
    A = rng.normal(size=(p, n))
    b = A @ x_feasible
    return QpProblem(P=P, q=rng.normal(size=n) * 3, G=G, h=h, A=A, b=b)


def _brute_force(problem: QpProblem) -> np.ndarray:
    """Reference: try every active set and keep the KKT point."""
    n = problem.n
    best = None
    for size in range(min(problem.m, n - problem.p) + 1):
        for active in itertools.combinations(range(problem.m), size):
            rows = np.vstack([problem.G[list(active)], problem.A])
            k = rows.shape[0]
            kkt = np.block([[problem.P, rows.T], [rows, np.zeros((k, k))]])
            rhs = np.concatenate([-problem.q, problem.h[list(active)], problem.b])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x, z = sol[:n], sol[n : n + size]
            feasible = np.all(problem.G @ x <= problem.h + 1e-9)
            if feasible and np.all(z >= -1e-9):
                value = problem.objective(x)
                if best is None or value < best[0]:
                    best = (value, x)
    assert best is not None
    return best[1]


@pytest.mark.parametrize("seed", range(6))
def test_matches_active_set_enumeration(seed):
    problem = _random_problem(seed)
    solution = solve_qp(problem)

    assert solution.status is QpStatus.OPTIMAL
    assert solution.kkt_residual <= 1e-6
    np.testing.assert_allclose(solution.x, _brute_force(problem), atol=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_matches_active_set_enumeration_with_equalities(seed):
    problem = _random_problem(100 + seed, n=5, m=5, p=2)
    solution = solve_qp(problem)

    assert solution.optimal
    np.testing.assert_allclose(solution.x, _brute_force(problem), atol=1e-6)
    np.testing.assert_allclose(problem.A @ solution.x, problem.b, atol=1e-7)


@pytest.mark.parametrize("seed", range(4))
def test_matches_cvxopt(seed):
    """The objective agrees with an independent solver."""
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import solvers  # noqa: PLC0415

    problem = _random_problem(200 + seed, n=8, m=12, p=1)
    ref = solvers.qp(
        cvxopt.matrix(problem.P),
        cvxopt.matrix(problem.q),
        cvxopt.matrix(problem.G),
        cvxopt.matrix(problem.h),
        cvxopt.matrix(problem.A),
        cvxopt.matrix(problem.b),
        options={
            "show_progress": False,
            "abstol": 1e-9,
            "reltol": 1e-9,
            "feastol": 1e-9,
        },
    )
    solution = solve_qp(problem)

    assert ref["status"] == "optimal"
    objective = pytest.approx(ref["primal objective"], rel=1e-6, abs=1e-6)
    assert solution.objective == objective


def test_unconstrained_and_equality_only_problems():
    P = np.diag([2.0, 4.0])
    q = np.array([-2.0, -4.0])

    free = solve_qp(QpProblem(P=P, q=q))
    np.testing.assert_allclose(free.x, [1.0, 1.0], atol=1e-7)

    pinned = solve_qp(QpProblem(P=P, q=q, A=[[1.0, 1.0]], b=[1.0]))
    assert pinned.optimal
    assert pinned.x.sum() == pytest.approx(1.0)
    # Stationarity: 2 x1 - 2 = 4 x2 - 4.
    assert 2 * pinned.x[0] - 2 == pytest.approx(4 * pinned.x[1] - 4, abs=1e-7)


def test_infeasible_problem_is_reported():
    """x <= -1 together with x >= 1 has no solution."""
    problem = QpProblem(P=[[1.0]], q=[0.0], G=[[1.0], [-1.0]], h=[-1.0, -1.0])
    solution = solve_qp(problem, settings=QpSettings(max_iter=50))

    assert solution.status is QpStatus.INFEASIBLE
    assert not solution.optimal


def test_iteration_limit_is_reported():
    problem = QpProblem(
        P=np.eye(2) * 2,
        q=[-4.0, -4.0],
        G=[[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]],
        h=[1.0, 0.0, 0.0],
    )
    limited = solve_qp(problem, settings=QpSettings(max_iter=1))

    assert limited.status is QpStatus.MAX_ITER
    assert limited.iterations == 1

    full = solve_qp(problem)
    assert full.optimal
    np.testing.assert_allclose(full.x, [0.5, 0.5], atol=1e-6)


def test_warm_start_at_the_optimum_takes_no_iterations():
    problem = _random_problem(7)
    first = solve_qp(problem)
    assert first.kkt_residual <= QpSettings().tolerance

    again = solve_qp(problem, warm_start=first)

    assert again.iterations == 0
    assert again.optimal
    np.testing.assert_allclose(again.x, first.x)


def test_warm_start_from_a_vector_converges():
    problem = _random_problem(8)
    reference = solve_qp(problem)

    solution = solve_qp(problem, warm_start=reference.x + 0.1)

    assert solution.optimal
    np.testing.assert_allclose(solution.x, reference.x, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_warm_resolve_of_a_nearby_problem_is_not_slower(seed):
    problem = _random_problem(300 + seed, n=6, m=10)
    previous = solve_qp(problem)
    nudged = QpProblem(
        P=problem.P,
        q=problem.q + np.random.default_rng(seed).normal(scale=0.05, size=problem.n),
        G=problem.G,
        h=problem.h,
    )

    cold = solve_qp(nudged)
    warm = solve_qp(nudged, warm_start=previous)

    assert warm.optimal
    assert 0 < warm.iterations <= cold.iterations
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-6)


def test_constraint_order_does_not_change_the_solution():
    problem = _random_problem(11, n=5, m=8, p=1)
    order = np.random.default_rng(0).permutation(problem.m)
    shuffled = QpProblem(
        P=problem.P,
        q=problem.q,
        G=problem.G[order],
        h=problem.h[order],
        A=problem.A,
        b=problem.b,
    )

    np.testing.assert_allclose(solve_qp(shuffled).x, solve_qp(problem).x, atol=1e-6)


def test_warm_start_size_is_checked():
    with pytest.raises(QpError, match="warm start"):
        solve_qp(_random_problem(1), warm_start=np.zeros(3))


def test_kkt_residual_flags_infeasible_points():
    problem = QpProblem(P=np.eye(1), q=[0.0], G=[[1.0]], h=[1.0])

    assert kkt_residual(problem, [0.0], [0.0]) == 0.0
    assert kkt_residual(problem, [3.0], [0.0]) == pytest.approx(3.0)


@pytest.mark.parametrize(
    ("kwargs", "message"),
    [
        ({"P": [[1.0, 0.0], [0.0, -1.0]], "q": [0.0, 0.0]}, "positive semi-definite"),
        ({"P": np.eye(3), "q": [0.0, 0.0]}, "expected"),
        ({"P": np.eye(2), "q": [0.0, 0.0], "G": [[1.0, 0.0]]}, "together"),
        ({"P": np.eye(2), "q": [0.0, 0.0], "G": [[1.0, 0.0]], "h": [1.0, 2.0]}, "rows"),
    ],
)
def test_problem_validation(kwargs, message):
    with pytest.raises(QpError, match=message):
        QpProblem(**kwargs)


def test_dump_and_load_keep_the_problem(tmp_path):
    problem = _random_problem(3, p=1)
    named = QpProblem(
        P=problem.P,
        q=problem.q,
        G=problem.G,
        h=problem.h,
        A=problem.A,
        b=problem.b,
        variable_names=("a", "b", "c", "d"),
    )

    loaded = load_problem(dump_problem(named, tmp_path / "dumps" / "qp.txt"))

    for name in ("P", "q", "G", "h", "A", "b"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(named, name))
    assert loaded.variable_names == ("a", "b", "c", "d")
