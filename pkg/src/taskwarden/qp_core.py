"""Dense convex QP solver.

Solves

    minimize    1/2 x^T P x + q^T x
    subject to  G x <= h,  A x = b

with a primal-dual interior-point method (Mehrotra predictor-corrector) on
dense numpy arrays. Problems here are small (tens of variables, about a
hundred rows), so each iteration factors the reduced KKT system directly.
Optimality is certified by `kkt_residual`, never by the iteration alone.
"""

import io
import logging
import time
import warnings
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.optimize import linprog

from taskwarden.exceptions import QpError

__all__ = [
    "QpProblem",
    "QpSettings",
    "QpSolution",
    "QpStatus",
    "dump_problem",
    "kkt_residual",
    "load_problem",
    "solve_qp",
]

logger = logging.getLogger(__name__)

_PSD_TOL = 1e-9
_WARM_PUSH = 1e-2
_ACTIVE_TOL = 1e-9
_DUMP_SECTIONS = ("P", "q", "G", "h", "A", "b")


@dataclass(frozen=True, eq=False)
class QpProblem:
    """A convex QP in standard inequality/equality form.

    `G`/`h` and `A`/`b` may be omitted; they default to empty blocks with
    the right number of columns.
    """

    P: np.ndarray
    q: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    variable_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        """Normalize shapes and check dimensions and convexity."""
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = q.size
        if P.shape != (n, n):
            msg = f"P has shape {P.shape}, expected ({n}, {n})."
            raise QpError(msg)
        G, h = self._block(self.G, self.h, n, "G", "h")
        A, b = self._block(self.A, self.b, n, "A", "b")
        if self.variable_names and len(self.variable_names) != n:
            msg = f"got {len(self.variable_names)} variable names for {n} variables."
            raise QpError(msg)

        P = 0.5 * (P + P.T)
        scale = max(1.0, float(np.abs(P).max(initial=0.0)))
        if n and np.linalg.eigvalsh(P).min() < -_PSD_TOL * scale:
            msg = "P is not positive semi-definite."
            raise QpError(msg)

        for name, value in (("P", P), ("q", q), ("G", G), ("h", h), ("A", A), ("b", b)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))

    @staticmethod
    def _block(matrix, rhs, n: int, mname: str, rname: str):
        if matrix is None and rhs is None:
            return np.zeros((0, n)), np.zeros(0)
        if matrix is None or rhs is None:
            msg = f"{mname} and {rname} must be given together."
            raise QpError(msg)
        matrix = (
            np.asarray(matrix, dtype=float).reshape(-1, n) if n else np.zeros((0, 0))
        )
        rhs = np.asarray(rhs, dtype=float).reshape(-1)
        if matrix.shape[0] != rhs.size:
            msg = f"{mname} has {matrix.shape[0]} rows but {rname} has {rhs.size}."
            raise QpError(msg)
        return matrix, rhs

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.h.size

    @property
    def p(self) -> int:
        return self.b.size

    def objective(self, x) -> float:
        """Objective value at `x`."""
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x)


class QpStatus(StrEnum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class QpSettings:
    """Solver limits and tolerances.

    The solver iterates until the KKT residual drops below `tolerance`. A
    point whose residual is within `acceptance` still counts as optimal when
    iterations run out.
    """

    max_iter: int = 500
    tolerance: float = 1e-8
    acceptance: float = 1e-6
    regularization: float = 1e-9
    step_fraction: float = 0.99
    divergence: float = 1e12


@dataclass(frozen=True, eq=False)
class QpSolution:
    x: np.ndarray
    objective: float
    status: QpStatus
    iterations: int
    solve_time: float
    kkt_residual: float
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def kkt_residual(problem: QpProblem, x, z=None, y=None) -> float:
    """Largest violation among the KKT conditions at `(x, z, y)`.

    Covers stationarity, primal feasibility, complementarity and dual
    sign. Missing multipliers count as zero.
    """
    x = np.asarray(x, dtype=float)
    z = np.zeros(problem.m) if z is None else np.asarray(z, dtype=float)
    y = np.zeros(problem.p) if y is None else np.asarray(y, dtype=float)

    stationarity = problem.P @ x + problem.q + problem.G.T @ z + problem.A.T @ y
    slack = problem.G @ x - problem.h
    terms = [np.abs(stationarity).max(initial=0.0)]
    terms.append(max(0.0, slack.max(initial=0.0)))
    terms.append(np.abs(problem.A @ x - problem.b).max(initial=0.0))
    terms.append(np.abs(z * slack).max(initial=0.0))
    terms.append(max(0.0, (-z).max(initial=0.0)))
    return float(max(terms))


def _solve_linear(matrix: np.ndarray, rhs: np.ndarray, *, posdef: bool) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        try:
            return linalg.solve(
                matrix,
                rhs,
                assume_a="pos" if posdef else "sym",
                check_finite=False,
            )
        except (linalg.LinAlgError, ValueError):
            return linalg.lstsq(matrix, rhs, check_finite=False)[0]


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    shrinking = dv < 0
    if not shrinking.any():
        return 1.0
    return min(1.0, float(np.min(-v[shrinking] / dv[shrinking])))


def _newton_direction(problem, kkt, s, z, residuals, rsz):
    """Solve the reduced Newton system for one search direction.

    Eliminates `ds` and `dz` so only `(P + G^T Z S^-1 G) dx + A^T dy`
    needs a factorization.
    """
    rd, rpe, rpi = residuals
    G = problem.G
    rhs_x = -rd + G.T @ ((rsz - z * rpi) / s)
    sol = _solve_linear(kkt, np.concatenate([rhs_x, -rpe]), posdef=problem.p == 0)
    dx, dy = sol[: problem.n], sol[problem.n :]
    ds = -rpi - G @ dx
    dz = (-rsz - z * ds) / s
    return dx, dy, dz, ds


def _recover_duals(problem: QpProblem, x: np.ndarray):
    """Least-squares multipliers for the constraints active at `x`."""
    active = np.flatnonzero(problem.G @ x - problem.h >= -_ACTIVE_TOL)
    basis = np.hstack([problem.G[active].T, problem.A.T])
    grad = problem.P @ x + problem.q
    if basis.shape[1] == 0:
        return np.zeros(problem.m), np.zeros(problem.p)
    coeffs = linalg.lstsq(basis, -grad, check_finite=False)[0]
    z = np.zeros(problem.m)
    z[active] = coeffs[: active.size]
    return z, coeffs[active.size :]


def _classify_failure(problem: QpProblem) -> QpStatus:
    """Decide between Infeasible and MaxIter with an LP feasibility check."""
    result = linprog(
        np.zeros(problem.n),
        A_ub=problem.G if problem.m else None,
        b_ub=problem.h if problem.m else None,
        A_eq=problem.A if problem.p else None,
        b_eq=problem.b if problem.p else None,
        bounds=[(None, None)] * problem.n,
        method="highs",
    )
    infeasible = result.status == 2  # noqa: PLR2004
    return QpStatus.INFEASIBLE if infeasible else QpStatus.MAX_ITER


def _finish(problem, x, z, y, status, iterations, start) -> QpSolution:
    return QpSolution(
        x=x,
        objective=problem.objective(x),
        status=status,
        iterations=iterations,
        solve_time=time.perf_counter() - start,
        kkt_residual=kkt_residual(problem, x, z, y),
        z=z,
        y=y,
    )


def _solve_equality_only(problem, P, start, settings) -> QpSolution:
    n, p = problem.n, problem.p
    kkt = np.block([[P, problem.A.T], [problem.A, np.zeros((p, p))]])
    sol = _solve_linear(kkt, np.concatenate([-problem.q, problem.b]), posdef=p == 0)
    x, y = sol[:n], sol[n:]
    z = np.zeros(0)
    residual = kkt_residual(problem, x, z, y)
    if residual <= settings.acceptance:
        status = QpStatus.OPTIMAL
    else:
        status = _classify_failure(problem)
    return _finish(problem, x, z, y, status, 1, start)


def _initial_point(problem, P, warm_x, warm_z, warm_y):
    G, h, A, b = problem.G, problem.h, problem.A, problem.b
    n, m, p = problem.n, problem.m, problem.p
    if warm_x is not None:
        x = warm_x.copy()
        s = np.maximum(h - G @ x, _WARM_PUSH)
        z = np.maximum(warm_z, _WARM_PUSH) if warm_z is not None else np.ones(m)
        y = warm_y.copy() if warm_y is not None else np.zeros(p)
        return x, s, z, y

    kkt = np.block([[P + G.T @ G, A.T], [A, np.zeros((p, p))]])
    sol = _solve_linear(kkt, np.concatenate([-problem.q + G.T @ h, b]), posdef=p == 0)
    x, y = sol[:n], sol[n:]
    s = h - G @ x
    z = -s.copy()
    if s.min() <= 0:
        s += 1.0 - s.min()
    if z.min() <= 0:
        z += 1.0 - z.min()
    return x, s, z, y


def _unpack_warm(problem: QpProblem, warm_start):
    if warm_start is None:
        return None, None, None
    if isinstance(warm_start, QpSolution):
        x = np.asarray(warm_start.x, dtype=float)
        z = warm_start.z if warm_start.z.size == problem.m else None
        y = warm_start.y if warm_start.y.size == problem.p else None
    else:
        x, z, y = np.asarray(warm_start, dtype=float).reshape(-1), None, None
    if x.size != problem.n:
        msg = f"warm start has {x.size} entries, expected {problem.n}."
        raise QpError(msg)
    return x, z, y


def solve_qp(
    problem: QpProblem,
    warm_start=None,
    settings: QpSettings | None = None,
) -> QpSolution:
    """Solve a convex QP.

    Args:
        problem: the QP.
        warm_start: an n-vector or a previous `QpSolution` of a problem with
            the same shape. A warm point that already meets the tolerance is
            returned after 0 iterations.
        settings: solver limits; defaults to `QpSettings()`.

    Returns:
        A `QpSolution`. Status is Optimal only when the KKT residual is
        within the acceptance tolerance.

    """
    settings = settings or QpSettings()
    start = time.perf_counter()
    P = problem.P + settings.regularization * np.eye(problem.n)
    G, h, A, b = problem.G, problem.h, problem.A, problem.b
    m, p = problem.m, problem.p

    warm_x, warm_z, warm_y = _unpack_warm(problem, warm_start)
    if warm_x is not None:
        if warm_z is None:
            warm_z, warm_y = _recover_duals(problem, warm_x)
        if kkt_residual(problem, warm_x, warm_z, warm_y) <= settings.tolerance:
            return _finish(problem, warm_x, warm_z, warm_y, QpStatus.OPTIMAL, 0, start)

    if m == 0:
        return _solve_equality_only(problem, P, start, settings)

    x, s, z, y = _initial_point(problem, P, warm_x, warm_z, warm_y)
    best = (np.inf, x, z, y)
    iterations = 0

    while True:
        residual = kkt_residual(problem, x, z, y)
        if residual < best[0]:
            best = (residual, x, z, y)
        if residual <= settings.tolerance or iterations >= settings.max_iter:
            break
        if not (np.isfinite(x).all() and np.isfinite(z).all()) or (
            z.max() > settings.divergence
        ):
            logger.debug("QP iterate diverged after %d iterations", iterations)
            break

        residuals = (
            P @ x + problem.q + G.T @ z + A.T @ y,
            A @ x - b,
            G @ x + s - h,
        )
        mu = float(s @ z) / m
        H = P + (G.T * (z / s)) @ G
        kkt = np.block([[H, A.T], [A, np.zeros((p, p))]]) if p else H

        # Predictor (affine scaling), then centred corrector.
        dx, dy, dz, ds = _newton_direction(problem, kkt, s, z, residuals, s * z)
        step = min(_max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + step * ds) @ (z + step * dz)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        rsz = s * z + ds * dz - sigma * mu

        dx, dy, dz, ds = _newton_direction(problem, kkt, s, z, residuals, rsz)
        step = min(_max_step(s, ds), _max_step(z, dz))
        step = min(1.0, settings.step_fraction * step)
        x = x + step * dx
        y = y + step * dy
        z = z + step * dz
        s = s + step * ds
        iterations += 1

    residual, x, z, y = best
    if residual <= settings.acceptance:
        status = QpStatus.OPTIMAL
    else:
        status = _classify_failure(problem)
        logger.debug("QP not converged: %s, residual %.3e", status, residual)
    return _finish(problem, x, z, y, status, iterations, start)


# ---- plain-text dump ----------------------------------------------------


def dump_problem(problem: QpProblem, path: Path) -> Path:
    """Write `problem` to a plain-text file that `load_problem` reads back.

    The file holds a header line, an optional `names` line, then one
    `[X]` section per matrix with whitespace-separated rows.
    """
    buffer = io.StringIO()
    buffer.write(f"# taskwarden qp n={problem.n} m={problem.m} p={problem.p}\n")
    if problem.variable_names:
        buffer.write("names " + " ".join(problem.variable_names) + "\n")
    for name in _DUMP_SECTIONS:
        buffer.write(f"[{name}]\n")
        value = np.atleast_2d(getattr(problem, name))
        if value.size:
            np.savetxt(buffer, value, fmt="%.17g")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    return path


def load_problem(path: Path) -> QpProblem:
    """Read a problem written by `dump_problem`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = dict(part.split("=", 1) for part in lines[0].split() if "=" in part)
    n, m, p = int(header["n"]), int(header["m"]), int(header["p"])
    names: tuple[str, ...] = ()
    sections: dict[str, list[str]] = {}
    current = None
    for line in lines[1:]:
        if line.startswith("names "):
            names = tuple(line.split()[1:])
        elif line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif line.strip():
            sections[current].append(line)

    def read(name: str, rows: int, cols: int) -> np.ndarray:
        if rows == 0 or cols == 0:
            return np.zeros((rows, cols))
        return np.loadtxt(sections[name], ndmin=2).reshape(rows, cols)

    return QpProblem(
        P=read("P", n, n),
        q=read("q", 1, n).reshape(-1),
        G=read("G", m, n),
        h=read("h", 1, m).reshape(-1),
        A=read("A", p, n),
        b=read("b", 1, p).reshape(-1),
        variable_names=names,
    )
