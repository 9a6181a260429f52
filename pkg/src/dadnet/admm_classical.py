"""Iterative ADMM for the generalized LASSO ``1/2 ||Ax - y||^2 + lam ||Phi x||_1``.

The splitting ``Phi x = z`` with scaled dual ``u`` gives

    x+ = (A^T A + rho Phi^T Phi)^{-1} (A^T y + rho Phi^T (z - u))
    z+ = S_{lam/rho}(Phi x+ - u)
    u+ = u + Phi x+ - z+

started from ``(x, z, u) = (0, 0, 0)``. This "unfolded" form is the one the
decoder layers in :mod:`dadnet.admm_dad` are derived from, and this module
is their oracle.

The x- and z-updates above disagree on the sign of the dual: on every
coordinate the threshold lets through, ``u`` doubles, so the iteration does
not settle. :func:`admm_solve` therefore defaults to the textbook scaled
form, which differs only in ``z+ = S_{lam/rho}(Phi x+ + u)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dadnet.errors import InvalidArgumentError
from dadnet.linalg import SpdFactor, soft_threshold, spd_factor, spd_solve


@dataclass(frozen=True)
class ClassicalProblem:
    A: np.ndarray
    Phi: np.ndarray
    y: np.ndarray
    lam: float
    rho: float = 1.0
    eta: float | None = None  # noise bound of the constrained form; informational only

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        Phi = np.asarray(self.Phi, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "y", y)
        if A.ndim != 2 or Phi.ndim != 2:
            raise InvalidArgumentError("A and Phi must be matrices")
        m, n = A.shape
        N = Phi.shape[0]
        if Phi.shape[1] != n:
            raise InvalidArgumentError(f"Phi has {Phi.shape[1]} columns, A has {n}")
        if y.shape[0] != m:
            raise InvalidArgumentError(f"y has length {y.shape[0]}, A has {m} rows")
        # N == n is allowed here (decoupled test cases); the decoder enforces N > n
        if not m < n <= N:
            raise InvalidArgumentError(f"need m < n <= N, got m={m}, n={n}, N={N}")
        if not self.lam > 0 or not self.rho > 0:
            raise InvalidArgumentError("lam and rho must be positive")
        if self.eta is not None and self.eta < 0:
            raise InvalidArgumentError("eta must be nonnegative")

    @property
    def threshold(self) -> float:
        return self.lam / self.rho

    def system_matrix(self) -> np.ndarray:
        return self.A.T @ self.A + self.rho * (self.Phi.T @ self.Phi)

    def factor(self) -> SpdFactor:
        return spd_factor(self.system_matrix())


@dataclass(frozen=True)
class AdmmState:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, problem: ClassicalProblem) -> "AdmmState":
        N, n = problem.Phi.shape
        tail = problem.y.shape[1:]
        return cls(np.zeros((n, *tail)), np.zeros((N, *tail)), np.zeros((N, *tail)), 0)


@dataclass
class ConvergenceTrace:
    objectives: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    dual_residuals: list[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.objectives)

    @property
    def p_star_estimate(self) -> float:
        """Best objective seen; ADMM gives no certificate beyond that."""
        return min(self.objectives) if self.objectives else float("nan")


def objective(problem: ClassicalProblem, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != problem.A.shape[1]:
        raise InvalidArgumentError(f"x has length {x.shape[0]}, expected {problem.A.shape[1]}")
    r = problem.A @ x - problem.y
    return 0.5 * float(np.sum(r * r)) + problem.lam * float(np.sum(np.abs(problem.Phi @ x)))


def x_update(problem: ClassicalProblem, factor: SpdFactor, z, u):
    rhs = problem.A.T @ problem.y + problem.rho * (problem.Phi.T @ (z - u))
    return spd_solve(factor, rhs)


SCHEMES = ("unfolded", "textbook")


def z_update(Phi_x, u, threshold: float, scheme: str = "unfolded"):
    return soft_threshold(Phi_x - u if scheme == "unfolded" else Phi_x + u, threshold)


def admm_step(problem: ClassicalProblem, state: AdmmState, factor: SpdFactor,
              scheme: str = "unfolded") -> AdmmState:
    if scheme not in SCHEMES:
        raise InvalidArgumentError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    N, n = problem.Phi.shape
    if state.x.shape[0] != n or state.z.shape[0] != N or state.u.shape[0] != N:
        raise InvalidArgumentError("state dimensions do not match the problem")
    x = x_update(problem, factor, state.z, state.u)
    Phi_x = problem.Phi @ x
    z = z_update(Phi_x, state.u, problem.threshold, scheme)
    u = state.u + Phi_x - z
    return AdmmState(x, z, u, state.k + 1)


def admm_solve(problem: ClassicalProblem, max_iters: int = 2000, primal_tol: float = 1e-6,
               scheme: str = "textbook", dual_tol: float | None = None):
    """Run ADMM until ``||Phi x - z||_2 <= primal_tol`` or ``max_iters``.

    The primal residual alone can dip early while ``z`` is still moving, so
    the stop also waits for the dual residual ``rho ||Phi^T (z - z_prev)||_2``
    to reach ``dual_tol`` (defaults to ``primal_tol``).

    ``scheme="unfolded"`` runs the decoder's iteration instead; see the
    module docstring for why that one is not the default here.

    Returns
    -------
    x : ndarray
        Final iterate.
    trace : ConvergenceTrace
        Objective and primal residual after every iteration.
    """
    if max_iters < 1:
        raise InvalidArgumentError("max_iters must be at least 1")
    if primal_tol <= 0:
        raise InvalidArgumentError("primal_tol must be positive")
    dual_tol = primal_tol if dual_tol is None else dual_tol
    factor = problem.factor()
    state = AdmmState.zeros(problem)
    trace = ConvergenceTrace()
    for _ in range(max_iters):
        z_prev = state.z
        state = admm_step(problem, state, factor, scheme)
        residual = float(np.linalg.norm(problem.Phi @ state.x - state.z))
        dual = problem.rho * float(np.linalg.norm(problem.Phi.T @ (state.z - z_prev)))
        trace.objectives.append(objective(problem, state.x))
        trace.residuals.append(residual)
        trace.dual_residuals.append(dual)
        if residual <= primal_tol and dual <= dual_tol:
            break
    return state.x, trace


def run_iterations(problem: ClassicalProblem, iterations: int,
                   scheme: str = "unfolded") -> AdmmState:
    """Exactly ``iterations`` ADMM steps from the zero state, no stopping rule."""
    factor = problem.factor()
    state = AdmmState.zeros(problem)
    for _ in range(iterations):
        state = admm_step(problem, state, factor, scheme)
    return state
