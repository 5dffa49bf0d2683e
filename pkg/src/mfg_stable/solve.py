"""Nonlinear solvers for the discrete MFG system.

* :func:`newton_solve` - Newton's method on ``F = I + T_h o G``.
* :func:`picard_solve` - damped fixed-point iteration ``m <- (1-t) m + t Phi(m)``
  where ``Phi`` solves the HJB equation for frozen ``m`` and then the
  Fokker-Planck equation for the resulting drift.
* :func:`smallest_singular_value` - inverse power iteration on the normal
  equations of ``dF`` in the H1 x L2 inner product.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import LinearSolveFailure, MaxIterationsError, ValidationError
from .fem import Field
from .mfg import LinearizedSystem, Problem, State, scaled_residual

__all__ = [
    "SolverOptions",
    "SolveReport",
    "SingularValueResult",
    "newton_solve",
    "picard_solve",
    "hjb_solve",
    "fp_solve",
    "smallest_singular_value",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-11
    max_iter: Optional[int] = None  # 50 for Newton, 500 for Picard
    damping: float = 0.5
    line_search: bool = False
    min_iter: int = 0  # Newton only: steps taken even when the start is within tol

    def __post_init__(self):
        if not self.tol > 0:
            raise ValidationError("tol must be positive", field="solver.tol")
        if not 0.0 < self.damping <= 1.0:
            raise ValidationError("damping must lie in (0, 1]", field="solver.damping")
        if self.max_iter is not None and self.max_iter < 0:
            raise ValidationError("max_iter must be non-negative", field="solver.max_iter")

    def iterations(self, default: int) -> int:
        return default if self.max_iter is None else self.max_iter


@dataclass
class SolveReport:
    method: str
    converged: bool = False
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    rate_estimates: list = field(default_factory=list)
    message: str = ""

    def as_dict(self):
        return {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_history": list(map(float, self.residual_history)),
            "step_history": list(map(float, self.step_history)),
            "rate_estimates": list(map(float, self.rate_estimates)),
            "message": self.message,
        }


def _newton_rates(res):
    out = []
    for a, b in zip(res[:-1], res[1:]):
        if 0.0 < a < 1.0 and b > 0.0:
            out.append(np.log(b) / np.log(a))
    return out


def _linear_rates(res):
    return [b / a for a, b in zip(res[:-1], res[1:]) if a > 0.0]


def _residual(problem, x):
    """Return ``(|F(x)|, A x + G(x))``; the second vector is the Newton right-hand side."""
    mesh = problem.mesh
    ru, rm = scaled_residual(problem, State.from_vector(mesh, x))
    S = problem.helmholtz
    return fem.h1_l2_norm(mesh, S.solve(ru), S.solve(rm)), np.concatenate([ru, rm])


def newton_solve(problem: Problem, init: State, opts: SolverOptions = SolverOptions()):
    """Newton iteration ``F(x_k) + dF[x_k](x_{k+1} - x_k) = 0``.

    Each step solves ``(diag(A, A) + dG[x_k]) delta = -(A x_k + G(x_k))``,
    which is the same linear system multiplied through by ``diag(A, A)``.
    Stops when the H1 x L2 norm of ``F`` drops to ``opts.tol``.
    """
    problem.check_state(init)
    mesh = problem.mesh
    max_iter = opts.iterations(50)
    report = SolveReport(method="newton")
    x = init.vector.copy()
    res, rhs = _residual(problem, x)
    report.residual_history.append(res)

    while res > opts.tol or report.iterations < opts.min_iter:
        if report.iterations >= max_iter:
            report.rate_estimates = _newton_rates(report.residual_history)
            report.message = f"residual {res:.3e} above tol after {max_iter} iterations"
            raise MaxIterationsError(report.message, report)
        lin = LinearizedSystem(problem, State.from_vector(mesh, x))
        try:
            delta = lin._newton_solver.solve(-rhs)
        except LinearSolveFailure as exc:
            report.message = f"Newton matrix singular at iteration {report.iterations}: {exc}"
            raise LinearSolveFailure(report.message, report) from exc

        t = 1.0
        x_new = x + delta
        res_new, rhs_new = _residual(problem, x_new)
        if opts.line_search:
            while res_new >= res and t > 1e-4:
                t *= 0.5
                x_new = x + t * delta
                res_new, rhs_new = _residual(problem, x_new)
        N = mesh.node_count
        report.step_history.append(fem.h1_l2_norm(mesh, t * delta[:N], t * delta[N:]))
        x, res, rhs = x_new, res_new, rhs_new
        report.iterations += 1
        report.residual_history.append(res)
        log.debug("newton %d: residual %.3e", report.iterations, res)

    report.converged = True
    report.rate_estimates = _newton_rates(report.residual_history)
    return State.from_vector(mesh, x), report


def hjb_solve(problem: Problem, m_fixed, opts: SolverOptions = SolverOptions(), u_init=None) -> Field:
    """Solve ``-Lap u + |Du|^2/2 + lam u = f(m) + s_u`` for frozen ``m``.

    Newton on the scalar equation: ``(A + C(Du_j)) (u_{j+1} - u_j) = -R(u_j)`` with
    ``R(u) = K u + load(|Du|^2/2) + M (lam u - f(m) - s_u)``.
    """
    mesh = problem.mesh
    m = np.asarray(getattr(m_fixed, "coeffs", m_fixed), dtype=float)
    K = fem.assemble_stiffness(mesh)
    M = problem.mass
    S = problem.helmholtz
    data = problem.coupling(m)
    if problem.source_u is not None:
        data = data + problem.source_u.coeffs
    u = np.zeros(mesh.node_count) if u_init is None else np.array(getattr(u_init, "coeffs", u_init), dtype=float)
    max_iter = opts.iterations(50)
    zeros = np.zeros(mesh.node_count)

    def residual(u):
        Du = fem.element_gradient(mesh, u)
        R = K @ u + fem.element_load(mesh, 0.5 * np.einsum("ei,ei->e", Du, Du)) + M @ (problem.lam * u - data)
        return fem.h1_l2_norm(mesh, S.solve(R), zeros), Du, R

    res, Du, R = residual(u)
    it = 0
    while res > opts.tol:
        if it >= max_iter:
            raise MaxIterationsError(f"HJB solve: residual {res:.3e} after {max_iter} iterations")
        J = problem.A + fem.assemble_convection(mesh, Du)
        u = u + fem.LinearSolver(J).solve(-R)
        res, Du, R = residual(u)
        it += 1

    bound = (problem.coupling.sup_f + _sup(problem.source_u)) / problem.lam
    if np.max(np.abs(u)) > bound + 1e-8:
        warnings.warn(f"HJB solution exceeds the a priori bound: {np.max(np.abs(u)):.6g} > {bound:.6g}")
    return Field(mesh, u)


def _sup(f):
    return 0.0 if f is None else float(np.max(np.abs(f.coeffs)))


def fp_solve(problem: Problem, u_fixed) -> Field:
    """Solve ``-Lap m - div(m Du) + lam m = lam m0 + s_m`` for frozen ``u``.

    Testing with the constant function gives ``lam * mass(m) = 1^T b``
    exactly, but the assembled column sums only satisfy this up to rounding
    and the defect grows like ``eps * n^2``.  A constant shift restores the
    identity; its effect on the residual is at rounding level.
    """
    mesh = problem.mesh
    Du = fem.element_gradient(mesh, u_fixed)
    L = problem.A + fem.assemble_transport(mesh, Du)
    b = problem.m_load
    m = fem.LinearSolver(L).solve(b)
    m += b.sum() / problem.lam - Field(mesh, m).mass()
    return Field(mesh, m)


def picard_solve(problem: Problem, init_m, opts: SolverOptions = SolverOptions()):
    """Damped fixed-point iteration on the density.

    ``residual_history`` records the damped increments ``|m_{k+1} - m_k|_L2``
    (the stopping quantity) and ``step_history`` the undamped defects
    ``|Phi(m_k) - m_k|_L2``.
    """
    mesh = problem.mesh
    m = np.array(getattr(init_m, "coeffs", init_m), dtype=float)
    M = problem.mass
    mass = float(np.asarray(M.sum(axis=0)).ravel() @ m)
    if abs(mass - 1.0) > 1e-10:
        raise ValidationError(f"initial density must have unit mass, got {mass!r}", field="init_m")
    theta = opts.damping
    max_iter = opts.iterations(500)
    report = SolveReport(method="picard")
    inner = SolverOptions(tol=min(opts.tol, 1e-12), max_iter=50)
    u = None

    def l2(v):
        return float(np.sqrt(max(v @ (M @ v), 0.0)))

    while True:
        if report.iterations >= max_iter:
            report.rate_estimates = _linear_rates(report.residual_history)
            report.message = f"increment above tol after {max_iter} iterations"
            raise MaxIterationsError(report.message, report)
        u = hjb_solve(problem, m, inner, u_init=u).coeffs
        m_tilde = fp_solve(problem, u).coeffs
        m_new = (1.0 - theta) * m + theta * m_tilde
        inc = l2(m_new - m)
        report.step_history.append(l2(m_tilde - m))
        report.residual_history.append(inc)
        report.iterations += 1
        m = m_new
        if inc <= opts.tol:
            break

    u = hjb_solve(problem, m, inner, u_init=u)
    report.converged = True
    report.rate_estimates = _linear_rates(report.residual_history)
    return State(u, Field(mesh, m)), report


# ---------------------------------------------------------------------------
# smallest singular value


@dataclass
class SingularValueResult:
    value: float
    converged: bool
    iterations: int
    warning: str = ""

    def __float__(self):
        return float(self.value)


class _MatrixOperator:
    """Adapter giving a plain matrix the operator interface (Euclidean norm)."""

    def __init__(self, A):
        A = sp.csr_matrix(A)
        self.shape = A.shape
        self._A = A
        self._solver = fem.LinearSolver(A)
        self.gram = None

    def matvec(self, x):
        return self._A @ x

    def solve(self, z):
        return self._solver.solve(z)

    def solve_transpose(self, w):
        return self._solver.solve(w, trans="T")


def smallest_singular_value(operator, tol: float = 1e-6, max_iter: int = 1000) -> SingularValueResult:
    """Smallest singular value of ``operator`` by inverse iteration on its normal equations.

    For a :class:`LinearizedSystem` the singular value is taken with respect to
    the H1 x L2 inner product ``<x, y>_G = x^T G y``; for plain matrices the
    Euclidean one.  Power iteration runs on ``B^{-1} = dF^{-1} G^{-1} dF^{-T} G``,
    which is self-adjoint in ``<., .>_G``, starting from the normalised
    all-ones vector, and stops once the eigen-residual is below ``tol``
    relative to the Rayleigh quotient.  If the budget runs out the current
    estimate is returned with ``converged=False`` and a warning.
    """
    if not hasattr(operator, "solve_transpose"):
        operator = _MatrixOperator(operator)
    n = operator.shape[0]
    G = getattr(operator, "gram", None)
    if G is None:
        G = sp.identity(n, format="csr")
        G_solve = lambda v: v  # noqa: E731
    else:
        G_solve = fem.LinearSolver(G).solve

    def gnorm(v):
        return float(np.sqrt(max(v @ (G @ v), 0.0)))

    def apply_Binv(x):
        return operator.solve(G_solve(operator.solve_transpose(G @ x)))

    x = np.ones(n)
    x /= gnorm(x)
    converged = False
    theta = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        y = apply_Binv(x)
        theta = float(x @ (G @ y))
        r = y - theta * x
        ny = gnorm(y)
        if ny == 0.0 or not np.isfinite(ny):
            raise LinearSolveFailure("inverse iteration broke down")
        x = y / ny
        if gnorm(r) <= tol * abs(theta):
            converged = True
            break

    # Rayleigh quotient of B at the final vector (upper bound on sigma_min^2)
    sigma = gnorm(operator.matvec(x)) / gnorm(x)
    msg = ""
    if not converged:
        msg = f"inverse iteration not converged after {max_iter} iterations; value is an estimate"
        warnings.warn(msg)
    return SingularValueResult(value=sigma, converged=converged, iterations=it, warning=msg)
