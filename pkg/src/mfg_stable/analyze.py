"""Stability certificates and first-order sensitivity of computed equilibria."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fem
from .errors import SolverError, ValidationError
from .fem import Field
from .mfg import Coupling, Problem, State, assemble_dF, residual_norm
from .solve import SolverOptions, newton_solve, smallest_singular_value

__all__ = [
    "StabilityReport",
    "SensitivityResult",
    "certify_stability",
    "sensitivity_direction",
    "perturbed_taylor_check",
    "isolation_probe",
    "a_priori_checks",
]

STABILITY_THRESHOLD = 1e-8


@dataclass
class StabilityReport:
    """Numerical stability certificate plus the two sufficient conditions.

    ``K_hat`` is the computed discrete gradient bound ``max |Du_h|``; it stands
    in for the unknown analytic constant in ``M_hat`` and ``Lambda_hat``.
    The conditions are sufficient only: ``stable`` is decided by ``sigma_min``.
    """

    sigma_min: float
    stable: bool
    monotone_condition: bool
    K_hat: float
    M_hat: float
    Lambda_hat: float
    large_lambda_condition: bool
    threshold: float = STABILITY_THRESHOLD
    sigma_converged: bool = True
    note: str = "K_hat is the discrete max |Du_h|, a surrogate for the analytic gradient bound"

    def as_dict(self):
        return {
            "sigma_min": float(self.sigma_min),
            "stable": bool(self.stable),
            "monotone_condition": bool(self.monotone_condition),
            "K_hat": float(self.K_hat),
            "M_hat": float(self.M_hat),
            "Lambda_hat": float(self.Lambda_hat),
            "large_lambda_condition": bool(self.large_lambda_condition),
            "threshold": float(self.threshold),
            "sigma_converged": bool(self.sigma_converged),
        }


def _bounds(problem: Problem, state: State):
    Du = fem.element_gradient(problem.mesh, state.u)
    K_hat = float(np.sqrt(np.max(np.einsum("ei,ei->e", Du, Du))))
    sup_f = problem.coupling.sup_f
    if problem.source_u is not None:
        sup_f += float(np.max(np.abs(problem.source_u.coeffs)))
    M_hat = 2.0 * sup_f + 0.5 * K_hat**2
    m0_sup = float(np.max(np.abs(problem.m0.coeffs)))
    Lambda_hat = max(2.0 * M_hat, 0.5 * K_hat**2 + m0_sup * problem.coupling.sup_fp)
    return K_hat, M_hat, Lambda_hat


def certify_stability(
    problem: Problem, state: State, threshold: float = STABILITY_THRESHOLD, tol: float = 1e-6
) -> StabilityReport:
    """Smallest singular value of ``dF`` at a converged state, and the sufficient conditions."""
    res = residual_norm(problem, state)
    if res > 1e-9:
        raise ValidationError(f"state is not a converged solution (residual {res:.3e})", field="state")
    sv = smallest_singular_value(assemble_dF(problem, state), tol=tol)
    K_hat, M_hat, Lambda_hat = _bounds(problem, state)
    cpl = problem.coupling
    monotone = bool(cpl.monotone and np.all(cpl.deriv(state.m.coeffs) >= -1e-12))
    return StabilityReport(
        sigma_min=sv.value,
        stable=bool(sv.value > threshold),
        monotone_condition=monotone,
        K_hat=K_hat,
        M_hat=M_hat,
        Lambda_hat=Lambda_hat,
        large_lambda_condition=bool(problem.lam > Lambda_hat),
        threshold=threshold,
        sigma_converged=sv.converged,
    )


def a_priori_checks(problem: Problem, state: State) -> dict:
    """Sup-norm bounds on ``u`` and ``m`` plus positivity and mass of ``m``."""
    u = state.u.coeffs
    m = state.m.coeffs
    _, M_hat, _ = _bounds(problem, state)
    sup_f = problem.coupling.sup_f
    u_bound = sup_f / problem.lam
    out = {
        "u_sup": float(np.max(np.abs(u))),
        "u_bound": u_bound,
        "u_bound_ok": bool(np.max(np.abs(u)) <= u_bound + 1e-8),
        "m_sup": float(np.max(np.abs(m))),
        "m_min": float(np.min(m)),
        "m_positive": bool(np.min(m) > -1e-10),
        "mass": state.m.mass(),
        "M_hat": M_hat,
    }
    if problem.lam > M_hat:
        m_bound = problem.lam / (problem.lam - M_hat) * float(np.max(np.abs(problem.m0.coeffs)))
        out["m_bound"] = m_bound
        out["m_bound_ok"] = bool(out["m_sup"] <= m_bound + 1e-8)
    else:
        out["m_bound"] = None
        out["m_bound_ok"] = None
    return out


def _perturbation_loads(problem: Problem, state: State, f_hat: Coupling, m1: Field):
    M = problem.mass
    xi = M @ f_hat(state.m.coeffs)
    zeta = problem.lam * (M @ (m1.coeffs - problem.m0.coeffs))
    return xi, zeta


def sensitivity_direction(problem: Problem, state: State, f_hat: Coupling, m1: Field) -> State:
    """First-order correction ``delta`` with ``x_eps = x + eps * delta + o(eps)``.

    Differentiating ``F(x_eps) - eps T_h(f_hat(m), lam (m1 - m0)) = 0`` at
    ``eps = 0`` gives ``delta = dF^{-1} T_h(f_hat(m), lam (m1 - m0))``.
    """
    mesh = problem.mesh
    m_min = float(np.min(state.m.coeffs))
    if m_min < 1e-6:
        raise ValidationError(f"sensitivity needs min m >= 1e-6, got {m_min:.3e}", field="state.m")
    mass = m1.mass()
    if abs(mass - 1.0) > 1e-10:
        raise ValidationError(f"m1 must have unit mass, got {mass!r}", field="m1")
    xi, zeta = _perturbation_loads(problem, state, f_hat, m1)
    S = problem.helmholtz
    rhs = np.concatenate([S.solve(xi), S.solve(zeta)])
    delta = assemble_dF(problem, state).solve(rhs)
    return State.from_vector(mesh, delta)


@dataclass
class SensitivityResult:
    direction: State
    taylor_errors: list  # (eps, remainder) pairs; remainder is nan when the solve failed
    observed_order: float
    failures: list = field(default_factory=list)


def _loglog_slope(pairs):
    pts = [(e, r) for e, r in pairs if r > 0.0 and math.isfinite(r)]
    if len(pts) < 2:
        return float("nan")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def perturbed_taylor_check(
    problem: Problem,
    state: State,
    f_hat: Coupling,
    m1: Field,
    epsilons: Sequence[float] = (1e-1, 1e-2, 1e-3),
    opts: SolverOptions = SolverOptions(tol=1e-12, min_iter=1),
) -> SensitivityResult:
    """Solve the perturbed system for each ``eps`` and measure the Taylor remainder.

    ``r(eps) = |x_eps - x - eps delta|`` in H1 x L2; the observed order is the
    least-squares slope of ``log r`` against ``log eps``.  The default Newton
    options force at least one step and a tight tolerance, since the
    remainder at small ``eps`` is below the usual stopping threshold.
    """
    eps = [float(e) for e in epsilons]
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValidationError("epsilons must be positive and strictly decreasing", field="epsilons")
    delta = sensitivity_direction(problem, state, f_hat, m1)
    xi, zeta = _perturbation_loads(problem, state, f_hat, m1)
    if not (np.any(xi) or np.any(zeta)):
        # vanishing perturbation data: the perturbed system is the original one
        return SensitivityResult(delta, [(e, 0.0) for e in eps], float("nan"))
    mesh = problem.mesh
    x = state.vector
    d = delta.vector
    pairs, failures = [], []
    for e in eps:
        pe = problem.with_perturbation(f_hat, m1, e)
        guess = State.from_vector(mesh, x + e * d)
        try:
            xe, _ = newton_solve(pe, guess, opts)
        except SolverError as exc:
            failures.append((e, f"{exc.kind}: {exc}"))
            pairs.append((e, float("nan")))
            continue
        r = xe.vector - x - e * d
        N = mesh.node_count
        pairs.append((e, fem.h1_l2_norm(mesh, r[:N], r[N:])))
    return SensitivityResult(direction=delta, taylor_errors=pairs, observed_order=_loglog_slope(pairs), failures=failures)


def isolation_probe(
    problem: Problem,
    state: State,
    n_trials: int = 10,
    radius: float = 0.05,
    seed: int = 0,
    opts: SolverOptions = SolverOptions(),
):
    """Run Newton from random H1 x L2 perturbations of ``state`` of norm at most ``radius``.

    Returns the converged states and the largest pairwise distance among them
    and the original solution.
    """
    rng = np.random.default_rng(seed)
    mesh = problem.mesh
    N = mesh.node_count
    x = state.vector
    results = []
    for _ in range(n_trials):
        p = rng.standard_normal(2 * N)
        p *= radius * rng.uniform(0.5, 1.0) / fem.h1_l2_norm(mesh, p[:N], p[N:])
        out, _ = newton_solve(problem, State.from_vector(mesh, x + p), opts)
        results.append(out)
    everything = [state] + results
    spread = max(a.distance(b) for i, a in enumerate(everything) for b in everything[i + 1 :])
    return results, spread
