"""Discrete stationary MFG system on the torus as a zero of ``F = I + T o G``.

Unknowns are stacked P1 coefficient vectors ``x = (u, m)``.  With
``A = K + lam M`` the discrete solution operator is ``T_h = diag(A, A)^{-1}``
and

    G(u, m) = ( int (|Du|^2 / 2 - f(m) - s_u) phi_i ,
                int m Du . D phi_i - int (lam m0 + s_m) phi_i ),
    F(u, m) = (u, m) + T_h G(u, m).

The coupling term ``f(m)`` is interpolated to P1 before integration, so its
load is ``M f(m)`` and its exact derivative is ``M diag(f'(m))``; this keeps
``dG`` the true Jacobian of the discrete ``G`` and Newton quadratic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import fem
from .errors import ValidationError
from .fem import Field
from .mesh import PeriodicMesh

__all__ = [
    "Coupling",
    "Problem",
    "State",
    "LinearizedSystem",
    "apply_G",
    "residual_F",
    "residual_norm",
    "scaled_residual",
    "assemble_dG",
    "assemble_dF",
    "make_coupling",
    "m0_function",
]


@dataclass(frozen=True)
class Coupling:
    """Bounded C^1 coupling ``f`` with analytic bounds on ``|f|`` and ``|f'|``."""

    eval: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    sup_f: float
    sup_fp: float
    monotone: bool
    name: str = "custom"

    def __call__(self, m):
        return self.eval(np.asarray(m, dtype=float))

    def plus(self, other: "Coupling", eps: float) -> "Coupling":
        """The coupling ``f + eps * other``."""
        f, g = self, other
        return Coupling(
            eval=lambda m: f.eval(m) + eps * g.eval(m),
            deriv=lambda m: f.deriv(m) + eps * g.deriv(m),
            sup_f=f.sup_f + abs(eps) * g.sup_f,
            sup_fp=f.sup_fp + abs(eps) * g.sup_fp,
            monotone=f.monotone and g.monotone and eps >= 0,
            name=f"{f.name}+{eps:g}*{g.name}",
        )

    # built-in families -------------------------------------------------

    @classmethod
    def zero(cls):
        return cls.constant(0.0)

    @classmethod
    def constant(cls, c):
        c = float(c)
        return cls(
            eval=lambda m: np.full_like(m, c, dtype=float),
            deriv=lambda m: np.zeros_like(m, dtype=float),
            sup_f=abs(c),
            sup_fp=0.0,
            monotone=True,
            name="zero" if c == 0.0 else f"constant({c:g})",
        )

    @classmethod
    def atan(cls, a=1.0):
        """``a * atan(m)``; monotone for ``a >= 0``."""
        a = float(a)
        return cls(
            eval=lambda m: a * np.arctan(m),
            deriv=lambda m: a / (1.0 + m * m),
            sup_f=abs(a) * np.pi / 2,
            sup_fp=abs(a),
            monotone=a >= 0,
            name=f"atan({a:g})",
        )

    @classmethod
    def rational_bump(cls, a=1.0):
        """``a * m / (1 + m^2)``, bounded and non-monotone."""
        a = float(a)
        return cls(
            eval=lambda m: a * m / (1.0 + m * m),
            deriv=lambda m: a * (1.0 - m * m) / (1.0 + m * m) ** 2,
            sup_f=abs(a) / 2,
            sup_fp=abs(a),
            monotone=a == 0.0,
            name=f"rational_bump({a:g})",
        )

    @classmethod
    def inverse_square(cls, a=1.0):
        """``a / (1 + m^2)``; used as a bounded coupling perturbation."""
        a = float(a)
        return cls(
            eval=lambda m: a / (1.0 + m * m),
            deriv=lambda m: -2.0 * a * m / (1.0 + m * m) ** 2,
            sup_f=abs(a),
            sup_fp=abs(a) * 3.0 * np.sqrt(3.0) / 8.0,
            monotone=a <= 0.0,
            name=f"inverse_square({a:g})",
        )


def make_coupling(family: str, scale: float = 1.0) -> Coupling:
    """Build a named coupling family (config files use these names)."""
    if family == "zero":
        return Coupling.zero()
    if family == "constant":
        return Coupling.constant(scale)
    if family == "atan":
        return Coupling.atan(scale)
    if family == "neg_atan":
        c = Coupling.atan(-scale)
        return Coupling(c.eval, c.deriv, c.sup_f, c.sup_fp, c.monotone, f"neg_atan({scale:g})")
    if family == "rational_bump":
        return Coupling.rational_bump(scale)
    if family == "inverse_square":
        return Coupling.inverse_square(scale)
    raise ValidationError(f"unknown coupling family {family!r}", field="coupling.family")


def m0_function(family: str, amplitude: float = 0.0, shift: float = 0.0):
    """Density ``1`` or ``1 + a prod_k cos(2 pi (x_k - shift))`` on the torus."""
    if family == "uniform":
        return lambda x: np.ones(x.shape[0])
    if family == "cosine":
        if not 0.0 <= amplitude < 1.0:
            raise ValidationError("amplitude must lie in [0, 1)", field="m0.amplitude")
        return lambda x: 1.0 + amplitude * np.prod(np.cos(2 * np.pi * (x - shift)), axis=1)
    raise ValidationError(f"unknown density family {family!r}", field="m0.family")


def density_field(mesh, func) -> Field:
    """L2 projection of a density, renormalised to unit discrete mass."""
    c = fem.project(mesh, fem.load_function(mesh, func, order=6))
    M = fem.assemble_mass(mesh)
    return Field(mesh, c / (M.sum(axis=0).A1 @ c))


@dataclass(frozen=True)
class State:
    """Pair ``(u, m)`` of P1 fields on one mesh."""

    u: Field
    m: Field

    def __post_init__(self):
        if self.u.mesh is not self.m.mesh:
            raise ValidationError("u and m must live on the same mesh")

    @property
    def mesh(self) -> PeriodicMesh:
        return self.u.mesh

    @property
    def vector(self) -> np.ndarray:
        return fem.stack(self.u, self.m)

    @classmethod
    def from_vector(cls, mesh, x):
        u, m = fem.split(np.asarray(x, dtype=float), mesh)
        return cls(Field(mesh, u), Field(mesh, m))

    @classmethod
    def constant(cls, mesh, u=0.0, m=1.0):
        return cls(Field.constant(mesh, u), Field.constant(mesh, m))

    def distance(self, other: "State") -> float:
        """H1 x L2 distance."""
        return fem.h1_l2_norm(self.mesh, self.u.coeffs - other.u.coeffs, self.m.coeffs - other.m.coeffs)


@dataclass(frozen=True, eq=False)
class Problem:
    """One MFG instance: discount ``lam``, projected density ``m0``, coupling and optional sources.

    ``source_u`` and ``source_m`` are P1 fields added to the right-hand sides
    of the two equations (manufactured-solution forcing); both default to zero.
    """

    mesh: PeriodicMesh
    lam: float
    m0: Field
    coupling: Coupling
    source_u: Optional[Field] = None
    source_m: Optional[Field] = None
    linear_solver: str = "direct"
    m0_min: float = field(init=False, default=0.0)

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValidationError(f"lambda must be positive, got {self.lam!r}", field="lambda")
        object.__setattr__(self, "lam", float(self.lam))
        for f in (self.m0, self.source_u, self.source_m):
            if f is not None and f.mesh is not self.mesh:
                raise ValidationError("all fields must live on the problem mesh")
        mass = self.m0.mass()
        if abs(mass - 1.0) > 1e-12:
            raise ValidationError(f"m0 must have unit mass, got {mass!r}", field="m0")
        m0_min = float(self.m0.coeffs.min())
        if m0_min < -1e-10:
            raise ValidationError(f"m0 has negative nodal values (min {m0_min:.3e})", field="m0")
        object.__setattr__(self, "m0_min", m0_min)

    @classmethod
    def build(cls, mesh, lam, coupling, m0="uniform", amplitude=0.0, **kw):
        """Convenience constructor from a named or callable density."""
        if m0 == "uniform":
            return cls(mesh, lam, Field.constant(mesh, 1.0), coupling, **kw)
        func = m0_function(m0, amplitude) if isinstance(m0, str) else m0
        return cls(mesh, lam, density_field(mesh, func), coupling, **kw)

    @cached_property
    def helmholtz(self) -> fem.LinearSolver:
        return fem.helmholtz(self.mesh, self.lam, self.linear_solver)

    @cached_property
    def A(self) -> sp.csr_matrix:
        return self.helmholtz.A.tocsr()

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return fem.assemble_mass(self.mesh)

    @cached_property
    def u_load(self) -> np.ndarray:
        """Load of the fixed part of the first right-hand side (the source)."""
        if self.source_u is None:
            return np.zeros(self.mesh.node_count)
        return self.mass @ self.source_u.coeffs

    @cached_property
    def m_load(self) -> np.ndarray:
        """Load of ``lam m0 + s_m``."""
        out = self.lam * (self.mass @ self.m0.coeffs)
        if self.source_m is not None:
            out = out + self.mass @ self.source_m.coeffs
        return out

    def with_perturbation(self, f_hat: Coupling, m1: Field, eps: float) -> "Problem":
        """Coupling ``f + eps f_hat`` and density ``(1 - eps) m0 + eps m1``."""
        m0 = Field(self.mesh, (1.0 - eps) * self.m0.coeffs + eps * m1.coeffs)
        return Problem(
            self.mesh,
            self.lam,
            m0,
            self.coupling.plus(f_hat, eps),
            self.source_u,
            self.source_m,
            self.linear_solver,
        )

    def check_state(self, state: State):
        if state.mesh is not self.mesh:
            raise ValidationError("state is not on the problem mesh")


def apply_G(problem: Problem, state: State):
    """Load vectors ``(xi, zeta)`` of the nonlinear map ``G`` at ``state``."""
    problem.check_state(state)
    mesh = problem.mesh
    u, m = state.u.coeffs, state.m.coeffs
    Du = fem.element_gradient(mesh, u)
    M = problem.mass
    xi = fem.element_load(mesh, 0.5 * np.einsum("ei,ei->e", Du, Du))
    xi -= M @ problem.coupling(m)
    xi -= problem.u_load
    zeta = fem._flux_vector(mesh, m, Du) - problem.m_load
    return xi, zeta


def _apply_G_vector(problem, x):
    xi, zeta = apply_G(problem, State.from_vector(problem.mesh, x))
    return np.concatenate([xi, zeta])


def scaled_residual(problem: Problem, state: State):
    """``(A u + xi, A m + zeta)``, the residual of ``F`` before applying ``T_h``.

    Terms that cancel at equilibrium are combined nodewise before the mass
    matrix is applied (``M (lam m - lam m0)`` rather than ``lam M m - lam M m0``),
    so constant equilibria give an exactly zero vector.
    """
    problem.check_state(state)
    mesh = problem.mesh
    u, m = state.u.coeffs, state.m.coeffs
    K = fem.assemble_stiffness(mesh)
    M = problem.mass
    Du = fem.element_gradient(mesh, u)
    nodal_u = problem.lam * u - problem.coupling(m)
    nodal_m = problem.lam * (m - problem.m0.coeffs)
    if problem.source_u is not None:
        nodal_u = nodal_u - problem.source_u.coeffs
    if problem.source_m is not None:
        nodal_m = nodal_m - problem.source_m.coeffs
    ru = K @ u + fem.element_load(mesh, 0.5 * np.einsum("ei,ei->e", Du, Du)) + M @ nodal_u
    rm = K @ m + fem._flux_vector(mesh, m, Du) + M @ nodal_m
    return ru, rm


def residual_F(problem: Problem, state: State):
    """``F(u, m) = (u, m) + T_h G(u, m)`` as a pair of Fields, evaluated as ``T_h (A x + G(x))``."""
    ru, rm = scaled_residual(problem, state)
    S = problem.helmholtz
    return Field(problem.mesh, S.solve(ru)), Field(problem.mesh, S.solve(rm))


def residual_norm(problem: Problem, state: State) -> float:
    """H1 x L2 norm of ``F(state)``."""
    Fu, Fm = residual_F(problem, state)
    return fem.h1_l2_norm(problem.mesh, Fu, Fm)


def assemble_dG(problem: Problem, state: State) -> sp.csr_matrix:
    """Jacobian of the discrete ``G`` as a 2x2 block sparse matrix over ``(v, rho)``.

    Blocks: ``[[C(Du), -M diag(f'(m))], [W(m), T(Du)]]`` with ``C`` the
    convection matrix, ``W`` the ``m``-weighted stiffness and ``T`` the
    transport matrix.
    """
    problem.check_state(state)
    mesh = problem.mesh
    u, m = state.u.coeffs, state.m.coeffs
    Du = fem.element_gradient(mesh, u)
    C = fem.assemble_convection(mesh, Du)
    Fp = problem.mass @ sp.diags(problem.coupling.deriv(m))
    W = fem.assemble_weighted_stiffness(mesh, m)
    T = fem.assemble_transport(mesh, Du)
    return sp.bmat([[C, -Fp], [W, T]], format="csr")


class LinearizedSystem:
    """``dF[x] = I + T_h dG[x]`` on stacked coefficients, kept in factored form.

    ``matvec`` applies the operator with one Helmholtz solve per component.
    ``solve`` and ``solve_transpose`` invert it through the sparse Newton
    matrix ``N = diag(A, A) + dG``, using ``dF = diag(A, A)^{-1} N``.
    The explicit product ``A^{-1} dG`` is never formed.
    """

    def __init__(self, problem: Problem, state: State, jacobian=None):
        self.problem = problem
        self.state = state
        self.mesh = problem.mesh
        self.jacobian = assemble_dG(problem, state) if jacobian is None else jacobian
        N = self.mesh.node_count
        self.shape = (2 * N, 2 * N)
        self._A2 = sp.block_diag([problem.A, problem.A], format="csr")

    @cached_property
    def newton_matrix(self) -> sp.csr_matrix:
        return (self._A2 + self.jacobian).tocsr()

    @cached_property
    def _newton_solver(self) -> fem.LinearSolver:
        return fem.LinearSolver(self.newton_matrix)

    @cached_property
    def gram(self) -> sp.csr_matrix:
        return fem.gram_h1_l2(self.mesh)

    def _Ainv(self, y):
        N = self.mesh.node_count
        S = self.problem.helmholtz
        return np.concatenate([S.solve(y[:N]), S.solve(y[N:])])

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        return x + self._Ainv(self.jacobian @ x)

    def rmatvec(self, y):
        """Euclidean adjoint: ``y + dG^T A^{-1} y``."""
        y = np.asarray(y, dtype=float)
        return y + self.jacobian.T @ self._Ainv(y)

    def solve(self, z):
        """``dF^{-1} z``."""
        return self._newton_solver.solve(self._A2 @ np.asarray(z, dtype=float))

    def solve_transpose(self, w):
        """``dF^{-T} w = diag(A, A) N^{-T} w``."""
        return self._A2 @ self._newton_solver.solve(np.asarray(w, dtype=float), trans="T")

    def to_dense(self) -> np.ndarray:
        """Dense matrix of ``dF`` (small meshes only; used as a test oracle)."""
        A2 = self._A2.toarray()
        return np.eye(self.shape[0]) + np.linalg.solve(A2, self.jacobian.toarray())


def assemble_dF(problem: Problem, state: State) -> LinearizedSystem:
    return LinearizedSystem(problem, state)
