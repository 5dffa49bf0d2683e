"""P1 finite elements on the periodic mesh.

All bilinear forms are integrated exactly: products of P1 functions, P1
weights and elementwise-constant gradients are polynomials of degree at most
three per element and are evaluated with closed-form simplex moments.  No mass
lumping is used anywhere.

Right-hand sides given as analytic functions enter through a load vector
computed with a high-order element quadrature; :func:`project` turns such a
load into the L2 projection onto the P1 space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import LinearSolveFailure, ValidationError
from .mesh import PeriodicMesh

__all__ = [
    "Field",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_weighted_stiffness",
    "assemble_weighted_mass",
    "assemble_convection",
    "assemble_transport",
    "transport_vector",
    "element_gradient",
    "element_load",
    "load_function",
    "project",
    "helmholtz",
    "apply_Th",
    "norms",
    "LinearSolver",
]


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal coefficients of a continuous piecewise-linear function."""

    mesh: PeriodicMesh
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.shape[0] != self.mesh.node_count:
            raise ValidationError(
                f"field has {c.shape[0]} coefficients, mesh has {self.mesh.node_count} nodes"
            )
        if not np.all(np.isfinite(c)):
            raise ValidationError("field coefficients must be finite")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def constant(cls, mesh, value):
        return cls(mesh, np.full(mesh.node_count, float(value)))

    @classmethod
    def interpolant(cls, mesh, func):
        """Nodal interpolant of ``func`` (callable on (npts, d) arrays)."""
        return cls(mesh, np.asarray(func(mesh.nodes), dtype=float))

    @classmethod
    def projection(cls, mesh, func, order=5):
        """L2 projection of ``func`` onto the P1 space."""
        return cls(mesh, project(mesh, load_function(mesh, func, order)))

    def mass(self) -> float:
        """Discrete integral ``1^T M c`` (equals the integral of the P1 function)."""
        return float(np.asarray(assemble_mass(self.mesh).sum(axis=0)).ravel() @ self.coeffs)

    def __len__(self):
        return self.coeffs.shape[0]


def _coeffs(x):
    return np.asarray(getattr(x, "coeffs", x), dtype=float)


# ---------------------------------------------------------------------------
# matrices


@lru_cache(maxsize=32)
def assemble_stiffness(mesh: PeriodicMesh) -> sp.csr_matrix:
    """``K_ij = int D phi_j . D phi_i``; cached per mesh, treat as read-only."""
    local = kernels.weighted_stiffness_local(mesh.grads, mesh.volumes, np.ones(mesh.element_count))
    return kernels.to_csr(mesh.pattern, local, mesh.node_count)


@lru_cache(maxsize=32)
def assemble_mass(mesh: PeriodicMesh) -> sp.csr_matrix:
    """``M_ij = int phi_j phi_i``; cached per mesh, treat as read-only."""
    return assemble_weighted_mass(mesh, np.ones(mesh.node_count))


def assemble_weighted_stiffness(mesh, w) -> sp.csr_matrix:
    """``int w D phi_j . D phi_i`` for a P1 weight ``w``."""
    wbar = _coeffs(w)[mesh.elements].mean(axis=1)
    local = kernels.weighted_stiffness_local(mesh.grads, mesh.volumes, wbar)
    return kernels.to_csr(mesh.pattern, local, mesh.node_count)


def assemble_weighted_mass(mesh, w) -> sp.csr_matrix:
    """``int w phi_j phi_i`` for a P1 weight ``w``."""
    wloc = _coeffs(w)[mesh.elements]
    local = kernels.weighted_mass_local(mesh.volumes, wloc, mesh.ref_triple)
    return kernels.to_csr(mesh.pattern, local, mesh.node_count)


def _drift_weights(mesh, b):
    """Per-element ``int b phi_a / |e|`` of shape (ne, d+1, d).

    ``b`` is either an (ne, d) array of elementwise constants (e.g. a gradient
    ``Du``) or a sequence of ``d`` nodal P1 components.
    """
    d, ne = mesh.dim, mesh.element_count
    if isinstance(b, np.ndarray) and b.shape == (ne, d):
        return np.repeat(b[:, None, :], d + 1, axis=1) / (d + 1)
    comps = [_coeffs(c) for c in b]
    if len(comps) != d:
        raise ValidationError(f"drift needs {d} components, got {len(comps)}")
    bn = np.stack(comps, axis=1)[mesh.elements]  # (ne, d+1, d)
    return np.einsum("ak,eki->eai", mesh.ref_mass, bn)


def assemble_convection(mesh, b) -> sp.csr_matrix:
    """``C_ij = int (b . D phi_j) phi_i``."""
    local = kernels.convection_local(mesh.grads, mesh.volumes, _drift_weights(mesh, b))
    return kernels.to_csr(mesh.pattern, local, mesh.node_count)


def assemble_transport(mesh, b) -> sp.csr_matrix:
    """``T_ij = int phi_j (b . D phi_i)``, the weak form of ``-div(rho b)`` tested by ``phi_i``."""
    local = kernels.convection_local(mesh.grads, mesh.volumes, _drift_weights(mesh, b))
    return kernels.to_csr(mesh.pattern, np.swapaxes(local, 1, 2), mesh.node_count)


def transport_vector(mesh, w, v) -> np.ndarray:
    """``r_i = int w Dv . D phi_i`` for P1 fields ``w`` and ``v``."""
    return _flux_vector(mesh, _coeffs(w), element_gradient(mesh, v))


def _flux_vector(mesh, w, flux):
    wbar = w[mesh.elements].mean(axis=1)
    local = kernels.flux_local(mesh.grads, mesh.volumes, wbar, flux)
    return kernels.scatter_vector(mesh.elements, local, mesh.node_count)


def element_gradient(mesh, u) -> np.ndarray:
    """Elementwise-constant gradient of a P1 field, shape (ne, d)."""
    return kernels.element_gradient(mesh.grads, _coeffs(u)[mesh.elements])


def element_load(mesh, c_elem) -> np.ndarray:
    """``int c phi_i`` for an elementwise-constant function ``c``."""
    local = np.repeat((np.asarray(c_elem) * mesh.volumes / mesh.nloc)[:, None], mesh.nloc, axis=1)
    return kernels.scatter_vector(mesh.elements, local, mesh.node_count)


# ---------------------------------------------------------------------------
# quadrature loads


@lru_cache(maxsize=None)
def _simplex_rule(dim, order):
    """Barycentric points (q, d+1) and weights summing to one."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    if dim == 1:
        bary = np.stack([1.0 - x, x], axis=1)
        return bary, w
    # collapsed tensor rule on the reference triangle
    s, t = np.meshgrid(x, x, indexing="ij")
    ws = np.outer(w, w) * (1.0 - s)
    xi = s.ravel()
    eta = (t * (1.0 - s)).ravel()
    bary = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    weights = 2.0 * ws.ravel()
    return bary, weights


def load_function(mesh, func: Callable, order: int = 5) -> np.ndarray:
    """``int g phi_i`` for a callable ``g`` evaluated on (npts, d) point arrays."""
    bary, w = _simplex_rule(mesh.dim, order)
    pts = np.einsum("qa,ead->eqd", bary, mesh.local_coords)
    vals = np.asarray(func(pts.reshape(-1, mesh.dim)), dtype=float).reshape(pts.shape[:2])
    local = np.einsum("e,eq,q,qa->ea", mesh.volumes, vals, w, bary)
    return kernels.scatter_vector(mesh.elements, local, mesh.node_count)


def project(mesh, load) -> np.ndarray:
    """Coefficients ``c`` with ``M c = load``."""
    return _mass_solver(mesh).solve(np.asarray(load, dtype=float))


# ---------------------------------------------------------------------------
# linear algebra


class LinearSolver:
    """Sparse solve with a direct LU factorisation or conjugate gradients.

    ``method="cg"`` is only valid for symmetric positive definite matrices and
    stops at relative residual ``rtol``.
    """

    def __init__(self, A, method="direct", rtol=1e-12):
        self.A = sp.csc_matrix(A)
        self.method = method
        self.rtol = rtol
        self.shape = A.shape
        if method == "direct":
            try:
                self._lu = spla.splu(self.A)
            except RuntimeError as exc:
                raise LinearSolveFailure(f"factorisation failed: {exc}") from exc
            diag = np.abs(self._lu.U.diagonal())
            if not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * diag.max():
                raise LinearSolveFailure("matrix is numerically singular")
        elif method == "cg":
            self._lu = None
        else:
            raise ValueError(f"unknown linear solver {method!r}")

    def solve(self, b, trans="N"):
        b = np.asarray(b, dtype=float)
        if self._lu is not None:
            x = self._lu.solve(b, trans=trans)
        else:
            x, info = spla.cg(self.A, b, rtol=self.rtol, atol=0.0, maxiter=10 * self.shape[0])
            if info != 0:
                raise LinearSolveFailure(f"conjugate gradients did not converge (info={info})")
        if not np.all(np.isfinite(x)):
            raise LinearSolveFailure("linear solve produced non-finite values")
        return x


@lru_cache(maxsize=32)
def _mass_solver(mesh):
    return LinearSolver(assemble_mass(mesh))


@lru_cache(maxsize=64)
def helmholtz(mesh: PeriodicMesh, lam: float, method: str = "direct") -> LinearSolver:
    """Factorised ``A = K + lam M``, the matrix of the discrete shifted Laplacian."""
    if not lam > 0:
        raise ValidationError(f"lambda must be positive, got {lam!r}", field="lambda")
    A = (assemble_stiffness(mesh) + lam * assemble_mass(mesh)).tocsr()
    return LinearSolver(A, method=method)


def apply_Th(mesh, lam, xi, zeta, method="direct"):
    """Discrete solution operator: ``(A^{-1} xi, A^{-1} zeta)`` as Fields.

    ``xi`` and ``zeta`` are load vectors (already tested against the basis).
    """
    solver = helmholtz(mesh, float(lam), method)
    return Field(mesh, solver.solve(xi)), Field(mesh, solver.solve(zeta))


def norms(field) -> dict:
    """Discrete L2, H1 and nodal max norms of a P1 field."""
    mesh = field.mesh
    c = field.coeffs
    M = assemble_mass(mesh)
    K = assemble_stiffness(mesh)
    l2sq = float(c @ (M @ c))
    h1sq = l2sq + float(c @ (K @ c))
    return {
        "L2": np.sqrt(max(l2sq, 0.0)),
        "H1": np.sqrt(max(h1sq, 0.0)),
        "Linf": float(np.max(np.abs(c))) if c.size else 0.0,
    }


def h1_l2_norm(mesh, u, m) -> float:
    """Product norm ``sqrt(|u|_H1^2 + |m|_L2^2)`` on coefficient vectors."""
    K = assemble_stiffness(mesh)
    M = assemble_mass(mesh)
    u = _coeffs(u)
    m = _coeffs(m)
    val = u @ (K @ u) + u @ (M @ u) + m @ (M @ m)
    return float(np.sqrt(max(val, 0.0)))


def gram_h1_l2(mesh) -> sp.csr_matrix:
    """Gram matrix of the product norm on stacked ``(u, m)`` coefficients."""
    K = assemble_stiffness(mesh)
    M = assemble_mass(mesh)
    return sp.block_diag([K + M, M], format="csr")


def stack(u, m) -> np.ndarray:
    return np.concatenate([_coeffs(u), _coeffs(m)])


def split(x, mesh):
    N = mesh.node_count
    return x[:N], x[N:]
