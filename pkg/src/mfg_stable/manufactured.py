"""Manufactured smooth solutions of the MFG system with matching source terms.

    u*(x) = a * sum_k cos(2 pi x_k)
    m*(x) = 1 + (b / d) * sum_k sin(2 pi x_k)

The sources are chosen so that ``(u*, m*)`` solves the forced system exactly;
they are L2-projected onto the P1 space.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fem
from .fem import Field
from .mfg import Coupling, Problem, density_field

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad_u: Callable
    m: Callable
    grad_m: Callable


def exact_solution(dim: int, a: float = 0.1, b: float = 0.5) -> ExactSolution:
    return ExactSolution(
        u=lambda x: a * np.cos(TWO_PI * x).sum(axis=1),
        grad_u=lambda x: -TWO_PI * a * np.sin(TWO_PI * x),
        m=lambda x: 1.0 + (b / dim) * np.sin(TWO_PI * x).sum(axis=1),
        grad_m=lambda x: TWO_PI * (b / dim) * np.cos(TWO_PI * x),
    )


def sources(dim: int, lam: float, coupling: Coupling, m0_func: Callable, a: float = 0.1, b: float = 0.5):
    """Callables ``(s_u, s_m)`` for the forced HJB and Fokker-Planck equations."""
    ex = exact_solution(dim, a, b)

    def lap_u(x):
        return -(TWO_PI**2) * a * np.cos(TWO_PI * x).sum(axis=1)

    def lap_m(x):
        return -(TWO_PI**2) * (b / dim) * np.sin(TWO_PI * x).sum(axis=1)

    def s_u(x):
        Du = ex.grad_u(x)
        return -lap_u(x) + 0.5 * (Du * Du).sum(axis=1) + lam * ex.u(x) - coupling(ex.m(x))

    def s_m(x):
        div_mDu = (ex.grad_m(x) * ex.grad_u(x)).sum(axis=1) + ex.m(x) * lap_u(x)
        return -lap_m(x) - div_mDu + lam * ex.m(x) - lam * m0_func(x)

    return s_u, s_m


def manufactured_problem(mesh, lam, coupling, m0_func, a=0.1, b=0.5, order=6):
    """Problem whose exact continuous solution is :func:`exact_solution`."""
    s_u, s_m = sources(mesh.dim, lam, coupling, m0_func, a, b)
    problem = Problem(
        mesh,
        lam,
        density_field(mesh, m0_func),
        coupling,
        source_u=Field.projection(mesh, s_u, order),
        source_m=Field.projection(mesh, s_m, order),
    )
    return problem, exact_solution(mesh.dim, a, b)


def error_norms(field: Field, func, grad=None, order=6) -> dict:
    """L2 (and H1 when ``grad`` is given) error of a P1 field against an exact function."""
    mesh = field.mesh
    bary, w = fem._simplex_rule(mesh.dim, order)
    pts = np.einsum("qa,ead->eqd", bary, mesh.local_coords)
    flat = pts.reshape(-1, mesh.dim)
    uh = np.einsum("qa,ea->eq", bary, field.coeffs[mesh.elements])
    diff = uh - np.asarray(func(flat)).reshape(uh.shape)
    l2sq = float(np.einsum("e,q,eq->", mesh.volumes, w, diff * diff))
    out = {"L2": np.sqrt(l2sq)}
    if grad is not None:
        Duh = fem.element_gradient(mesh, field)
        g = np.asarray(grad(flat)).reshape(pts.shape)
        gd = Duh[:, None, :] - g
        semi = float(np.einsum("e,q,eqi->", mesh.volumes, w, gd * gd))
        out["H1"] = np.sqrt(l2sq + semi)
    return out
