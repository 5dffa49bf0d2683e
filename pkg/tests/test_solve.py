import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from mfg_stable import (
    Coupling,
    Field,
    MaxIterationsError,
    Problem,
    State,
    SolverOptions,
    ValidationError,
    build_mesh,
    fem,
    newton_solve,
    picard_solve,
    smallest_singular_value,
)
from mfg_stable.errors import LinearSolveFailure
from mfg_stable.manufactured import error_norms
from mfg_stable.mfg import assemble_dF, residual_norm
from mfg_stable.solve import fp_solve, hjb_solve

from conftest import start


def test_options_validation():
    with pytest.raises(ValidationError):
        SolverOptions(tol=0.0)
    with pytest.raises(ValidationError):
        SolverOptions(damping=0.0)
    with pytest.raises(ValidationError):
        SolverOptions(damping=1.5)
    with pytest.raises(ValidationError):
        SolverOptions(max_iter=-1)


@pytest.mark.parametrize("dim", [1, 2])
def test_newton_at_exact_solution(dim):
    mesh = build_mesh(dim, 16)
    p = Problem.build(mesh, 1.0, Coupling.zero())
    state, rep = newton_solve(p, start(p))
    assert rep.iterations <= 1
    assert rep.converged and rep.residual_history[-1] < 1e-13


def test_newton_report_invariants(atan_solution):
    _, _, rep = atan_solution
    assert rep.converged
    assert rep.residual_history[-1] <= 1e-11
    assert len(rep.step_history) == rep.iterations == len(rep.residual_history) - 1
    # terminal phase: strictly decreasing once below 1e-3
    tail = [r for r in rep.residual_history if r < 1e-3]
    assert all(b < a for a, b in zip(tail, tail[1:]))
    assert rep.as_dict()["method"] == "newton"


def test_newton_from_bump_reaches_machine_zero():
    mesh = build_mesh(1, 32)
    p = Problem.build(mesh, 1.0, Coupling.zero())
    bump = 0.2 * np.exp(-50 * (mesh.nodes[:, 0] - 0.5) ** 2)
    bump -= (fem.assemble_mass(mesh) @ bump).sum()  # keep unit mass
    init = State(Field.constant(mesh, 0.0), Field(mesh, 1.0 + bump))
    assert residual_norm(p, init) > 0
    _, rep = newton_solve(p, init)
    assert rep.residual_history[-1] < 1e-13
    assert rep.residual_history[0] > rep.residual_history[-1]


def test_newton_budget_exhaustion():
    mesh = build_mesh(1, 32)
    p = Problem.build(mesh, 1.0, Coupling.atan(3.0), "cosine", 0.9)
    far = State(Field.constant(mesh, 50.0), p.m0)
    with pytest.raises(MaxIterationsError) as exc:
        newton_solve(p, far, SolverOptions(max_iter=1))
    assert exc.value.kind == "max-iterations"
    assert exc.value.report.iterations == 1
    assert not exc.value.report.converged


def test_newton_singular_step_fails_loudly(monkeypatch):
    mesh = build_mesh(1, 16)
    p = Problem.build(mesh, 1.0, Coupling.atan(1.0), "cosine", 0.5)

    def broken(self, b, trans="N"):
        raise LinearSolveFailure("matrix is numerically singular")

    monkeypatch.setattr(fem.LinearSolver, "solve", broken)
    with pytest.raises(LinearSolveFailure) as exc:
        newton_solve(p, start(p))
    assert exc.value.kind == "linear-solve-failure"


def test_newton_line_search_converges_to_same_state(atan_solution):
    p, ref, _ = atan_solution
    s, _ = newton_solve(p, start(p), SolverOptions(line_search=True))
    assert s.distance(ref) < 1e-10


# Picard ------------------------------------------------------------------------


def test_picard_trivial_fixed_point():
    mesh = build_mesh(1, 16)
    p = Problem.build(mesh, 1.0, Coupling.zero())
    s, rep = picard_solve(p, p.m0)
    assert rep.iterations == 1
    np.testing.assert_allclose(s.m.coeffs, 1.0, atol=1e-13)
    np.testing.assert_allclose(s.u.coeffs, 0.0, atol=1e-13)


def test_picard_agrees_with_newton_at_large_lambda():
    mesh = build_mesh(1, 64)
    p = Problem.build(mesh, 5.0, Coupling.atan(1.0), "cosine", 0.5)
    sn, _ = newton_solve(p, start(p))
    sp_, rep = picard_solve(p, p.m0)
    assert rep.converged
    assert sn.distance(sp_) < 1e-8


def test_picard_damping_does_not_change_fixed_point():
    mesh = build_mesh(1, 32)
    p = Problem.build(mesh, 2.0, Coupling.atan(1.0), "cosine", 0.5)
    a, _ = picard_solve(p, p.m0, SolverOptions(damping=1.0))
    b, _ = picard_solve(p, p.m0, SolverOptions(damping=0.5))
    assert a.distance(b) < 1e-9


def test_picard_rates_are_linear():
    mesh = build_mesh(1, 32)
    p = Problem.build(mesh, 1.0, Coupling.atan(1.0), "cosine", 0.5)
    _, rep = picard_solve(p, p.m0)
    rates = rep.rate_estimates[-5:]
    assert all(0.05 < r < 0.95 for r in rates)
    assert max(rates) - min(rates) < 0.05


def test_picard_requires_unit_mass():
    mesh = build_mesh(1, 8)
    p = Problem.build(mesh, 1.0, Coupling.zero())
    with pytest.raises(ValidationError):
        picard_solve(p, np.full(8, 2.0))


def test_picard_budget_exhaustion():
    mesh = build_mesh(1, 16)
    p = Problem.build(mesh, 1.0, Coupling.atan(1.0), "cosine", 0.5)
    with pytest.raises(MaxIterationsError):
        picard_solve(p, p.m0, SolverOptions(max_iter=2))


# sub-solvers ---------------------------------------------------------------------


@pytest.mark.parametrize("c", [0.0, 0.8, -1.5])
def test_hjb_constant_coupling(c):
    mesh = build_mesh(2, 6)
    p = Problem.build(mesh, 2.0, Coupling.constant(c))
    u = hjb_solve(p, np.ones(mesh.node_count))
    np.testing.assert_allclose(u.coeffs, c / 2.0, atol=1e-13)


def test_hjb_manufactured_second_order():
    lam = 1.0
    cpl = Coupling.atan(1.0)
    a = 0.1

    def s_u(x):
        k = 2 * np.pi
        return k**2 * a * np.cos(k * x[:, 0]) + 0.5 * (k * a * np.sin(k * x[:, 0])) ** 2 + lam * a * np.cos(k * x[:, 0]) - np.arctan(1.0)

    errs = []
    for n in (32, 256):
        mesh = build_mesh(1, n)
        p = Problem(mesh, lam, Field.constant(mesh, 1.0), cpl, source_u=Field.projection(mesh, s_u, 6))
        u = hjb_solve(p, np.ones(n), SolverOptions(tol=1e-13))
        errs.append(error_norms(u, lambda x: a * np.cos(2 * np.pi * x[:, 0]))["L2"])
    assert np.log(errs[0] / errs[1]) / np.log(8) >= 1.9


def test_hjb_respects_sup_bound_silently():
    mesh = build_mesh(1, 8)
    p = Problem.build(mesh, 1.0, Coupling.zero())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        hjb_solve(p, np.ones(8))


def test_fp_constant_drift_gives_m0():
    mesh = build_mesh(2, 6)
    p = Problem.build(mesh, 1.0, Coupling.zero())
    m = fp_solve(p, np.full(mesh.node_count, 3.0))
    np.testing.assert_allclose(m.coeffs, 1.0, atol=1e-13)


@pytest.mark.parametrize("n", [32, 64, 128])
def test_fp_positivity_and_mass(n):
    mesh = build_mesh(1, n)
    p = Problem.build(mesh, 1.0, Coupling.zero())
    u = 0.1 * np.cos(2 * np.pi * mesh.nodes[:, 0])
    m = fp_solve(p, u)
    assert m.coeffs.min() > 0
    assert abs(m.mass() - 1.0) < 1e-12


def test_fp_mass_for_arbitrary_drift(rng):
    mesh = build_mesh(2, 8)
    p = Problem.build(mesh, 0.7, Coupling.zero(), "cosine", 0.4)
    m = fp_solve(p, rng.standard_normal(mesh.node_count))
    assert abs(m.mass() - 1.0) < 1e-12


# smallest singular value ---------------------------------------------------------


def test_sigma_identity():
    r = smallest_singular_value(sp.identity(10, format="csr"))
    assert r.value == pytest.approx(1.0, rel=1e-6) and r.converged


def test_sigma_block_diagonal():
    A = sp.block_diag([2 * sp.identity(5), sp.identity(5)], format="csr")
    assert smallest_singular_value(A).value == pytest.approx(1.0, rel=1e-6)


def test_sigma_matches_dense_svd(rng):
    A = sp.csr_matrix(np.diag(np.linspace(1.0, 4.0, 12)) + 0.1 * rng.standard_normal((12, 12)))
    want = np.linalg.svd(A.toarray(), compute_uv=False).min()
    assert smallest_singular_value(A, tol=1e-10).value == pytest.approx(want, rel=1e-6)


def test_sigma_in_product_norm_matches_generalised_svd(rng):
    mesh = build_mesh(1, 8)
    p = Problem.build(mesh, 1.0, Coupling.atan(1.0), "cosine", 0.5)
    s, _ = newton_solve(p, start(p))
    dF = assemble_dF(p, s)
    D = dF.to_dense()
    G = fem.gram_h1_l2(mesh).toarray()
    L = np.linalg.cholesky(G)
    want = np.linalg.svd(L.T @ D @ np.linalg.inv(L.T), compute_uv=False).min()
    assert smallest_singular_value(dF, tol=1e-10).value == pytest.approx(want, rel=1e-6)


def test_sigma_trivial_solution_mesh_independent():
    vals = []
    for n in (32, 64):
        mesh = build_mesh(1, n)
        p = Problem.build(mesh, 1.0, Coupling.zero())
        vals.append(smallest_singular_value(assemble_dF(p, State.constant(mesh, 0.0, 1.0))).value)
    assert vals[0] > 0
    assert abs(vals[1] - vals[0]) / vals[0] < 0.1


def test_sigma_budget_exhaustion_warns():
    A = sp.csr_matrix(np.diag(np.linspace(1.0, 1.01, 50)))
    with pytest.warns(UserWarning):
        r = smallest_singular_value(A, tol=1e-14, max_iter=2)
    assert not r.converged
    assert r.value >= 1.0 - 1e-12
