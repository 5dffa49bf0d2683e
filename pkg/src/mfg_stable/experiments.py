"""Experiment runners behind the ``mfg-stable`` command.

Each ``run_*`` function takes a validated :class:`RunConfig` and an output
directory.  It returns the summary dictionary it wrote to ``summary.json``.  Output is deterministic: rows are produced in
config order and floats are written with 17 significant digits.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import fem
from .analyze import a_priori_checks, certify_stability, perturbed_taylor_check
from .config import SCHEMA_VERSION, RunConfig, load_schema, validate_document
from .errors import SolverError, UnstableSolutionError, ValidationError
from .fem import Field
from .manufactured import error_norms, manufactured_problem
from .mesh import build_mesh, interpolate
from .mfg import Problem, State, residual_norm
from .solve import newton_solve, picard_solve

NA = "NA"
ROUNDOFF_FLOOR = 1e-13  # errors at or below this are treated as exact; rates become NA

REFERENCE_METHOD = (
    "errors against the converged reference_n solution; each coarse solution is "
    "prolonged exactly onto the nested reference mesh and the difference is "
    "measured there in discrete H1 (u) and L2 (m)"
)
EXACT_METHOD = "errors against the closed-form manufactured solution by element quadrature of order 6"


# ---------------------------------------------------------------------------
# serialisation


def fmt(v) -> str:
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return NA if not math.isfinite(v) else "%.17g" % v


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_summary(out, summary):
    summary = _jsonable(summary)
    validate_document(summary, "summary")
    write_json(Path(out) / "summary.json", summary)
    return summary


def write_field(path, field: Field, name: str):
    mesh = field.mesh
    header = ["x", "y"][: mesh.dim] + [name]
    rows = (list(p) + [v] for p, v in zip(mesh.nodes, field.coeffs))
    write_csv(path, header, rows)


def _rate(prev, cur, ratio):
    if prev is None or prev <= ROUNDOFF_FLOOR or cur <= ROUNDOFF_FLOOR:
        return None
    return math.log(prev / cur) / math.log(ratio)


# ---------------------------------------------------------------------------
# problem set-up


def build_problem(cfg: RunConfig, n: int, lam: float | None = None):
    """Problem for mesh size ``n``; returns ``(problem, exact)`` with ``exact`` None unless manufactured."""
    lam = cfg.lam if lam is None else lam
    mesh = build_mesh(cfg.dim, n)
    coupling = cfg.coupling.build()
    if cfg.manufactured:
        return manufactured_problem(mesh, lam, coupling, cfg.m0.function())
    return Problem(mesh, lam, cfg.m0.field(mesh), coupling), None


def solve_problem(cfg: RunConfig, problem: Problem):
    init = State(Field.constant(problem.mesh, 0.0), problem.m0)
    if cfg.method == "picard":
        return picard_solve(problem, problem.m0, cfg.solver)
    return newton_solve(problem, init, cfg.solver)


def _base_summary(cfg: RunConfig):
    return {
        "schema_version": SCHEMA_VERSION,
        "config_schema_version": load_schema("config")["version"],
        "experiment": cfg.experiment,
        "status": "ok",
        "config": cfg.raw,
    }


def _failure_summary(cfg, exc: SolverError):
    s = _base_summary(cfg)
    s["status"] = "failed"
    s["failure"] = {"kind": exc.kind, "message": str(exc)}
    if exc.report is not None:
        s["solver"] = exc.report.as_dict()
    return s


# ---------------------------------------------------------------------------
# runners


def run_solve(cfg: RunConfig, out):
    out = Path(out)
    problem, _ = build_problem(cfg, cfg.n)
    try:
        state, report = solve_problem(cfg, problem)
    except SolverError as exc:
        write_summary(out, _failure_summary(cfg, exc))
        raise

    residual = residual_norm(problem, state)
    stability, note = None, None
    if cfg.certify:
        if residual <= 1e-9:
            stability = certify_stability(problem, state, cfg.stability_threshold).as_dict()
        else:
            note = f"certificate skipped: residual {residual:.3e} above 1e-9"

    write_field(out / "fields_u.csv", state.u, "u")
    write_field(out / "fields_m.csv", state.m, "m")
    _write_history(out / "history.csv", report)

    summary = _base_summary(cfg)
    summary.update(
        {
            "method": report.method,
            "converged": report.converged,
            "residual": residual,
            "iterations": report.iterations,
            "mass": state.m.mass(),
            "sup_checks": a_priori_checks(problem, state),
            "norms": {"u": fem.norms(state.u), "m": fem.norms(state.m)},
            "stability": stability,
            "solver": report.as_dict(),
        }
    )
    if note:
        summary["stability_note"] = note
    return write_summary(out, summary)


def _write_history(path, report):
    res = report.residual_history
    steps = report.step_history
    offset = len(res) - len(steps)  # Newton records the initial residual, Picard does not
    rows = []
    for i, r in enumerate(res):
        j = i - offset
        rows.append([i + (1 - offset), r, steps[j] if j >= 0 else None])
    write_csv(path, ["k", "residual", "step_norm"], rows)


def run_converge(cfg: RunConfig, out):
    out = Path(out)
    ns = list(cfg.n_list)
    rows = []
    if cfg.manufactured:
        method, ref = EXACT_METHOD, None
    else:
        method = REFERENCE_METHOD
        ref_problem, _ = build_problem(cfg, cfg.reference_n)
        ref, _ = solve_problem(cfg, ref_problem)

    prev, prev_n = (None,) * 4, None
    for n in ns:
        problem, exact = build_problem(cfg, n)
        state, _ = solve_problem(cfg, problem)
        if exact is not None:
            eu = error_norms(state.u, exact.u, exact.grad_u)
            em = error_norms(state.m, exact.m)
            err = (eu["H1"], eu["L2"], em["L2"])
        else:
            err = _reference_errors(state, ref)
        cur = err + (err[0] + err[2],)
        ratio = n / prev_n if prev_n else None
        rates = [_rate(p, c, ratio) for p, c in zip(prev, cur)]
        rows.append([n, 1.0 / n, *cur, *rates])
        prev, prev_n = cur, n

    header = ["n", "h", "err_u_H1", "err_u_L2", "err_m_L2", "err_total", "rate_u", "rate_u_L2", "rate_m", "rate_total"]
    write_csv(out / "converge.csv", header, rows)
    summary = _base_summary(cfg)
    summary.update(
        {
            "methodology": method,
            "reference_n": cfg.reference_n if ref is not None else None,
            "rows": [dict(zip(header, r)) for r in rows],
        }
    )
    return write_summary(out, summary)


def _reference_errors(state: State, ref: State):
    """Errors of a coarse solution measured on the nested reference mesh."""
    fine = ref.mesh
    du = interpolate(state.mesh, state.u.coeffs, fine.nodes) - ref.u.coeffs
    dm = interpolate(state.mesh, state.m.coeffs, fine.nodes) - ref.m.coeffs
    nu = fem.norms(Field(fine, du))
    nm = fem.norms(Field(fine, dm))
    return nu["H1"], nu["L2"], nm["L2"]


def run_newton_rates(cfg: RunConfig, out):
    out = Path(out)
    problem, _ = build_problem(cfg, cfg.n)
    try:
        state, report = solve_problem(cfg, problem)
    except SolverError as exc:
        write_summary(out, _failure_summary(cfg, exc))
        raise
    res = report.residual_history
    steps = report.step_history
    offset = len(res) - len(steps)
    rows = []
    for i, r in enumerate(res):
        prev = res[i - 1] if i > 0 else None
        quad = r / prev**2 if prev else None
        lin = r / prev if prev else None
        j = i - offset
        rows.append([i + (1 - offset), r, steps[j] if j >= 0 else None, quad, lin])
    header = ["k", "residual", "step_norm", "quad_ratio", "linear_ratio"]
    write_csv(out / "newton_rates.csv", header, rows)
    _write_history(out / "history.csv", report)
    summary = _base_summary(cfg)
    summary.update(
        {
            "method": report.method,
            "converged": report.converged,
            "iterations": report.iterations,
            "residual": residual_norm(problem, state),
            "mass": state.m.mass(),
            "solver": report.as_dict(),
        }
    )
    return write_summary(out, summary)


def run_stability_sweep(cfg: RunConfig, out):
    out = Path(out)
    header = ["lambda", "sigma_min", "K_hat", "M_hat", "Lambda_hat", "monotone", "large_lambda", "stable", "status"]
    rows = []
    for lam in cfg.lambda_list:
        try:
            problem, _ = build_problem(cfg, cfg.n, lam)
            state, _ = solve_problem(cfg, problem)
            rep = certify_stability(problem, state, cfg.stability_threshold)
        except SolverError as exc:
            rows.append([lam, None, None, None, None, None, None, None, exc.kind])
            continue
        rows.append(
            [
                lam,
                rep.sigma_min,
                rep.K_hat,
                rep.M_hat,
                rep.Lambda_hat,
                rep.monotone_condition,
                rep.large_lambda_condition,
                rep.stable,
                "ok" if rep.sigma_converged else "sigma-not-converged",
            ]
        )
    write_csv(out / "stability_sweep.csv", header, rows)
    summary = _base_summary(cfg)
    summary["rows"] = [dict(zip(header, r)) for r in rows]
    return write_summary(out, summary)


def run_sensitivity(cfg: RunConfig, out):
    out = Path(out)
    problem, _ = build_problem(cfg, cfg.n)
    try:
        state, report = solve_problem(cfg, problem)
    except SolverError as exc:
        write_summary(out, _failure_summary(cfg, exc))
        raise
    write_field(out / "fields_u.csv", state.u, "u")
    write_field(out / "fields_m.csv", state.m, "m")
    _write_history(out / "history.csv", report)
    rep = certify_stability(problem, state, cfg.stability_threshold)
    if not rep.stable:
        s = _base_summary(cfg)
        s["status"] = "refused"
        s["stability"] = rep.as_dict()
        write_summary(out, s)
        raise UnstableSolutionError(
            f"sigma_min {rep.sigma_min:.3e} is not above the threshold {cfg.stability_threshold:.3e}; "
            "sensitivity is only defined at stable solutions"
        )
    m1 = cfg.m1.field(problem.mesh)
    result = perturbed_taylor_check(problem, state, cfg.f_hat.build(), m1, cfg.epsilons)

    write_csv(out / "sensitivity.csv", ["epsilon", "remainder"], result.taylor_errors)
    write_field(out / "delta_u.csv", result.direction.u, "delta_u")
    write_field(out / "delta_m.csv", result.direction.m, "delta_m")
    detail = {
        "observed_order": result.observed_order,
        "taylor_errors": [{"epsilon": e, "remainder": r} for e, r in result.taylor_errors],
        "failures": [{"epsilon": e, "message": m} for e, m in result.failures],
        "direction_norm": fem.h1_l2_norm(problem.mesh, result.direction.u, result.direction.m),
        "stability": rep.as_dict(),
    }
    write_json(out / "sensitivity.json", detail)
    summary = _base_summary(cfg)
    summary.update(detail)
    summary["iterations"] = report.iterations
    return write_summary(out, summary)


RUNNERS = {
    "solve": run_solve,
    "converge": run_converge,
    "newton-rates": run_newton_rates,
    "stability-sweep": run_stability_sweep,
    "sensitivity": run_sensitivity,
}


def run(cfg: RunConfig, out):
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {out}: {exc.strerror}", field="out") from exc
    return RUNNERS[cfg.experiment](cfg, out)
