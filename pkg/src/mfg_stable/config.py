"""Loading and validation of JSON run configurations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ValidationError
from .fem import Field
from .mfg import make_coupling, density_field, m0_function
from .solve import SolverOptions

SCHEMA_VERSION = "1.0.0"
REFERENCE_FACTOR = 4  # reference_n must be at least this multiple of max(n_list)


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("mfg_stable.schemas").joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def _path(error) -> str:
    parts = [str(p) for p in error.absolute_path]
    if error.validator == "required":
        missing = error.message.split("'")[1]
        parts.append(missing)
    elif error.validator == "additionalProperties" and "'" in error.message:
        parts.append(error.message.split("'")[1])
    return ".".join(parts) or "<root>"


def validate_document(doc, schema_name="config"):
    """Raise :class:`ValidationError` naming the dotted path of the first schema violation."""
    validator = jsonschema.Draft202012Validator(load_schema(schema_name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        where = _path(err)
        raise ValidationError(f"{where}: {err.message}", field=where)


@dataclass(frozen=True)
class CouplingConfig:
    family: str = "zero"
    scale: float = 1.0

    def build(self):
        return make_coupling(self.family, self.scale)

    def as_dict(self):
        return {"family": self.family, "scale": self.scale}


@dataclass(frozen=True)
class DensityConfig:
    family: str = "uniform"
    amplitude: float = 0.0
    shift: float = 0.0

    def function(self):
        return m0_function(self.family, self.amplitude, self.shift)

    def field(self, mesh) -> Field:
        """Unit-mass P1 density; the uniform family is represented exactly."""
        if self.family == "uniform":
            return Field.constant(mesh, 1.0)
        return density_field(mesh, self.function())

    def as_dict(self):
        return {"family": self.family, "amplitude": self.amplitude, "shift": self.shift}


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    dim: int
    lam: Optional[float] = None
    n: Optional[int] = None
    n_list: tuple = ()
    reference_n: Optional[int] = None
    lambda_list: tuple = ()
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    m0: DensityConfig = field(default_factory=DensityConfig)
    method: str = "newton"
    solver: SolverOptions = field(default_factory=SolverOptions)
    manufactured: bool = False
    certify: bool = True
    stability_threshold: float = 1e-8
    epsilons: tuple = (1e-1, 1e-2, 1e-3)
    f_hat: Optional[CouplingConfig] = None
    m1: Optional[DensityConfig] = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        validate_document(doc)
        _semantic_checks(doc)
        solver = doc.get("solver", {})
        pert = doc.get("perturbation")
        return cls(
            experiment=doc["experiment"],
            dim=doc["dim"],
            lam=float(doc["lambda"]) if "lambda" in doc else None,
            n=doc.get("n"),
            n_list=tuple(doc.get("n_list", ())),
            reference_n=doc.get("reference_n"),
            lambda_list=tuple(float(v) for v in doc.get("lambda_list", ())),
            coupling=CouplingConfig(**doc.get("coupling", {})),
            m0=DensityConfig(**doc.get("m0", {})),
            method=solver.get("method", "newton"),
            solver=SolverOptions(
                tol=float(solver.get("tol", 1e-11)),
                max_iter=solver.get("max_iter"),
                damping=float(solver.get("damping", 0.5)),
                line_search=bool(solver.get("line_search", False)),
            ),
            manufactured=bool(doc.get("manufactured", False)),
            certify=bool(doc.get("certify", True)),
            stability_threshold=float(doc.get("stability_threshold", 1e-8)),
            epsilons=tuple(float(e) for e in doc.get("epsilons", (1e-1, 1e-2, 1e-3))),
            f_hat=CouplingConfig(**pert["f_hat"]) if pert else None,
            m1=DensityConfig(**pert["m1"]) if pert else None,
            raw=doc,
        )


def _semantic_checks(doc):
    n_list = doc.get("n_list")
    if n_list is not None and any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValidationError("n_list must be strictly increasing", field="n_list")
    ref = doc.get("reference_n")
    if n_list and ref is not None and ref < REFERENCE_FACTOR * max(n_list):
        raise ValidationError(
            f"reference_n must be at least {REFERENCE_FACTOR} x max(n_list) = {REFERENCE_FACTOR * max(n_list)}",
            field="reference_n",
        )
    if n_list and ref is not None and any(ref % n for n in n_list):
        raise ValidationError("reference_n must be a multiple of every n in n_list", field="reference_n")
    eps = doc.get("epsilons")
    if eps is not None and any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValidationError("epsilons must be strictly decreasing", field="epsilons")
    if doc.get("manufactured") and doc.get("experiment") not in ("solve", "converge"):
        raise ValidationError("manufactured sources apply to solve and converge only", field="manufactured")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}", field="config") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}", field="config") from exc
    return RunConfig.from_dict(doc)
