"""Run configuration: schema validation and conversion to domain objects.

A config is a YAML or JSON mapping.  Mechanisms come from exactly one of

* ``quadratic: {alpha, theta}``
* ``mechanism`` (psi0) with optional ``immigration`` (phi)
* ``psi`` with ``theta``: psi0 = T_theta(psi) and phi = T_theta(psi) - psi
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .mechanisms import (
    BranchingMechanism,
    ImmigrationMechanism,
    branching_from_dict,
    immigration_from_dict,
    shift,
    tilde_phi_theta,
)
from .quadratic import QuadraticParams


# used when a config names no mechanism at all
DEFAULT_QUADRATIC = {"alpha": 0.5, "theta": 0.5}


class ConfigError(ValueError):
    """Invalid run configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Scalars = Union[float, list[float]]


def as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


class QuadraticBlock(_Strict):
    alpha: float = Field(ge=0)
    theta: float = Field(ge=0)


class LaplaceBlock(_Strict):
    method: Literal["ode", "closed", "both"] = "ode"
    t: Scalars = 1.0
    lambda1: Scalars = 1.0
    lambda2: Scalars = 1.0
    u: Optional[Scalars] = None


class MCBlock(_Strict):
    seed: int = Field(default=42, ge=0, lt=2**64)
    n_paths: int = Field(default=1000, ge=1)
    dt: float = Field(default=1.0 / 64, gt=0)
    n_steps: int = Field(default=64, ge=1)
    n_types: int = Field(default=12, ge=0)
    scheme: Literal["exact", "euler", "gw"] = "exact"
    diffusion: Literal["feller", "gaussian"] = "feller"
    workers: int = Field(default=1, ge=1)
    levels: int = Field(default=1000, ge=1)
    substeps: int = Field(default=1, ge=1)


class GatesBlock(_Strict):
    z: float = Field(default=4.0, ge=0)
    abs: float = Field(default=1e-6, ge=0)
    identity: float = Field(default=1e-10, ge=0)


class CondBlock(_Strict):
    lambda2: float = Field(default=1.0, ge=0)
    u: float = Field(default=1.0, ge=0)
    t_values: list[float] = [10.0, 25.0, 50.0]


class VerifyBlock(_Strict):
    suites: list[Literal["theorem", "joint", "extinction", "shift", "iteration", "conditional"]] = [
        "theorem", "joint", "extinction", "shift", "iteration", "conditional"]
    gates: GatesBlock = GatesBlock()
    delta: float = Field(default=0.05, gt=0)
    t: float = Field(default=1.0, gt=0)
    u: float = Field(default=0.5, ge=0)
    t_values: list[float] = [1.0]
    lambdas: list[float] = [1.0]
    pairs: list[tuple[float, float]] = [(1.0, 1.0), (0.5, 2.0)]
    shift_theta: float = Field(default=0.25, gt=0)
    law_n_paths: int = Field(default=40_000, ge=2)
    n_iter: int = Field(default=30, ge=0)
    conditional: CondBlock = CondBlock()


class RunConfig(_Strict):
    quadratic: Optional[QuadraticBlock] = None
    mechanism: Optional[dict[str, Any]] = None
    immigration: Optional[dict[str, Any]] = None
    psi: Optional[dict[str, Any]] = None
    theta: Optional[float] = None
    x: float = Field(default=1.0, ge=0)
    lambda_grid: list[float] = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0]
    laplace: LaplaceBlock = LaplaceBlock()
    mc: MCBlock = MCBlock()
    verify: VerifyBlock = VerifyBlock()

    @field_validator("lambda_grid")
    @classmethod
    def _nonneg(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("lambda_grid entries must be >= 0")
        return v

    @model_validator(mode="after")
    def _one_source(self):
        given = [self.quadratic is not None, self.mechanism is not None, self.psi is not None]
        if sum(given) != 1:
            raise ValueError("give exactly one of 'quadratic', 'mechanism' or 'psi'")
        if self.immigration is not None and self.mechanism is None:
            raise ValueError("'immigration' goes with 'mechanism'")
        if (self.psi is None) != (self.theta is None):
            raise ValueError("'psi' and 'theta' go together")
        return self

    # -- domain objects ----------------------------------------------------

    def mechanisms(self) -> tuple[BranchingMechanism, ImmigrationMechanism]:
        if self.quadratic is not None:
            q = QuadraticParams(self.quadratic.alpha, self.quadratic.theta, self.x)
            return q.psi0, q.phi
        if self.mechanism is not None:
            psi0 = branching_from_dict(self.mechanism)
            phi = immigration_from_dict(self.immigration) if self.immigration else ImmigrationMechanism()
            return psi0, phi
        psi = branching_from_dict(self.psi)
        return shift(psi, self.theta), tilde_phi_theta(psi, self.theta)

    def quadratic_params(self) -> QuadraticParams | None:
        """Parameters of the quadratic model when the mechanisms are of that form."""
        psi0, phi = self.mechanisms()
        if psi0.levy or phi.nu or psi0.beta != 1.0:
            return None
        alpha = psi0.alpha - phi.alpha_bar
        if alpha < 0:
            return None
        return QuadraticParams(alpha, phi.alpha_bar / 2.0, self.x)


def _parse_text(text: str, name: str) -> dict:
    try:
        if name.endswith(".json"):
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {name}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{name}: top level must be a mapping")
    return data


def _set_path(data: dict, dotted: str, raw: str) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a mapping")
    node[keys[-1]] = yaml.safe_load(raw)


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                assignments: list[str] | tuple = ()) -> RunConfig:
    """Read, override and validate a config; raises ConfigError on any problem."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        data = _parse_text(text, p.name)
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(data, key.strip(), raw)
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_path(data, dotted, json.dumps(value))
    if not {"quadratic", "mechanism", "psi"} & data.keys():
        data["quadratic"] = dict(DEFAULT_QUADRATIC)
    try:
        cfg = RunConfig.model_validate(data)
        cfg.mechanisms()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg
