"""Experiment configuration: a TOML file validated by pydantic models."""

from __future__ import annotations

import inspect
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .kernel import HistoryState, Kernel, load_tabulated_kernel
from .problems import PROBLEMS, Problem, make_problem

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "KINDS"]

KINDS = ("simulate", "value", "dpp", "bop", "hjb2d", "xval")


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemSpec(_Strict):
    name: Literal[tuple(sorted(PROBLEMS))]  # type: ignore[valid-type]
    lam: PositiveFloat = 1.0
    rate: Optional[PositiveFloat] = None
    coef: Optional[float] = None
    clamp: Optional[PositiveFloat] = None
    n_controls: Optional[PositiveInt] = None
    u_max: Optional[PositiveFloat] = None
    control_weight: Optional[float] = Field(default=None, ge=0)
    kappa: Optional[float] = None

    @model_validator(mode="after")
    def _params_apply(self):
        accepted = set(inspect.signature(PROBLEMS[self.name]).parameters)
        for key, val in self.params().items():
            if key not in accepted:
                raise ValueError(f"parameter '{key}' does not apply to problem '{self.name}'")
        return self

    def params(self) -> dict:
        return {k: v for k, v in self.model_dump(exclude={"name"}).items() if v is not None}


class KernelSpec(_Strict):
    form: Literal["exponential", "tabulated", "zero"]
    rate: Optional[PositiveFloat] = None
    coef: float = 1.0
    path: Optional[str] = None
    smooth: bool = True

    @model_validator(mode="after")
    def _fields(self):
        if self.form == "exponential" and self.rate is None:
            raise ValueError("exponential kernel needs 'rate'")
        if self.form == "tabulated" and self.path is None:
            raise ValueError("tabulated kernel needs 'path'")
        return self


class HistorySpec(_Strict):
    x: float = 1.0
    z: Literal["zero", "constant", "exponential"] = "zero"
    amplitude: float = 1.0
    rate: PositiveFloat = 1.0
    h_z: PositiveFloat = 0.05
    s_max: PositiveFloat = 10.0
    tail: Literal["zero", "exponential"] = "zero"
    tail_rate: Optional[PositiveFloat] = None

    def build(self, x: float | None = None) -> HistoryState:
        x = self.x if x is None else x
        if self.z == "zero":
            func = 0.0
        elif self.z == "constant":
            func = self.amplitude
        else:
            amp, rate = self.amplitude, self.rate
            func = lambda s: amp * np.exp(-rate * s)  # noqa: E731
        tail = None
        if self.tail == "exponential":
            tail = self.tail_rate if self.tail_rate is not None else self.rate
        return HistoryState.from_function(np.array([x]), func, self.h_z, self.s_max, tail)


class ControlSpec(_Strict):
    indices: list[int] = [0]
    span: PositiveFloat = 1.0


class FamilySpec(_Strict):
    m: PositiveInt = 2
    span: PositiveFloat = 2.0
    controls: Optional[list[int]] = None
    mode: Literal["exhaustive", "improvement"] = "exhaustive"
    max_candidates: PositiveInt = 200_000


class DiscretizationSpec(_Strict):
    h: PositiveFloat = 0.01
    T: Optional[PositiveFloat] = None


class SimulateSpec(_Strict):
    T: PositiveFloat = 1.0
    picard_check: bool = True
    theta: Optional[PositiveFloat] = None


class ValueSpec(_Strict):
    x_values: Optional[list[float]] = None


class DPPSpec(_Strict):
    t: PositiveFloat = 1.0
    tol: PositiveFloat = 1e-9


class BopSpec(_Strict):
    n_samples: PositiveInt = 100
    h_z: PositiveFloat = 1e-3
    s_max: PositiveFloat = 30.0
    rel_tol: PositiveFloat = 1e-7


class HJBSpec(_Strict):
    box: tuple[float, float, float, float] = (-2.0, 2.0, -2.0, 2.0)
    nx: int = Field(default=101, ge=3)
    ny: int = Field(default=101, ge=3)
    dt: PositiveFloat = 0.02
    tol: PositiveFloat = 1e-10
    max_iter: Optional[PositiveInt] = None
    margin: float = Field(default=0.0, ge=0, lt=0.5)

    @model_validator(mode="after")
    def _box(self):
        x0, x1, y0, y1 = self.box
        if not (x1 > x0 and y1 > y0):
            raise ValueError("box must be (x_min, x_max, y_min, y_max) with positive extent")
        return self


class OutputSpec(_Strict):
    dir: str = "results"


_REQUIRED = {
    "simulate": ("problem", "history", "control", "simulate"),
    "value": ("problem", "history", "family"),
    "dpp": ("problem", "history", "family", "dpp"),
    "bop": ("bop",),
    "hjb2d": ("problem", "hjb"),
    "xval": ("problem", "history", "family", "hjb"),
}


class ExperimentConfig(_Strict):
    kind: Literal[KINDS]  # type: ignore[valid-type]
    seed: int = 0
    problem: Optional[ProblemSpec] = None
    kernel: Optional[KernelSpec] = None
    history: Optional[HistorySpec] = None
    discretization: DiscretizationSpec = DiscretizationSpec()
    control: Optional[ControlSpec] = None
    family: Optional[FamilySpec] = None
    simulate: Optional[SimulateSpec] = None
    value: Optional[ValueSpec] = None
    dpp: Optional[DPPSpec] = None
    bop: Optional[BopSpec] = None
    hjb: Optional[HJBSpec] = None
    output: OutputSpec = OutputSpec()

    @model_validator(mode="after")
    def _kind_fields(self):
        missing = [f for f in _REQUIRED[self.kind] if getattr(self, f) is None and f not in ("simulate", "value")]
        if missing:
            raise ValueError(f"experiment '{self.kind}' needs the tables {missing}")
        return self

    def build_problem(self) -> Problem:
        prob = make_problem(self.problem.name, **self.problem.params())
        if self.kernel is None:
            return prob
        k = self.kernel
        if k.form == "exponential":
            kernel = Kernel.exponential(k.rate, k.coef)
        elif k.form == "tabulated":
            kernel = load_tabulated_kernel(k.path, smooth=k.smooth)
        else:
            kernel = Kernel.zero()
        return Problem(prob.name, prob.dyn, prob.cost, kernel, prob.description)

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def required_fields(kind: str) -> tuple[str, ...]:
    return _REQUIRED[kind]


def _format_errors(exc) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    from pydantic import ValidationError

    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(data)
