"""Typed description of a dynamical system: attributes plus state components.

A :class:`SystemSpec` is the couple (attributes, state process).  Attributes
are time-fixed, possibly random; components are the coordinates of the
multivariate process, each a diffusion, a counting process or a
deterministic ODE.  Each component owns its own driving noise, so the
martingale parts are orthogonal by construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional, Union

from . import expr as ex
from .errors import ModelError, TimeInhomogeneousError

__all__ = [
    "Fixed", "GaussianRandom", "AttributeDecl", "Kind", "ComponentSpec",
    "InputSchedule", "Correlation", "SystemSpec", "Violation", "ValidationReport",
    "validate", "dependencies", "input_dependencies", "canonicalize_deterministic",
    "to_canonical_json", "RESERVED_TIME",
]

RESERVED_TIME = "t"


@dataclass(frozen=True)
class Fixed:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class GaussianRandom:
    mean: float
    sd: float

    def __post_init__(self):
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "sd", float(self.sd))
        if self.sd < 0:
            raise ModelError("standard deviation must be >= 0")

    def normalized(self) -> Union[Fixed, "GaussianRandom"]:
        return Fixed(self.mean) if self.sd == 0 else self


@dataclass(frozen=True)
class AttributeDecl:
    name: str
    value: Union[Fixed, GaussianRandom]

    @property
    def is_random(self) -> bool:
        return isinstance(self.value, GaussianRandom) and self.value.sd > 0


class Kind(str, Enum):
    DIFFUSION = "diffusion"
    COUNTING = "counting"
    ODE = "ode"


@dataclass(frozen=True)
class ComponentSpec:
    """One coordinate of the state process.

    ``drift`` is the intensity for counting components.  ``init`` is a float
    or the name of an attribute (random initial condition).
    """
    name: str
    kind: Kind
    drift: ex.Expr
    sigma: Optional[ex.Expr] = None
    init: Union[float, str] = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "drift", ex.as_expr(self.drift))
        if self.sigma is not None:
            object.__setattr__(self, "sigma", ex.as_expr(self.sigma))
        if self.kind is Kind.DIFFUSION and self.sigma is None:
            raise ModelError(f"diffusion component {self.name} needs a sigma")
        if self.kind is not Kind.DIFFUSION and self.sigma is not None:
            raise ModelError(f"sigma given for non-diffusion component {self.name}")
        if not isinstance(self.init, str):
            object.__setattr__(self, "init", float(self.init))


@dataclass(frozen=True)
class InputSchedule:
    """Right-continuous step function: ``values[i]`` holds from ``breakpoints[i]``.

    Before the first breakpoint the schedule is 0.
    """
    name: str
    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        if not bps or len(bps) != len(vals):
            raise ModelError(f"input {self.name}: need matching, non-empty breakpoints/values")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ModelError(f"input {self.name}: breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)

    def value_at(self, t: float) -> float:
        out = 0.0
        for b, v in zip(self.breakpoints, self.values):
            if b <= t:
                out = v
            else:
                break
        return out


@dataclass(frozen=True)
class Correlation:
    """Correlation between two Gaussian attributes (joint draw)."""
    first: str
    second: str
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "rho", float(self.rho))
        if not -1.0 <= self.rho <= 1.0:
            raise ModelError("correlation must lie in [-1, 1]")


@dataclass(frozen=True)
class SystemSpec:
    name: str
    attributes: tuple[AttributeDecl, ...] = ()
    components: tuple[ComponentSpec, ...] = ()
    inputs: tuple[InputSchedule, ...] = ()
    correlations: tuple[Correlation, ...] = ()

    def __post_init__(self):
        for f in ("attributes", "components", "inputs", "correlations"):
            object.__setattr__(self, f, tuple(getattr(self, f)))

    @property
    def component_names(self) -> list[str]:
        return [c.name for c in self.components]

    @property
    def attribute_names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def input_names(self) -> list[str]:
        return [i.name for i in self.inputs]

    def component(self, name: str) -> ComponentSpec:
        for c in self.components:
            if c.name == name:
                return c
        raise ModelError(f"unknown component {name!r}")

    def attribute(self, name: str) -> AttributeDecl:
        for a in self.attributes:
            if a.name == name:
                return a
        raise ModelError(f"unknown attribute {name!r}")


@dataclass(frozen=True)
class Violation:
    component: str
    rule: str  # A1 | A2 | NAME | INIT
    message: str

    def __str__(self):
        return f"{self.component}: {self.rule}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    def __bool__(self) -> bool:
        # truthy when valid, mirroring "report is empty"
        return not self.violations

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)

    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]


def validate(spec: SystemSpec) -> ValidationReport:
    """Check membership in the class of models the calculus applies to.

    Rules:

    * ``NAME`` -- duplicate or reserved names, unresolved references.
    * ``A2``  -- a diffusion coefficient that depends on the state, an
      attribute or an input (non-deterministic bracket).
    * ``INIT`` -- counting components must start at 0; attribute-valued
      initial conditions must name a declared attribute.

    A1 (orthogonal martingales) holds by construction: every component is
    driven by its own noise source, so no A1 violation can be encoded.
    """
    out: list[Violation] = []
    seen: dict[str, str] = {}
    decls = ([("attribute", a.name) for a in spec.attributes]
             + [("input", i.name) for i in spec.inputs]
             + [("component", c.name) for c in spec.components])
    for what, name in decls:
        if name == RESERVED_TIME:
            out.append(Violation(name, "NAME", f"'{RESERVED_TIME}' is reserved for time"))
        if name in seen:
            out.append(Violation(name, "NAME", f"{what} {name!r} clashes with {seen[name]} of the same name"))
        else:
            seen[name] = what

    comps = set(spec.component_names)
    attrs = set(spec.attribute_names)
    inputs = set(spec.input_names)

    for c in spec.components:
        exprs = [("drift", c.drift)] + ([("sigma", c.sigma)] if c.sigma is not None else [])
        for label, e in exprs:
            for name in sorted(ex.references(e, ex.Comp) - comps):
                out.append(Violation(c.name, "NAME", f"{label} references unknown component {name!r}"))
            for name in sorted(ex.references(e, ex.Attr) - attrs):
                out.append(Violation(c.name, "NAME", f"{label} references unknown attribute {name!r}"))
            for name in sorted(ex.references(e, ex.Input) - inputs):
                out.append(Violation(c.name, "NAME", f"{label} references unknown input {name!r}"))
        if c.sigma is not None:
            bad = sorted(ex.references(c.sigma, ex.Comp) | ex.references(c.sigma, ex.Attr)
                         | ex.references(c.sigma, ex.Input))
            if bad:
                out.append(Violation(
                    c.name, "A2",
                    f"diffusion coefficient depends on {', '.join(bad)}; "
                    "the bracket process must be deterministic"))
        if c.kind is Kind.COUNTING and c.init != 0.0:
            out.append(Violation(c.name, "INIT", "counting components start at 0"))
        if isinstance(c.init, str) and c.init not in attrs:
            out.append(Violation(c.name, "INIT", f"initial value names unknown attribute {c.init!r}"))

    for corr in spec.correlations:
        for name in (corr.first, corr.second):
            if name not in attrs:
                out.append(Violation(name, "NAME", "correlation references unknown attribute"))
            elif not isinstance(spec.attribute(name).value, GaussianRandom):
                out.append(Violation(name, "NAME", "correlation on a non-random attribute"))
    return ValidationReport(tuple(out))


def dependencies(spec: SystemSpec, component: str) -> set[str]:
    """Components appearing in ``component``'s drift, itself excluded."""
    c = spec.component(component)
    return ex.references(c.drift, ex.Comp) - {component}


def input_dependencies(spec: SystemSpec, component: str) -> set[str]:
    return ex.references(spec.component(component).drift, ex.Input)


def canonicalize_deterministic(spec: SystemSpec) -> SystemSpec:
    """Turn a time-homogeneous ODE system into its canonical SDE.

    Each ODE component becomes a diffusion with the same drift and unit
    diffusion coefficient; the influence graph of the ODE is by definition
    that of the result.
    """
    for c in spec.components:
        if c.kind is not Kind.ODE:
            raise ModelError(f"component {c.name} is not a deterministic ODE")
        if ex.contains_time(c.drift):
            raise TimeInhomogeneousError(
                f"drift of {c.name} depends explicitly on time; no canonical "
                "time-homogeneous representation")
    comps = tuple(replace(c, kind=Kind.DIFFUSION, sigma=ex.Const(1.0)) for c in spec.components)
    return replace(spec, components=comps)


def _value_json(v: Union[Fixed, GaussianRandom]) -> dict:
    if isinstance(v, Fixed):
        return {"fixed": v.value}
    return {"normal": [v.mean, v.sd]}


def to_canonical_json(spec: SystemSpec) -> str:
    """Stable JSON rendering with expressions as prefix s-expressions."""
    doc = {
        "name": spec.name,
        "attributes": [{"name": a.name, "value": _value_json(a.value)} for a in spec.attributes],
        "inputs": [{"name": i.name, "steps": [[b, v] for b, v in zip(i.breakpoints, i.values)]}
                   for i in spec.inputs],
        "components": [
            {"name": c.name, "kind": c.kind.value, "drift": ex.to_sexpr(c.drift),
             "sigma": None if c.sigma is None else ex.to_sexpr(c.sigma),
             "init": c.init}
            for c in spec.components],
        "correlations": [[k.first, k.second, k.rho] for k in spec.correlations],
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def iter_exprs(spec: SystemSpec) -> Iterable[ex.Expr]:
    for c in spec.components:
        yield c.drift
        if c.sigma is not None:
            yield c.sigma
