"""Builders for the HIV models: two-slope viral load, bivariate descriptive
model, and the mechanistic CD4/virus ODE with an event hazard.

All numeric defaults are illustrative, chosen for a plausible scale (CD4
steady state near 1000 cells/uL) and not fitted to any data.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .errors import ModelError
from .influence import InfluenceGraph, derive_graph
from .model import (AttributeDecl, ComponentSpec, Correlation, Fixed, GaussianRandom,
                    InputSchedule, Kind, SystemSpec)
from .simulate import TrajectoryBundle

__all__ = [
    "TwoSlopeParams", "MechanisticParams", "build_two_slope", "build_bivariate_descriptive",
    "build_mechanistic", "observed_markers", "influence_chain_demo", "doctor_graph",
    "two_slope_variance", "cd4_steady_state", "MECHANISTIC_EDGES",
]

MECHANISTIC_EDGES = frozenset({
    ("T", "Q"), ("Q", "T"), ("VI", "T"), ("IRT", "T"), ("T", "Tstar"), ("VI", "Tstar"),
    ("IRT", "Tstar"), ("Tstar", "VI"), ("Tstar", "VNI"), ("Q", "D"), ("T", "D"),
})

C = ex.Const


@dataclass(frozen=True)
class TwoSlopeParams:
    """Two-slope viral-load trajectory with random intercept and slopes."""
    beta0: float = 4.0
    beta1: float = -1.0
    beta2: float = -0.1
    sdA0: float = 0.5
    sdA1: float = 0.3
    sdA2: float = 0.1
    gamma1: float = -0.5
    gamma2: float = 0.0
    tStar: float = 1.0
    sigmaW: float = 0.2
    errorSd: float = 0.3
    etaDet: float = 1.7

    def __post_init__(self):
        for name in ("sdA0", "sdA1", "sdA2", "sigmaW", "errorSd"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be >= 0")
        if not self.tStar > 0:
            raise ModelError("tStar must be > 0")


@dataclass(frozen=True)
class MechanisticParams:
    """Rates of the quiescent/activated/infected CD4 and virion model."""
    lambdaProd: float = 50.0
    rho: float = 0.01
    alpha: float = 0.1
    muQ: float = 0.01
    muT: float = 0.09
    muTstar: float = 0.5
    muV: float = 3.0
    gammaInf: float = 5e-4
    etaRT: float = 0.8
    omega: float = 0.5
    piProd: float = 100.0
    hazardBase: float = 1e-3
    betaQ: float = -0.002
    betaT: float = -0.005
    betaZ: float = 0.5
    zCovariate: float = 0.0
    Q0: float = 500.0
    T0: float = 500.0
    Tstar0: float = 0.0
    VI0: float = 1.0
    VNI0: float = 0.0

    def __post_init__(self):
        for name in ("lambdaProd", "rho", "alpha", "muQ", "muT", "muTstar", "muV",
                     "gammaInf", "piProd", "hazardBase"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be >= 0")
        for name in ("etaRT", "omega"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ModelError(f"{name} must lie in [0, 1]")


def _slope_drift(b1: ex.Expr, b2: ex.Expr, t_star: float) -> ex.Expr:
    # "<" rather than "<=": identical in continuous time, exact on a
    # left-point Euler grid that contains t_star
    t = ex.Time()
    return (b1 * ex.Indicator("<", t, C(t_star))
            + b2 * ex.Indicator(">=", t, C(t_star)))


def build_two_slope(p: TwoSlopeParams, treatment: int = 0) -> SystemSpec:
    """Viral load V with random intercept/slopes as attributes."""
    if treatment not in (0, 1):
        raise ModelError("treatment must be 0 or 1")
    attrs = tuple(AttributeDecl(f"beta{i}", GaussianRandom(getattr(p, f"beta{i}"),
                                                          getattr(p, f"sdA{i}")).normalized())
                  for i in range(3))
    a = C(float(treatment))
    s1 = ex.Attr("beta1") + C(p.gamma1) * a
    s2 = ex.Attr("beta2") + C(p.gamma2) * a
    v = ComponentSpec("V", Kind.DIFFUSION, _slope_drift(s1, s2, p.tStar), C(p.sigmaW), "beta0")
    return SystemSpec("two_slope", attrs, (v,))


def two_slope_variance(p: TwoSlopeParams, t: float) -> float:
    """Var(Y) at time t: random effects, Brownian part and measurement error."""
    before = min(t, p.tStar)
    after = max(t - p.tStar, 0.0)
    return (p.sdA0 ** 2 + before ** 2 * p.sdA1 ** 2 + after ** 2 * p.sdA2 ** 2
            + p.sigmaW ** 2 * t + p.errorSd ** 2)


def build_bivariate_descriptive(p1: TwoSlopeParams, p2: TwoSlopeParams,
                                corr: Optional[Sequence[Sequence[float]]] = None) -> SystemSpec:
    """Viral load V and CD4 level Tbar, linked only through correlated random effects.

    ``corr`` is the 6x6 correlation matrix of (V intercept, V slope 1,
    V slope 2, Tbar intercept, Tbar slope 1, Tbar slope 2); identity if None.
    """
    names = ["V_beta0", "V_beta1", "V_beta2", "T_beta0", "T_beta1", "T_beta2"]
    m = np.eye(6) if corr is None else np.asarray(corr, dtype=float)
    if m.shape != (6, 6):
        raise ModelError("correlation matrix must be 6x6")
    if not np.allclose(m, m.T) or not np.allclose(np.diag(m), 1.0):
        raise ModelError("correlation matrix must be symmetric with unit diagonal")
    if np.linalg.eigvalsh(m).min() < -1e-10:
        raise ModelError("correlation matrix is not positive semidefinite")
    attrs = []
    comps = []
    for prefix, comp, p in (("V", "V", p1), ("T", "Tbar", p2)):
        for i in range(3):
            attrs.append(AttributeDecl(f"{prefix}_beta{i}",
                                       GaussianRandom(getattr(p, f"beta{i}"), getattr(p, f"sdA{i}"))))
        drift = _slope_drift(ex.Attr(f"{prefix}_beta1"), ex.Attr(f"{prefix}_beta2"), p.tStar)
        comps.append(ComponentSpec(comp, Kind.DIFFUSION, drift, C(p.sigmaW), f"{prefix}_beta0"))
    corrs = tuple(Correlation(names[i], names[j], float(m[i, j]))
                  for i in range(6) for j in range(i + 1, 6) if m[i, j] != 0.0)
    return SystemSpec("bivariate_descriptive", tuple(attrs), tuple(comps), (), corrs)


def build_mechanistic(p: MechanisticParams, treatment_start: Optional[float] = None) -> SystemSpec:
    """Five-compartment ODE plus event counting process D.

    The reverse-transcriptase treatment indicator IRT is an input: 0 throughout
    when ``treatment_start`` is None, else switching to 1 at that time.
    """
    Q, T, Ts, VI, VNI, D = (ex.Comp(n) for n in ("Q", "T", "Tstar", "VI", "VNI", "D"))
    irt = ex.Input("IRT")
    infection = (C(1.0) - C(p.etaRT) * irt) * C(p.gammaInf) * T * VI
    burst = C(p.muTstar) * C(p.piProd) * Ts
    comps = (
        ComponentSpec("Q", Kind.ODE, C(p.lambdaProd) + C(p.rho) * T - C(p.alpha) * Q - C(p.muQ) * Q,
                      init=p.Q0),
        ComponentSpec("T", Kind.ODE, C(p.alpha) * Q - infection - C(p.rho) * T - C(p.muT) * T,
                      init=p.T0),
        ComponentSpec("Tstar", Kind.ODE, infection - C(p.muTstar) * Ts, init=p.Tstar0),
        ComponentSpec("VI", Kind.ODE, C(p.omega) * burst - C(p.muV) * VI, init=p.VI0),
        ComponentSpec("VNI", Kind.ODE, C(1.0 - p.omega) * burst - C(p.muV) * VNI, init=p.VNI0),
        ComponentSpec("D", Kind.COUNTING,
                      ex.Indicator("==", D, C(0.0)) * C(p.hazardBase)
                      * ex.Exp(C(p.betaQ) * Q + C(p.betaT) * T + C(p.betaZ) * ex.Attr("Z"))),
    )
    if treatment_start is None:
        sched = InputSchedule("IRT", (0.0,), (0.0,))
    elif treatment_start <= 0:
        sched = InputSchedule("IRT", (0.0,), (1.0,))
    else:
        sched = InputSchedule("IRT", (0.0, float(treatment_start)), (0.0, 1.0))
    return SystemSpec("hiv_mechanistic", (AttributeDecl("Z", Fixed(p.zCovariate)),), comps, (sched,))


def cd4_steady_state(p: MechanisticParams) -> tuple[float, float]:
    """(Q, T) fixed point without infection."""
    a = np.array([[p.alpha + p.muQ, -p.rho], [p.alpha, -(p.rho + p.muT)]])
    q, t = np.linalg.solve(a, [p.lambdaProd, 0.0])
    return float(q), float(t)


def observed_markers(bundle: TrajectoryBundle, log10: bool = False) -> TrajectoryBundle:
    """Bundle with the measured channels VL = VI + VNI and CD4 = Q + T + Tstar.

    With ``log10`` the VL channel is log10(VL); VL = 0 maps to -inf, which
    any detection limit censors.
    """
    try:
        vl = bundle.column("VI") + bundle.column("VNI")
        cd4 = bundle.column("Q") + bundle.column("T") + bundle.column("Tstar")
    except ModelError as e:
        raise ModelError(f"not a mechanistic bundle: {e}") from None
    if log10:
        with np.errstate(divide="ignore"):
            vl = np.log10(vl)
    states = np.stack([vl, cd4], axis=2)
    return replace(bundle, components=("VL", "CD4"), states=states,
                   kinds=("ode", "ode"))


def influence_chain_demo() -> InfluenceGraph:
    """Infection I -> CD4 level T -> AIDS A -> death D."""
    return InfluenceGraph(("I", "T", "A", "D"), frozenset({("I", "T"), ("T", "A"), ("A", "D")}))


def doctor_graph(p: Optional[MechanisticParams] = None) -> InfluenceGraph:
    """Mechanistic graph extended with measurement processes and treatment decisions.

    VL and CD4 carry the measurements of the markers; they feed back into
    the treatment IRT through the doctor.  Edges into and out of the
    measurement nodes are labelled "informational".
    """
    g = derive_graph(build_mechanistic(p or MechanisticParams(), 0.0))
    info = {("VI", "VL"), ("VNI", "VL"), ("Q", "CD4"), ("T", "CD4"), ("Tstar", "CD4"),
            ("VL", "IRT"), ("CD4", "IRT")}
    return InfluenceGraph(g.nodes + ("VL", "CD4"), g.edges | frozenset(info),
                          labels={e: "informational" for e in info})
