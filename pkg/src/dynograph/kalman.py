"""Marginalizing a latent component out of a three-dimensional linear diffusion.

The system is

    dX1 = (a1 X1 + b1 X2 + c1 X3) dt + dW1
    dX2 = (a2 X1 + b2 X2 + c2 X3) dt + dW2
    dX3 = (a3 X1 + b3 X2 + c3 X3) dt + dW3,   X(0) = 0,

observed through (X1, X2) only.  In the observed filtration X3 is replaced
by its Kalman-Bucy estimate Xhat3, whose conditional variance R solves

    dR = (2 c3 R + 1 - R^2 (c1^2 + c2^2)) dt,   R(0) = 0.

The X2 -> X1 edge of the marginal graph can only disappear if the part of
b1 X2 + c1 Xhat3 driven by dX2 cancels, i.e. b1 = -R c1 c2 at every time.
With constant coefficients R is not constant, so that cannot happen;
:func:`construct_unfaithful` builds the time-varying family where it does.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, TextIO, Union

import numpy as np
from scipy.linalg import expm

from .errors import ModelError

__all__ = [
    "TimeFunction", "GridFunction", "LinearSystem3", "RiccatiSolution",
    "MarginalDecomposition", "FaithfulnessVerdict", "OracleReport", "DzResiduals",
    "riccati_solve", "marginal_decomposition", "faithfulness_verdict",
    "construct_unfaithful", "dz_expansion_residuals", "kalman_oracle_check",
    "simulate_exact", "discrete_kalman_latent", "COEFFICIENTS",
]

COEFFICIENTS = ("a1", "b1", "c1", "a2", "b2", "c2", "a3", "b3", "c3")


@dataclass(frozen=True)
class TimeFunction:
    """Smooth coefficient t -> f(t), with optional exact derivative."""
    f: Callable[[np.ndarray], np.ndarray]
    df: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.f(t), dtype=float), t.shape).copy()

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.df is not None:
            return np.broadcast_to(np.asarray(self.df(t), dtype=float), t.shape).copy()
        h = 1e-6
        return (self(t + h) - self(t - h)) / (2 * h)


@dataclass(frozen=True)
class GridFunction:
    """Coefficient known on a grid (linear interpolation in between)."""
    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    slopes: np.ndarray = field(repr=False)

    def __call__(self, t):
        return np.interp(np.asarray(t, dtype=float), self.grid, self.values)

    def derivative(self, t):
        return np.interp(np.asarray(t, dtype=float), self.grid, self.slopes)


Coef = Union[float, TimeFunction, GridFunction]


def _as_coef(c) -> Coef:
    if isinstance(c, (TimeFunction, GridFunction)):
        return c
    if callable(c):
        return TimeFunction(c)
    return float(c)


@dataclass(frozen=True)
class LinearSystem3:
    """Coefficients of the three linear SDEs; unit noise, zero initial state."""
    a1: Coef = 0.0
    b1: Coef = 0.0
    c1: Coef = 0.0
    a2: Coef = 0.0
    b2: Coef = 0.0
    c2: Coef = 0.0
    a3: Coef = 0.0
    b3: Coef = 0.0
    c3: Coef = 0.0
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        for name in COEFFICIENTS:
            object.__setattr__(self, name, _as_coef(getattr(self, name)))

    @classmethod
    def from_sequence(cls, values) -> "LinearSystem3":
        """From (a1, b1, c1, a2, b2, c2, a3, b3, c3)."""
        values = list(values)
        if len(values) != 9:
            raise ModelError("need nine coefficients a1,b1,c1,a2,b2,c2,a3,b3,c3")
        return cls(**dict(zip(COEFFICIENTS, values)))

    @property
    def is_constant(self) -> bool:
        return all(isinstance(getattr(self, n), float) for n in COEFFICIENTS)

    def coef(self, name: str, t) -> np.ndarray:
        c = getattr(self, name)
        t = np.asarray(t, dtype=float)
        if isinstance(c, float):
            return np.full(t.shape, c)
        return c(t)

    def coef_derivative(self, name: str, t) -> np.ndarray:
        c = getattr(self, name)
        t = np.asarray(t, dtype=float)
        if isinstance(c, float):
            return np.zeros(t.shape)
        return c.derivative(t)

    def matrix(self) -> np.ndarray:
        if not self.is_constant:
            raise ModelError("drift matrix requires constant coefficients")
        return np.array([[self.a1, self.b1, self.c1],
                         [self.a2, self.b2, self.c2],
                         [self.a3, self.b3, self.c3]])

    def swapped(self) -> "LinearSystem3":
        """Relabel components 1 and 2."""
        return LinearSystem3(a1=self.b2, b1=self.a2, c1=self.c2,
                             a2=self.b1, b2=self.a1, c2=self.c1,
                             a3=self.b3, b3=self.a3, c3=self.c3, notes=self.notes)

    def to_dict(self) -> dict:
        if not self.is_constant:
            raise ModelError("only constant systems serialize")
        return {n: getattr(self, n) for n in COEFFICIENTS}


def _grid(horizon: float, dt: float) -> np.ndarray:
    if not dt > 0 or not horizon > 0:
        raise ModelError("dt and horizon must be positive")
    n = max(1, int(math.ceil(horizon / dt - 1e-9)))
    return np.arange(n + 1) * dt


# --- Riccati -------------------------------------------------------------

@dataclass(frozen=True)
class RiccatiSolution:
    time_grid: np.ndarray
    R: np.ndarray
    steady_state: Optional[float] = None
    note: str = ""

    def rate(self, sys: LinearSystem3) -> np.ndarray:
        """dR/dt on the grid."""
        return _riccati_rhs(sys, self.time_grid, self.R)


def _riccati_rhs(sys: LinearSystem3, t, r):
    c1, c2, c3 = (sys.coef(n, t) for n in ("c1", "c2", "c3"))
    return 2.0 * c3 * r + 1.0 - r * r * (c1 * c1 + c2 * c2)


def steady_state_root(c1: float, c2: float, c3: float) -> Optional[float]:
    """Positive root of 2 c3 R + 1 - R^2 (c1^2 + c2^2) = 0, if any."""
    s = c1 * c1 + c2 * c2
    if s == 0.0:
        return -1.0 / (2.0 * c3) if c3 < 0 else None
    return (c3 + math.sqrt(c3 * c3 + s)) / s


def riccati_solve(sys: LinearSystem3, horizon: float, dt: float) -> RiccatiSolution:
    """Integrate the Riccati equation from R(0) = 0 with classical RK4.

    For constant coefficients ``steady_state`` is filled in with the positive
    root of the stationary quadratic once |dR/dt| < 1e-10 on the grid.
    When c1 = c2 = 0 no information flows and R grows without bound for
    c3 >= 0 (linearly for c3 = 0); that is reported in ``note``.
    """
    grid = _grid(horizon, dt)
    h = float(dt)
    # coefficients at the grid points and midpoints, so the loop runs on floats
    nodes = np.arange(2 * len(grid) - 1) * (0.5 * h)
    s = sys.coef("c1", nodes) ** 2 + sys.coef("c2", nodes) ** 2
    s = np.broadcast_to(s, nodes.shape).tolist()
    c3 = np.broadcast_to(sys.coef("c3", nodes), nodes.shape).tolist()
    r = [0.0] * len(grid)
    x = 0.0
    for i in range(len(grid) - 1):
        j = 2 * i
        k1 = 2.0 * c3[j] * x + 1.0 - x * x * s[j]
        y = x + 0.5 * h * k1
        k2 = 2.0 * c3[j + 1] * y + 1.0 - y * y * s[j + 1]
        y = x + 0.5 * h * k2
        k3 = 2.0 * c3[j + 1] * y + 1.0 - y * y * s[j + 1]
        y = x + h * k3
        k4 = 2.0 * c3[j + 2] * y + 1.0 - y * y * s[j + 2]
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not math.isfinite(x):
            raise ModelError(f"Riccati solution became non-finite at t={grid[i + 1]}")
        r[i + 1] = x
    r = np.array(r)
    steady, note = None, ""
    if sys.is_constant:
        rate = np.abs(_riccati_rhs(sys, grid, r))
        if sys.c1 == 0.0 and sys.c2 == 0.0 and sys.c3 >= 0.0:
            note = "c1 = c2 = 0: no information on X3, R grows without bound"
        elif np.any(rate[1:] < 1e-10):
            steady = steady_state_root(sys.c1, sys.c2, sys.c3)
    return RiccatiSolution(grid, r, steady, note)


# --- innovation decomposition ------------------------------------------

@dataclass(frozen=True)
class MarginalDecomposition:
    """Drift of (X1, X2) in their own filtration, and the Xhat3 recursion.

    On the grid::

        dXhat3 = (x1_coef X1 + x2_coef X2 + xhat_coef Xhat3) dt
                 + gain1 dX1 + gain2 dX2
        dX1 = (a1 X1 + b1 X2 + c1 Xhat3) dt + dM1
        dX2 = (a2 X1 + b2 X2 + c2 Xhat3) dt + dM2
    """
    time_grid: np.ndarray
    R: np.ndarray
    x1_coef: np.ndarray
    x2_coef: np.ndarray
    xhat_coef: np.ndarray
    gain1: np.ndarray
    gain2: np.ndarray
    marginal: dict  # {1: (a1, b1, c1) arrays, 2: (a2, b2, c2) arrays}

    def filter(self, x1: np.ndarray, x2: np.ndarray, xhat0: float = 0.0) -> np.ndarray:
        """Run the Xhat3 recursion on observed paths sampled on the grid."""
        n = len(self.time_grid)
        if len(x1) != n or len(x2) != n:
            raise ModelError("paths must live on the decomposition grid")
        dt = np.diff(self.time_grid)
        out = np.empty(n)
        out[0] = xhat0
        for i in range(n - 1):
            drift = self.x1_coef[i] * x1[i] + self.x2_coef[i] * x2[i] + self.xhat_coef[i] * out[i]
            out[i + 1] = (out[i] + drift * dt[i] + self.gain1[i] * (x1[i + 1] - x1[i])
                          + self.gain2[i] * (x2[i + 1] - x2[i]))
        return out

    def marginal_drift(self, component: int, x1, x2, xhat3) -> np.ndarray:
        a, b, c = self.marginal[component]
        return a * x1 + b * x2 + c * xhat3


def _decomposition(sys: LinearSystem3, ric: RiccatiSolution) -> MarginalDecomposition:
    t, r = ric.time_grid, ric.R
    a1, b1, c1, a2, b2, c2, a3, b3, c3 = (sys.coef(n, t) for n in COEFFICIENTS)
    return MarginalDecomposition(
        time_grid=t, R=r,
        x1_coef=a3 - r * (a1 * c1 + a2 * c2),
        x2_coef=b3 - r * (b1 * c1 + b2 * c2),
        xhat_coef=c3 - r * (c1 * c1 + c2 * c2),
        gain1=r * c1, gain2=r * c2,
        marginal={1: (a1, b1, c1), 2: (a2, b2, c2)},
    )


def marginal_decomposition(sys: LinearSystem3, horizon: float, dt: float) -> MarginalDecomposition:
    return _decomposition(sys, riccati_solve(sys, horizon, dt))


# --- faithfulness --------------------------------------------------------

@dataclass(frozen=True)
class FaithfulnessVerdict:
    faithful: Optional[bool]
    margin: float
    tol: float
    detail: str
    moot: bool = False
    min_residual: float = float("nan")

    def to_dict(self) -> dict:
        return {"faithful": self.faithful, "margin": self.margin, "tol": self.tol,
                "detail": self.detail, "moot": self.moot}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def faithfulness_verdict(sys: LinearSystem3, horizon: float = 10.0, dt: float = 1e-3,
                         tol: Optional[float] = None, target: int = 1) -> FaithfulnessVerdict:
    """Does the direct influence of the other observed component on ``target`` survive?

    For ``target=1`` the edge X2 -> X1 of the full system (b1 != 0) persists
    in the marginal system unless b1(t) + R_t c1(t) c2(t) = 0 at every grid
    time.  ``margin`` is the largest |b1 + R c1 c2| over the grid and
    ``faithful = margin > tol``.  ``target=2`` asks the same about X1 -> X2
    (coefficient a2).  When the coefficient is identically zero the question
    is moot and ``faithful`` is None.
    """
    if target not in (1, 2):
        raise ModelError("target must be 1 or 2")
    ric = riccati_solve(sys, horizon, dt)
    t = ric.time_grid
    cross = sys.coef("b1" if target == 1 else "a2", t)
    c1, c2 = sys.coef("c1", t), sys.coef("c2", t)
    name = "b1" if target == 1 else "a2"
    other, me = (2, 1) if target == 1 else (1, 2)
    if tol is None:
        tol = 1e-6 * (1.0 + float(np.max(np.abs(cross))))
    if np.all(cross == 0.0):
        return FaithfulnessVerdict(
            None, 0.0, tol, f"moot: {name} = 0, so X{other} is already weakly locally "
            f"independent of X{me}'s drift in the full system", moot=True, min_residual=0.0)
    residual = np.abs(cross + ric.R * c1 * c2)
    margin = float(residual.max())
    faithful = margin > tol
    if not faithful:
        detail = (f"{name}(t) = -R_t c1(t) c2(t) on the whole grid: the dX{other}-driven part "
                  f"of X{me}'s marginal drift cancels, X{other} -> X{me} disappears")
    elif np.all(c1 * c2 == 0.0):
        detail = (f"c1 c2 = 0: no dX{other} gain reaches X{me}'s marginal drift, which keeps "
                  f"the {name} X{other} term")
    elif sys.is_constant:
        detail = (f"constant {name} != 0 and R_t is not constant, so {name} = -R_t c1 c2 "
                  "cannot hold at every time")
    else:
        detail = f"{name} + R_t c1 c2 is not identically zero on the grid"
    return FaithfulnessVerdict(faithful, margin, tol, detail,
                               min_residual=float(residual.min()))


@dataclass(frozen=True)
class DzResiduals:
    """Residuals of the cancellation argument for Z = b1 X2 + c1 Xhat3.

    ``dx2_coefficient`` is max |b1 + R c1 c2| (the dX2 part of dZ);
    ``drift_condition`` is the max residual of the condition making the
    X2 and Xhat3 drift terms of dZ proportional to Z itself.
    """
    dx2_coefficient: float
    drift_condition: float
    dx2_trace: np.ndarray = field(repr=False)
    drift_trace: np.ndarray = field(repr=False)


def dz_expansion_residuals(sys: LinearSystem3, horizon: float, dt: float) -> DzResiduals:
    ric = riccati_solve(sys, horizon, dt)
    t, r = ric.time_grid, ric.R
    a1, b1, c1, a2, b2, c2, a3, b3, c3 = (sys.coef(n, t) for n in COEFFICIENTS)
    db1 = sys.coef_derivative("b1", t)
    dc1 = sys.coef_derivative("c1", t)
    dx2 = b1 + r * c1 * c2
    lhs = c1 * (c1 * (b3 - r * (b1 * c1 + b2 * c2)) + db1)
    rhs = b1 * (c1 * (c3 - r * (c1 * c1 + c2 * c2)) + dc1)
    cond = lhs - rhs
    return DzResiduals(float(np.abs(dx2).max()), float(np.abs(cond).max()), dx2, cond)


def construct_unfaithful(c1fn, c2fn, c3fn, b2fn, horizon: float, dt: float,
                         a1=0.0, a2=0.0, a3=0.0, b3_rule: str = "literal",
                         tol: float = 1e-6) -> LinearSystem3:
    """Time-varying system whose marginal loses the X2 -> X1 edge.

    Solves the Riccati equation for the given c's, then sets
    b1(t) = -R_t c1(t) c2(t) and b3(t) by ``b3_rule``:

    * ``"literal"``: b3 = R (b2 c2 + c2' + c2 - c2 c3) + R^2 c2^3
    * ``"exact"``: b3 = R b2 c2 + R c2 c3 + R c2' + c2 - R^2 c1^2 c2, the
      solution of the drift condition after substituting dR/dt.

    The drift condition is re-checked numerically; if its residual exceeds
    ``tol`` a warning is issued and the discrepancy recorded in ``notes``
    rather than asserted away.
    """
    if b3_rule not in ("literal", "exact"):
        raise ModelError("b3_rule must be 'literal' or 'exact'")
    base = LinearSystem3(c1=c1fn, c2=c2fn, c3=c3fn, b2=b2fn)
    ric = riccati_solve(base, horizon, dt)
    t, r = ric.time_grid, ric.R
    c1, c2, c3, b2 = (base.coef(n, t) for n in ("c1", "c2", "c3", "b2"))
    dc1, dc2 = base.coef_derivative("c1", t), base.coef_derivative("c2", t)
    dr = _riccati_rhs(base, t, r)
    b1 = -r * c1 * c2
    db1 = -(dr * c1 * c2 + r * dc1 * c2 + r * c1 * dc2)
    if b3_rule == "literal":
        b3 = r * (b2 * c2 + dc2 + c2 - c2 * c3) + r * r * c2 ** 3
    else:
        b3 = r * b2 * c2 + r * c2 * c3 + r * dc2 + c2 - r * r * c1 * c1 * c2
    # slope of b3 is not needed by any downstream formula
    b3_grid = GridFunction(t, b3, np.gradient(b3, t))
    notes = []
    if np.all(c1 == 0.0):
        notes.append("degenerate: c1 = 0 gives b1 = 0, nothing to cancel")
    sys = LinearSystem3(a1=a1, b1=GridFunction(t, b1, db1), c1=base.c1,
                        a2=a2, b2=base.b2, c2=base.c2,
                        a3=a3, b3=b3_grid, c3=base.c3)
    res = dz_expansion_residuals(sys, horizon, dt)
    if res.drift_condition > tol:
        msg = (f"b3 rule {b3_rule!r} leaves a drift-condition residual of "
               f"{res.drift_condition:.3e} (> {tol:g}); Z is not driven by X1 alone")
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    return replace(sys, notes=tuple(notes))


# --- independent oracle --------------------------------------------------

def exact_transition(sys: LinearSystem3, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """(F, Q) of the exact Gaussian transition over one step (Van Loan)."""
    a = sys.matrix()
    m = np.zeros((6, 6))
    m[:3, :3] = -a
    m[:3, 3:] = np.eye(3)
    m[3:, 3:] = a.T
    e = expm(m * dt)
    f = e[3:, 3:].T
    q = f @ e[:3, 3:]
    return f, 0.5 * (q + q.T)


def simulate_exact(sys: LinearSystem3, horizon: float, dt: float, seed: int = 0) -> np.ndarray:
    """One path on the grid from the exact transition; shape (steps + 1, 3)."""
    grid = _grid(horizon, dt)
    f, q = exact_transition(sys, dt)
    chol = np.linalg.cholesky(q)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((len(grid) - 1, 3))
    x = np.zeros((len(grid), 3))
    for i in range(len(grid) - 1):
        x[i + 1] = f @ x[i] + chol @ z[i]
    return x


def discrete_kalman_latent(sys: LinearSystem3, path: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and variance of X3 given noiseless (X1, X2) samples."""
    f, q = exact_transition(sys, dt)
    n = path.shape[0]
    mean = np.zeros(n)
    var = np.zeros(n)
    obs, lat = [0, 1], 2
    for i in range(n - 1):
        m = np.array([path[i, 0], path[i, 1], mean[i]])
        p = np.zeros((3, 3))
        p[lat, lat] = var[i]
        mu = f @ m
        s = f @ p @ f.T + q
        s_oo = s[np.ix_(obs, obs)]
        s_lo = s[lat, obs]
        gain = np.linalg.solve(s_oo, s_lo)
        mean[i + 1] = mu[lat] + gain @ (path[i + 1, :2] - mu[:2])
        var[i + 1] = s[lat, lat] - gain @ s_lo
    return mean, var


@dataclass(frozen=True)
class OracleReport:
    rms: float
    passed: bool
    continuous: np.ndarray = field(repr=False)
    discrete: np.ndarray = field(repr=False)
    path: np.ndarray = field(repr=False)


def kalman_oracle_check(sys: LinearSystem3, horizon: float, dt: float, seed: int = 0) -> OracleReport:
    """Compare the Kalman-Bucy Xhat3 with a discrete Kalman filter.

    One joint path is drawn from the exact Gaussian transition; the discrete
    filter on that path is the reference.  Passes when rms < 10 dt.
    """
    if not sys.is_constant:
        raise ModelError("oracle check needs constant coefficients")
    path = simulate_exact(sys, horizon, dt, seed)
    dec = marginal_decomposition(sys, horizon, dt)
    cont = dec.filter(path[:, 0], path[:, 1])
    disc, _ = discrete_kalman_latent(sys, path, dt)
    rms = float(np.sqrt(np.mean((cont - disc) ** 2)))
    return OracleReport(rms, rms < 10.0 * dt, cont, disc, path)


# --- export --------------------------------------------------------------

def _g17(x) -> str:
    return format(float(x), ".17g")


def write_riccati_csv(sol: RiccatiSolution, fh: TextIO) -> None:
    fh.write("t,R\n")
    for t, r in zip(sol.time_grid, sol.R):
        fh.write(f"{_g17(t)},{_g17(r)}\n")


def write_coefficients_csv(dec: MarginalDecomposition, fh: TextIO) -> None:
    cols = ["t", "R", "xhat_x1", "xhat_x2", "xhat_xhat", "gain1", "gain2",
            "m1_x1", "m1_x2", "m1_xhat", "m2_x1", "m2_x2", "m2_xhat"]
    fh.write(",".join(cols) + "\n")
    series = [dec.time_grid, dec.R, dec.x1_coef, dec.x2_coef, dec.xhat_coef, dec.gain1,
              dec.gain2, *dec.marginal[1], *dec.marginal[2]]
    for row in zip(*series):
        fh.write(",".join(_g17(v) for v in row) + "\n")
