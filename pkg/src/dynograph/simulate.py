"""Monte Carlo simulation of a :class:`~dynograph.model.SystemSpec`.

Diffusions use Euler-Maruyama, counting components per-step Bernoulli
thinning, ODE components classical RK4.  Drifts always see the left-limit
state: every component is snapshotted before any increment of the step is
applied.

Randomness is split by index: the stream for replicate ``r`` and component
``c`` is ``SeedSequence(master_seed, spawn_key=(r, c + 1))`` and attribute
draws use ``spawn_key=(r, 0)``.  Results therefore do not depend on the
thread count or on how many replicates are requested.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, TextIO

import numpy as np
from scipy import stats

from . import _backend
from . import expr as ex
from .errors import ModelError, SimulationError
from .model import GaussianRandom, Fixed, Kind, SystemSpec, validate

__all__ = [
    "SimConfig", "TrajectoryBundle", "ObservationRecord", "Moments", "Lemma4Report",
    "IntensityTooCoarseWarning", "simulate", "observe", "observation_arrays",
    "empirical_moments", "lemma4_mc_check", "write_trajectories_csv",
    "write_observations_csv", "default_threads",
]

MAX_STEPS = 10**8
CHUNK = 128
_KIND_CODES = {Kind.DIFFUSION: 0, Kind.COUNTING: 1, Kind.ODE: 2}
_ERR_NAMES = {1: "DivisionByZero", 2: "ExpOverflow", 3: "NonFinite"}


class IntensityTooCoarseWarning(UserWarning):
    """intensity * dt exceeded 0.1 somewhere; Bernoulli thinning is inaccurate."""


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    replicates: int = 1
    master_seed: int = 0
    threads: Optional[int] = None

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise ModelError("dt and horizon must be positive")
        if self.replicates < 1:
            raise ModelError("need at least one replicate")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ModelError("master seed must be a 64-bit unsigned integer")
        if self.horizon / self.dt > MAX_STEPS:
            raise ModelError(f"horizon / dt exceeds {MAX_STEPS} steps")

    @property
    def steps(self) -> int:
        n = self.horizon / self.dt
        return max(1, int(math.ceil(n - 1e-9)))


@dataclass(frozen=True)
class TrajectoryBundle:
    """Simulated paths.

    ``states`` has shape (replicates, steps + 1, components); counting
    columns hold cumulative counts.  ``attributes`` has shape
    (replicates, attributes) with the realized attribute draws.
    """
    time_grid: np.ndarray
    components: tuple[str, ...]
    states: np.ndarray
    attribute_names: tuple[str, ...] = ()
    attributes: Optional[np.ndarray] = None
    kinds: tuple[str, ...] = ()
    clamped: Optional[np.ndarray] = None
    coarse: Optional[np.ndarray] = None
    backend: str = ""

    @property
    def replicates(self) -> int:
        return self.states.shape[0]

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0]) if len(self.time_grid) > 1 else 0.0

    def index(self, name: str) -> int:
        try:
            return self.components.index(name)
        except ValueError:
            raise ModelError(f"unknown channel {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.states[:, :, self.index(name)]

    def attribute(self, name: str) -> np.ndarray:
        return self.attributes[:, self.attribute_names.index(name)]

    def grid_index(self, time: float) -> int:
        """Nearest grid point at or before ``time``."""
        if time < -1e-12 or time > self.time_grid[-1] + 1e-9 * max(1.0, self.time_grid[-1]):
            raise ModelError(f"time {time} outside [0, {self.time_grid[-1]}]")
        dt = self.dt
        if dt == 0.0:
            return 0
        return min(int(math.floor(time / dt + 1e-9)), len(self.time_grid) - 1)


def default_threads() -> int:
    env = os.environ.get("DYNOGRAPH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _corr_factor(spec: SystemSpec) -> Optional[np.ndarray]:
    if not spec.correlations:
        return None
    names = spec.attribute_names
    m = np.eye(len(names))
    for k in spec.correlations:
        i, j = names.index(k.first), names.index(k.second)
        m[i, j] = m[j, i] = k.rho
    w, v = np.linalg.eigh(m)
    if w.min() < -1e-10:
        raise ModelError("attribute correlation matrix is not positive semi-definite")
    return v * np.sqrt(np.clip(w, 0.0, None))


def draw_attributes(spec: SystemSpec, seed: int, replicates: Sequence[int]) -> np.ndarray:
    """Attribute draws for the given replicate indices, shape (len, n_attr)."""
    n_attr = len(spec.attributes)
    out = np.zeros((len(replicates), n_attr))
    if n_attr == 0:
        return out
    factor = _corr_factor(spec)
    means = np.array([a.value.mean if isinstance(a.value, GaussianRandom) else a.value.value
                      for a in spec.attributes])
    sds = np.array([a.value.sd if isinstance(a.value, GaussianRandom) else 0.0
                    for a in spec.attributes])
    for i, r in enumerate(replicates):
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(r), 0))))
        z = g.standard_normal(n_attr)
        if factor is not None:
            z = factor @ z
        out[i] = means + sds * z
    return out


def _draw_noise(kinds: Sequence[int], seed: int, replicates: Sequence[int], nsteps: int) -> np.ndarray:
    noise = np.zeros((len(replicates), nsteps, len(kinds)))
    for i, r in enumerate(replicates):
        for c, kind in enumerate(kinds):
            if kind == 2:
                continue
            ss = np.random.SeedSequence(seed, spawn_key=(int(r), c + 1))
            g = np.random.Generator(np.random.PCG64(ss))
            noise[i, :, c] = g.standard_normal(nsteps) if kind == 0 else g.random(nsteps)
    return noise


@dataclass(frozen=True)
class _Compiled:
    program: ex.Program
    kinds: np.ndarray
    drift_idx: np.ndarray
    sigma_idx: np.ndarray
    init_attr: list  # per component: attribute index or None
    init_value: np.ndarray


def _compile(spec: SystemSpec) -> _Compiled:
    comp_index = {n: i for i, n in enumerate(spec.component_names)}
    attr_index = {n: i for i, n in enumerate(spec.attribute_names)}
    input_index = {n: i for i, n in enumerate(spec.input_names)}
    exprs, drift_idx, sigma_idx = [], [], []
    for c in spec.components:
        drift_idx.append(len(exprs))
        exprs.append(c.drift)
        if c.sigma is not None:
            sigma_idx.append(len(exprs))
            exprs.append(c.sigma)
        else:
            sigma_idx.append(-1)
    program = ex.compile_program(exprs, comp_index, attr_index, input_index)
    return _Compiled(
        program,
        np.array([_KIND_CODES[c.kind] for c in spec.components], dtype=np.int32),
        np.array(drift_idx, dtype=np.int32),
        np.array(sigma_idx, dtype=np.int32),
        [attr_index[c.init] if isinstance(c.init, str) else None for c in spec.components],
        np.array([0.0 if isinstance(c.init, str) else c.init for c in spec.components]),
    )


def simulate(spec: SystemSpec, cfg: SimConfig, backend: Optional[str] = None) -> TrajectoryBundle:
    """Simulate ``cfg.replicates`` independent paths of ``spec``.

    Raises :class:`SimulationError` for the lowest-indexed replicate whose
    state or drift became non-finite.  Emits
    :class:`IntensityTooCoarseWarning` when some intensity * dt > 0.1.
    """
    report = validate(spec)
    if not report:
        raise ModelError("cannot simulate an invalid spec: " + "; ".join(map(str, report)))
    kernel = _backend.run_batch if backend is None else _backend.KERNELS[backend]
    backend_name = backend or _backend.BACKEND
    comp = _compile(spec)
    nsteps = cfg.steps
    ncomp = len(spec.components)
    dt = float(cfg.dt)
    inputs = np.array([[i.value_at(s * dt) for i in spec.inputs] for s in range(nsteps)],
                      dtype=np.float64).reshape(nsteps, len(spec.inputs))
    seed = int(cfg.master_seed)
    nrep = cfg.replicates
    states = np.empty((nrep, nsteps + 1, ncomp))
    attrs_all = np.empty((nrep, len(spec.attributes)))
    err = np.zeros((nrep, 3), dtype=np.int64)
    counters = np.zeros((nrep, 2), dtype=np.int64)
    p = comp.program

    def run_chunk(lo: int) -> None:
        hi = min(lo + CHUNK, nrep)
        reps = range(lo, hi)
        attrs = np.ascontiguousarray(draw_attributes(spec, seed, reps))
        init = np.tile(comp.init_value, (hi - lo, 1))
        for c, a in enumerate(comp.init_attr):
            if a is not None:
                init[:, c] = attrs[:, a]
        noise = _draw_noise(comp.kinds, seed, reps, nsteps)
        kernel(p.ops, p.args, p.consts, p.start, p.length, p.max_stack, comp.kinds,
               comp.drift_idx, comp.sigma_idx, attrs, inputs, noise,
               np.ascontiguousarray(init), dt, states[lo:hi], err[lo:hi], counters[lo:hi])
        attrs_all[lo:hi] = attrs

    threads = cfg.threads or default_threads()
    starts = range(0, nrep, CHUNK)
    if threads <= 1 or nrep <= CHUNK:
        for lo in starts:
            run_chunk(lo)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, starts))

    failed = np.flatnonzero(err[:, 0])
    if failed.size:
        r = int(failed[0])
        code, step, c = (int(v) for v in err[r])
        raise SimulationError(_ERR_NAMES.get(code, "NonFinite"), r, step, spec.components[c].name)
    if counters[:, 1].any():
        warnings.warn(
            f"intensity * dt exceeded 0.1 on {int(counters[:, 1].sum())} steps; reduce dt",
            IntensityTooCoarseWarning, stacklevel=2)
    return TrajectoryBundle(
        time_grid=np.arange(nsteps + 1) * dt,
        components=tuple(spec.component_names),
        states=states,
        attribute_names=tuple(spec.attribute_names),
        attributes=attrs_all,
        kinds=tuple(c.kind.value for c in spec.components),
        clamped=counters[:, 0].copy(),
        coarse=counters[:, 1].copy(),
        backend=backend_name,
    )


# --- observation scheme --------------------------------------------------

@dataclass(frozen=True)
class ObservationRecord:
    channel: str
    time: float
    detected: int
    value: Optional[float]
    error_sd: float
    detection_limit: Optional[float]


def observation_arrays(bundle: TrajectoryBundle, channel: str, times: Sequence[float],
                       error_sd: float, eta_det: Optional[float] = None,
                       seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`observe`: (detected, raw), each (replicates, times).

    ``raw`` is the noisy measurement before censoring.
    """
    if error_sd < 0:
        raise ModelError("error_sd must be >= 0")
    col = bundle.index(channel)
    idx = [bundle.grid_index(float(t)) for t in times]
    truth = bundle.states[:, idx, col]
    z = np.empty_like(truth)
    for r in range(bundle.replicates):
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(r,))))
        z[r] = g.standard_normal(len(idx))
    raw = truth + error_sd * z
    detected = np.ones(raw.shape, dtype=bool) if eta_det is None else raw > eta_det
    return detected, raw


def observe(bundle: TrajectoryBundle, channel: str, times: Sequence[float], error_sd: float,
            eta_det: Optional[float] = None, seed: int = 0) -> list[list[ObservationRecord]]:
    """Noisy, possibly left-censored measurements of ``channel``.

    raw = state + N(0, error_sd^2) at the grid point at or before each time;
    the value is reported only when ``eta_det`` is None or raw > eta_det.
    """
    detected, raw = observation_arrays(bundle, channel, times, error_sd, eta_det, seed)
    out = []
    for r in range(bundle.replicates):
        out.append([
            ObservationRecord(channel, float(t), int(d), float(v) if d else None,
                              float(error_sd), eta_det)
            for t, d, v in zip(times, detected[r], raw[r])])
    return out


# --- Monte Carlo summaries -----------------------------------------------

@dataclass(frozen=True)
class Moments:
    mean: np.ndarray
    cov: np.ndarray
    se_mean: np.ndarray
    se_cov: np.ndarray
    n: int


def empirical_moments(bundle: TrajectoryBundle, components: Sequence[str], time: float) -> Moments:
    """Unbiased mean and covariance across replicates at ``time``.

    ``se_cov`` is the standard error of each covariance entry, estimated from
    the spread of the centered products.
    """
    n = bundle.replicates
    if n < 2:
        raise ModelError("need at least two replicates")
    i = bundle.grid_index(time)
    x = bundle.states[:, i, [bundle.index(c) for c in components]]
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    prods = xc[:, :, None] * xc[:, None, :]
    se_cov = prods.std(axis=0, ddof=1) / math.sqrt(n)
    se_mean = np.sqrt(np.diag(cov) / n)
    return Moments(mean, cov, se_mean, se_cov, n)


@dataclass(frozen=True)
class Lemma4Report:
    corr: float
    se: float
    dynamically_independent: bool
    consistent: bool
    n: int


def lemma4_mc_check(spec: SystemSpec, j: str, k: str, cfg: SimConfig, time: float) -> Lemma4Report:
    """Empirical check that dynamically independent components are independent.

    Random attributes are fixed at their means, i.e. the check is made
    conditionally on the attributes.  When the graph says j and k are
    dynamically independent, ``consistent`` means |corr| <= 3 se; otherwise
    it means the dependence was detected (|corr| > 3 se).
    """
    from .influence import derive_graph, dynamical_independence

    for name in (j, k):
        if spec.component(name).kind is not Kind.DIFFUSION:
            raise ModelError(f"{name} is not a diffusion component")
    fixed = tuple(replace(a, value=Fixed(a.value.mean)) if isinstance(a.value, GaussianRandom) else a
                  for a in spec.attributes)
    spec = replace(spec, attributes=fixed, correlations=())
    indep = dynamical_independence(derive_graph(spec), j, k).holds
    bundle = simulate(spec, cfg)
    i = bundle.grid_index(time)
    a = bundle.states[:, i, bundle.index(j)]
    b = bundle.states[:, i, bundle.index(k)]
    n = bundle.replicates
    if a.std() == 0 or b.std() == 0:
        corr = 0.0
    else:
        corr = float(np.corrcoef(a, b)[0, 1])
    se = (1.0 - corr**2) / math.sqrt(n)
    within = abs(corr) <= 3.0 * se
    return Lemma4Report(corr, se, indep, within if indep else not within, n)


def normal_tail(eta: float, mean: float, sd: float) -> float:
    """P(mean + sd * Z > eta)."""
    return float(stats.norm.sf(eta, loc=mean, scale=sd))


# --- CSV export ----------------------------------------------------------

def _g17(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectories_csv(bundle: TrajectoryBundle, fh: TextIO) -> None:
    fh.write(",".join(["replicate", "time", *bundle.components]) + "\n")
    times = [_g17(t) for t in bundle.time_grid]
    for r in range(bundle.replicates):
        rows = bundle.states[r]
        for s, t in enumerate(times):
            fh.write(f"{r},{t}," + ",".join(_g17(v) for v in rows[s]) + "\n")


def write_observations_csv(records: Sequence[Sequence[ObservationRecord]], fh: TextIO) -> None:
    fh.write("replicate,channel,time,detected,value\n")
    for r, recs in enumerate(records):
        for rec in recs:
            value = "" if rec.value is None else _g17(rec.value)
            fh.write(f"{r},{rec.channel},{_g17(rec.time)},{rec.detected},{value}\n")
