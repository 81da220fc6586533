import io
import math
import warnings
from pathlib import Path

import numpy as np
import pytest

from dynograph import _backend
from dynograph import expr as ex
from dynograph.dsl import parse_model
from dynograph.errors import ModelError, SimulationError
from dynograph.model import (AttributeDecl, ComponentSpec, Correlation, GaussianRandom,
                             InputSchedule, SystemSpec)
from dynograph.simulate import (IntensityTooCoarseWarning, SimConfig, draw_attributes,
                                empirical_moments, lemma4_mc_check, normal_tail,
                                observation_arrays, observe, simulate, write_observations_csv,
                                write_trajectories_csv)

from oracles import normal_sf, ou_moments, variance_se

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "dynograph" / "fixtures"


def fixture(name):
    return parse_model((FIXTURES / name).read_text())


def const_spec(value=2.0):
    return SystemSpec("c", components=[ComponentSpec("X", "diffusion", 0.0, 0.0, value)])


def test_ou_moments_and_poisson_mean():
    b = simulate(fixture("ou.dym"), SimConfig(0.01, 1.0, 4000, master_seed=3))
    x = b.column("X")[:, -1]
    mean, var = ou_moments(1.5, 1.0, -1.0, 1.0)
    assert abs(x.mean() - (1.0 + mean)) < 4 * math.sqrt(var / len(x))
    assert abs(x.var(ddof=1) - var) < 4 * variance_se(x)
    n = b.column("N")[:, -1]
    assert abs(n.mean() - 2.0) < 4 * math.sqrt(2.0 / len(n))


def test_zero_sigma_is_deterministic_euler():
    spec = SystemSpec("d", components=[ComponentSpec("X", "diffusion", -ex.Comp("X"), 0.0, 1.0)])
    b = simulate(spec, SimConfig(0.1, 1.0, 3))
    want = (1 - 0.1) ** np.arange(11)
    np.testing.assert_allclose(b.column("X"), np.tile(want, (3, 1)), rtol=1e-14)


def test_ode_component_uses_rk4():
    spec = SystemSpec("o", components=[ComponentSpec("X", "ode", -ex.Comp("X"), init=1.0)])
    b = simulate(spec, SimConfig(0.1, 2.0, 1))
    assert abs(b.column("X")[0, -1] - math.exp(-2.0)) < 1e-6


def test_counting_paths_nondecreasing_integers():
    spec = SystemSpec("p", components=[ComponentSpec("N", "counting", 3.0),
                                       ComponentSpec("M", "counting", 2.0)])
    b = simulate(spec, SimConfig(0.01, 5.0, 400, master_seed=9))
    for name in ("N", "M"):
        col = b.column(name)
        assert np.all(np.diff(col, axis=1) >= 0)
        assert np.array_equal(col, np.round(col))
    joint = (np.diff(b.column("N"), axis=1) > 0) & (np.diff(b.column("M"), axis=1) > 0)
    steps = joint.size
    # independent thinning: joint jumps occur at rate ~ lambda1 * lambda2 * dt^2 per step
    assert joint.sum() < 5 * 3.0 * 2.0 * 0.01**2 * steps + 5


def test_coarse_intensity_warns_and_clamps():
    spec = SystemSpec("p", components=[ComponentSpec("N", "counting", 500.0)])
    with pytest.warns(IntensityTooCoarseWarning):
        b = simulate(spec, SimConfig(0.01, 0.1, 2))
    assert np.all(b.coarse == 10) and np.all(b.clamped == 0)
    # p = min(lambda dt, 1) = 1: one event per step
    assert np.all(b.column("N")[:, -1] == 10)


def test_negative_intensity_is_clamped_to_zero():
    spec = SystemSpec("p", components=[ComponentSpec("N", "counting", -1.0)])
    b = simulate(spec, SimConfig(0.01, 1.0, 5))
    assert np.all(b.column("N") == 0)
    assert np.all(b.clamped == 100)


def test_input_is_zero_before_first_breakpoint_and_left_evaluated():
    spec = SystemSpec("i", components=[ComponentSpec("X", "ode", ex.Input("u"), init=0.0)],
                      inputs=[InputSchedule("u", (0.5,), (1.0,))])
    b = simulate(spec, SimConfig(0.1, 1.0, 1))
    np.testing.assert_allclose(b.column("X")[0, -1], 0.5, atol=1e-12)


def test_simulation_error_reports_context():
    spec = SystemSpec("e", attributes=[AttributeDecl("a", GaussianRandom(0.0, 1.0))],
                      components=[ComponentSpec("X", "ode", ex.Const(1.0) / ex.Attr("a"), init=0.0),
                                  ComponentSpec("Y", "ode", ex.Exp(ex.Comp("Y")), init=800.0)])
    with pytest.raises(SimulationError) as e:
        simulate(spec, SimConfig(0.1, 1.0, 4))
    assert e.value.replicate == 0 and e.value.kind == "ExpOverflow"
    assert e.value.component == "Y" and e.value.step == 0


def test_invalid_spec_refused():
    with pytest.raises(ModelError):
        simulate(fixture("remark1.dym"), SimConfig(0.1, 1.0))
    with pytest.raises(ModelError):
        SimConfig(0.0, 1.0)
    with pytest.raises(ModelError):
        SimConfig(0.1, 1.0, replicates=0)


def test_thread_count_does_not_change_output():
    spec = fixture("ou.dym")
    a = simulate(spec, SimConfig(0.01, 1.0, 300, master_seed=42, threads=1))
    b = simulate(spec, SimConfig(0.01, 1.0, 300, master_seed=42, threads=8))
    assert np.array_equal(a.states, b.states)
    c = simulate(spec, SimConfig(0.01, 1.0, 300, master_seed=43, threads=1))
    assert not np.array_equal(a.states, c.states)


def test_replicate_stream_independent_of_batch_size():
    spec = fixture("ou.dym")
    small = simulate(spec, SimConfig(0.01, 1.0, 5, master_seed=1))
    big = simulate(spec, SimConfig(0.01, 1.0, 200, master_seed=1))
    assert np.array_equal(small.states, big.states[:5])


@pytest.mark.skipif("compiled" not in _backend.KERNELS, reason="extension not built")
def test_backends_agree_bitwise():
    for spec in (fixture("ou.dym"), fixture("hiv_mechanistic.dym"), fixture("bivariate.dym")):
        a = simulate(spec, SimConfig(0.01, 2.0, 20, master_seed=5), backend="compiled")
        b = simulate(spec, SimConfig(0.01, 2.0, 20, master_seed=5), backend="python")
        assert np.array_equal(a.states, b.states)


def test_correlated_attributes():
    spec = SystemSpec("a", attributes=[AttributeDecl("u", GaussianRandom(1.0, 2.0)),
                                       AttributeDecl("v", GaussianRandom(0.0, 1.0))],
                      correlations=[Correlation("u", "v", -0.6)])
    x = draw_attributes(spec, 0, range(20000))
    assert abs(np.corrcoef(x.T)[0, 1] + 0.6) < 0.03
    assert abs(x[:, 0].std() - 2.0) < 0.05
    np.testing.assert_array_equal(draw_attributes(spec, 0, range(3, 5)), x[3:5])


def test_observe_censoring_matches_normal_tail():
    b = simulate(const_spec(2.0), SimConfig(0.1, 1.0, 20000))
    det, raw = observation_arrays(b, "X", [0.5], error_sd=0.5, eta_det=2.3, seed=4)
    p = normal_sf((2.3 - 2.0) / 0.5)
    assert abs(p - normal_tail(2.3, 2.0, 0.5)) < 1e-12
    assert abs(det.mean() - p) < 3 * math.sqrt(p * (1 - p) / det.size)
    assert np.array_equal(det, raw > 2.3)


def test_observe_records():
    b = simulate(const_spec(2.0), SimConfig(0.1, 1.0, 2))
    recs = observe(b, "X", [0.0, 1.0], error_sd=0.0)
    assert all(r.detected == 1 and r.value == 2.0 for row in recs for r in row)
    recs = observe(b, "X", [0.0], error_sd=0.0, eta_det=5.0)
    assert recs[0][0].detected == 0 and recs[0][0].value is None
    with pytest.raises(ModelError):
        observe(b, "X", [2.0], error_sd=0.1)
    with pytest.raises(ModelError):
        observe(b, "nope", [0.0], error_sd=0.1)


def test_empirical_moments_shapes():
    b = simulate(fixture("collider.dym"), SimConfig(0.01, 1.0, 500))
    m = empirical_moments(b, ["A", "C"], 1.0)
    assert m.mean.shape == (2,) and m.cov.shape == (2, 2) and m.n == 500
    assert np.allclose(m.cov, m.cov.T)
    assert abs(m.cov[0, 0] - 1.0) < 5 * m.se_cov[0, 0]


def test_independence_check_collider_and_chain():
    cfg = SimConfig(0.01, 1.0, 3000, master_seed=8)
    r = lemma4_mc_check(fixture("collider.dym"), "A", "B", cfg, 1.0)
    assert r.dynamically_independent and r.consistent
    r = lemma4_mc_check(fixture("chain.dym"), "A", "B", cfg, 1.0)
    assert not r.dynamically_independent and r.consistent
    assert abs(r.corr - 0.5 / math.sqrt(4 / 3)) < 3 * r.se + 0.01
    with pytest.raises(ModelError):
        lemma4_mc_check(fixture("ou.dym"), "X", "N", cfg, 1.0)


def test_csv_output_format():
    b = simulate(const_spec(0.1), SimConfig(0.5, 1.0, 2))
    buf = io.StringIO()
    write_trajectories_csv(b, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "replicate,time,X"
    assert lines[1] == "0,0,0.10000000000000001" and len(lines) == 7
    buf = io.StringIO()
    write_observations_csv(observe(b, "X", [1.0], 0.0, eta_det=1.0), buf)
    assert buf.getvalue().splitlines() == ["replicate,channel,time,detected,value",
                                           "0,X,1,0,", "1,X,1,0,"]


def test_no_warning_for_fine_grid():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        simulate(fixture("ou.dym"), SimConfig(0.01, 1.0, 10))
