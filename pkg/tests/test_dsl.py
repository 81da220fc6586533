from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from dynograph import expr as ex
from dynograph.dsl import KEYWORDS, format_diagnostic, parse_model, print_model
from dynograph.hiv import MechanisticParams, build_mechanistic
from dynograph.model import (AttributeDecl, ComponentSpec, Correlation, Fixed, GaussianRandom,
                             InputSchedule, SystemSpec, validate)

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "dynograph" / "fixtures"


def parse_ok(text):
    out = parse_model(text)
    assert not isinstance(out, list), [format_diagnostic(d) for d in out]
    return out


def errors(text):
    out = parse_model(text)
    assert isinstance(out, list)
    return out


def test_minimal_model():
    spec = parse_ok("system s component X : diffusion { drift = 0; sigma = 1; init = 0; }")
    assert spec.component_names == ["X"]
    assert spec.components[0].drift == ex.Const(0.0)


def test_precedence_and_functions():
    spec = parse_ok("""
        system s
        attr a = 2
        component X : diffusion {
            drift = -a * X + 3 / 2 - min(X, 1) * ind(t <= 4) + exp(max(X, -1));
            sigma = 1;
            init = 0;
        }""")
    d = spec.components[0].drift
    x = ex.Comp("X")
    want = (((ex.Neg(ex.Attr("a")) * x) + ex.Const(3.0) / ex.Const(2.0))
            - ex.Min(x, ex.Const(1.0)) * ex.Indicator("<=", ex.Time(), ex.Const(4.0))
            + ex.Exp(ex.Max(x, ex.Const(-1.0))))
    assert d == want


def test_exp_sigma_parses_but_fails_validation():
    spec = parse_ok((FIXTURES / "remark1.dym").read_text())
    assert validate(spec).rules() == ["A2"]


def test_mechanistic_fixture_matches_builder():
    spec = parse_ok((FIXTURES / "hiv_mechanistic.dym").read_text())
    assert spec == build_mechanistic(MechanisticParams(), 100.0)
    assert len(spec.components) == 6


@pytest.mark.parametrize("text, code", [
    ("", "SYNTAX"),
    ("system s component X : diffusion { drift = Y; sigma = 1; init = 0; }", "NAME"),
    ("system s attr a = 1 attr a = 2", "DUP"),
    ("system s component X : ode { drift = 0; sigma = 1; init = 0; }", "KIND"),
    ("system s component X : diffusion { drift = 0; init = 0; }", "KIND"),
    ("system s attr t = 1", "NAME"),
    ("system s component X : diffusion { drift = (1 + ; sigma = 1; init = 0; }", "SYNTAX"),
    ("system s component X : jump { drift = 0; init = 0; }", "SYNTAX"),
    ("system s attr a = normal(0, -1)", "SYNTAX"),
    ("system s component X : ode { drift = 1 $ 2; init = 0; }", "SYNTAX"),
])
def test_diagnostic_codes(text, code):
    diags = errors(text)
    assert code in {d.code for d in diags}
    lines = text.splitlines() or [""]
    for d in diags:
        assert d.severity == "error"
        assert 1 <= d.span.line <= max(len(lines), 1)
        assert d.span.column >= 1 and d.span.length >= 1


def test_diagnostic_format():
    d = errors("system s\ncomponent X : diffusion { drift = Y; sigma = 1; init = 0; }")[0]
    text = format_diagnostic(d, "m.dym")
    assert text.startswith("m.dym:2:") and "error[NAME]" in text


def test_deep_nesting_is_a_diagnostic_not_a_crash():
    text = "system s component X : ode { drift = " + "(" * 5000 + "1" + ")" * 5000 + "; init = 0; }"
    assert errors(text)[0].code == "SYNTAX"


@settings(max_examples=200, suppress_health_check=[HealthCheck.too_slow])
@given(st.text(alphabet="system attrcompone:{}=;()+-*/<>,0123456789.eXt \n#", max_size=80))
def test_parser_is_total(text):
    out = parse_model(text)
    assert isinstance(out, (SystemSpec, list))


# --- round trip -----------------------------------------------------------

ident = st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,5}", fullmatch=True).filter(
    lambda s: s not in KEYWORDS and s != "t")
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def exprs(leaves):
    def extend(children):
        binary = st.sampled_from([ex.Add, ex.Sub, ex.Mul, ex.Div, ex.Min, ex.Max])
        return st.one_of(
            st.builds(lambda f, a, b: f(a, b), binary, children, children),
            st.builds(ex.Neg, children),
            st.builds(ex.Exp, children),
            st.builds(ex.Indicator, st.sampled_from(["<", "<=", "==", ">=", ">"]),
                      children, children),
        )
    return st.recursive(leaves, extend, max_leaves=8)


@st.composite
def specs(draw):
    names = draw(st.lists(ident, min_size=1, max_size=7, unique=True))
    n_attr = draw(st.integers(0, len(names) - 1))
    attr_names, rest = names[:n_attr], names[n_attr:]
    n_inp = draw(st.integers(0, len(rest) - 1))
    inp_names, comp_names = rest[:n_inp], rest[n_inp:]
    attrs = []
    for a in attr_names:
        if draw(st.booleans()):
            attrs.append(AttributeDecl(a, Fixed(draw(finite))))
        else:
            sd = draw(st.floats(0, 1e6, allow_nan=False))
            attrs.append(AttributeDecl(a, GaussianRandom(draw(finite), sd)))
    inputs = []
    for i in inp_names:
        k = draw(st.integers(1, 3))
        bps = sorted(draw(st.lists(st.floats(0, 100, allow_nan=False), min_size=k, max_size=k,
                                   unique=True)))
        inputs.append(InputSchedule(i, tuple(bps), tuple(draw(finite) for _ in bps)))
    leaves = [st.builds(ex.Const, finite), st.just(ex.Time())]
    leaves += [st.just(ex.Comp(c)) for c in comp_names]
    leaves += [st.just(ex.Attr(a)) for a in attr_names]
    leaves += [st.just(ex.Input(i)) for i in inp_names]
    det = exprs(st.one_of(st.builds(ex.Const, finite), st.just(ex.Time())))
    comps = []
    for c in comp_names:
        kind = draw(st.sampled_from(["diffusion", "counting", "ode"]))
        drift = draw(exprs(st.one_of(*leaves)))
        sigma = draw(det) if kind == "diffusion" else None
        if kind == "counting":
            init = 0.0
        elif attr_names and draw(st.booleans()):
            init = draw(st.sampled_from(attr_names))
        else:
            init = draw(finite)
        comps.append(ComponentSpec(c, kind, drift, sigma, init))
    random_attrs = [a.name for a in attrs if isinstance(a.value, GaussianRandom)]
    corrs = []
    if len(random_attrs) >= 2 and draw(st.booleans()):
        corrs.append(Correlation(random_attrs[0], random_attrs[1], draw(st.floats(-1, 1))))
    return SystemSpec(draw(ident), tuple(attrs), tuple(comps), tuple(inputs), tuple(corrs))


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(specs())
def test_print_parse_round_trip(spec):
    text = print_model(spec)
    back = parse_model(text)
    assert not isinstance(back, list), (text, [format_diagnostic(d) for d in back])
    assert back == spec
    assert print_model(back) == text
