"""Parser and printer for the ``.dym`` model language.

Example::

    system ou
    attr theta = 1.0
    component X : diffusion {
        drift = -(theta * X);   # mean reversion
        sigma = 1;
        init = 0;
    }

Grammar (whitespace-insensitive, ``#`` starts a line comment)::

    model  := "system" IDENT decl*
    decl   := attr | input | corr | comp
    attr   := "attr" IDENT "=" (NUM | "normal" "(" NUM "," NUM ")") [";"]
    input  := "input" IDENT "=" "steps" "(" (NUM ":" NUM [","])+ ")" [";"]
    corr   := "corr" IDENT "," IDENT "=" NUM [";"]
    comp   := "component" IDENT ":" ("diffusion"|"counting"|"ode") "{"
                 "drift" "=" expr ";" ["sigma" "=" expr ";"]
                 "init" "=" (NUM | IDENT) ";" "}"

``expr`` has the usual precedence for ``+ - * /`` and unary minus, and the
functions ``exp(e)``, ``min(e, e)``, ``max(e, e)`` and ``ind(e CMP e)``.
``t`` is reserved for time.

Parsing never raises on bad input: :func:`parse_model` returns either a
:class:`~dynograph.model.SystemSpec` or a list of diagnostics.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

from . import expr as ex
from .errors import ModelError
from .model import (AttributeDecl, ComponentSpec, Correlation, Fixed, GaussianRandom,
                    InputSchedule, Kind, SystemSpec, RESERVED_TIME)

__all__ = ["SourceSpan", "ParseDiagnostic", "parse_model", "print_model", "format_diagnostic"]

KEYWORDS = {
    "system", "attr", "input", "corr", "component", "diffusion", "counting", "ode",
    "drift", "sigma", "init", "normal", "steps", "exp", "min", "max", "ind",
}
MAX_DEPTH = 200


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int = 1


@dataclass(frozen=True)
class ParseDiagnostic:
    span: SourceSpan
    severity: str  # "error" | "warning"
    code: str
    message: str


def format_diagnostic(d: ParseDiagnostic, filename: str = "<input>") -> str:
    return f"{filename}:{d.span.line}:{d.span.column}: {d.severity}[{d.code}] {d.message}"


# --- lexer ---------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|[-+*/<>=:;,(){}])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # num | ident | op | eof
    text: str
    span: SourceSpan


class _Fail(Exception):
    def __init__(self, diag: ParseDiagnostic):
        self.diag = diag


def _lex(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        col = pos - line_start + 1
        if m is None:
            raise _Fail(ParseDiagnostic(SourceSpan(line, col, 1), "error", "SYNTAX",
                                        f"unexpected character {source[pos]!r}"))
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("num", "ident", "op"):
            tokens.append(Token(kind, text, SourceSpan(line, col, len(text))))
        pos = m.end()
    col = pos - line_start + 1
    # eof span points at the last character so it stays inside the text
    if tokens:
        last = tokens[-1].span
        eof_span = SourceSpan(last.line, last.column + last.length - 1, 1)
    else:
        eof_span = SourceSpan(max(line, 1), max(col - 1, 1), 1)
    tokens.append(Token("eof", "", eof_span))
    return tokens


# --- parser --------------------------------------------------------------

@dataclass(frozen=True, eq=True)
class _Ref(ex.Expr):
    name: str
    span: SourceSpan = field(compare=False)


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0
        self.depth = 0

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def fail(self, msg: str, tok: Optional[Token] = None, code: str = "SYNTAX"):
        tok = tok or self.cur
        raise _Fail(ParseDiagnostic(tok.span, "error", code, msg))

    def advance(self) -> Token:
        tok = self.cur
        if tok.kind != "eof":
            self.i += 1
        return tok

    def at(self, text: str) -> bool:
        return self.cur.kind in ("op", "ident") and self.cur.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.cur.text or "end of input"
            self.fail(f"expected {text!r}, found {found!r}")
        return self.advance()

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.advance()
            return True
        return False

    def ident(self, what: str) -> Token:
        tok = self.cur
        if tok.kind != "ident":
            self.fail(f"expected {what}, found {tok.text or 'end of input'!r}")
        if tok.text in KEYWORDS:
            self.fail(f"keyword {tok.text!r} cannot be used as {what}")
        return self.advance()

    def number(self) -> float:
        neg = self.accept("-")
        tok = self.cur
        if tok.kind != "num":
            self.fail(f"expected a number, found {tok.text or 'end of input'!r}")
        self.advance()
        value = float(tok.text)
        if value == float("inf"):
            self.fail("number out of range", tok)
        return -value if neg else value

    # expressions
    def expr(self) -> ex.Expr:
        self.depth += 1
        if self.depth > MAX_DEPTH:
            self.fail("expression nested too deeply")
        try:
            node = self.term()
            while self.at("+") or self.at("-"):
                op = self.advance().text
                rhs = self.term()
                node = ex.Add(node, rhs) if op == "+" else ex.Sub(node, rhs)
            return node
        finally:
            self.depth -= 1

    def term(self) -> ex.Expr:
        node = self.unary()
        while self.at("*") or self.at("/"):
            op = self.advance().text
            rhs = self.unary()
            node = ex.Mul(node, rhs) if op == "*" else ex.Div(node, rhs)
        return node

    def unary(self) -> ex.Expr:
        if self.at("-"):
            self.advance()
            if self.cur.kind == "num":
                # "-2.5" is a negative literal, so printed constants round-trip
                return ex.Const(-self._num_literal())
            self.depth += 1
            if self.depth > MAX_DEPTH:
                self.fail("expression nested too deeply")
            try:
                return ex.Neg(self.unary())
            finally:
                self.depth -= 1
        return self.primary()

    def _num_literal(self) -> float:
        tok = self.advance()
        value = float(tok.text)
        if value == float("inf"):
            self.fail("number out of range", tok)
        return value

    def primary(self) -> ex.Expr:
        tok = self.cur
        if tok.kind == "num":
            return ex.Const(self._num_literal())
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            name = tok.text
            if name == "exp":
                self.advance(); self.expect("(")
                arg = self.expr(); self.expect(")")
                return ex.Exp(arg)
            if name in ("min", "max"):
                self.advance(); self.expect("(")
                a = self.expr(); self.expect(","); b = self.expr(); self.expect(")")
                return ex.Min(a, b) if name == "min" else ex.Max(a, b)
            if name == "ind":
                self.advance(); self.expect("(")
                a = self.expr()
                op = self.cur.text if self.cur.kind == "op" else ""
                if op not in ex.COMPARATORS:
                    self.fail("expected a comparison (<, <=, ==, >=, >) inside ind()")
                self.advance()
                b = self.expr(); self.expect(")")
                return ex.Indicator(op, a, b)
            if name == RESERVED_TIME:
                self.advance()
                return ex.Time()
            if name in KEYWORDS:
                self.fail(f"unexpected keyword {name!r} in expression")
            self.advance()
            return _Ref(name, tok.span)
        self.fail(f"expected an expression, found {tok.text or 'end of input'!r}")

    # declarations
    def model(self):
        self.expect("system")
        name_tok = self.ident("a system name")
        decls = []
        while self.cur.kind != "eof":
            if self.at("attr"):
                decls.append(self.attr_decl())
            elif self.at("input"):
                decls.append(self.input_decl())
            elif self.at("corr"):
                decls.append(self.corr_decl())
            elif self.at("component"):
                decls.append(self.comp_decl())
            else:
                self.fail(f"expected a declaration, found {self.cur.text!r}")
        return name_tok, decls

    def attr_decl(self):
        self.advance()
        name = self.ident("an attribute name")
        self.expect("=")
        if self.accept("normal"):
            self.expect("(")
            mean = self.number(); self.expect(",")
            sd_tok = self.cur
            sd = self.number(); self.expect(")")
            if sd < 0:
                self.fail("standard deviation must be >= 0", sd_tok)
            value: Union[Fixed, GaussianRandom] = GaussianRandom(mean, sd)
        else:
            value = Fixed(self.number())
        self.accept(";")
        return ("attr", name, value)

    def input_decl(self):
        self.advance()
        name = self.ident("an input name")
        self.expect("="); self.expect("steps"); self.expect("(")
        bps, vals = [], []
        first = self.cur
        while True:
            bp_tok = self.cur
            bp = self.number(); self.expect(":"); val = self.number()
            if bps and bp <= bps[-1]:
                self.fail("breakpoints must be strictly increasing", bp_tok)
            bps.append(bp); vals.append(val)
            self.accept(",")
            if self.at(")"):
                break
            if self.cur.kind == "eof":
                self.fail("unterminated steps(...)", first)
        self.expect(")")
        self.accept(";")
        return ("input", name, (tuple(bps), tuple(vals)))

    def corr_decl(self):
        self.advance()
        a = self.ident("an attribute name")
        self.expect(",")
        b = self.ident("an attribute name")
        self.expect("=")
        rho_tok = self.cur
        rho = self.number()
        if not -1.0 <= rho <= 1.0:
            self.fail("correlation must lie in [-1, 1]", rho_tok)
        self.accept(";")
        return ("corr", a, (b, rho))

    def comp_decl(self):
        self.advance()
        name = self.ident("a component name")
        self.expect(":")
        kind_tok = self.cur
        if kind_tok.text not in ("diffusion", "counting", "ode"):
            self.fail("expected diffusion, counting or ode")
        self.advance()
        self.expect("{")
        self.expect("drift"); self.expect("=")
        drift = self.expr(); self.expect(";")
        sigma = None
        sigma_tok = None
        if self.at("sigma"):
            sigma_tok = self.advance()
            self.expect("=")
            sigma = self.expr(); self.expect(";")
        self.expect("init"); self.expect("=")
        if self.cur.kind == "ident":
            init_tok = self.ident("an attribute name")
            init: Union[float, Token] = init_tok
        else:
            init = self.number()
        self.expect(";")
        self.expect("}")
        return ("component", name, (kind_tok, drift, sigma, sigma_tok, init))


def parse_model(source: str) -> Union[SystemSpec, list[ParseDiagnostic]]:
    """Parse ``.dym`` text.  Returns a spec, or a non-empty diagnostic list."""
    try:
        parser = _Parser(_lex(source))
        name_tok, decls = parser.model()
    except _Fail as fail:
        return [fail.diag]
    except RecursionError:
        return [ParseDiagnostic(SourceSpan(1, 1, 1), "error", "SYNTAX", "input nested too deeply")]
    return _build(name_tok, decls)


def _build(name_tok: Token, decls) -> Union[SystemSpec, list[ParseDiagnostic]]:
    diags: list[ParseDiagnostic] = []

    def err(tok_or_span, code, msg):
        span = tok_or_span.span if isinstance(tok_or_span, (Token, _Ref)) else tok_or_span
        diags.append(ParseDiagnostic(span, "error", code, msg))

    kinds: dict[str, str] = {}
    for what, tok, _ in decls:
        if tok.text == RESERVED_TIME:
            err(tok, "NAME", f"'{RESERVED_TIME}' is reserved for time and cannot be declared")
        elif what != "corr":
            if tok.text in kinds:
                err(tok, "DUP", f"duplicate declaration of {tok.text!r}")
            else:
                kinds[tok.text] = what

    def resolve(node: ex.Expr) -> ex.Expr:
        if isinstance(node, _Ref):
            kind = kinds.get(node.name)
            if kind == "component":
                return ex.Comp(node.name)
            if kind == "attr":
                return ex.Attr(node.name)
            if kind == "input":
                return ex.Input(node.name)
            err(node, "NAME", f"unknown identifier {node.name!r}")
            return ex.Const(0.0)
        if isinstance(node, (ex.Neg, ex.Exp)):
            return type(node)(resolve(node.arg))
        if isinstance(node, ex.Indicator):
            return ex.Indicator(node.op, resolve(node.left), resolve(node.right))
        if isinstance(node, ex._Binary):
            return type(node)(resolve(node.left), resolve(node.right))
        return node

    attrs, inputs, comps, corrs = [], [], [], []
    for what, tok, payload in decls:
        if what == "attr":
            attrs.append(AttributeDecl(tok.text, payload))
        elif what == "input":
            inputs.append(InputSchedule(tok.text, *payload))
        elif what == "corr":
            other, rho = payload
            for t in (tok, other):
                if kinds.get(t.text) != "attr":
                    err(t, "NAME", f"{t.text!r} is not a declared attribute")
            corrs.append(Correlation(tok.text, other.text, rho))
        else:
            kind_tok, drift, sigma, sigma_tok, init = payload
            kind = Kind(kind_tok.text)
            drift = resolve(drift)
            if sigma is not None:
                sigma = resolve(sigma)
                if kind is not Kind.DIFFUSION:
                    err(sigma_tok, "KIND", f"sigma is only allowed on diffusion components, not {kind.value}")
                    sigma = None
            elif kind is Kind.DIFFUSION:
                err(kind_tok, "KIND", f"diffusion component {tok.text!r} needs a sigma")
                sigma = ex.Const(0.0)
            if isinstance(init, Token):
                if kinds.get(init.text) != "attr":
                    err(init, "NAME", f"initial value {init.text!r} is not a declared attribute")
                init = init.text
            try:
                comps.append(ComponentSpec(tok.text, kind, drift, sigma, init))
            except ModelError as e:  # pragma: no cover - guarded above
                err(tok, "KIND", str(e))
    if diags:
        return diags
    return SystemSpec(name_tok.text, tuple(attrs), tuple(comps), tuple(inputs), tuple(corrs))


# --- printer -------------------------------------------------------------

def _num(x: float) -> str:
    return repr(float(x))


_INFIX = {ex.Add: "+", ex.Sub: "-", ex.Mul: "*", ex.Div: "/"}


def print_expr(node: ex.Expr) -> str:
    if isinstance(node, ex.Const):
        return _num(node.value)
    if isinstance(node, ex.Time):
        return RESERVED_TIME
    if isinstance(node, (ex.Comp, ex.Attr, ex.Input)):
        return node.name
    if isinstance(node, ex.Neg):
        return f"-({print_expr(node.arg)})"
    if isinstance(node, ex.Exp):
        return f"exp({print_expr(node.arg)})"
    if isinstance(node, ex.Indicator):
        return f"ind({print_expr(node.left)} {node.op} {print_expr(node.right)})"
    if isinstance(node, (ex.Min, ex.Max)):
        fn = "min" if isinstance(node, ex.Min) else "max"
        return f"{fn}({print_expr(node.left)}, {print_expr(node.right)})"
    return f"({print_expr(node.left)} {_INFIX[type(node)]} {print_expr(node.right)})"


def print_model(spec: SystemSpec) -> str:
    lines = [f"system {spec.name}"]
    for a in spec.attributes:
        if isinstance(a.value, GaussianRandom):
            lines.append(f"attr {a.name} = normal({_num(a.value.mean)}, {_num(a.value.sd)})")
        else:
            lines.append(f"attr {a.name} = {_num(a.value.value)}")
    for k in spec.correlations:
        lines.append(f"corr {k.first}, {k.second} = {_num(k.rho)}")
    for i in spec.inputs:
        steps = ", ".join(f"{_num(b)}:{_num(v)}" for b, v in zip(i.breakpoints, i.values))
        lines.append(f"input {i.name} = steps({steps})")
    for c in spec.components:
        lines.append(f"component {c.name} : {c.kind.value} {{")
        lines.append(f"    drift = {print_expr(c.drift)};")
        if c.sigma is not None:
            lines.append(f"    sigma = {print_expr(c.sigma)};")
        init = c.init if isinstance(c.init, str) else _num(c.init)
        lines.append(f"    init = {init};")
        lines.append("}")
    return "\n".join(lines) + "\n"
