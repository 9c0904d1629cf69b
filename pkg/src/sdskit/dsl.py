"""The ``.sds`` document language: lexer, recursive-descent parser, serializer.

A document is a sequence of statements, each starting with a keyword::

    func f
    chart M { x, y }
    chart P { theta mod 2*pi, r > 0 }
    scalar H on M = (x^2 + y^2)/2
    field ROT on M = -y*d/dx + x*d/dy
    sds X on M = ROT + [B1, B2]
    action SO2 on M generators [ROT]
    map h : M -> H { h = (x^2 + y^2)/2 } section { x = sqrt(2*h), y = 0 }
    op L on M = (1/2)*d/dx*d/dx + (1/2)*d/dy*d/dy
    system S on P { lambda [L] z [ROT] f [] }

Names are declared before use.  ``#`` starts a comment running to the end
of the line.  Errors carry line/column spans; parsing resumes at the next
statement keyword so one run reports every independent problem.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import sympy as sp

from .expr import render, simplify
from .geometry import SDS, Chart, Coordinate, GroupAction, ScalarField, VectorField
from .integrability import IntegrableSystem
from .operators import DiffOp, generator, monomial_label
from .reduction import QuotientMap

STATEMENT_KEYWORDS = ("func", "chart", "scalar", "field", "sds", "action", "map", "op", "system")
BUILTIN_FUNCTIONS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "sqrt": sp.sqrt}
CONSTANTS = {"pi": sp.pi}
MAX_EXPONENT = 1000
MAX_DERIVATIVE_ORDER = 8


# --------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class Span:
    line: int
    column: int
    offset: int
    length: int = 1


@dataclass(frozen=True)
class ParseError:
    message: str
    line: int
    column: int
    excerpt: str
    expected: tuple[str, ...] = ()
    suggestion: str | None = None

    def __str__(self) -> str:
        head = f"{self.line}:{self.column}: {self.message}"
        if self.suggestion:
            head += f" (did you mean '{self.suggestion}'?)"
        return f"{head}\n{self.excerpt}"

    def to_dict(self) -> dict:
        return {
            "message": self.message,
            "line": self.line,
            "column": self.column,
            "expected": list(self.expected),
            "suggestion": self.suggestion,
        }


class DocumentError(ValueError):
    """Raised by :func:`parse` with every diagnostic found."""

    def __init__(self, errors: Sequence[ParseError]):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def closest(name: str, candidates: Iterable[str], limit: int = 2) -> str | None:
    best = None
    for c in sorted(candidates):
        d = edit_distance(name, c)
        if d <= limit and (best is None or d < best[0]):
            best = (d, c)
    return best[1] if best else None


# --------------------------------------------------------------------------
# lexer


@dataclass(frozen=True)
class Token:
    kind: str  # NAME NUM DERIV OP EOF
    text: str
    span: Span

    @property
    def end(self) -> int:
        return self.span.offset + self.span.length


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<deriv>d/d[A-Za-z_][A-Za-z_0-9]*)
  | (?P<num>[0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>->|[{}\[\](),=+\-*/^:<>])
    """,
    re.VERBOSE,
)


class _Source:
    def __init__(self, text: str):
        self.text = text
        self.line_starts = [0]
        for i, ch in enumerate(text):
            if ch == "\n":
                self.line_starts.append(i + 1)

    def position(self, offset: int) -> tuple[int, int]:
        lo, hi = 0, len(self.line_starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.line_starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, offset - self.line_starts[lo] + 1

    def span(self, offset: int, length: int = 1) -> Span:
        line, col = self.position(offset)
        return Span(line, col, offset, length)

    def excerpt(self, span: Span) -> str:
        start = self.line_starts[span.line - 1]
        end = self.text.find("\n", start)
        line = self.text[start : end if end >= 0 else len(self.text)]
        return f"{line}\n{' ' * (span.column - 1)}^"

    def error(self, message: str, span: Span, expected=(), suggestion=None) -> ParseError:
        return ParseError(message, span.line, span.column, self.excerpt(span), tuple(expected), suggestion)


def tokenize(src: _Source) -> tuple[list[Token], list[ParseError]]:
    text = src.text
    tokens, errors = [], []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            errors.append(src.error(f"unexpected character {text[pos]!r}", src.span(pos)))
            pos += 1
            continue
        kind = m.lastgroup
        if kind == "deriv":
            tokens.append(Token("DERIV", m.group()[3:], src.span(pos, m.end() - pos)))
        elif kind == "num":
            tokens.append(Token("NUM", m.group(), src.span(pos, m.end() - pos)))
        elif kind == "name":
            tokens.append(Token("NAME", m.group(), src.span(pos, m.end() - pos)))
        elif kind == "op":
            tokens.append(Token("OP", m.group(), src.span(pos, m.end() - pos)))
        pos = m.end()
    tokens.append(Token("EOF", "", src.span(len(text), 0)))
    return tokens, errors


# --------------------------------------------------------------------------
# document model


@dataclass
class SDSDef:
    drift: str | None  # None means the zero field
    noise: tuple[str, ...]
    system: SDS


@dataclass
class ActionDef:
    generators: tuple[str, ...]
    action: GroupAction


@dataclass
class SystemDef:
    lambdas: tuple[str, ...]
    zs: tuple[str, ...]
    fs: tuple[str, ...]
    system: IntegrableSystem


@dataclass
class SystemDoc:
    functions: list[str] = field(default_factory=list)
    charts: dict[str, Chart] = field(default_factory=dict)
    scalars: dict[str, ScalarField] = field(default_factory=dict)
    fields: dict[str, VectorField] = field(default_factory=dict)
    sds: dict[str, SDSDef] = field(default_factory=dict)
    actions: dict[str, ActionDef] = field(default_factory=dict)
    maps: dict[str, QuotientMap] = field(default_factory=dict)
    ops: dict[str, DiffOp] = field(default_factory=dict)
    systems: dict[str, SystemDef] = field(default_factory=dict)
    spans: dict[tuple[str, str], Span] = field(default_factory=dict, compare=False)
    order: list[tuple[str, str]] = field(default_factory=list, compare=False)

    # convenience accessors -------------------------------------------------

    def system(self, name: str) -> SDS:
        return self._get(self.sds, "sds", name).system

    def action(self, name: str) -> GroupAction:
        return self._get(self.actions, "action", name).action

    def map(self, name: str) -> QuotientMap:
        return self._get(self.maps, "map", name)

    def integrable(self, name: str) -> IntegrableSystem:
        return self._get(self.systems, "system", name).system

    def scalar(self, name: str) -> ScalarField:
        return self._get(self.scalars, "scalar", name)

    def vector_field(self, name: str) -> VectorField:
        return self._get(self.fields, "field", name)

    def chart(self, name: str) -> Chart:
        return self._get(self.charts, "chart", name)

    @staticmethod
    def _get(table, kind, name):
        try:
            return table[name]
        except KeyError:
            hint = closest(name, table)
            msg = f"no {kind} named {name!r}"
            if hint:
                msg += f" (did you mean {hint!r}?)"
            raise KeyError(msg) from None

    # building ----------------------------------------------------------------

    def _register(self, kind: str, name: str):
        key = (kind, name)
        if key not in self.order:
            self.order.append(key)

    def add_function(self, name: str) -> None:
        if name not in self.functions:
            self.functions.append(name)
            self._register("func", name)

    def add_chart(self, name: str, chart: Chart) -> None:
        self.charts[name] = chart
        self._register("chart", name)

    def add_scalar(self, name: str, F: ScalarField) -> None:
        self.scalars[name] = F
        self._register("scalar", name)

    def add_field(self, name: str, V: VectorField) -> None:
        self.fields[name] = V
        self._register("field", name)

    def add_sds(self, name: str, drift: str | None, noise: Sequence[str]) -> SDS:
        chart = None
        if drift is not None:
            chart = self.fields[drift].chart
        elif noise:
            chart = self.fields[noise[0]].chart
        if chart is None:
            raise ValueError("an SDS with zero drift and no noise needs an explicit chart; use add_sds_on")
        return self.add_sds_on(name, chart, drift, noise)

    def add_sds_on(self, name: str, chart: Chart, drift: str | None, noise: Sequence[str]) -> SDS:
        X0 = self.fields[drift] if drift is not None else VectorField.zero(chart)
        X = SDS(chart, X0, tuple(self.fields[n] for n in noise))
        self.sds[name] = SDSDef(drift, tuple(noise), X)
        self._register("sds", name)
        return X

    def add_action(self, name: str, generators: Sequence[str]) -> GroupAction:
        gens = tuple(self.fields[g] for g in generators)
        G = GroupAction(gens[0].chart, gens, name)
        self.actions[name] = ActionDef(tuple(generators), G)
        self._register("action", name)
        return G

    def add_map(self, name: str, phi: QuotientMap) -> None:
        self.maps[name] = phi
        self._register("map", name)

    def add_op(self, name: str, A: DiffOp) -> None:
        self.ops[name] = A
        self._register("op", name)

    def add_system(self, name: str, chart: Chart, lambdas: Sequence[str], zs: Sequence[str], fs: Sequence[str]) -> IntegrableSystem:
        L = tuple(self.ops[n] if n in self.ops else generator(self.sds[n].system) for n in lambdas)
        Z = tuple(self.fields[n] for n in zs)
        F = tuple(self.scalars[n].value for n in fs)
        sys = IntegrableSystem(chart, L, Z, F, tuple(lambdas) + tuple(zs) + tuple(fs))
        self.systems[name] = SystemDef(tuple(lambdas), tuple(zs), tuple(fs), sys)
        self._register("system", name)
        return sys

    def summary(self) -> dict:
        return {
            "functions": list(self.functions),
            "charts": list(self.charts),
            "scalars": list(self.scalars),
            "fields": list(self.fields),
            "sds": list(self.sds),
            "actions": list(self.actions),
            "maps": list(self.maps),
            "ops": list(self.ops),
            "systems": list(self.systems),
        }


# --------------------------------------------------------------------------
# parser


class _Abort(Exception):
    """Unwinds out of a statement after an error was recorded."""


class _Parser:
    def __init__(self, text: str, bindings: dict[str, sp.Lambda] | None = None):
        self.bindings = dict(bindings or {})
        self.src = _Source(text)
        self.tokens, self.errors = tokenize(self.src)
        self.pos = 0
        self.doc = SystemDoc()

    # token helpers -----------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def at_op(self, text: str) -> bool:
        return self.at("OP", text)

    def fail(self, message: str, span: Span | None = None, expected=(), suggestion=None):
        self.errors.append(self.src.error(message, span or self.tok.span, expected, suggestion))
        raise _Abort

    def describe(self, t: Token) -> str:
        if t.kind == "EOF":
            return "end of input"
        if t.kind == "DERIV":
            return f"'d/d{t.text}'"
        return f"'{t.text}'"

    def gap_span(self) -> Span:
        """Position just after the previous token (the gap where something is missing)."""
        if self.pos == 0:
            return self.tok.span
        prev = self.tokens[self.pos - 1]
        return self.src.span(prev.end)

    def expect_op(self, text: str, *alternatives: str) -> Token:
        options = (text,) + alternatives
        if any(self.at_op(o) for o in options):
            return self.advance()
        quoted = " or ".join(f"'{o}'" for o in options)
        self.fail(f"expected {quoted}, found {self.describe(self.tok)}", self.gap_span(), options)

    def expect_closing(self, closer: str) -> Token:
        """End of a comma-separated list: the closer, or complain about a missing comma."""
        if self.at_op(closer):
            return self.advance()
        self.fail(f"expected ',' or '{closer}', found {self.describe(self.tok)}", self.gap_span(), (",", closer))

    def expect_name(self, what: str = "name") -> Token:
        if self.at("NAME"):
            return self.advance()
        self.fail(f"expected {what}, found {self.describe(self.tok)}", self.tok.span, (what,))

    def expect_keyword(self, word: str) -> Token:
        if self.at("NAME", word):
            return self.advance()
        self.fail(f"expected '{word}', found {self.describe(self.tok)}", self.tok.span, (word,))

    def recover(self) -> None:
        while not self.at("EOF"):
            if self.at("NAME"):
                prev = self.tokens[self.pos - 1] if self.pos else None
                # a name directly after '=' or an operator is part of an expression
                free = prev is None or prev.kind != "OP" or prev.text in "}]"
                line_start = prev is None or prev.span.line < self.tok.span.line
                keyword = self.tok.text in STATEMENT_KEYWORDS
                if (keyword and (free or line_start)) or (free and line_start):
                    return
            self.advance()

    # references --------------------------------------------------------------

    def lookup(self, table: dict, kind: str, tok: Token):
        if tok.text in table:
            return table[tok.text]
        self.fail(f"unknown {kind} '{tok.text}'", tok.span, suggestion=closest(tok.text, table))

    def declare(self, kind: str, table, tok: Token) -> None:
        if tok.text in table:
            first = self.doc.spans.get((kind, tok.text))
            where = f" (first defined at {first.line}:{first.column})" if first else ""
            self.fail(f"duplicate {kind} '{tok.text}'{where}", tok.span)
        self.doc.spans[(kind, tok.text)] = tok.span

    # document ----------------------------------------------------------------

    def parse_document(self) -> SystemDoc:
        while not self.at("EOF"):
            start = self.pos
            try:
                self.statement()
            except _Abort:
                if self.pos == start:
                    self.advance()
                self.recover()
            except RecursionError:
                self.errors.append(self.src.error("expression nested too deeply", self.tok.span))
                self.advance()
                self.recover()
            except (ValueError, TypeError, ArithmeticError, sp.SympifyError) as exc:
                # semantic rejection from a constructor (bad bounds, non-finite coefficient, ...)
                self.errors.append(self.src.error(str(exc) or type(exc).__name__, self.tokens[start].span))
                if self.pos == start:
                    self.advance()
                self.recover()
        return self.doc

    def statement(self) -> None:
        t = self.tok
        if t.kind == "NAME" and t.text in STATEMENT_KEYWORDS:
            getattr(self, f"stmt_{t.text}")()
            return
        self.fail(
            f"expected a statement keyword, found {self.describe(t)}",
            t.span,
            STATEMENT_KEYWORDS,
            closest(t.text, STATEMENT_KEYWORDS) if t.kind == "NAME" else None,
        )

    def stmt_func(self) -> None:
        self.advance()
        while True:
            name = self.expect_name("function name")
            if name.text in BUILTIN_FUNCTIONS or name.text in CONSTANTS:
                self.fail(f"'{name.text}' is built in and cannot be redeclared", name.span)
            self.declare("func", self.doc.functions, name)
            self.doc.add_function(name.text)
            if not self.at_op(","):
                return
            self.advance()

    def stmt_chart(self) -> None:
        self.advance()
        name = self.expect_name("chart name")
        self.declare("chart", self.doc.charts, name)
        self.expect_op("{")
        coords: list[Coordinate] = []
        seen: dict[str, Token] = {}
        while True:
            cname = self.expect_name("coordinate name")
            if cname.text in seen:
                self.fail(f"duplicate coordinate '{cname.text}'", cname.span)
            if cname.text in BUILTIN_FUNCTIONS or cname.text in CONSTANTS or cname.text in self.doc.functions:
                self.fail(f"'{cname.text}' is reserved and cannot name a coordinate", cname.span)
            seen[cname.text] = cname
            coords.append(self.coordinate_decl(cname))
            if self.at_op(","):
                self.advance()
                continue
            self.expect_closing("}")
            break
        self.doc.add_chart(name.text, Chart(name.text, tuple(coords)))

    def coordinate_decl(self, cname: Token) -> Coordinate:
        if self.at("NAME", "mod"):
            self.advance()
            start = self.tok
            period = self.expression({}, allow_deriv=False)
            if period.free_symbols or not period.is_number or not bool(period > 0):
                self.fail("period must be a positive constant", start.span)
            return Coordinate(cname.text, period=period)
        lower = upper = None
        while self.at_op(">") or self.at_op("<"):
            op = self.advance()
            value = self.signed_number()
            if op.text == ">":
                if lower is not None:
                    self.fail(f"second lower bound for '{cname.text}'", op.span)
                lower = value
            else:
                if upper is not None:
                    self.fail(f"second upper bound for '{cname.text}'", op.span)
                upper = value
        if lower is not None and upper is not None and not lower < upper:
            self.fail(f"inconsistent bounds for '{cname.text}'", cname.span)
        return Coordinate(cname.text, lower=lower, upper=upper)

    def signed_number(self) -> float:
        sign = 1.0
        if self.at_op("-"):
            self.advance()
            sign = -1.0
        if not self.at("NUM"):
            self.fail(f"expected a number, found {self.describe(self.tok)}", self.tok.span, ("number",))
        return sign * float(self.advance().text)

    def chart_ref(self) -> Chart:
        self.expect_keyword("on")
        tok = self.expect_name("chart name")
        return self.lookup(self.doc.charts, "chart", tok)

    def env(self, chart: Chart, scalars: bool = True) -> dict:
        env = {n: s for n, s in zip(chart.names, chart.symbols)}
        if scalars:
            for name, F in self.doc.scalars.items():
                if F.chart == chart and name not in env:
                    env[name] = F.value
        return env

    def stmt_scalar(self) -> None:
        self.advance()
        name = self.expect_name("scalar name")
        self.declare("scalar", self.doc.scalars, name)
        chart = self.chart_ref()
        self.expect_op("=")
        value = self.expression(self.env(chart), allow_deriv=False)
        self.doc.add_scalar(name.text, ScalarField(chart, simplify(value)))

    def stmt_field(self) -> None:
        self.advance()
        name = self.expect_name("field name")
        self.declare("field", self.doc.fields, name)
        chart = self.chart_ref()
        self.expect_op("=")
        start = self.tok
        coeffs = self.operator_expression(chart, max_order=1, require_order=True)
        comps = [coeffs.get(tuple(1 if i == j else 0 for i in range(chart.dim)), 0) for j in range(chart.dim)]
        if any(sum(a) != 1 for a in coeffs):
            self.fail("a field is a sum of coefficient*d/dNAME terms", start.span)
        self.doc.add_field(name.text, VectorField(chart, tuple(comps)))

    def stmt_op(self) -> None:
        self.advance()
        name = self.expect_name("operator name")
        self.declare("op", self.doc.ops, name)
        chart = self.chart_ref()
        self.expect_op("=")
        coeffs = self.operator_expression(chart, max_order=MAX_DERIVATIVE_ORDER, require_order=False)
        self.doc.add_op(name.text, DiffOp(chart, coeffs))

    def stmt_sds(self) -> None:
        self.advance()
        name = self.expect_name("sds name")
        self.declare("sds", self.doc.sds, name)
        chart = self.chart_ref()
        self.expect_op("=")
        drift = None
        if self.at("NUM", "0"):
            self.advance()
        else:
            tok = self.expect_name("drift field name")
            V = self.lookup(self.doc.fields, "field", tok)
            self.same_chart(V.chart, chart, tok)
            drift = tok.text
        noise: list[str] = []
        if self.at_op("+"):
            self.advance()
            self.expect_op("[")
            if not self.at_op("]"):
                while True:
                    tok = self.expect_name("noise field name")
                    V = self.lookup(self.doc.fields, "field", tok)
                    self.same_chart(V.chart, chart, tok)
                    noise.append(tok.text)
                    if self.at_op(","):
                        self.advance()
                        continue
                    self.expect_closing("]")
                    break
            else:
                self.advance()
        self.doc.add_sds_on(name.text, chart, drift, noise)

    def same_chart(self, have: Chart, want: Chart, tok: Token) -> None:
        if have != want:
            self.fail(f"'{tok.text}' lives on chart {have.name}, not {want.name}", tok.span)

    def stmt_action(self) -> None:
        self.advance()
        name = self.expect_name("action name")
        self.declare("action", self.doc.actions, name)
        chart = self.chart_ref()
        self.expect_keyword("generators")
        self.expect_op("[")
        gens = []
        while True:
            tok = self.expect_name("generator field name")
            V = self.lookup(self.doc.fields, "field", tok)
            self.same_chart(V.chart, chart, tok)
            gens.append(tok.text)
            if self.at_op(","):
                self.advance()
                continue
            self.expect_closing("]")
            break
        self.doc.add_action(name.text, gens)

    def stmt_map(self) -> None:
        self.advance()
        name = self.expect_name("map name")
        self.declare("map", self.doc.maps, name)
        self.expect_op(":")
        src = self.lookup(self.doc.charts, "chart", self.expect_name("source chart"))
        self.expect_op("->")
        tgt_tok = self.expect_name("target chart")
        tgt = self.lookup(self.doc.charts, "chart", tgt_tok)
        comps = self.assignments(tgt, self.env(src), "target coordinate")
        section = None
        if self.at("NAME", "section"):
            self.advance()
            section = self.assignments(src, self.env(tgt, scalars=False), "source coordinate")
        missing = [n for n in tgt.names if n not in comps]
        if missing:
            self.fail(f"map '{name.text}' gives no value for {', '.join(missing)}", name.span)
        self.doc.add_map(name.text, QuotientMap(src, tgt, comps, section, name.text))

    def assignments(self, chart: Chart, env: dict, what: str) -> dict[str, sp.Expr]:
        self.expect_op("{")
        out: dict[str, sp.Expr] = {}
        while True:
            tok = self.expect_name(what)
            if tok.text not in chart.names:
                self.fail(f"'{tok.text}' is not a coordinate of chart {chart.name}", tok.span,
                          suggestion=closest(tok.text, chart.names))
            if tok.text in out:
                self.fail(f"'{tok.text}' assigned twice", tok.span)
            self.expect_op("=")
            out[tok.text] = simplify(self.expression(env, allow_deriv=False))
            if self.at_op(","):
                self.advance()
                continue
            self.expect_closing("}")
            break
        if set(out) != set(chart.names):
            missing = sorted(set(chart.names) - set(out))
            self.fail(f"no value for {', '.join(missing)}", self.gap_span())
        return out

    def stmt_system(self) -> None:
        self.advance()
        name = self.expect_name("system name")
        self.declare("system", self.doc.systems, name)
        chart = self.chart_ref()
        self.expect_op("{")
        lists: dict[str, list[str]] = {"lambda": [], "z": [], "f": []}
        for key in ("lambda", "z", "f"):
            if self.at("NAME", key):
                self.advance()
                lists[key] = self.name_list(key, chart)
        self.expect_op("}")
        p, q, r = (len(lists[k]) for k in ("lambda", "z", "f"))
        if p + q + r != chart.dim:
            self.fail(f"system '{name.text}' has type ({p},{q},{r}) but chart {chart.name} has dimension {chart.dim}", name.span)
        try:
            self.doc.add_system(name.text, chart, lists["lambda"], lists["z"], lists["f"])
        except ValueError as exc:
            self.fail(str(exc), name.span)

    def name_list(self, key: str, chart: Chart) -> list[str]:
        self.expect_op("[")
        names = []
        while not self.at_op("]"):
            tok = self.expect_name(f"{key} member")
            if key == "lambda":
                if tok.text in self.doc.ops:
                    obj_chart = self.doc.ops[tok.text].chart
                elif tok.text in self.doc.sds:
                    obj_chart = self.doc.sds[tok.text].system.chart
                else:
                    pool = list(self.doc.ops) + list(self.doc.sds)
                    self.fail(f"unknown op or sds '{tok.text}'", tok.span, suggestion=closest(tok.text, pool))
            elif key == "z":
                obj_chart = self.lookup(self.doc.fields, "field", tok).chart
            else:
                obj_chart = self.lookup(self.doc.scalars, "scalar", tok).chart
            self.same_chart(obj_chart, chart, tok)
            names.append(tok.text)
            if self.at_op(","):
                self.advance()
        self.advance()
        return names

    # expressions ---------------------------------------------------------------

    def operator_expression(self, chart: Chart, max_order: int, require_order: bool) -> dict:
        """coefficient*d/dA*d/dB + ... -> multi-index coefficients."""
        markers = {n: sp.Symbol(f"__d_{n}", commutative=True) for n in chart.names}
        start = self.tok
        e = self.expression(self.env(chart), allow_deriv=True, markers=markers)
        ms = list(markers.values())
        try:
            poly = sp.Poly(sp.expand(e), *ms)
        except sp.PolynomialError:
            self.fail("derivatives must appear as coefficient*d/dNAME products", start.span)
        coeffs = {}
        for monom, c in poly.terms():
            if c == 0:
                continue
            if sum(monom) > max_order:
                self.fail(f"order {sum(monom)} exceeds {max_order}", start.span)
            if any(s in ms for s in sp.sympify(c).free_symbols):
                self.fail("derivatives must appear as coefficient*d/dNAME products", start.span)
            coeffs[tuple(monom)] = coeffs.get(tuple(monom), 0) + c
        if require_order and (0,) * chart.dim in coeffs:
            self.fail("a field has no zeroth-order term", start.span)
        return coeffs

    def expression(self, env: dict, allow_deriv: bool, markers: dict | None = None) -> sp.Expr:
        self._env, self._markers, self._allow_deriv = env, markers or {}, allow_deriv
        return self.sum_expr()

    def sum_expr(self) -> sp.Expr:
        e = self.product()
        while self.at_op("+") or self.at_op("-"):
            op = self.advance().text
            rhs = self.product()
            e = e + rhs if op == "+" else e - rhs
        return e

    def product(self) -> sp.Expr:
        e = self.unary()
        while self.at_op("*") or self.at_op("/"):
            op = self.advance()
            rhs = self.unary()
            if op.text == "*":
                e = e * rhs
            else:
                if rhs == 0:
                    self.fail("division by zero", op.span)
                if rhs.free_symbols & set(self._markers.values()):
                    self.fail("cannot divide by a derivative", op.span)
                e = e / rhs
        return e

    def unary(self) -> sp.Expr:
        if self.at_op("-"):
            self.advance()
            return -self.unary()
        if self.at_op("+"):
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> sp.Expr:
        base = self.atom()
        if self.at_op("^"):
            op = self.advance()
            exp = self.unary()
            if exp.is_number and exp.is_real and abs(float(exp)) > MAX_EXPONENT:
                self.fail(f"exponent larger than {MAX_EXPONENT}", op.span)
            if (base.free_symbols | exp.free_symbols) & set(self._markers.values()):
                self.fail("powers of derivatives are written as d/dx*d/dx", op.span)
            if base == 0 and exp.is_number and exp.is_real and float(exp) < 0:
                self.fail("division by zero", op.span)
            return base**exp
        return base

    def atom(self) -> sp.Expr:
        t = self.tok
        if t.kind == "NUM":
            self.advance()
            if re.fullmatch(r"[0-9]+", t.text):
                return sp.Integer(t.text)
            return sp.Float(t.text)
        if t.kind == "DERIV":
            if not self._allow_deriv:
                self.fail(f"derivative d/d{t.text} not allowed here", t.span)
            if t.text not in self._markers:
                self.fail(f"'{t.text}' is not a coordinate of this chart", t.span,
                          suggestion=closest(t.text, self._markers))
            self.advance()
            return self._markers[t.text]
        if t.kind == "OP" and t.text == "(":
            self.advance()
            e = self.sum_expr()
            self.expect_op(")")
            return e
        if t.kind == "NAME" and t.text in STATEMENT_KEYWORDS and t.text not in self._env:
            # leave the keyword in place so recovery restarts at it
            self.fail(f"expected an expression, found keyword '{t.text}'", t.span)
        if t.kind == "NAME":
            self.advance()
            if self.at_op("("):
                return self.call(t)
            if t.text in self._env:
                return self._env[t.text]
            if t.text in CONSTANTS:
                return CONSTANTS[t.text]
            pool = list(self._env) + list(CONSTANTS)
            self.fail(f"unknown name '{t.text}'", t.span, suggestion=closest(t.text, pool))
        self.fail(f"expected an expression, found {self.describe(t)}", t.span, ("number", "name", "("))

    def call(self, name: Token) -> sp.Expr:
        self.advance()  # (
        args = [self.sum_expr()]
        while self.at_op(","):
            self.advance()
            args.append(self.sum_expr())
        self.expect_closing(")")
        if any(a.free_symbols & set(self._markers.values()) for a in args):
            self.fail("derivatives cannot appear inside function arguments", name.span)
        if name.text in BUILTIN_FUNCTIONS:
            if len(args) != 1:
                self.fail(f"{name.text} takes one argument", name.span)
            return BUILTIN_FUNCTIONS[name.text](args[0])
        if name.text in self.doc.functions:
            if name.text in self.bindings:
                fn = self.bindings[name.text]
                if len(args) != len(fn.variables):
                    self.fail(f"{name.text} is bound to a function of {len(fn.variables)} argument(s)", name.span)
                return fn(*args)
            return sp.Function(name.text)(*args)
        pool = list(BUILTIN_FUNCTIONS) + list(self.doc.functions)
        self.fail(f"unknown function '{name.text}'", name.span, suggestion=closest(name.text, pool))


def try_parse(text: str, bindings: dict[str, sp.Lambda] | None = None) -> tuple[SystemDoc | None, list[ParseError]]:
    """Parse a document; returns (doc, []) or (None, errors).

    ``bindings`` replaces declared functions by concrete ones (see :func:`parse_binding`).
    """
    p = _Parser(text, bindings)
    doc = p.parse_document()
    if p.errors:
        return None, sorted(p.errors, key=lambda e: (e.line, e.column))
    return doc, []


def parse(text: str, bindings: dict[str, sp.Lambda] | None = None) -> SystemDoc:
    doc, errors = try_parse(text, bindings)
    if errors:
        raise DocumentError(errors)
    return doc


def parse_expression(text: str, coords: Iterable[sp.Symbol] = (), functions: Iterable[str] = ()) -> sp.Expr:
    """Parse a single expression over the given coordinate symbols."""
    p = _Parser(text)
    for f in functions:
        p.doc.add_function(f)
    env = {s.name: s for s in coords}
    try:
        e = p.expression(env, allow_deriv=False)
        if not p.at("EOF"):
            p.fail(f"unexpected {p.describe(p.tok)} after expression", p.tok.span)
    except _Abort:
        pass
    if p.errors:
        raise DocumentError(p.errors)
    return simplify(e)


_BINDING_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z_0-9]*)\s*(?:\(\s*([A-Za-z_][A-Za-z_0-9]*)\s*\))?\s*=(.*)$", re.S)


def parse_binding(text: str) -> tuple[str, sp.Lambda]:
    """``f=u^2`` or ``f(s)=exp(-s)``: a one-argument function (default variable u)."""
    m = _BINDING_RE.match(text)
    if not m:
        raise ValueError(f"function binding must look like NAME=EXPR or NAME(VAR)=EXPR, got {text!r}")
    name, var, body = m.group(1), m.group(2) or "u", m.group(3)
    v = sp.Symbol(var, real=True)
    return name, sp.Lambda(v, parse_expression(body, [v]))


# --------------------------------------------------------------------------
# serialization


def _coordinate_text(c: Coordinate) -> str:
    if c.periodic:
        return f"{c.name} mod {render(c.period)}"
    parts = [c.name]
    if c.lower is not None:
        parts.append(f"> {_num(c.lower)}")
    if c.upper is not None:
        parts.append(f"< {_num(c.upper)}")
    return " ".join(parts)


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _field_text(V: VectorField) -> str:
    terms = [f"({render(c)})*d/d{n}" for c, n in zip(V.components, V.chart.names) if c != 0]
    return " + ".join(terms) if terms else f"0*d/d{V.chart.names[0]}"


def _op_text(A: DiffOp) -> str:
    terms = []
    for alpha, c in A.items():
        label = monomial_label(A.chart, alpha)
        terms.append(f"({render(c)})" if label == "1" else f"({render(c)})*{label}")
    return " + ".join(terms) if terms else "0"


def serialize(doc: SystemDoc) -> str:
    """Canonical text; ``parse(serialize(doc)) == doc``."""
    chart_names = {id(c): n for n, c in doc.charts.items()}

    def cname(chart: Chart) -> str:
        for n, c in doc.charts.items():
            if c == chart:
                return n
        raise ValueError(f"chart {chart.name} is not part of the document")

    lines = []
    for kind, name in doc.order:
        if kind == "func":
            lines.append(f"func {name}")
        elif kind == "chart":
            c = doc.charts[name]
            lines.append(f"chart {name} {{ {', '.join(_coordinate_text(x) for x in c.coords)} }}")
        elif kind == "scalar":
            F = doc.scalars[name]
            lines.append(f"scalar {name} on {cname(F.chart)} = {render(F.value)}")
        elif kind == "field":
            V = doc.fields[name]
            lines.append(f"field {name} on {cname(V.chart)} = {_field_text(V)}")
        elif kind == "op":
            A = doc.ops[name]
            lines.append(f"op {name} on {cname(A.chart)} = {_op_text(A)}")
        elif kind == "sds":
            d = doc.sds[name]
            drift = d.drift if d.drift is not None else "0"
            lines.append(f"sds {name} on {cname(d.system.chart)} = {drift} + [{', '.join(d.noise)}]")
        elif kind == "action":
            a = doc.actions[name]
            lines.append(f"action {name} on {cname(a.action.chart)} generators [{', '.join(a.generators)}]")
        elif kind == "map":
            m = doc.maps[name]
            comps = ", ".join(f"{n} = {render(e)}" for n, e in zip(m.target.names, m.components))
            line = f"map {name} : {cname(m.source)} -> {cname(m.target)} {{ {comps} }}"
            if m.section is not None:
                sec = ", ".join(f"{n} = {render(e)}" for n, e in zip(m.source.names, m.section))
                line += f" section {{ {sec} }}"
            lines.append(line)
        elif kind == "system":
            s = doc.systems[name]
            lines.append(
                f"system {name} on {cname(s.system.chart)} {{ lambda [{' '.join(s.lambdas)}] "
                f"z [{' '.join(s.zs)}] f [{' '.join(s.fs)}] }}"
            )
    del chart_names
    return "\n".join(lines) + "\n"
