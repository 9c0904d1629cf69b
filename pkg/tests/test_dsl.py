"""Parser, serializer and diagnostics of the .sds definition language."""
from __future__ import annotations

from importlib import resources

import numpy as np
import pytest
import sympy as sp

from corpus import random_document
from sdskit import catalog
from sdskit.dsl import DocumentError, SystemDoc, closest, edit_distance, parse, parse_binding, parse_expression, serialize, try_parse
from sdskit.expr import simplify
from sdskit.geometry import VectorField


def bundled(name: str) -> str:
    return resources.files("sdskit").joinpath("data", name).read_text(encoding="utf-8")


BUNDLED = ["bessel.sds", "brownian_n.sds", "damped_oscillator.sds", "example22.sds", "integrable_110.sds", "torus_counterexample.sds"]


def assert_spans_inside(text: str, errors) -> None:
    lines = text.split("\n")
    for e in errors:
        assert 1 <= e.line <= len(lines), e
        assert 1 <= e.column <= len(lines[e.line - 1]) + 1, e


# --- parse examples ----------------------------------------------------------


def test_chart_with_constraint_and_period():
    doc = parse("chart P { r > 0, theta mod 2*pi }")
    P = doc.chart("P")
    r, theta = P.coords
    assert r.name == "r" and r.lower == 0 and not r.periodic
    assert theta.name == "theta" and theta.periodic and theta.period == 2 * sp.pi
    assert P.names == ("r", "theta")


def test_damped_oscillator_golden_structure():
    doc = parse(bundled("damped_oscillator.sds"))
    s = doc.summary()
    assert s["charts"] == ["M", "H"]
    assert s["fields"] == ["ROT", "X0", "B1", "B2"]
    assert s["sds"] == ["X"] and s["actions"] == ["SO2"] and s["maps"] == ["energy"]
    assert s["functions"] == ["f"]
    x, y = doc.chart("M").symbols
    X = doc.system("X")
    assert X.noise[0].components == (1, 0) and X.noise[1].components == (0, 1)
    f = sp.Function("f")
    r = sp.sqrt(x**2 + y**2)
    assert simplify(X.drift.components[0] - (-y - f(r) * x)) == 0
    assert simplify(X.drift.components[1] - (x - f(r) * y)) == 0
    assert doc.action("SO2").generators[0] == catalog.rotation_field(doc.chart("M"))
    phi = doc.map("energy")
    assert simplify(phi.components[0] - (x**2 + y**2) / 2) == 0
    assert phi.section is not None


def test_missing_comma_in_noise_list():
    text = "chart M { x, y }\nfield X0 on M = d/dx\nfield X1 on M = d/dy\nfield X2 on M = x*d/dy\nsds X on M = X0 + [X1 X2]\n"
    doc, errors = try_parse(text)
    assert doc is None and len(errors) == 1
    e = errors[0]
    assert "expected ',' or ']'" in e.message
    line = text.split("\n")[4]
    # the gap directly after X1, i.e. the space before X2
    assert e.line == 5 and e.column == line.index("X1") + 3
    assert line[e.column - 1] == " " and line[e.column] == "X"
    assert set(e.expected) == {",", "]"}


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_documents_parse(name):
    doc = parse(bundled(name))
    assert doc.order


def test_comments_and_newline_insensitivity():
    a = parse("chart M { x, y }\nfield V on M = -y*d/dx + x*d/dy\n")
    b = parse("# rotation\nchart M {\n  x,\n  y\n} field V on M =\n  -y*d/dx\n  + x*d/dy  # trailing\n")
    assert a == b


def test_bindings_replace_functions():
    name, lam = parse_binding("f=3")
    doc = parse(bundled("damped_oscillator.sds"), {name: lam})
    x, y = doc.chart("M").symbols
    assert simplify(doc.system("X").drift.components[0] - (-y - 3 * x)) == 0


def test_parse_expression_and_binding_forms():
    x = sp.Symbol("x", real=True)
    assert parse_expression("3/2*x^2 + sin(x)", [x]) == simplify(sp.Rational(3, 2) * x**2 + sp.sin(x))
    name, lam = parse_binding("g(s)=exp(-s)")
    assert name == "g" and simplify(lam(x) - sp.exp(-x)) == 0
    with pytest.raises(ValueError):
        parse_binding("not a binding")


def test_edit_distance_and_closest():
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance("", "abc") == 3
    assert closest("ROTT", ["ROT", "B1"]) == "ROT"
    assert closest("zzzzz", ["ROT", "B1"]) is None


# --- diagnostics -------------------------------------------------------------


def test_dangling_reference_has_use_site_and_suggestion():
    text = "chart M { x, y }\nfield ROT on M = -y*d/dx + x*d/dy\nsds X on M = ROTT + []\n"
    doc, errors = try_parse(text)
    assert doc is None and len(errors) == 1
    e = errors[0]
    assert e.line == 3 and e.column == text.split("\n")[2].index("ROTT") + 1
    assert e.suggestion == "ROT"
    assert "ROTT" in e.message


def test_duplicate_name_reports_first_definition():
    text = "chart M { x }\nfield V on M = d/dx\nfield V on M = x*d/dx\n"
    doc, errors = try_parse(text)
    assert doc is None
    assert len(errors) == 1 and "duplicate" in errors[0].message and "2:7" in errors[0].message
    assert errors[0].line == 3


def test_recovery_collects_errors_from_several_statements():
    text = "chart M { x, y }\nfield A on M = d/dq\nfield B on M = d/dx +\nsds X on M = C + [A]\nfield D on M = d/dy\n"
    doc, errors = try_parse(text)
    assert doc is None
    assert [(e.line, e.column) for e in errors] == [(2, 16), (4, 1), (4, 14)]
    assert "keyword 'sds'" in errors[1].message and "'C'" in errors[2].message
    with pytest.raises(DocumentError) as exc:
        parse(text)
    assert exc.value.errors == errors


def test_unknown_keyword_suggestion():
    _, errors = try_parse("chrat M { x }")
    assert errors and errors[0].suggestion == "chart"


def test_error_to_dict_is_plain():
    _, errors = try_parse("chart M { x y }")
    d = errors[0].to_dict()
    assert set(d) == {"message", "line", "column", "expected", "suggestion"}
    assert d["line"] == 1 and d["column"] == len("chart M { x") + 1


@pytest.mark.parametrize(
    "text",
    [
        "chart M { x, x }",
        "chart M { x > 1 < 0 }",
        "chart M { t mod -1 }",
        "chart M { x }\nfield V on M = 1",
        "chart M { x }\nfield V on M = d/dx*d/dx",
        "chart M { x }\nop L on M = d/dx*d/dx*d/dx*d/dx*d/dx*d/dx*d/dx*d/dx*d/dx",
        "chart M { x }\nfield V on M = g(x)*d/dx",
        "chart M { x }\nchart N { y }\nfield V on M = d/dx\nsds X on N = V + []",
        "chart M { x }\nchart N { y }\nmap p : M -> N { z = x }",
        "chart M { x }\nsystem S on M { lambda [] z [] f [Q] }",
        "chart M { x }\nscalar F on M = (x",
        "chart M { x }\nscalar F on M = x +* 2",
        "field V on M = d/dx",
    ],
)
def test_invalid_documents_never_partial(text):
    doc, errors = try_parse(text)
    assert doc is None and errors
    assert_spans_inside(text, errors)


def test_dangling_and_duplicate_random():
    rng = np.random.default_rng(5)
    for _ in range(40):
        doc = random_document(rng)
        lines = serialize(doc).splitlines()
        # duplicate: repeat one defining line
        k = int(rng.integers(len(lines)))
        text = "\n".join(lines[: k + 1] + [lines[k]] + lines[k + 1 :])
        d, errors = try_parse(text)
        assert d is None and any("duplicate" in e.message for e in errors)
        # dangling: rename the first definition of a field that is referenced later
        names = list(doc.fields)
        target = names[0]
        renamed = [ln.replace(f"field {target} ", f"field {target}Q ", 1) for ln in lines]
        text = "\n".join(renamed)
        uses = sum(1 for ln in lines if f" {target}" in ln and not ln.startswith(f"field {target} "))
        d, errors = try_parse(text)
        if uses:
            assert d is None
            assert any(e.suggestion == f"{target}Q" for e in errors)
        assert_spans_inside(text, errors)


# --- serialization -------------------------------------------------------------


def bessel_doc(n: int) -> SystemDoc:
    X = catalog.bessel(n)
    doc = SystemDoc()
    doc.add_chart("Rplus", X.chart)
    doc.add_field("Drift", X.drift)
    doc.add_field("Dr", X.noise[0])
    doc.add_sds("BES", "Drift", ["Dr"])
    return doc


def test_bessel_builtin_round_trip():
    for n in (2, 3, 5):
        doc = bessel_doc(n)
        text = serialize(doc)
        back = parse(text)
        assert back == doc
        assert back.system("BES") == catalog.bessel(n)
        assert serialize(back) == text


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_round_trip(name):
    doc = parse(bundled(name))
    text = serialize(doc)
    assert parse(text) == doc
    assert serialize(parse(text)) == text


def test_periodic_rendering_preserved():
    doc = parse("chart P { r > 0, theta mod 2*pi }\nfield T on P = d/dtheta\n")
    text = serialize(doc)
    assert "theta mod 2*pi" in text and "r > 0" in text
    assert parse(text) == doc


def test_zero_field_round_trip():
    doc = parse("chart M { x }\nfield Z on M = 0*d/dx\nsds X on M = 0 + [Z]\n")
    assert doc.vector_field("Z") == VectorField.zero(doc.chart("M"))
    assert parse(serialize(doc)) == doc


def test_randomized_round_trip():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        doc = random_document(rng)
        text = serialize(doc)
        back = parse(text)
        assert back == doc, text
        assert back.order == doc.order


# --- fuzzing -------------------------------------------------------------------


ALPHABET = list("chart field sds map op system action func mod on generators lambda z f { } [ ] ( ) , = + - * / ^ : -> < > d/dx x y 0 1 2.5 pi sin # \n\t") + ["é", "∂", "\x00", "\"", "'", "@", "$"]


def _noise(rng) -> str:
    n = int(rng.integers(0, 80))
    kind = rng.integers(3)
    if kind == 0:
        return bytes(rng.integers(0, 256, size=n, dtype=np.uint8)).decode("utf-8", errors="replace")
    if kind == 1:
        return "".join(ALPHABET[int(i)] for i in rng.integers(0, len(ALPHABET), size=n))
    base = serialize(random_document(rng))
    chars = list(base)
    for _ in range(int(rng.integers(1, 6))):
        i = int(rng.integers(len(chars)))
        op = rng.integers(3)
        if op == 0:
            del chars[i]
        elif op == 1:
            chars.insert(i, ALPHABET[int(rng.integers(len(ALPHABET)))])
        else:
            chars[i] = ALPHABET[int(rng.integers(len(ALPHABET)))]
    return "".join(chars)


def test_fuzz_no_crash_and_spans_inside():
    rng = np.random.default_rng(99)
    for _ in range(400):
        text = _noise(rng)
        try:
            doc, errors = try_parse(text)
        except Exception as exc:  # pragma: no cover - failure path
            pytest.fail(f"{type(exc).__name__}: {exc} on {text!r}")
        assert (doc is None) == bool(errors)
        assert_spans_inside(text, errors)
        if errors:
            with pytest.raises(DocumentError):
                parse(text)


def test_deep_nesting_is_a_diagnostic():
    text = "chart M { x }\nscalar F on M = " + "(" * 3000 + "x" + ")" * 3000
    doc, errors = try_parse(text)
    assert doc is None and errors
    assert_spans_inside(text, errors)
