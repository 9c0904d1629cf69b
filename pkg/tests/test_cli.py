"""Command-line runs: exit codes, report contents and reproducibility."""
from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest

from sdskit import cli


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def report(*argv):
    code, out, err = run(*argv)
    return code, json.loads(out) if out.strip().startswith("{") else out, err


BROKEN = "chart M { x, y }\nfield V on M = -y*d/dx + x*d/dq\nfield W on M = d/dx\nsds X on M = W + [W W]\n"
INCONCLUSIVE = """\
chart L { x > 0 }
field A on L = sqrt(x^2 + 2*x + 1)*d/dx
field B on L = (x + 1)*d/dx
sds X on L = A + []
sds Y on L = B + []
"""


@pytest.fixture
def broken(tmp_path):
    p = tmp_path / "broken.sds"
    p.write_text(BROKEN)
    return str(p)


@pytest.fixture
def inconclusive(tmp_path):
    p = tmp_path / "identity.sds"
    p.write_text(INCONCLUSIVE)
    return str(p)


# --- worked examples ----------------------------------------------------------------


def test_reduce_bessel():
    code, rep, _ = report("reduce", "bessel.sds", "BM3", "--map", "radial")
    assert code == 0 and rep["status"] == "pass"
    coeffs = {c["label"]: c["target"] for c in rep["reduction"]["coefficients"]}
    assert coeffs["d/dr"] == "1/r" and coeffs["d/dr*d/dr"] == "1/2"
    assert "sds BM3_radial on Rplus" in rep["reduction"]["realized_dsl"]
    assert rep["schema"] == "sdskit.report/1"
    assert rep["inputs"]["document"] == "bessel.sds" and len(rep["inputs"]["sha256"]) == 64


def test_strict_invariance_fails_with_witness():
    code, rep, _ = report("check", "invariance", "example22.sds", "X", "ROT", "--mode", "strict")
    assert code == 1 and rep["status"] == "fail"
    assert rep["witness"]["bracket"] == "[ROT,B1]" and rep["witness"]["component"] == "d/dy"


def test_diffusion_invariance_passes():
    code, rep, _ = report("check", "invariance", "example22.sds", "X", "SO2", "--mode", "diffusion")
    assert code == 0 and rep["witness"] is None


def test_parse_broken_document(broken):
    code, rep, err = report("parse", broken)
    assert code == 3 and rep["status"] == "error"
    locs = [(e["line"], e["column"]) for e in rep["errors"]]
    lines = BROKEN.splitlines()
    assert locs == [(2, lines[1].index("d/dq") + 1), (4, lines[3].index("[W") + 3)]
    assert rep["errors"][0]["suggestion"] == "x"
    assert "expected ',' or ']'" in rep["errors"][1]["message"]
    assert f"{broken}:2:{locs[0][1]}:" in err and "^" in err


def test_parse_bundled_summary():
    code, rep, _ = report("parse", "damped_oscillator.sds")
    assert code == 0
    assert rep["summary"]["fields"] == ["ROT", "X0", "B1", "B2"]


# --- every exit code -------------------------------------------------------------------


def test_exit_inconclusive(inconclusive):
    code, rep, _ = report("check", "equivalence", inconclusive, "X", "Y")
    assert code == 2 and rep["status"] == "inconclusive"
    assert rep["verdict"]["status"] == "NumericZero"


def test_exit_codes_equivalence_and_integrals():
    assert run("check", "equivalence", "example22.sds", "X", "Y")[0] == 0
    code, rep, _ = report("check", "integral", "example22.sds", "X", "R2", "--mode", "strong")
    assert code == 1 and rep["verdict"]["status"] == "NonZero"
    code, rep, _ = report("check", "integral", "example22.sds", "X", "x^2 + y^2", "--mode", "weak")
    assert code == 1


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["reduce", "bessel.sds", "BM3"],
        ["reduce", "no_such_file.sds", "BM3", "--map", "radial"],
        ["reduce", "bessel.sds", "BM9", "--map", "radial"],
        ["reduce", "bessel.sds", "BM3", "--map", "radial", "--seed", "x"],
        ["check", "integral", "example22.sds", "X", "x +* y"],
        ["sim", "run", "example22.sds", "X", "--x0", "1,2,3"],
        ["sim", "run", "damped_oscillator.sds", "X", "--x0", "1,0", "--func", "f"],
        ["sim", "generator", "bessel.sds", "BES3", "--f", "r", "--x0", "1", "--paths", "10"],
        ["parse", "damped_oscillator.sds", "--out", "csv"],
    ],
)
def test_usage_errors_exit_3(argv):
    code, out, err = run(*argv)
    assert code == 3
    assert err


def test_help_exits_zero(capsys):
    assert cli.run(["--help"]) == 0


def test_reduce_not_projectable_fails():
    code, rep, _ = report("reduce", "torus_counterexample.sds", "X", "--map", "theta2")
    assert code == 1 and rep["status"] == "fail" and rep["witness"]


def test_integrability_commands():
    code, rep, _ = report("integrability", "verify", "integrable_110.sds", "S", "--sds", "X", "--func", "f=1")
    assert code == 0 and rep["names"] == ["X", "T"]
    code, rep, _ = report("integrability", "promote", "integrable_110.sds", "S")
    assert code == 0 and "T^2/2" in rep["operators"]
    code, rep, _ = report("integrability", "normal-form", "integrable_110.sds", "X", "--chart", "P", "--section", "theta=0")
    assert code == 0 and rep["equivalence"]["status"] == "SymbolicZero"
    assert "sds X_nf on P" in rep["normal_form_dsl"]


# --- simulations and reproducibility --------------------------------------------------------


SIM_RUN = ["sim", "run", "damped_oscillator.sds", "X", "--func", "f=1", "--x0", "1,0", "--paths", "200", "--horizon", "1"]


def test_same_argv_and_seed_byte_identical():
    a = run(*SIM_RUN, "--seed", "9")
    b = run(*SIM_RUN, "--seed", "9")
    c = run(*SIM_RUN, "--seed", "10")
    assert a[0] == 0 and a[1] == b[1]
    assert a[1] != c[1]
    rep = json.loads(a[1])
    assert rep["inputs"]["seed"] == 9 and len(rep["rows"]) == 11


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("SDS_SEED", "9")
    env = run(*SIM_RUN)
    monkeypatch.delenv("SDS_SEED")
    assert env[1] == run(*SIM_RUN, "--seed", "9")[1]
    assert run(*SIM_RUN)[1] == run(*SIM_RUN, "--seed", "0")[1]


def test_csv_output(tmp_path):
    target = tmp_path / "run.csv"
    code, out, _ = run(*SIM_RUN, "--out", "csv", "--output", str(target))
    assert code == 0 and out == ""
    lines = target.read_text().splitlines()
    assert lines[0].split(",")[:4] == ["t", "alive", "x_mean", "x_stderr"]
    assert len(lines) == 12


def test_sim_generator_command():
    code, rep, _ = report("sim", "generator", "bessel.sds", "BES3", "--f", "r", "--x0", "1", "--paths", "1000")
    assert code == 0 and rep["estimate"]["symbolic"] == pytest.approx(1.0)


def test_sim_ks_command():
    base = ["sim", "ks", "bessel.sds", "BM3", "BES3", "--map", "radial", "--x0", "1,0,0", "--y0", "1", "--paths", "2000", "--dt", "1e-2"]
    code, rep, _ = report(*base)
    assert code == 0 and rep["ks"]["passed"]


def test_sim_martingale_command():
    argv = ["sim", "martingale", "damped_oscillator.sds", "X", "--func", "f=1", "--x0", "1,0", "--angle", "x,y", "--paths", "300", "--horizon", "10"]
    code, rep, _ = report(*argv)
    assert code == 0 and len(rep["martingale"]["z_scores"]) == 10
    code, rep, _ = report(*argv, "--rate", "1.5")
    assert code == 1


def test_sim_density_command():
    argv = [
        "sim", "density", "damped_oscillator.sds", "X", "--func", "f=1", "--range=-3,3", "--x0", "0,0",
        "--paths", "10", "--horizon", "3", "--burn-in", "1",
    ]
    # a two-dimensional SDS has no one-dimensional density
    assert run(*argv)[0] == 3


REDUCED = """\
chart M { x, y }
chart R { r > 0 }
field Z0 on M = (-y - x)*d/dx + (x - y)*d/dy
field B1 on M = d/dx
field B2 on M = d/dy
sds Z on M = Z0 + [B1, B2]
field D on R = (1/(2*r) - r)*d/dr
field N on R = d/dr
sds X on R = D + [N]
map radius : M -> R { r = sqrt(x^2 + y^2) }
"""


def test_sim_density_through_lift(tmp_path):
    doc = tmp_path / "reduced.sds"
    doc.write_text(REDUCED)
    argv = [
        "sim", "density", str(doc), "X", "--lift", "Z", "--map", "radius", "--range", "0,4", "--x0", "1,0",
        "--paths", "2000", "--horizon", "10", "--burn-in", "3", "--bins", "30", "--tolerance", "0.05",
    ]
    code, rep, _ = report(*argv)
    assert code == 0, rep
    assert rep["density"]["oracle_mean"] == pytest.approx(0.886227, abs=1e-6)
    assert len(rep["rows"]) == 30
    assert run(*argv[:-1], "0.0001")[0] == 1


def test_sim_tensor_command(tmp_path):
    doc = tmp_path / "ham.sds"
    doc.write_text("chart P { q, p }\nfield H on P = p*d/dq - q*d/dp\nfield G on P = -q*d/dp\nsds X on P = H + [G]\n")
    code, rep, _ = report("sim", "tensor", str(doc), "X", "--x0", "1,0", "--dt", "1e-3", "--horizon", "1", "--tolerance", "1e-3")
    assert code == 0 and rep["tensor"]["max_deviation"] < 1e-3
    code, rep, _ = report("sim", "tensor", "damped_oscillator.sds", "X", "--func", "f=1", "--x0", "1,0")
    assert code == 1 and rep["field"] == "X0"


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sdskit.cli", "parse", "bessel.sds"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["summary"]["sds"] == ["BM3", "BES3"]
