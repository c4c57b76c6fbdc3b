import csv
import json
import time

import numpy as np
import pytest

from palo.cli import EXIT_OK, EXIT_RESOURCE, EXIT_USER, main

THEORY = """
type T : 2;
complexity default = 2;
sort s : T;
sort ps : T T;
pred p : T;
pred q : T T;
bind s = csv("s.csv");
bind ps = csv("ps.csv", index=s);
axiom top: [0.99, 1] true;
"""


@pytest.fixture
def project(tmp_path):
    rng = np.random.default_rng(0)
    with (tmp_path / "s.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y"])
        for i, row in enumerate(rng.normal(size=(8, 2))):
            w.writerow([f"e{i}", *row])
    (tmp_path / "ps.csv").write_text("i,j\n0,1\n1,2\n2,3\n")
    (tmp_path / "theory.palo").write_text(THEORY)
    return tmp_path


@pytest.fixture
def model(project, capsys):
    out = project / "run"
    code = main(["synth", str(project / "theory.palo"), "--epochs", "3", "--workers", "1", "--out", str(out)])
    assert code == EXIT_OK
    capsys.readouterr()
    return out / "model_0.palomodel"


def test_synth_trivial_theory(project, model):
    rows = list(csv.DictReader((model.parent / "summary.csv").open()))
    assert len(rows) == 1 and float(rows[0]["likelihood"]) == 1.0 and rows[0]["accepted"] == "True"
    man = json.loads((model.parent / "manifest.json").read_text())
    assert man["seeds"] == [0] and "summary.csv" in man["artifacts"]


def test_missing_data_file(project, capsys):
    (project / "ps.csv").unlink()
    code = main(["synth", str(project / "theory.palo"), "--epochs", "1", "--out", str(project / "o")])
    assert code == EXIT_USER
    assert "ps.csv" in capsys.readouterr().err


def test_missing_theory(tmp_path, capsys):
    assert main(["synth", str(tmp_path / "nope.palo")]) == EXIT_USER
    assert "nope.palo" in capsys.readouterr().err


def test_validate_top(model, capsys):
    assert main(["validate", str(model), "true", "--json"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["formulas"][0]["estimates"]["approx"]["mean"] == 1.0


def test_validate_modes_and_axioms(model, capsys):
    code = main(["validate", str(model), "forall x:s . p(x)", "--mode", "approx,bounds,crisp", "--tau", "0.4",
                 "--batch", "s=4", "--samples", "10"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "lower" in out and "crisp(0.4)" in out
    assert main(["validate", str(model), "--axioms"]) == EXIT_OK
    assert "normalized likelihood" in capsys.readouterr().out


def test_validate_parse_error(model, capsys):
    assert main(["validate", str(model), "forall x:s . nope(x)"]) == EXIT_USER


def test_eval_cell_cap(model, project, capsys):
    code = main(["eval", str(model), "q(x,y)", "--cell-cap", "10", "--out", str(project)])
    assert code == EXIT_RESOURCE
    assert "cap" in capsys.readouterr().err


def test_eval_outputs(model, project):
    out = project / "ev"
    assert main(["eval", str(model), "q(x,y)", "--export", "dot", "--threshold", "0", "--hist", "50",
                 "--out", str(out)]) == EXIT_OK
    rows = (out / "tensor.csv").read_text().splitlines()
    assert rows[0] == "x,y,value" and len(rows) == 1 + 64
    assert len((out / "tensor_hist.csv").read_text().splitlines()) == 1 + 50
    assert (out / "tensor.dot").read_text().startswith("digraph")


def test_eval_closed_formula(model, project):
    out = project / "ev"
    assert main(["eval", str(model), "exists x:s . p(x)", "--out", str(out)]) == EXIT_OK
    rows = (out / "tensor.csv").read_text().splitlines()
    assert rows[0] == "value" and len(rows) == 2
    assert 0.0 <= float(rows[1]) <= 1.0


def test_export(model, project, capsys):
    out = project / "ex"
    (project / "ann.csv").write_text("e0,0.5\ne1,-1\n")
    code = main(["export", str(model), "q", "--threshold", "0", "--annotate", str(project / "ann.csv"),
                 "--out", str(out)])
    assert code == EXIT_OK
    assert "64 edges" in capsys.readouterr().out
    assert "fillcolor" in (out / "q.dot").read_text()
    assert main(["export", str(model), "p", "--out", str(out)]) == EXIT_USER


def _demo(tmp, *extra):
    out = tmp / "demo"
    code = main(["demo", "--out", str(out), *extra])
    summary = json.loads((out / "demo_summary.json").read_text())
    return code, summary


def _strip_volatile(summary):
    summary = dict(summary)
    summary.pop("runtime_seconds")
    summary["models"] = [{k: v for k, v in m.items() if k != "path"} for m in summary["models"]]
    return summary


def test_demo_deterministic(tmp_path, capsys):
    args = ("--models", "2", "--seed", "7", "--epochs", "100", "--workers", "1")
    _, a = _demo(tmp_path / "a", *args)
    _, b = _demo(tmp_path / "b", *args)
    assert _strip_volatile(a) == _strip_volatile(b)
    assert len(a["models"]) == 2


def test_demo_tiny_run_is_fast(tmp_path, capsys):
    t0 = time.time()
    _demo(tmp_path, "--n", "5", "--models", "2", "--epochs", "100", "--workers", "1")
    assert time.time() - t0 < 30.0
    assert "network: 5 genes" in capsys.readouterr().out
