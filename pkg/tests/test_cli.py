import csv
import io
import json

import numpy as np
import pydot
import pytest

from mobpart import cli
from mobpart.data import schema_of, write_csv
from mobpart.serialize import canonical_json
from mobpart.simgen import DGPSpec, generate


@pytest.fixture
def workspace(tmp_path):
    ds = generate(DGPSpec("pred", 200, 2, 21))
    write_csv(ds, tmp_path / "pred.csv")
    cfg = {"data": "pred.csv", "schema": schema_of(ds),
           "roles": {"family": "linear", "endpoint": {"response": "y"}, "treatment": "x_A",
                     "partitioning": ["z1", "z2", "z3"]},
           "control": {"nperm": 499, "seed": 3}, "output": "out"}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    return tmp_path, cfg


def run(args):
    return cli.main([str(a) for a in args])


def test_analyze_writes_all_artifacts(workspace):
    tmp, _ = workspace
    assert run(["analyze", "--config", tmp / "cfg.json"]) == 0
    out = tmp / "out"
    assert sorted(p.name for p in out.iterdir()) == ["membership.csv", "subgroups.csv", "tree.dot",
                                                     "tree.json", "tree.txt"]
    doc = json.loads((out / "tree.json").read_text())
    assert doc["schema_version"] == 1 and doc["metadata"]["seed"] == 3
    inner = [n for n in doc["nodes"] if not n["leaf"]]
    assert len(inner) == 1 and inner[0]["split"]["variable"] == "z1"
    assert all(t["p_adj"] >= t["p_raw"] for n in doc["nodes"] for t in n["tests"])
    rows = list(csv.DictReader(io.StringIO((out / "subgroups.csv").read_text())))
    assert len(rows) == 2 and {r["class"] for r in rows} <= {"positive", "negative", "none"}
    members = list(csv.DictReader(io.StringIO((out / "membership.csv").read_text())))
    assert len(members) == 200 and {m["node_id"] for m in members} == {"2", "3"}
    assert "Seed: 3" in (out / "tree.txt").read_text()


def test_tree_json_round_trip(workspace):
    tmp, _ = workspace
    run(["analyze", "--config", tmp / "cfg.json", "--format", "json"])
    text = (tmp / "out" / "tree.json").read_text()
    assert canonical_json(json.loads(text)) == text


def test_canonical_json_float_format():
    text = canonical_json({"b": 1 / 3, "a": [float("nan"), 2.0, np.float64(1e-20)]})
    assert text.index('"a"') < text.index('"b"')
    assert "0.333333333333" in text and "0.3333333333333" not in text
    assert "null" in text


def test_dot_only_output_is_parseable(workspace):
    tmp, _ = workspace
    assert run(["analyze", "--config", tmp / "cfg.json", "--format", "dot", "--out", tmp / "dot"]) == 0
    assert [p.name for p in (tmp / "dot").iterdir()] == ["tree.dot"]
    graphs = pydot.graph_from_dot_file(str(tmp / "dot" / "tree.dot"))
    assert len(graphs) == 1
    assert len(graphs[0].get_edges()) == 2


def test_overrides_and_env_threads(workspace, monkeypatch):
    tmp, cfg = workspace
    monkeypatch.setenv("MOBPART_THREADS", "2")
    config = cli.parse_config(cfg, tmp, {"alpha": 0.01, "maxdepth": 1, "seed": 8})
    assert config.control.alpha == 0.01 and config.control.maxdepth == 1
    assert config.control.seed == 8 and config.control.threads == 2
    assert cli.parse_config(cfg, tmp, {"threads": 1}).control.threads == 1


def test_missing_treatment_is_config_error(workspace, capsys):
    tmp, cfg = workspace
    del cfg["roles"]["treatment"]
    (tmp / "bad.json").write_text(json.dumps(cfg))
    assert run(["analyze", "--config", tmp / "bad.json"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["field"] == "roles.treatment" and err["exit_code"] == 2


@pytest.mark.parametrize("mutate, code", [
    (lambda c: c["roles"].update(treatment="nope"), 2),
    (lambda c: c["roles"].update(family="probit"), 2),
    (lambda c: c["control"].update(minbucket=50), 2),
    (lambda c: c.update(formats=["xml"]), 2),
    (lambda c: c.update(data="absent.csv"), 4),
])
def test_exit_codes(workspace, capsys, mutate, code):
    tmp, cfg = workspace
    mutate(cfg)
    (tmp / "c.json").write_text(json.dumps(cfg))
    assert run(["analyze", "--config", tmp / "c.json"]) == code
    assert "error" in json.loads(capsys.readouterr().err)


def test_malformed_config_and_missing_file(tmp_path, capsys):
    (tmp_path / "c.json").write_text("{not json")
    assert run(["analyze", "--config", tmp_path / "c.json"]) == 2
    assert run(["analyze", "--config", tmp_path / "none.json"]) == 4


def test_root_fit_failure_exit_code(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("y,x,z\n1,0,1\n2,1,2\n3,1,3\n4,1,4\n")
    cfg = {"data": "d.csv", "schema": {"y": "continuous", "x": "continuous", "z": "continuous"},
           "roles": {"family": "linear", "endpoint": {"response": "y"}, "treatment": "x",
                     "partitioning": ["z"]},
           "control": {"minbucket": 1, "minfit": 2}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert run(["analyze", "--config", tmp_path / "c.json"]) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "fit"


def test_simulate_is_byte_identical(tmp_path):
    for name in ("a.csv", "b.csv"):
        assert run(["simulate", "pred", "--n", 200, "--seed", 1, "--out", tmp_path / name]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "y,x_A,z1"


def test_simulate_noise_vars_to_stdout(capsys):
    assert run(["simulate", "null", "--n", 10, "--noise-vars", 2]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "y,x_A,z1,z2,z3"


@pytest.mark.parametrize("suite", ["gradients", "penrose"])
def test_selftest_suites_pass(suite, capsys):
    assert run(["selftest", suite]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_selftest_permutation_small(capsys):
    assert run(["selftest", "permutation", "--m", 5]) == 0


def test_selftest_type_one_reduced(capsys):
    assert run(["selftest", "typeI", "--nsim", 10]) == 0


def test_unknown_suite_is_rejected():
    with pytest.raises(SystemExit) as exc:
        cli.main(["selftest", "bogus"])
    assert exc.value.code == 2
