import csv
import json

import pytest
import yaml
from click.testing import CliRunner

from fmeval.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


def test_synth_writes_requested_rows(runner, tmp_path):
    out = tmp_path / "lin.csv"
    res = invoke(runner, "synth", "--family", "linear", "--n", 25, "--param", "a=2", "--out", out)
    assert res.exit_code == 0, res.output
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["x", "y"] and len(rows) == 26
    spec = yaml.safe_load(out.with_suffix(".spec.yaml").read_text())
    assert spec["params"]["a"] == 2.0


def test_synth_bad_param_is_error_record(runner, tmp_path):
    res = runner.invoke(main, ["synth", "--family", "linear", "--param", "zeta=1", "--out", str(tmp_path / "o.csv")])
    assert res.exit_code == 1
    record = json.loads(res.output.strip().splitlines()[-1])
    assert record["error"] == "InvalidInput" and record["command"] == "synth"


def test_eval_is_byte_reproducible(runner, tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        res = invoke(runner, "eval", "--seed", 3, "--backend", "mock", "--dataset", "synthetic", "--out", out)
        assert res.exit_code == 0, res.output
        assert "extraction failures: 0" in res.output
        outs.append(out)
    a, b = ((o / "metrics.csv").read_bytes() for o in outs)
    assert a == b
    labels = [r["label"] for r in csv.DictReader(a.decode().splitlines())]
    assert labels == ["llm_with_domain", "llm_without_domain"]
    reports = [json.loads(p.read_text()) for p in sorted((outs[0] / "reports").glob("*.json"))]
    assert reports[0]["test_row_ids"] == reports[1]["test_row_ids"]
    assert (outs[0] / "transcripts").is_dir() and (outs[0] / "runs").is_dir()


def test_eval_requires_seed(runner, tmp_path):
    res = runner.invoke(main, ["eval", "--backend", "mock", "--out", str(tmp_path / "r")])
    assert res.exit_code == 1
    record = json.loads((tmp_path / "r" / "error.json").read_text())
    assert record["error"] == "InvalidInput" and "seed" in record["message"]


def test_config_file_and_mode(runner, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"seed": 1, "mode": "raw", "dataset": {"kind": "synthetic", "family": "sine",
                                                                           "n": 30},
                                   "client": {"api_key": "sk-secret"}}))
    out = tmp_path / "run"
    res = invoke(runner, "eval", "--config", cfg, "--out", out)
    assert res.exit_code == 0, res.output
    assert [p.name for p in (out / "reports").glob("*.json")] == ["synthetic-sine__llm_without_domain.json"]
    meta = (out / "runs" / "eval__synthetic-sine.json").read_text()
    assert "sk-secret" not in meta and json.loads(meta)["seed"] == 1


def test_report_renders_table_and_plot(runner, tmp_path):
    out = tmp_path / "run"
    invoke(runner, "eval", "--seed", 0, "--backend", "mock", "--dataset", "synthetic", "--out", out)
    invoke(runner, "baseline", "--seed", 0, "--dataset", "synthetic", "--out", out)
    res = invoke(runner, "report", out)
    assert res.exit_code == 0, res.output
    header = next(csv.reader((out / "report" / "table1.csv").open()))
    for col in ("LLM w/o domain", "LLM w/ domain", "MLP (n=10^2)", "MLP (n=10^4)"):
        assert col in header
    svg = (out / "report" / "synthetic-linear_predictions.svg").read_text()
    assert svg.startswith("<svg") and "llm_with_domain" in svg and "mlp_n100" in svg


def test_report_on_empty_dir_fails(runner, tmp_path):
    res = runner.invoke(main, ["report", str(tmp_path)])
    assert res.exit_code == 1


def test_perturb_writes_dataset_and_recipe(runner, tmp_path, income):
    from fmeval.domain import read_dataset, write_dataset

    write_dataset(income, tmp_path / "in.csv", tmp_path / "in.yaml")
    recipe = tmp_path / "recipe.yaml"
    recipe.write_text(yaml.safe_dump({"renames": {"age": "years lived"}}))
    out = tmp_path / "out"
    res = invoke(runner, "perturb", "--dataset", tmp_path / "in.csv", "--schema", tmp_path / "in.yaml",
                 "--recipe", recipe, "--seed", 2, "--out", out)
    assert res.exit_code == 0, res.output
    back = read_dataset(out / "data.csv", out / "schema.yaml")
    assert "years lived" in back.feature_names and len(back) == len(income)
    assert yaml.safe_load((out / "recipe.yaml").read_text())["seed"] == 2


def test_select_features_with_mock(runner, tmp_path, income):
    from fmeval.domain import write_dataset

    big = income.with_rows([r for r in __import__("conftest").small_income(120).rows])
    write_dataset(big, tmp_path / "d.csv", tmp_path / "s.yaml")
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"seed": 0, "dataset": {"kind": "csv", "csv": "d.csv", "schema": "s.yaml"},
                                   "test_n": 40, "select_train_n": 60, "select_examples": 20,
                                   "eval": {"mlp_hidden": 8, "mlp_epochs": 3}}))
    out = tmp_path / "sel"
    res = invoke(runner, "select-features", "--config", cfg, "--k", 2, "--out", out)
    assert res.exit_code == 0, res.output
    doc = json.loads((out / "selection.json").read_text())
    names = {r["selector"] for r in doc["results"]}
    assert names == {"llm_likelihood", "llm_posterior", "mi_greedy", "mi_exhaustive"}
    assert all(r["k"] == 2 for r in doc["results"])
