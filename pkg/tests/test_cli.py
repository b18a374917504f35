import csv
import json

import pytest

from treeimpute.cli import CONFIG_SCHEMA, UsageError, load_config, main


@pytest.fixture
def data_files(tmp_path):
    assert main(["synth", str(tmp_path / "d.csv"), "--n", "300", "--seed", "2"]) == 0
    return tmp_path / "d.csv", tmp_path / "d.schema"


def estimate(tmp_path, data_files, methods, *extra):
    csv_path, schema = data_files
    out = tmp_path / "out"
    rc = main(["estimate", "--data", str(csv_path), "--schema", str(schema), "--method", methods,
               "--out", str(out), "--set", "forest_trees=5", "--set", "gmice_iterations=1",
               "--set", "gmice_m=2", *extra])
    return rc, out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_estimate_sim_only(tmp_path, data_files):
    rc, out = estimate(tmp_path, data_files, "sim")
    assert rc == 0
    assert [r["method"] for r in rows(out / "estimates.csv")] == ["SIM"]
    assert json.loads((out / "SIM.json").read_text())["method"] == "SIM"


def test_estimate_seven_methods(tmp_path, data_files, capsys):
    rc, out = estimate(tmp_path, data_files, "gct,rct,grt,rrt,gcf,grf,gmice", "--save-model")
    assert rc == 0
    got = rows(out / "estimates.csv")
    assert [r["method"] for r in got] == ["GCT", "RCT", "GRT", "RRT", "GCF", "GRF", "GMICE"]
    assert (out / "GCT.model.json").exists() and (out / "GRF.model.json").exists()
    # console shows two decimals, the file full precision
    printed = capsys.readouterr().out
    est = float(got[0]["estimate"])
    assert f"{est:.2f}" in printed
    assert len(got[0]["estimate"].split(".")[1]) > 2


def test_invalid_method_is_usage_error(tmp_path, data_files):
    rc, _ = estimate(tmp_path, data_files, "sim,foo")
    assert rc == 2


def test_failed_method_is_a_fail_row(tmp_path, data_files):
    # a categorical target makes every method fail without aborting the run
    csv_path, schema = data_files
    out = tmp_path / "o"
    rc = main(["estimate", "--data", str(csv_path), "--schema", str(schema), "--y", "c1",
               "--method", "sim,gct", "--out", str(out)])
    assert rc == 0
    assert [r["estimate"] for r in rows(out / "estimates.csv")] == ["FAIL", "FAIL"]


def test_missing_data_file_exits_nonzero(tmp_path):
    schema = tmp_path / "s"
    schema.write_text("a = ordinal\n")
    assert main(["estimate", "--data", str(tmp_path / "nope.csv"), "--schema", str(schema)]) == 1


def test_simulate_oracle_and_missing_config(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.json")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"methods": "ORACLE,SIM", "trials": 2, "synth_n": 200,
                               "synth_ordinal": 4, "synth_categorical": 2, "step_trees": 4,
                               "output": str(tmp_path / "sim")}))
    assert main(["simulate", str(cfg)]) == 0
    doc = json.loads((tmp_path / "sim" / "report.json").read_text())
    assert len(doc["reports"]) == 2 * 3
    oracle = [r for r in doc["reports"] if r["method"] == "ORACLE"]
    assert all(r["bias"] == 0 and r["rmse"] == 0 for r in oracle)
    assert (tmp_path / "sim" / "plot_data.csv").exists()


def test_simulate_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trials": 2, "colour": "red"}))
    assert main(["simulate", str(cfg)]) == 2


def test_inspect_renders_tree(tmp_path, data_files, capsys):
    estimate(tmp_path, data_files, "gct", "--save-model")
    capsys.readouterr()
    assert main(["inspect", str(tmp_path / "out" / "GCT.model.json")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("[0] n=300")


def test_inspect_forest_member(tmp_path, data_files, capsys):
    estimate(tmp_path, data_files, "grf", "--save-model")
    capsys.readouterr()
    assert main(["inspect", str(tmp_path / "out" / "GRF.model.json"), "--tree", "2"]) == 0
    assert "tree 2" in capsys.readouterr().out
    assert main(["inspect", str(tmp_path / "out" / "GRF.model.json"), "--tree", "99"]) == 2


def test_impute_writes_chains(tmp_path, data_files):
    csv_path, schema = data_files
    out = tmp_path / "imp"
    assert main(["impute", "--data", str(csv_path), "--schema", str(schema), "-m", "2",
                 "--iterations", "1", "--out", str(out)]) == 0
    assert (out / "completed_2.csv").exists() and (out / "completed_2.mask.csv").exists()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trials": 7, "seed": 1}))
    got = load_config(cfg, {"seed": 2}, ["trials=9", "fractions=0.1,0.2"])
    assert got["trials"] == 9 and got["seed"] == 2 and got["fractions"] == [0.1, 0.2]
    with pytest.raises(UsageError):
        load_config(None, None, ["nokey=1"])
    with pytest.raises(UsageError):
        load_config(None, None, ["trials=abc"])
    assert set(load_config(None)) == set(CONFIG_SCHEMA)


def test_threads_env(tmp_path, data_files, monkeypatch):
    monkeypatch.setenv("TREEIMPUTE_THREADS", "0")
    rc, _ = estimate(tmp_path, data_files, "sim")
    assert rc == 2
    monkeypatch.setenv("TREEIMPUTE_THREADS", "2")
    rc, _ = estimate(tmp_path, data_files, "sim,gct")
    assert rc == 0


def test_bad_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
