import json

import numpy as np
import pytest

from conftest import case_path
from gridlearn.cli import main
from gridlearn.evalharness import realistic_scenarios
from gridlearn.scenarios import write_scenarios_csv

CASE9 = str(case_path("case9"))
TINY = {"epochs": 2, "hidden": [8], "optimizer": "adam", "lr_start": 1e-3, "lr_end": 1e-4,
        "penalty_start_epoch": 2, "batch_size": 32}


@pytest.fixture
def hist_csv(tmp_path, case9):
    path = tmp_path / "hist.csv"
    write_scenarios_csv(path, case9, realistic_scenarios(case9, {"kind": "hidden_mvn", "n": 30}, 1))
    return path


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["opf", "--loads", "x.csv"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["nosuch"])
    assert err.value.code == 2


def test_case_validate(tmp_path, capsys):
    assert main(["case", "validate", "--case", CASE9]) == 0
    assert "ok (9 buses" in capsys.readouterr().out
    doc = json.loads(case_path("case9").read_text())
    doc["buses"][1]["v_min"] = 2.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["case", "validate", "--case", str(bad)]) == 1
    bad.write_text("{not json")
    assert main(["case", "validate", "--case", str(bad)]) == 1


def test_missing_file_is_stage_error(capsys):
    assert main(["opf", "--case", CASE9, "--loads", "/nonexistent.csv"]) == 1
    assert "gridlearn opf" in capsys.readouterr().err


def test_pipeline(tmp_path, hist_csv, capsys, monkeypatch):
    monkeypatch.delenv("GRIDLEARN_SEED", raising=False)
    d = tmp_path
    assert main(["scenarios", "fit", "--case", CASE9, "--family", "MVN", "--historical", str(hist_csv),
                 "--out", str(d / "mvn.json")]) == 0
    assert main(["--seed", "5", "scenarios", "sample", "--case", CASE9, "--spec", str(d / "mvn.json"),
                 "--n", "40", "--out", str(d / "s1.csv")]) == 0
    # global flags are also accepted after the subcommand
    assert main(["scenarios", "sample", "--seed", "5", "--case", CASE9, "--spec", str(d / "mvn.json"),
                 "--n", "40", "--out", str(d / "s2.csv")]) == 0
    assert (d / "s1.csv").read_bytes() == (d / "s2.csv").read_bytes()
    err = capsys.readouterr().err
    assert "# seed=5 config=" in err

    assert main(["scenarios", "label", "--case", CASE9, "--scenarios", str(d / "s1.csv"),
                 "--out", str(d / "ds.jsonl")]) == 0
    (d / "tiny.json").write_text(json.dumps(TINY))
    assert main(["train", "--case", CASE9, "--dataset", str(d / "ds.jsonl"), "--config", str(d / "tiny.json"),
                 "--out-model", str(d / "m.bin"), "--history-out", str(d / "h.json"),
                 "--figures", str(d / "fig")]) == 0
    assert (d / "fig" / "training_history.png").stat().st_size > 0
    assert len(json.loads((d / "h.json").read_text())["pred_loss"]) == 2

    assert main(["scenarios", "label", "--case", CASE9, "--scenarios", str(hist_csv),
                 "--out", str(d / "test.jsonl")]) == 0
    capsys.readouterr()
    assert main(["eval", "--model", str(d / "m.bin"), "--case", CASE9, "--test", str(d / "test.jsonl"),
                 "--out", str(d / "r.json"), "--timing-samples", "2", "--figures", str(d / "fig")]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("experiment,training,testing,eta_opt")
    assert json.loads((d / "r.json").read_text())["n_test"] == 30
    assert (d / "fig" / "r_cost.png").exists() and (d / "fig" / "r_violations.png").exists()

    assert main(["predict", "--model", str(d / "m.bin"), "--case", CASE9, "--loads", str(hist_csv),
                 "--out", str(d / "pred.jsonl")]) == 0
    rows = [json.loads(l) for l in (d / "pred.jsonl").read_text().splitlines()]
    assert len(rows) == 30 and "feasible" in rows[0]

    assert main(["scenarios", "split", "--dataset", str(d / "test.jsonl"), "--train-out", str(d / "a.jsonl"),
                 "--test-out", str(d / "b.jsonl")]) == 0
    assert len((d / "a.jsonl").read_text().splitlines()) == 15


def test_opf_and_pf(tmp_path, case9, capsys):
    p, q = case9.nominal_loads()
    from gridlearn.scenarios import LoadScenario
    write_scenarios_csv(tmp_path / "one.csv", case9, [LoadScenario(p, q, 0)])
    assert main(["opf", "--case", CASE9, "--loads", str(tmp_path / "one.csv"),
                 "--out", str(tmp_path / "o.json")]) == 0
    sol = json.loads((tmp_path / "o.json").read_text())
    assert sol["status"] == "OPTIMAL" and sol["objective"] == pytest.approx(5296.686204, rel=1e-6)
    assert main(["opf", "--case", CASE9, "--loads", str(tmp_path / "one.csv"), "--warm",
                 str(tmp_path / "o.json"), "--out", str(tmp_path / "o2.json")]) == 0
    assert json.loads((tmp_path / "o2.json").read_text())["iterations"] <= 3

    capsys.readouterr()
    write_scenarios_csv(tmp_path / "two.csv", case9, [LoadScenario(p, q, 0), LoadScenario(p * 1.1, q, 1)])
    assert main(["opf", "batch", "--case", CASE9, "--loads", str(tmp_path / "two.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [json.loads(l)["index"] for l in lines] == [0, 1]
    assert main(["opf", "--case", CASE9, "--loads", str(tmp_path / "two.csv")]) == 1

    vm = np.array(sol["v_mag"])[case9.gen_buses]
    pg = np.array(sol["p_gen"])
    (tmp_path / "sp.json").write_text(json.dumps({"v_set": vm.tolist(), "p_set_mw": (pg[1:] * 100).tolist()}))
    assert main(["pf", "--case", CASE9, "--loads", str(tmp_path / "one.csv"), "--setpoint",
                 str(tmp_path / "sp.json"), "--out", str(tmp_path / "pf.json")]) == 0
    res = json.loads((tmp_path / "pf.json").read_text())
    assert res["converged"] and res["p_slack"] == pytest.approx(pg[0], abs=1e-6)
    (tmp_path / "bad.json").write_text(json.dumps({"v_set": [1.0], "p_set": []}))
    assert main(["pf", "--case", CASE9, "--loads", str(tmp_path / "one.csv"), "--setpoint",
                 str(tmp_path / "bad.json")]) == 1


def test_case_prep(tmp_path, hist_csv):
    (tmp_path / "cfg.json").write_text(json.dumps({"reactive_fraction": 0.5,
                                                   "reference_limits_mva": [150, 200, 250]}))
    assert main(["case", "prep", "--case", CASE9, "--caseprep-config", str(tmp_path / "cfg.json"),
                 "--loads", str(hist_csv), "--out", str(tmp_path / "prep.json")]) == 0
    assert main(["case", "validate", "--case", str(tmp_path / "prep.json")]) == 0
    (tmp_path / "cfg2.json").write_text(json.dumps({"reference_limits_mva": [150]}))
    assert main(["case", "prep", "--case", CASE9, "--caseprep-config", str(tmp_path / "cfg2.json"),
                 "--out", str(tmp_path / "x.json")]) == 1


def test_geo_assign(tmp_path):
    layout = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"region_id": "R"},
         "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]]]}},
        {"type": "Feature", "properties": {"bus_id": 5}, "geometry": {"type": "Point", "coordinates": [0.25, 0.5]}},
        {"type": "Feature", "properties": {"bus_id": 7}, "geometry": {"type": "Point", "coordinates": [0.75, 0.5]}}]}
    (tmp_path / "lay.json").write_text(json.dumps(layout))
    rows = ["timestamp,source_id,p_mw,q_mvar"] + [f"{t},R,{100 + t},{10 + t}" for t in range(20)]
    (tmp_path / "loads.csv").write_text("\n".join(rows) + "\n")
    assert main(["geo", "assign", "--layout", str(tmp_path / "lay.json"), "--loads", str(tmp_path / "loads.csv"),
                 "--out", str(tmp_path / "bus.csv"), "--window", "5"]) == 0
    out = (tmp_path / "bus.csv").read_text().splitlines()
    assert len(out) == 1 + 16 * 2
    assert out[1].startswith("2,5,51.0,")


def test_experiment_run_is_reproducible(tmp_path, capsys):
    spec = {"name": "cli", "realistic": {"kind": "hidden_mvn", "n": 30},
            "training": {"scheme": "NORMAL_INDEP", "n_samples": 40}, "train_config": TINY,
            "timing_samples": 1}
    (tmp_path / "e.json").write_text(json.dumps(spec))
    spec2 = dict(spec, name="cli2", training={"scheme": "UNIFORM_INDEP", "n_samples": 40})
    (tmp_path / "e2.json").write_text(json.dumps(spec2))
    for out in ("r1", "r2"):
        assert main(["experiment", "run", "--spec", str(tmp_path / "e.json"), "--spec", str(tmp_path / "e2.json"),
                     "--out-dir", str(tmp_path / out), "--save-models"]) == 0
    assert (tmp_path / "r1" / "metrics.png").exists()
    assert (tmp_path / "r1" / "cli_cost.png").exists()
    assert (tmp_path / "r1" / "cli.model").read_bytes() == (tmp_path / "r2" / "cli.model").read_bytes()
    assert (tmp_path / "r1" / "cli_cost.png").read_bytes() == (tmp_path / "r2" / "cli_cost.png").read_bytes()
    t1 = (tmp_path / "r1" / "table.csv").read_text().splitlines()
    t2 = (tmp_path / "r2" / "table.csv").read_text().splitlines()
    # timing columns differ run to run; everything else must not
    strip = lambda rows: [r.split(",")[:9] for r in rows]
    assert strip(t1) == strip(t2) and len(t1) == 3
