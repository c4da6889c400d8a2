import json
import math

import numpy as np
import pytest

from gridlearn.acopf import ViolationReport
from gridlearn.evalharness import (ExperimentSpec, MetricsReport, StageError, deviation_summary,
                                   evaluate, feasibility_rate, hidden_mvn, optimality_loss,
                                   realistic_scenarios, reports_from_csv, reports_to_csv,
                                   run_experiment, speedup)

TINY_TRAIN = {"epochs": 2, "hidden": [8], "optimizer": "adam", "lr_start": 1e-3, "lr_end": 1e-4,
              "penalty_start_epoch": 2, "batch_size": 32}


def _viol(pg=0.0, qg=0.0, v=0.0, s=0.0):
    return ViolationReport(pg, qg, v, s, 0.0, max(pg, qg, v, s) == 0.0)


def test_optimality_loss_examples():
    assert optimality_loss([101.0, 99.0], [100.0, 100.0]) == pytest.approx(1.0)
    assert optimality_loss([110.0, 50.0], [100.0, 100.0], [True, False]) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        optimality_loss([1.0], [1.0], [False])
    with pytest.raises(ValueError):
        optimality_loss([1.0], [0.0])
    with pytest.raises(ValueError):
        optimality_loss([1.0, 2.0], [1.0])


def test_feasibility_and_deltas():
    reps = [_viol(), _viol(pg=0.014), _viol(v=0.02), _viol(pg=0.006, v=0.04)]
    assert feasibility_rate(reps) == 25.0
    assert feasibility_rate([True, False, True, True]) == 75.0
    pg, qg, v, s = deviation_summary(reps)
    assert pg == pytest.approx(0.01) and v == pytest.approx(0.03) and qg == 0.0 and s == 0.0
    pg_all = deviation_summary(reps, over="all")[0]
    assert pg_all == pytest.approx(0.005)
    with pytest.raises(ValueError):
        deviation_summary(reps, over="some")
    with pytest.raises(ValueError):
        feasibility_rate([])


def test_speedup_is_mean_of_ratios():
    assert speedup([10.0, 30.0], [1.0, 10.0]) == pytest.approx(6.5)
    with pytest.raises(ValueError):
        speedup([1.0], [0.0])
    with pytest.raises(ValueError):
        speedup([], [])


def _report(**kw):
    base = dict(eta_opt=0.13, eta_fea=99.73, delta_pg=0.0123, delta_qg=0.0, delta_v=1e-5, delta_s=0.0,
                t0_ms=100.0, tm_ms=2.5, eta_sp=38.62, n_test=2000, experiment="e1",
                training="20000, synthetic (MVN)")
    base.update(kw)
    return MetricsReport(**base)


def test_report_round_trips():
    r = _report(n_excluded=3, extra={"a": 1})
    back = MetricsReport.from_json(r.to_json())
    assert back == r
    rows = reports_from_csv(reports_to_csv([r, _report(experiment="e2", eta_opt=float("nan"))]))
    assert rows[0].eta_opt == r.eta_opt and rows[0].n_excluded == 3
    assert rows[0].training == r.training
    assert math.isnan(rows[1].eta_opt)
    header = reports_to_csv([r]).splitlines()[0]
    assert header.startswith("experiment,training,testing,eta_opt,eta_fea")
    with pytest.raises(ValueError):
        _report(eta_fea=101.0)


def test_spec_parsing(tmp_path):
    with pytest.raises(ValueError, match="unknown"):
        ExperimentSpec.from_dict({"name": "x", "epochs": 3})
    (tmp_path / "s.json").write_text(json.dumps({"name": "x", "realistic": {"kind": "csv", "path": "r.csv"}}))
    spec = ExperimentSpec.load(tmp_path / "s.json")
    assert spec.realistic["path"] == str((tmp_path / "r.csv").resolve())
    a = ExperimentSpec("a", seed=1)
    assert a.digest() == ExperimentSpec("a", seed=1).digest() != ExperimentSpec("a", seed=2).digest()


def test_hidden_mvn_structure(case9):
    spec = hidden_mvn(case9, 0.1, 0.5)
    cov = spec.params["cov"]
    p0, q0 = case9.nominal_loads()
    sd = 0.1 * np.abs(np.concatenate([p0, q0]))
    np.testing.assert_allclose(np.sqrt(np.diag(cov)), sd)
    i, j = np.flatnonzero(sd)[:2]
    assert cov[i, j] / (sd[i] * sd[j]) == pytest.approx(0.5)
    scen = realistic_scenarios(case9, {"kind": "hidden_mvn", "n": 10}, seed=3)
    assert [s.tag for s in scen] == list(range(10))
    again = realistic_scenarios(case9, {"kind": "hidden_mvn", "n": 10}, seed=3)
    assert all(np.array_equal(a.p_load, b.p_load) for a, b in zip(scen, again))


@pytest.fixture(scope="module")
def tiny(case9):
    spec = ExperimentSpec("tiny", realistic={"kind": "hidden_mvn", "n": 40},
                          training={"scheme": "MVN", "n_samples": 60}, train_config=TINY_TRAIN,
                          timing_samples=3)
    return spec, run_experiment(spec, case9)


def test_run_experiment_end_to_end(tiny):
    spec, res = tiny
    r = res.report
    assert r.n_test == 40 and r.experiment == "tiny" and r.training == "60, synthetic (MVN)"
    assert 0 <= r.eta_fea <= 100 and r.eta_sp > 0
    assert r.extra["timing_samples"] == 3 and r.extra["pg_slack_only"] is True
    assert len(res.history.pred_loss) == 2


def test_run_experiment_is_deterministic(case9, tiny):
    spec, res = tiny
    again = run_experiment(spec, case9)
    assert all(np.array_equal(a, b) for a, b in zip(res.model.weights, again.model.weights))
    assert again.report.eta_opt == res.report.eta_opt
    assert again.report.eta_fea == res.report.eta_fea


def test_realistic_split_test_size(case9):
    spec = ExperimentSpec("split", realistic={"kind": "hidden_mvn", "n": 41},
                          training={"scheme": "REALISTIC"}, testing="last_half",
                          train_config=TINY_TRAIN, timing_samples=1)
    res = run_experiment(spec, case9)
    assert res.report.n_test == 20 and res.report.training == "21, realistic"
    assert min(s.tag for s in res.test.scenarios) == 21


def test_stage_errors_name_the_stage(case9):
    with pytest.raises(StageError) as err:
        run_experiment(ExperimentSpec("bad", case="no/such/case.json"))
    assert err.value.stage == "case"
    with pytest.raises(StageError) as err:
        run_experiment(ExperimentSpec("bad", realistic={"kind": "hidden_mvn", "n": 10},
                                      training={"scheme": "GAMMA", "n_samples": 5}), case9)
    assert err.value.stage == "fit"


def test_evaluate_counts_infeasible(case9, tiny):
    _, res = tiny
    ev = evaluate(res.model, case9, res.test, timing_samples=0)
    assert ev.report.n_excluded == int((~ev.feasible).sum())
    assert math.isnan(ev.report.eta_sp)
