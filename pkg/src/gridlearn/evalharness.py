"""Metrics for learned dispatch predictors and experiment orchestration.

Four numbers summarise a model on a test set: the mean relative cost gap
against the interior-point reference (eta_opt), the share of predictions
that violate no operating limit (eta_fea), mean violation distances per
constraint class, and the mean per-sample speedup over the reference.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import mlp
from . import scenarios as sc
from .acopf import OpfStatus, ViolationReport, check_feasibility, solve_opf
from .netmodel import Network, branch_matrices, load_case_file
from .seeding import config_digest, derive_seed

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"{stage}: {cause}")


# ---------------------------------------------------------------------------
# metrics

def optimality_loss(model_costs, oracle_costs, feasible=None) -> float:
    """Mean of ``|c_model - c_oracle| / c_oracle`` in percent.

    Samples flagged infeasible are left out of the mean.
    """
    mc = np.asarray(model_costs, dtype=float)
    oc = np.asarray(oracle_costs, dtype=float)
    if mc.shape != oc.shape:
        raise ValueError("cost arrays differ in length")
    keep = np.ones(mc.shape, dtype=bool) if feasible is None else np.asarray(feasible, dtype=bool)
    if not keep.any():
        raise ValueError("no comparable samples")
    if np.any(oc[keep] <= 0):
        raise ValueError("oracle costs must be positive")
    return float(np.mean(np.abs(mc[keep] - oc[keep]) / oc[keep]) * 100.0)


def _feasible_flag(r) -> bool:
    return bool(r.feasible) if isinstance(r, ViolationReport) else bool(r)


def feasibility_rate(reports: Sequence) -> float:
    if len(reports) == 0:
        raise ValueError("no reports")
    return 100.0 * sum(_feasible_flag(r) for r in reports) / len(reports)


DELTA_FIELDS = ("delta_pg", "delta_qg", "delta_v", "delta_s")


def deviation_summary(reports: Sequence[ViolationReport], over: str = "violated") -> tuple:
    """Mean violation distance per constraint class.

    With ``over="violated"`` each class is averaged over the samples that
    violate that class (0 if none do); ``over="all"`` averages over every
    sample.
    """
    if len(reports) == 0:
        raise ValueError("no reports")
    if over not in ("violated", "all"):
        raise ValueError(f"unknown averaging mode {over!r}")
    out = []
    for name in DELTA_FIELDS:
        vals = np.array([getattr(r, name) for r in reports], dtype=float)
        if over == "all":
            out.append(float(vals.mean()))
        else:
            hit = vals[vals > 0]
            out.append(float(hit.mean()) if hit.size else 0.0)
    return tuple(out)


def speedup(t0_samples, tm_samples) -> float:
    """Mean of per-sample ratios ``t0 / tm``."""
    t0 = np.asarray(t0_samples, dtype=float)
    tm = np.asarray(tm_samples, dtype=float)
    if t0.shape != tm.shape or t0.size == 0:
        raise ValueError("timing arrays must be non-empty and equal length")
    if np.any(t0 <= 0) or np.any(tm <= 0):
        raise ValueError("timings must be positive")
    return float(np.mean(t0 / tm))


# ---------------------------------------------------------------------------
# report

_CSV_COLUMNS = ["experiment", "training", "testing", "eta_opt", "eta_fea", "delta_pg", "delta_qg",
                "delta_v", "delta_s", "t0_ms", "tm_ms", "eta_sp"]


@dataclass
class MetricsReport:
    eta_opt: float
    eta_fea: float
    delta_pg: float
    delta_qg: float
    delta_v: float
    delta_s: float
    t0_ms: float
    tm_ms: float
    eta_sp: float
    n_test: int
    n_excluded: int = 0       # infeasible predictions left out of eta_opt
    experiment: str = ""
    training: str = ""        # e.g. "20000, synthetic (MVN)"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.eta_fea <= 100.0:
            raise ValueError("eta_fea must lie in [0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def csv_row(self) -> list[str]:
        vals = [self.experiment, self.training, str(self.n_test)]
        vals += [repr(float(getattr(self, k))) for k in _CSV_COLUMNS[3:]]
        return vals

    @classmethod
    def from_csv_row(cls, row: Mapping[str, str], extra: Optional[dict] = None) -> "MetricsReport":
        kw = {k: float(row[k]) for k in _CSV_COLUMNS[3:]}
        return cls(n_test=int(row["testing"]), experiment=row["experiment"], training=row["training"],
                   n_excluded=int(row.get("n_excluded", 0) or 0), extra=extra or {}, **kw)


def reports_to_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_CSV_COLUMNS + ["n_excluded"])
    for r in reports:
        w.writerow(r.csv_row() + [str(r.n_excluded)])
    return buf.getvalue()


def reports_from_csv(text: str) -> list[MetricsReport]:
    return [MetricsReport.from_csv_row(row) for row in csv.DictReader(io.StringIO(text))]


# ---------------------------------------------------------------------------
# evaluation

def _median_time(fn, repeats: int) -> float:
    ts = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return statistics.median(ts)


@dataclass
class Evaluation:
    report: MetricsReport
    predictions: list
    violations: list
    feasible: np.ndarray
    t0: np.ndarray   # seconds, timed subset only
    tm: np.ndarray


def evaluate(model: mlp.MlpModel, net: Network, test: sc.LabeledDataset, tol: float = 1e-4,
             timing_samples: Optional[int] = 200, repeats: int = 3, delta_over: str = "violated",
             pf_init=None) -> Evaluation:
    """Score a model against reference solutions.

    A prediction is feasible when its embedded power flow converged and all
    generator, voltage and branch limits hold within ``tol``.  Timing runs
    serially on the first ``timing_samples`` test scenarios (all if None),
    taking the median of ``repeats`` runs per sample and per solver; the
    reference is solved from a flat start.
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    pf_init = pf_init or mlp.model_pf_init(model, net)
    ev = mlp.PenaltyEvaluator(net, pf_init)
    p, q = sc.stack(test.scenarios)
    preds = mlp.predict_batch(model, net, p, q, evaluator=ev)
    mats = branch_matrices(net)
    viols = [check_feasibility(net, s, tol, mats=mats) for s in preds]
    feas = np.array([v.feasible and s.status is OpfStatus.OPTIMAL for v, s in zip(viols, preds)])
    fea_reports = [v if f else _as_infeasible(v) for v, f in zip(viols, feas)]

    model_cost = np.array([s.objective for s in preds])
    oracle_cost = np.array([s.objective for s in test.solutions])
    eta_opt = optimality_loss(model_cost, oracle_cost, feas) if feas.any() else float("nan")
    deltas = deviation_summary(viols, over=delta_over)

    n_time = len(test) if timing_samples is None else min(len(test), int(timing_samples))
    t0 = np.empty(n_time)
    tm = np.empty(n_time)
    for k in range(n_time):
        scen = test.scenarios[k]
        mlp.predict_dispatch(model, net, scen, evaluator=ev)  # warm caches
        t0[k] = _median_time(lambda: solve_opf(net, scen), repeats)
        tm[k] = _median_time(lambda: mlp.predict_dispatch(model, net, scen, evaluator=ev), repeats)
    eta_sp = speedup(t0, tm) if n_time else float("nan")

    report = MetricsReport(
        eta_opt=eta_opt, eta_fea=feasibility_rate(fea_reports),
        delta_pg=deltas[0], delta_qg=deltas[1], delta_v=deltas[2], delta_s=deltas[3],
        t0_ms=float(t0.mean() * 1e3) if n_time else float("nan"),
        tm_ms=float(tm.mean() * 1e3) if n_time else float("nan"),
        eta_sp=eta_sp, n_test=len(test), n_excluded=int((~feas).sum()),
        extra={"pf_failures": int(sum(s.status is not OpfStatus.OPTIMAL for s in preds)),
               "timing_samples": n_time, "tol": tol, "delta_over": delta_over,
               "pg_slack_only": _slack_only(net, viols)},
    )
    return Evaluation(report, preds, viols, feas, t0, tm)


def _as_infeasible(v: ViolationReport) -> ViolationReport:
    return ViolationReport(v.delta_pg, v.delta_qg, v.delta_v, v.delta_s, v.balance, False, v.pg_violators)


def _slack_only(net: Network, viols) -> bool:
    slack_gens = set(np.flatnonzero(net.gen_bus_index == net.slack).tolist())
    return all(set(v.pg_violators) <= slack_gens for v in viols)


# ---------------------------------------------------------------------------
# experiments

@dataclass
class ExperimentSpec:
    """Declarative description of one train/evaluate run.

    ``realistic`` describes the historical fixture: either
    ``{"kind": "hidden_mvn", "n": .., "std_frac": .., "corr": .., "seed_key": ..}``
    or ``{"kind": "csv", "path": ..}``.  ``training.scheme`` is one of
    UNIFORM_INDEP, NORMAL_INDEP, MVN (synthetic, ``n_samples`` draws fitted to
    the realistic set) or REALISTIC (the first half of the realistic set).
    ``testing`` is ``"all"`` or ``"last_half"``.
    """

    name: str
    case: str = "case9"
    seed: int = 0
    realistic: dict = field(default_factory=lambda: {"kind": "hidden_mvn", "n": 2000})
    training: dict = field(default_factory=lambda: {"scheme": "MVN", "n_samples": 20000})
    testing: str = "all"
    train_config: dict = field(default_factory=dict)
    tol: float = 1e-4
    timing_samples: Optional[int] = 200
    delta_over: str = "violated"

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentSpec":
        names = {f.name for f in fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown experiment keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        spec = cls.from_dict(json.loads(Path(path).read_text()))
        base = Path(path).parent
        if not _bundled(spec.case):
            spec.case = str((base / spec.case).resolve()) if not Path(spec.case).is_absolute() else spec.case
        if spec.realistic.get("kind") == "csv" and not Path(spec.realistic["path"]).is_absolute():
            spec.realistic = {**spec.realistic, "path": str((base / spec.realistic["path"]).resolve())}
        return spec

    def digest(self) -> str:
        return config_digest(asdict(self))


def _bundled(name: str) -> bool:
    return not name.endswith(".json") and "/" not in name


def resolve_case(name: str) -> Network:
    if _bundled(name):
        from importlib.resources import files
        return load_case_file(files("gridlearn") / "data" / f"{name}.json")
    return load_case_file(name)


def hidden_mvn(net: Network, std_frac: float = 0.12, corr: float = 0.8) -> sc.DistributionSpec:
    """Stand-in for historical loads: nominal mean, equicorrelated P and Q."""
    p0, q0 = net.nominal_loads()
    mean = np.concatenate([p0, q0])
    dim = mean.size
    c = np.full((dim, dim), corr)
    np.fill_diagonal(c, 1.0)
    sd = std_frac * np.abs(mean)
    return sc.mvn_spec(mean, c * np.outer(sd, sd))


def realistic_scenarios(net: Network, realistic: Mapping, seed: int) -> list[sc.LoadScenario]:
    kind = realistic.get("kind", "hidden_mvn")
    if kind == "hidden_mvn":
        spec = hidden_mvn(net, float(realistic.get("std_frac", 0.12)), float(realistic.get("corr", 0.8)))
        draws = sc.sample(spec, int(realistic.get("n", 2000)),
                          derive_seed(seed, "realistic", realistic.get("seed_key", 0)))
        # tags stand in for timestamps so the chronological split is defined
        return [sc.LoadScenario(s.p_load, s.q_load, i) for i, s in enumerate(draws)]
    if kind == "csv":
        return sc.read_scenarios_csv(realistic["path"], net)
    raise ValueError(f"unknown realistic fixture kind {kind!r}")


class LabelCache:
    """Memoises labeled datasets by content digest within one process."""

    def __init__(self, jobs: int = 1):
        self.jobs = jobs
        self._store: dict[str, sc.LabeledDataset] = {}

    def label(self, key: Any, scenarios, net: Network) -> sc.LabeledDataset:
        k = config_digest(key)
        if k not in self._store:
            self._store[k] = sc.label(scenarios, net, jobs=self.jobs)
        return self._store[k]


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    report: MetricsReport
    evaluation: Evaluation
    history: mlp.TrainHistory
    model: mlp.MlpModel
    test: sc.LabeledDataset


def run_experiment(spec: ExperimentSpec, net: Optional[Network] = None,
                   cache: Optional[LabelCache] = None, jobs: int = 1,
                   models: Optional[dict] = None) -> ExperimentResult:
    """Fit or split, label, train and evaluate according to ``spec``.

    ``models`` (keyed by training digest) lets several specs that differ
    only in their test selection share one trained model.
    """
    cache = cache or LabelCache(jobs)
    try:
        net = net or resolve_case(spec.case)
    except Exception as exc:
        raise StageError("case", exc) from exc

    stage = "realistic"
    try:
        real = realistic_scenarios(net, spec.realistic, spec.seed)
        stage = "label-realistic"
        real_ds = cache.label(("realistic", spec.case, spec.realistic, spec.seed), real, net)
        first, last = sc.split(real_ds, sc.SplitPolicy.FIRST_HALF_TRAIN)
        test = real_ds if spec.testing == "all" else last
        if spec.testing not in ("all", "last_half"):
            raise ValueError(f"unknown test selector {spec.testing!r}")

        scheme = str(spec.training.get("scheme", "MVN")).upper()
        n_train = int(spec.training.get("n_samples", 0))
        if scheme == "REALISTIC":
            train_ds = first
            training = f"{len(first.scenarios)}, realistic"
        else:
            stage = "fit"
            dist = sc.fit(scheme, real_ds.scenarios)
            stage = "sample"
            draws = sc.sample(dist, n_train, derive_seed(spec.seed, "train-samples", scheme))
            stage = "label-train"
            train_ds = cache.label(("train", spec.case, spec.realistic, spec.seed, scheme, n_train), draws, net)
            training = f"{n_train}, synthetic ({scheme})"

        stage = "train"
        cfg = mlp.TrainConfig.from_dict({"seed": derive_seed(spec.seed, "train"), **spec.train_config})
        key = config_digest((spec.case, spec.realistic, spec.seed, spec.training, asdict(cfg)))
        if models is not None and key in models:
            model, hist = models[key]
        else:
            model, hist = mlp.train(train_ds, net, cfg)
            if models is not None:
                models[key] = (model, hist)

        stage = "evaluate"
        ev = evaluate(model, net, test, spec.tol, spec.timing_samples, delta_over=spec.delta_over)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc

    rep = ev.report
    rep.experiment = spec.name
    rep.training = training
    rep.extra.update({"spec_digest": spec.digest(), "n_train_labeled": len(train_ds),
                      "n_train_excluded": len(getattr(train_ds, "excluded", []) or []),
                      "n_realistic_excluded": len(real_ds.excluded or [])})
    return ExperimentResult(spec, rep, ev, hist, model, test)
