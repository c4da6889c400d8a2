"""``gridlearn`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import acopf, caseprep, evalharness as eh, geoassign as geo, mlp, powerflow as pf
from . import scenarios as sc
from .netmodel import CaseFormatError, CaseValidationError, Network, load_case, parse_case, save_case, validate
from .seeding import ENV_SEED, config_digest, resolve_seed

log = logging.getLogger("gridlearn")


class CliError(RuntimeError):
    """Stage failure reported with exit status 1."""


def _case(path) -> Network:
    if path is None:
        raise CliError("--case is required")
    if eh._bundled(str(path)) and not Path(path).exists():
        return eh.resolve_case(str(path))
    return load_case(Path(path).read_text())


def _banner(args, config) -> int:
    seed = resolve_seed(getattr(args, "seed", None))
    print(f"# seed={seed} config={config_digest(config)}", file=sys.stderr)
    return seed


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# case

def cmd_case_validate(args) -> int:
    _banner(args, {"cmd": "case validate", "case": args.case})
    try:
        net = parse_case(Path(args.case).read_text())
    except CaseFormatError as exc:
        print(f"{args.case}: {exc}")
        return 1
    problems = validate(net)
    for p in problems:
        print(f"{args.case}: {p}")
    if not problems:
        print(f"{args.case}: ok ({net.n_bus} buses, {len(net.generators)} generators, "
              f"{len(net.branches)} branches)")
    return 1 if problems else 0


def cmd_case_prep(args) -> int:
    cfg = caseprep.CaseprepConfig.load(args.caseprep_config) if args.caseprep_config else caseprep.CaseprepConfig()
    _banner(args, {"cmd": "case prep", "case": args.case, "config": asdict(cfg)})
    net = _case(args.case)
    scen = sc.read_scenarios_csv(args.loads, net) if args.loads else None
    out, short = caseprep.prepare_case(net, cfg, scen, jobs=args.jobs)
    for k in short:
        print(f"warning: branch {k} limit is below its observed maximum flow", file=sys.stderr)
    Path(args.out).write_text(save_case(out))
    return 0


# ---------------------------------------------------------------------------
# geo

def cmd_geo_assign(args) -> int:
    _banner(args, {"cmd": "geo assign", "layout": args.layout, "loads": args.loads,
                   "window": args.window})
    loads = geo.read_load_csv(args.loads)
    sites = None
    if args.case:
        net = _case(args.case)
        sites = {net.buses[i].id: net.buses[i].coord for i in net.pq if net.buses[i].coord is not None}
    layout = geo.read_layout(args.layout, loads, sites)
    if not layout.sites:
        raise CliError("layout has no bus sites (add Point features or pass --case with coordinates)")
    series = geo.assign_series(layout)
    if args.window > 1:
        ts = series.timestamps[args.window // 2: len(series) - args.window // 2]
        series = geo.LoadSeries(ts, {k: geo.smooth(v, args.window) for k, v in series.p.items()},
                                {k: geo.smooth(v, args.window) for k, v in series.q.items()})
    geo.write_load_csv(args.out, series)
    return 0


# ---------------------------------------------------------------------------
# pf / opf

def _read_setpoint(path, net) -> pf.PfSetpoint:
    doc = json.loads(Path(path).read_text())
    v = np.asarray(doc["v_set"], dtype=float)
    p = np.asarray(doc.get("p_set_mw", []), dtype=float) / net.base_mva if "p_set_mw" in doc \
        else np.asarray(doc["p_set"], dtype=float)
    if v.size != len(net.gen_buses) or p.size != len(net.pv):
        raise CliError(f"setpoint needs {len(net.gen_buses)} voltages and {len(net.pv)} active powers")
    return pf.PfSetpoint(v, p)


def cmd_pf(args) -> int:
    _banner(args, {"cmd": "pf", "case": args.case, "loads": args.loads, "setpoint": args.setpoint,
                   "tol": args.tol, "max_iter": args.max_iter})
    net = _case(args.case)
    scen = sc.read_scenarios_csv(args.loads, net)
    sp = _read_setpoint(args.setpoint, net)
    opts = pf.PfOptions(tol=args.tol, max_iter=args.max_iter)
    out = []
    for s in scen:
        try:
            sol = pf.solve_pf(net, s, sp, opts=opts)
        except pf.SingularJacobianError as exc:
            raise CliError(f"pf: {exc}") from exc
        out.append({"tag": s.tag, "converged": sol.converged, "iterations": sol.iterations,
                    "mismatch": sol.mismatch, "v_mag": sol.v_mag.tolist(), "theta": sol.theta.tolist(),
                    "p_slack": sol.p_slack, "q_gen": sol.q_gen.tolist()})
    _write_json(args.out, out[0] if len(out) == 1 else out)
    return 0 if all(o["converged"] for o in out) else 1


def _warm(path, net, n):
    if not path:
        return None
    doc = json.loads(Path(path).read_text())
    if "p_gen" in doc and "v_mag" in doc:
        return acopf.DispatchSolution.from_dict(doc)
    arr = np.asarray(doc.get("p_gen_mw", doc.get("p_gen")), dtype=float)
    return np.broadcast_to(arr / (net.base_mva if "p_gen_mw" in doc else 1.0), (n, len(net.generators)))


def cmd_opf(args) -> int:
    _banner(args, {"cmd": "opf", "mode": args.mode, "case": args.case, "loads": args.loads,
                   "warm": args.warm})
    net = _case(args.case)
    scen = sc.read_scenarios_csv(args.loads, net)
    warm = _warm(args.warm, net, len(scen))
    if args.mode == "batch":
        fh = sys.stdout if args.out in (None, "-") else open(args.out, "w")
        try:
            p, q = sc.stack(scen)
            bs = 256
            for lo in range(0, len(scen), bs):
                w = warm[lo:lo + bs] if isinstance(warm, np.ndarray) else warm
                for k, sol in enumerate(acopf.solve_opf_batch(net, p[lo:lo + bs], q[lo:lo + bs], w)):
                    d = sol.to_dict()
                    d.pop("duals", None)
                    fh.write(json.dumps({"index": lo + k, "tag": scen[lo + k].tag, **d}) + "\n")
                fh.flush()
        finally:
            if fh is not sys.stdout:
                fh.close()
        return 0
    if len(scen) != 1:
        raise CliError(f"opf expects one scenario, got {len(scen)}; use 'opf batch'")
    w = warm[0] if isinstance(warm, np.ndarray) else warm
    sol = acopf.solve_opf(net, scen[0], w)
    d = sol.to_dict()  # duals kept so the file can serve as a --warm start
    _write_json(args.out, d)
    return 0 if sol.status is acopf.OpfStatus.OPTIMAL else 1


# ---------------------------------------------------------------------------
# scenarios

def cmd_scen_fit(args) -> int:
    _banner(args, {"cmd": "scenarios fit", "family": args.family, "historical": args.historical})
    net = _case(args.case)
    spec = sc.fit(args.family, sc.read_scenarios_csv(args.historical, net))
    Path(args.out).write_text(spec.to_json())
    return 0


def cmd_scen_sample(args) -> int:
    seed = _banner(args, {"cmd": "scenarios sample", "spec": args.spec, "n": args.n})
    net = _case(args.case)
    spec = sc.DistributionSpec.from_json(Path(args.spec).read_text())
    sc.write_scenarios_csv(args.out, net, sc.sample(spec, args.n, seed))
    return 0


def cmd_scen_label(args) -> int:
    _banner(args, {"cmd": "scenarios label", "case": args.case, "scenarios": args.scenarios})
    net = _case(args.case)
    scen = sc.read_scenarios_csv(args.scenarios, net)
    ds = sc.label(scen, net, jobs=args.jobs)
    sc.write_dataset_jsonl(args.out, ds)
    print(f"labeled {len(ds)} of {len(scen)}; excluded {len(ds.excluded)}", file=sys.stderr)
    return 0


def cmd_scen_split(args) -> int:
    _banner(args, {"cmd": "scenarios split", "dataset": args.dataset, "policy": args.policy})
    ds = sc.read_dataset_jsonl(args.dataset)
    train, test = sc.split(ds, args.policy)
    sc.write_dataset_jsonl(args.train_out, train)
    sc.write_dataset_jsonl(args.test_out, test)
    print(f"train {len(train)} test {len(test)}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# learning

def cmd_train(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    seed = _banner(args, {"cmd": "train", "case": args.case, "dataset": args.dataset, "config": raw})
    if os.environ.get(ENV_SEED) or "seed" not in raw:
        raw["seed"] = seed
    cfg = mlp.TrainConfig.from_dict(raw)
    net = _case(args.case)
    ds = sc.read_dataset_jsonl(args.dataset)

    def progress(epoch, hist):
        if args.verbose:
            print(f"epoch {epoch}: pred {hist.pred_loss[-1]:.3e} pen {hist.penalty_loss[-1]:.3e}",
                  file=sys.stderr)

    model, hist = mlp.train(ds, net, cfg, log=progress)
    mlp.save_model(args.out_model, model)
    if args.history_out:
        _write_json(args.history_out, asdict(hist))
    if args.figures:
        from . import plotting
        plotting.plot_history(hist, Path(args.figures) / "training_history.png")
    return 0


def cmd_predict(args) -> int:
    _banner(args, {"cmd": "predict", "model": args.model, "case": args.case, "loads": args.loads})
    net = _case(args.case)
    model = mlp.load_model(args.model)
    scen = sc.read_scenarios_csv(args.loads, net)
    p, q = sc.stack(scen)
    preds = mlp.predict_batch(model, net, p, q)
    fh = sys.stdout if args.out in (None, "-") else open(args.out, "w")
    try:
        for s, sol in zip(scen, preds):
            rep = acopf.check_feasibility(net, sol, args.tol)
            d = sol.to_dict()
            d.pop("duals", None)
            d["feasible"] = bool(rep.feasible and sol.status is acopf.OpfStatus.OPTIMAL)
            fh.write(json.dumps({"tag": s.tag, **d}) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _figures(ev: eh.Evaluation, test, outdir, stem, hist=None):
    from . import plotting
    outdir = Path(outdir)
    paths = [
        plotting.plot_cost_scatter([s.objective for s in ev.predictions], [s.objective for s in test.solutions],
                                   ev.feasible, outdir / f"{stem}_cost.png", stem),
        plotting.plot_violations(ev.violations, outdir / f"{stem}_violations.png", stem),
    ]
    if hist is not None:
        paths.append(plotting.plot_history(hist, outdir / f"{stem}_history.png", stem))
    return paths


def cmd_eval(args) -> int:
    _banner(args, {"cmd": "eval", "model": args.model, "case": args.case, "test": args.test,
                   "tol": args.tol, "timing": args.timing_samples})
    net = _case(args.case)
    model = mlp.load_model(args.model)
    test = sc.read_dataset_jsonl(args.test)
    ev = eh.evaluate(model, net, test, args.tol, args.timing_samples, delta_over=args.delta_over)
    Path(args.out).write_text(ev.report.to_json() + "\n")
    sys.stdout.write(eh.reports_to_csv([ev.report]))
    if args.figures:
        _figures(ev, test, args.figures, Path(args.out).stem)
    return 0


def cmd_experiment_run(args) -> int:
    specs = [eh.ExperimentSpec.load(p) for p in args.spec]
    seed_override = os.environ.get(ENV_SEED)
    if args.seed is not None or seed_override:
        s = resolve_seed(args.seed)
        for sp in specs:
            sp.seed = s
    _banner(args, {"cmd": "experiment run", "specs": [asdict(s) for s in specs]})
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    cache = eh.LabelCache(args.jobs)
    models: dict = {}
    reports = []
    for sp in specs:
        print(f"# experiment {sp.name} spec={sp.digest()}", file=sys.stderr)
        res = eh.run_experiment(sp, cache=cache, jobs=args.jobs, models=models)
        reports.append(res.report)
        (outdir / f"{sp.name}.json").write_text(res.report.to_json() + "\n")
        if args.save_models:
            mlp.save_model(outdir / f"{sp.name}.model", res.model)
        if not args.no_figures:
            _figures(res.evaluation, res.test, outdir, sp.name, res.history)
    table = eh.reports_to_csv(reports)
    (outdir / "table.csv").write_text(table)
    sys.stdout.write(table)
    if not args.no_figures and len(reports) > 1:
        from . import plotting
        plotting.plot_metrics(reports, outdir / "metrics.png")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridlearn", description="AC-OPF learning toolkit")
    ap.add_argument("--seed", type=int, default=None,
                    help=f"root seed (the {ENV_SEED} environment variable takes precedence)")
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    ap.add_argument("-v", "--verbose", action="store_true")
    # the same flags are accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    case = sub.add_parser("case", help="case documents").add_subparsers(dest="action", required=True)
    p = case.add_parser("validate", parents=[common])
    p.add_argument("--case", required=True)
    p.set_defaults(func=cmd_case_validate)
    p = case.add_parser("prep", parents=[common])
    p.add_argument("--case", required=True)
    p.add_argument("--caseprep-config")
    p.add_argument("--loads", help="scenario CSV used for relaxed-limit flow harvesting")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_case_prep)

    g = sub.add_parser("geo", help="geographic load assignment").add_subparsers(dest="action", required=True)
    p = g.add_parser("assign", parents=[common])
    p.add_argument("--layout", required=True)
    p.add_argument("--loads", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--case", help="take PQ bus sites from case coordinates")
    p.add_argument("--window", type=int, default=1, help="centered smoothing window (odd)")
    p.set_defaults(func=cmd_geo_assign)

    p = sub.add_parser("pf", parents=[common], help="Newton power flow")
    p.add_argument("--case", required=True)
    p.add_argument("--loads", required=True)
    p.add_argument("--setpoint", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=30)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pf)

    p = sub.add_parser("opf", parents=[common], help="interior-point AC-OPF")
    p.add_argument("mode", nargs="?", choices=["single", "batch"], default="single")
    p.add_argument("--case", required=True)
    p.add_argument("--loads", required=True)
    p.add_argument("--warm")
    p.add_argument("--out")
    p.set_defaults(func=cmd_opf)

    s = sub.add_parser("scenarios", help="load scenarios").add_subparsers(dest="action", required=True)
    p = s.add_parser("fit", parents=[common])
    p.add_argument("--case", required=True)
    p.add_argument("--family", required=True, choices=[f.value for f in sc.Family])
    p.add_argument("--historical", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scen_fit)
    p = s.add_parser("sample", parents=[common])
    p.add_argument("--case", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scen_sample)
    p = s.add_parser("label", parents=[common])
    p.add_argument("--case", required=True)
    p.add_argument("--scenarios", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scen_label)
    p = s.add_parser("split", parents=[common])
    p.add_argument("--dataset", required=True)
    p.add_argument("--policy", choices=[x.value for x in sc.SplitPolicy], default="FIRST_HALF_TRAIN")
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.set_defaults(func=cmd_scen_split)

    p = sub.add_parser("train", parents=[common], help="train a dispatch predictor")
    p.add_argument("--case", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--out-model", required=True)
    p.add_argument("--history-out")
    p.add_argument("--figures", help="directory for training-curve figures")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict dispatches")
    p.add_argument("--model", required=True)
    p.add_argument("--case", required=True)
    p.add_argument("--loads", required=True)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="score a model on a labeled test set")
    p.add_argument("--model", required=True)
    p.add_argument("--case", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--timing-samples", type=int, default=200)
    p.add_argument("--delta-over", choices=["violated", "all"], default="violated")
    p.add_argument("--figures", help="directory for report figures")
    p.set_defaults(func=cmd_eval)

    e = sub.add_parser("experiment", help="declarative experiments").add_subparsers(dest="action", required=True)
    p = e.add_parser("run", parents=[common])
    p.add_argument("--spec", required=True, action="append", help="experiment JSON (repeatable)")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--save-models", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_experiment_run)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except (CliError, CaseFormatError, CaseValidationError, eh.StageError, ValueError, KeyError,
            FileNotFoundError) as exc:
        print(f"gridlearn {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
