"""Command-line interface: ``hlte {simulate,fit,predict,benchmark,diagnose,report}``.

Option values resolve as command-line flag, then ``--config`` JSON, then the
built-in default.  ``--config`` also accepts a run manifest written by an
earlier invocation, which replays that run.  Exit codes: 0 success, 2 usage
error, 3 data error, 4 training failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ConfigError, DomainError, FitError, HlteError, ParseError, UnsupportedKindError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4

DEFAULTS = {
    "simulate": {"family": "synthetic", "scenario": "t+o", "n": 3000, "seed": 0, "gamma_pi": None,
                 "gamma_rho": None, "covariates": None, "mc_draws": 2000, "out": "."},
    "fit": {"learner": "lt-o-do", "data": None, "folds": 5, "seed": 0, "aggregation": "average",
            "weighting": "DO", "optimizer": "adam", "out": ".", "jobs": None},
    "predict": {"model": None, "data": None, "out": "predictions.csv"},
    "benchmark": {"study": "grid", "family": "synthetic", "scenarios": "star,t,o,t+o", "learners": "all",
                  "seeds": 5, "n": 3000, "folds": 5, "n_eval": 2000, "gammas": "0,1,2,3", "runs": 10,
                  "channel": "both", "sizes": "250,500,1000,2000,4000", "scenario": "t+o", "seed": 0,
                  "out": ".", "jobs": None},
    "diagnose": {"check": None, "kind": "lt-o-do", "r": "0.02,0.04,0.08,0.16", "gamma_pi": 2.0,
                 "gamma_rho": 1.0, "n": 100_000, "bins": 20, "seed": 0, "sigma_t_form": "exact", "out": "."},
    "report": {"input": None, "format": "text", "out": None},
}


CHECKS = ("orthogonality", "drvariance", "identities", "oracle")


class UsageError(HlteError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hlte", description="Long-term heterogeneous treatment effect learners.")
    p.add_argument("--version", action="version", version=f"hlte {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    S = argparse.SUPPRESS

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, argument_default=S)
        sp.add_argument("--config", help="JSON config or run manifest")
        return sp

    sp = add("simulate", "generate a synthetic or semi-synthetic dataset")
    sp.add_argument("--family", choices=["synthetic", "semisynthetic"])
    sp.add_argument("--scenario")
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--gamma-pi", dest="gamma_pi", type=float)
    sp.add_argument("--gamma-rho", dest="gamma_rho", type=float)
    sp.add_argument("--covariates", help="CSV of raw covariates with a header (semi-synthetic)")
    sp.add_argument("--mc-draws", dest="mc_draws", type=int)
    sp.add_argument("--out")

    sp = add("fit", "fit one or all learners on a dataset")
    sp.add_argument("--learner")
    sp.add_argument("--data")
    sp.add_argument("--folds", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--aggregation", choices=["average", "pooled"])
    sp.add_argument("--weighting")
    sp.add_argument("--optimizer", choices=["adam", "sgd"])
    sp.add_argument("--out")
    sp.add_argument("--jobs", type=int)

    sp = add("predict", "predict effects with a fitted model")
    sp.add_argument("--model")
    sp.add_argument("--data", help="dataset CSV or covariate CSV with columns x0..")
    sp.add_argument("--out")

    sp = add("benchmark", "run a benchmark grid or study")
    sp.add_argument("--study", choices=["grid", "variance", "nuisance"])
    sp.add_argument("--family", choices=["synthetic", "semisynthetic"])
    sp.add_argument("--scenarios")
    sp.add_argument("--learners")
    sp.add_argument("--seeds", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--n-eval", dest="n_eval", type=int)
    sp.add_argument("--gammas")
    sp.add_argument("--runs", type=int)
    sp.add_argument("--channel", choices=["both", "pi", "rho"])
    sp.add_argument("--sizes")
    sp.add_argument("--scenario")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--jobs", type=int)

    sp = add("diagnose", "orthogonality, DR-variance, identity and oracle checks")
    sp.add_argument("check", nargs="?", choices=CHECKS, default=None)
    sp.add_argument("--kind")
    sp.add_argument("--r")
    sp.add_argument("--gamma-pi", dest="gamma_pi", type=float)
    sp.add_argument("--gamma-rho", dest="gamma_rho", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--bins", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--sigma-t-form", dest="sigma_t_form", choices=["exact", "loose"])
    sp.add_argument("--out")

    sp = add("report", "render or convert a benchmark report")
    sp.add_argument("--input")
    sp.add_argument("--format", choices=["text", "json", "csv"])
    sp.add_argument("--out")
    return p


def _resolve(command: str, ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    # an omitted optional positional comes back as None rather than absent
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config") and v is not None}
    if getattr(ns, "config", None):
        try:
            doc = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from None
        if isinstance(doc, dict) and "command" in doc and "config" in doc:
            if doc["command"] != command:
                raise UsageError(f"manifest is for {doc['command']!r}, not {command!r}")
            doc = doc["config"]
        unknown = set(doc) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(doc)
    cfg.update(flags)
    return cfg


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(command, cfg, artifacts, out_dir, started) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "artifacts": {Path(p).name: {"path": str(p), "sha256": _sha256(p)} for p in artifacts},
        "version": __version__,
        "duration_s": round(time.time() - started, 3),
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _csv_list(text, cast=str):
    return [cast(t.strip()) for t in str(text).split(",") if t.strip()]


def _learners(spec):
    from .learners import LEARNER_KINDS, normalize_kind
    if isinstance(spec, (list, tuple)):
        items = list(spec)
    else:
        items = _csv_list(spec)
    if len(items) == 1 and items[0].lower() == "all":
        return list(LEARNER_KINDS)
    return [normalize_kind(k) for k in items]


# --------------------------------------------------------------------------- commands

def cmd_simulate(cfg):
    from .datamodel import save_csv
    from .simulate import (SCENARIOS, SemiSyntheticConfig, SyntheticConfig, _scenario_key, save_oracle_csv,
                           standin_covariates)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        gp, gr = SCENARIOS[_scenario_key(cfg["scenario"])]
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    gp = gp if cfg["gamma_pi"] is None else float(cfg["gamma_pi"])
    gr = gr if cfg["gamma_rho"] is None else float(cfg["gamma_rho"])
    if cfg["family"] == "synthetic":
        sim = SyntheticConfig(n=int(cfg["n"]), gamma_pi=gp, gamma_rho=gr, seed=int(cfg["seed"]))
    else:
        if cfg["covariates"]:
            cov, cols = _read_table(cfg["covariates"])
            n = int(cfg["n"]) if cfg["n"] and int(cfg["n"]) < cov.shape[0] else None
        else:
            cov, cols = standin_covariates(int(cfg["n"]), rng=int(cfg["seed"]))
            n = None
        sim = SemiSyntheticConfig(covariates=cov, columns=cols, gamma_pi=gp, gamma_rho=gr, seed=int(cfg["seed"]),
                                  mc_draws=int(cfg["mc_draws"]), n=n)
    data, oracle = sim.generate()
    paths = [out / "data.csv", out / "oracle.csv"]
    save_csv(data, paths[0])
    save_oracle_csv(oracle, paths[1])
    return paths


def _read_table(path):
    import csv
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if not header:
            raise ParseError("empty covariate file", row=1)
        rows = []
        for i, rec in enumerate(rd, start=2):
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} fields", row=i)
            try:
                rows.append([float(v) for v in rec])
            except ValueError:
                raise ParseError("malformed number", row=i) from None
    return np.array(rows, dtype=float), tuple(h.strip() for h in header)


def cmd_fit(cfg):
    from .basemodels import second_stage_config
    from .datamodel import load_csv
    from .learners import HLTELearner, crossfit, save_predictions
    from .nuisance import NuisanceConfigs
    from .basemodels import outcome_config, propensity_config
    from .numerics import RngStream

    if not cfg["data"]:
        raise UsageError("fit needs --data")
    if int(cfg["folds"]) < 2:
        raise UsageError("--folds must be at least 2")
    try:
        kinds = _learners(cfg["learner"])
    except UnsupportedKindError as exc:
        raise UsageError(str(exc)) from None
    data = load_csv(cfg["data"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    opt = cfg["optimizer"]
    ncfg = NuisanceConfigs(propensity_config(optimizer=opt), outcome_config(optimizer=opt))
    train = second_stage_config(optimizer=opt)
    seed = RngStream(int(cfg["seed"]))
    shared = crossfit(data, int(cfg["folds"]), ncfg, seed, cfg["jobs"])
    paths = []
    for kind in kinds:
        est = HLTELearner(kind=kind, k_folds=int(cfg["folds"]), train=train, nuisance_configs=ncfg,
                          aggregation=cfg["aggregation"], weighting=cfg["weighting"], random_state=seed,
                          n_jobs=cfg["jobs"]).fit(data, shared)
        tag = kind.lower().replace("_", "-")
        model_path, pred_path = out / f"model_{tag}.json", out / f"predictions_{tag}.csv"
        model_path.write_text(est.to_json() + "\n", encoding="utf-8")
        save_predictions(est.predict(data.x), pred_path)
        paths += [model_path, pred_path]
    return paths


def cmd_predict(cfg):
    from .datamodel import load_csv
    from .learners import HLTELearner, save_predictions
    if not cfg["model"] or not cfg["data"]:
        raise UsageError("predict needs --model and --data")
    try:
        est = HLTELearner.from_json(Path(cfg["model"]).read_text(encoding="utf-8"))
    except (KeyError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed model file: {exc}") from None
    with open(cfg["data"], encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if "r" in header:
        x = load_csv(cfg["data"]).x
    else:
        x, _ = _read_table(cfg["data"])
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_predictions(est.predict(x), out)
    return [out]


def cmd_benchmark(cfg):
    from .evaluation import emit_report, nuisance_error_vs_n, run_benchmark, variance_vs_overlap
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    study = cfg["study"]
    seed = int(cfg["seed"])
    if study == "grid":
        rep = run_benchmark(scenarios=_csv_list(cfg["scenarios"]), learners=_learners(cfg["learners"]),
                            n=int(cfg["n"]), seeds=range(seed, seed + int(cfg["seeds"])), k_folds=int(cfg["folds"]),
                            family=cfg["family"], n_eval=int(cfg["n_eval"]), jobs=cfg["jobs"])
        ok = [v for v in rep.cells.values() if v is not None]
        paths = emit_report(rep, "json", out / "report.json") + emit_report(rep, "csv", out / "report.csv")
        if not ok:
            raise FitError("every benchmark cell failed")
        return paths
    if study == "variance":
        res = variance_vs_overlap(gammas=_csv_list(cfg["gammas"], float), mc_runs=int(cfg["runs"]), n=int(cfg["n"]),
                                  seed=seed, channel=cfg["channel"], k_folds=int(cfg["folds"]), jobs=cfg["jobs"])
        return emit_report(res, "json", out / "variance.json") + emit_report(res, "csv", out / "variance.csv")
    tab = nuisance_error_vs_n(sample_sizes=_csv_list(cfg["sizes"], int), scenario_name=cfg["scenario"],
                              seeds=range(seed, seed + int(cfg["seeds"])), k_folds=int(cfg["folds"]), jobs=cfg["jobs"])
    return emit_report(tab, "json", out / "nuisance.json") + emit_report(tab, "csv", out / "nuisance.csv")


def cmd_diagnose(cfg):
    from .diagnostics import binned_identity_checks, constant_class_oracle, orthogonality_curve
    from .evaluation import dr_variance_diagnostic
    from .learners import ORTHOGONAL_WEIGHTS, normalize_kind
    from .nuisance import oracle_nuisances
    from .simulate import SyntheticConfig
    check = cfg["check"]
    if check not in CHECKS:
        raise UsageError(f"diagnose needs a check, one of {', '.join(CHECKS)}")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    sim = SyntheticConfig(n=int(cfg["n"]), gamma_pi=float(cfg["gamma_pi"]), gamma_rho=float(cfg["gamma_rho"]),
                          seed=int(cfg["seed"]))
    path = out / f"diagnose_{check}.csv"
    if check == "orthogonality":
        kinds = _learners(cfg["kind"])
        rows = []
        for kind in kinds:
            res = orthogonality_curve(kind, _csv_list(cfg["r"], float), cfg=sim, n=int(cfg["n"]), rng=int(cfg["seed"]))
            for r, m in zip(res.r, res.magnitude):
                rows.append((kind, float(r), float(m), res.slope))
            print(f"{kind}: slope {res.slope:.3f}")
        _table(path, ["kind", "r", "magnitude", "slope"], rows)
        return [path]
    data, oracle = sim.generate()
    nv = oracle_nuisances(sim, data)
    if check == "drvariance":
        res = dr_variance_diagnostic(data, nv, bins=int(cfg["bins"]), sigma_t_form=cfg["sigma_t_form"])
        rows = [(r["bin"], r["lo"], r["hi"], r["count"], int(r["retained"]), r["empirical_var"], r["bound"])
                for r in res.to_rows()]
        _table(path, ["bin", "lo", "hi", "count", "retained", "empirical_var", "bound"], rows)
        ratio = res.ratio()[res.retained]
        print(f"retained bins {int(res.retained.sum())}, min empirical/bound {ratio.min():.3f}")
        return [path]
    kinds = [normalize_kind(k) for k in _learners(cfg["kind"])]
    kinds = [k for k in kinds if k in ORTHOGONAL_WEIGHTS]
    if not kinds:
        raise UsageError("identities and oracle checks need LT_O_* kinds")
    rows = []
    for kind in kinds:
        w = ORTHOGONAL_WEIGHTS[kind]
        if check == "identities":
            for name, c in binned_identity_checks(data, nv, oracle.tau, w, bins=int(cfg["bins"])).items():
                rows.append((kind, name, c.pass_rate))
                print(f"{kind} {name}: {c.pass_rate:.3f} of bins within 3 s.e.")
        else:
            res = constant_class_oracle(data, nv, w, cfg=sim, rng=int(cfg["seed"]))
            rows.append((kind, res.estimate, res.stderr, res.target, res.z))
            print(f"{kind}: {res.estimate:.4f} vs {res.target:.4f} (z = {res.z:.2f})")
    header = ["kind", "check", "pass_rate"] if check == "identities" else ["kind", "estimate", "stderr", "target", "z"]
    _table(path, header, rows)
    return [path]


def _table(path, header, rows):
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_report(cfg):
    from .evaluation import BenchmarkReport, emit_report
    if not cfg["input"]:
        raise UsageError("report needs --input")
    try:
        rep = BenchmarkReport.from_dict(json.loads(Path(cfg["input"]).read_text(encoding="utf-8")))
    except (KeyError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed report: {exc}") from None
    if cfg["out"]:
        Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    if cfg["format"] == "text":
        text = rep.table() + "\n"
        if cfg["out"]:
            Path(cfg["out"]).write_text(text, encoding="utf-8")
            return [Path(cfg["out"])]
        sys.stdout.write(text)
        return []
    if not cfg["out"]:
        raise UsageError("json and csv output need --out")
    return emit_report(rep, cfg["format"], cfg["out"])


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict, "benchmark": cmd_benchmark,
            "diagnose": cmd_diagnose, "report": cmd_report}


def main(argv=None) -> int:
    parser = _build_parser()
    started = time.time()
    try:
        ns = parser.parse_args(argv)
        if not ns.command:
            parser.print_help()
            return EXIT_USAGE
        cfg = _resolve(ns.command, ns)
        if cfg.get("jobs") is not None:
            import os
            os.environ["HLTE_JOBS"] = str(cfg["jobs"])
        artifacts = COMMANDS[ns.command](cfg)
        if ns.command in ("simulate", "fit", "benchmark", "diagnose"):
            out_dir = cfg["out"]
        else:
            out_dir = str(Path(artifacts[0]).parent) if artifacts else "."
        _write_manifest(ns.command, cfg, artifacts, out_dir, started)
        return EXIT_OK
    except (UsageError, ConfigError, UnsupportedKindError) as exc:
        print(f"hlte: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FitError as exc:
        where = f" [nuisance={exc.nuisance}, fold={exc.fold}]" if exc.nuisance or exc.fold is not None else ""
        print(f"hlte: training failure{where}: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (ParseError, DomainError, HlteError, OSError) as exc:
        print(f"hlte: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
