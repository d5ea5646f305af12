"""Metrics and experiment drivers.

* :func:`pehe` -- root mean squared effect error;
* :func:`run_benchmark` -- scenario x learner x seed PEHE grid;
* :func:`variance_vs_overlap` -- across-dataset variance of the fitted effect
  along an overlap sweep;
* :func:`nuisance_error_vs_n` -- nuisance MSE and learner PEHE against the
  training-set size;
* :func:`dr_variance_diagnostic` -- binned variance of the DR pseudo-outcome
  against its overlap lower bound.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import weighting as wt
from ._parallel import parallel_map
from .datamodel import CombinedDataset
from .exceptions import ConfigError, DomainError, HlteError
from .learners import LEARNER_KINDS, HLTELearner, crossfit, normalize_kind
from .numerics import RngStream, SummaryStat, as_rng_stream, summarize
from .nuisance import NUISANCE_NAMES, NuisanceValues, evaluate_nuisances, fit_nuisances, oracle_nuisances
from .simulate import SyntheticConfig, scenario, semisynthetic_scenario, standin_covariates

__all__ = [
    "BASELINES",
    "BenchmarkReport",
    "DrVarianceDiagnostic",
    "VarianceStudyResult",
    "dr_variance_diagnostic",
    "emit_report",
    "improvement",
    "mean_overlap",
    "nuisance_error_vs_n",
    "pehe",
    "run_benchmark",
    "variance_vs_overlap",
]

BASELINES = ("LT_T", "LT_RA", "LT_IPW", "LT_O_DR")
OURS = ("LT_O_TO", "LT_O_LO", "LT_O_DO")


def pehe(tau_hat, tau_true) -> float:
    """sqrt(mean((tau_hat - tau_true)**2))."""
    a = np.asarray(tau_hat, dtype=float).ravel()
    b = np.asarray(tau_true, dtype=float).ravel()
    if a.shape != b.shape:
        raise DomainError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise DomainError("pehe needs at least one unit")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# --------------------------------------------------------------------------- scenario factories

def _make_generator(family: str, name: str, n: int, seed: int, n_eval: int = 2000):
    """Config plus a ``(train data, eval x, eval tau)`` factory for one cell."""
    if family == "synthetic":
        cfg = scenario(name, n=n, seed=seed)
        data, _ = cfg.generate()
        x_eval, tau_eval = cfg.evaluation_sample(n_eval, RngStream(seed, 1))
        return data, x_eval, tau_eval
    if family == "semisynthetic":
        cov, cols = standin_covariates(n, rng=RngStream(seed, 2))
        cfg = semisynthetic_scenario(name, covariates=cov, columns=cols, seed=seed)
        data, _ = cfg.generate()
        fresh, _ = standin_covariates(50 * n_eval, rng=RngStream(seed, 3))
        x_eval, tau_eval = cfg.evaluation_sample(n_eval, RngStream(seed, 1), covariates=fresh)
        return data, x_eval, tau_eval
    raise ConfigError(f"unknown data family {family!r}")


# --------------------------------------------------------------------------- benchmark

@dataclass
class BenchmarkReport:
    scenarios: list
    learners: list
    seeds: list
    cells: dict  # (scenario, learner, seed) -> PEHE float, or None when the fit failed
    errors: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def values(self, scenario_name, learner) -> list:
        return [self.cells[(scenario_name, learner, s)] for s in self.seeds
                if self.cells.get((scenario_name, learner, s)) is not None]

    def summary(self, scenario_name, learner) -> Optional[SummaryStat]:
        v = self.values(scenario_name, learner)
        return summarize(v) if v else None

    def mean(self, scenario_name, learner) -> float:
        s = self.summary(scenario_name, learner)
        return float("nan") if s is None else s.mean

    def best(self, scenario_name, pool=None) -> str:
        pool = [k for k in (pool or self.learners) if self.summary(scenario_name, k) is not None]
        return min(pool, key=lambda k: self.mean(scenario_name, k))

    def improvement(self, scenario_name, ours=OURS, baselines=BASELINES) -> float:
        """(best baseline - best of ours) / best baseline on seed-mean PEHE."""
        b = [self.mean(scenario_name, k) for k in baselines if k in self.learners]
        o = [self.mean(scenario_name, k) for k in ours if k in self.learners]
        b, o = np.nanmin(b), np.nanmin(o)
        return float((b - o) / b)

    def to_dict(self) -> dict:
        cells = []
        for sc in self.scenarios:
            for lr in self.learners:
                for sd in self.seeds:
                    v = self.cells.get((sc, lr, sd))
                    cell = {"scenario": sc, "learner": lr, "seed": sd,
                            "status": "ok" if v is not None else "failed"}
                    if v is not None:
                        cell["pehe"] = v
                    else:
                        cell["error"] = self.errors.get((sc, lr, sd), "")
                    cells.append(cell)
        summary = {}
        for sc in self.scenarios:
            summary[sc] = {lr: (self.summary(sc, lr).to_dict() if self.summary(sc, lr) else None)
                           for lr in self.learners}
            try:
                summary[sc]["improvement"] = self.improvement(sc)
            except ValueError:
                summary[sc]["improvement"] = None
        return {"scenarios": list(self.scenarios), "learners": list(self.learners), "seeds": list(self.seeds),
                "config": self.config, "cells": cells, "summary": summary}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        cells, errors = {}, {}
        for c in d["cells"]:
            key = (c["scenario"], c["learner"], c["seed"])
            cells[key] = c.get("pehe") if c["status"] == "ok" else None
            if c["status"] != "ok":
                errors[key] = c.get("error", "")
        return cls(list(d["scenarios"]), list(d["learners"]), list(d["seeds"]), cells, errors,
                   dict(d.get("config", {})))

    def __eq__(self, other):
        if not isinstance(other, BenchmarkReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def table(self) -> str:
        """Plain-text mean +- std table, learners as rows."""
        width = max(len(k) for k in self.learners) + 2
        lines = ["".ljust(width) + "".join(f"{s:>16}" for s in self.scenarios)]
        for lr in self.learners:
            row = lr.ljust(width)
            for sc in self.scenarios:
                s = self.summary(sc, lr)
                row += f"{'failed':>16}" if s is None else f"{s.mean:>9.3f} ± {s.std:<4.2f}"
            lines.append(row)
        return "\n".join(lines)


def _describe(exc) -> str:
    where = [f"{k}={getattr(exc, k)}" for k in ("nuisance", "fold") if getattr(exc, k, None) is not None]
    return f"{type(exc).__name__}: {exc}" + (f" [{', '.join(where)}]" if where else "")


def _benchmark_cell(args):
    family, sc, seed, learners, n, k_folds, nuisance_configs, train, n_eval = args
    data, x_eval, tau_eval = _make_generator(family, sc, n, seed, n_eval)
    out, errors = {}, {}
    try:
        cf = crossfit(data, k_folds, nuisance_configs, RngStream(seed))
    except HlteError as exc:
        return {k: None for k in learners}, {k: _describe(exc) for k in learners}
    for kind in learners:
        try:
            est = HLTELearner(kind=kind, k_folds=k_folds, train=train, nuisance_configs=nuisance_configs,
                              random_state=RngStream(seed)).fit(data, cf)
            out[kind] = pehe(est.predict(x_eval), tau_eval)
        except HlteError as exc:
            out[kind] = None
            errors[kind] = _describe(exc)
    return out, errors


def run_benchmark(scenarios=("star", "t", "o", "t+o"), learners=LEARNER_KINDS, n=3000, seeds=range(5),
                  nuisance_configs=None, train=None, k_folds=5, family="synthetic", n_eval=2000,
                  jobs=None) -> BenchmarkReport:
    """PEHE grid.  All learners of one (scenario, seed) cell share the cross-fit nuisances."""
    scenarios, seeds = list(scenarios), [int(s) for s in seeds]
    learners = [normalize_kind(k) for k in learners]
    if not scenarios or not learners or not seeds:
        raise ConfigError("scenarios, learners and seeds must be non-empty")
    tasks = [(family, sc, sd, learners, n, k_folds, nuisance_configs, train, int(n_eval))
             for sc in scenarios for sd in seeds]
    results = parallel_map(_benchmark_cell, tasks, jobs)
    cells, errors = {}, {}
    for (fam, sc, sd, *_), (out, err) in zip(tasks, results):
        for k in learners:
            cells[(sc, k, sd)] = out[k]
            if k in err:
                errors[(sc, k, sd)] = err[k]
    config = {"family": family, "n": n, "k_folds": k_folds, "n_eval": n_eval,
              "train": None if train is None else train.to_dict(),
              "nuisance": None if nuisance_configs is None else nuisance_configs.to_dict()}
    return BenchmarkReport(scenarios, learners, seeds, cells, errors, config)


def improvement(report: BenchmarkReport, scenario_name: str) -> float:
    return report.improvement(scenario_name)


# --------------------------------------------------------------------------- variance study

def mean_overlap(cfg, n=100_000, rng=0) -> float:
    """Population mean of rho pi (1 - pi) over the covariate distribution."""
    gen = as_rng_stream(rng).substream("overlap").generator()
    x = cfg.sample_covariates(n, gen)
    pi = cfg.pi(x)
    return float(np.mean(cfg.rho(x) * pi * (1 - pi)))


@dataclass
class VarianceStudyResult:
    entries: list  # dicts with gamma, gamma_pi, gamma_rho, overlap, learner, V, runs

    def value(self, gamma, learner) -> float:
        for e in self.entries:
            if e["gamma"] == gamma and e["learner"] == learner:
                return e["V"]
        raise KeyError((gamma, learner))

    @property
    def gammas(self) -> list:
        return sorted({e["gamma"] for e in self.entries})

    def to_dict(self) -> dict:
        return {"entries": self.entries}

    @classmethod
    def from_dict(cls, d: dict) -> "VarianceStudyResult":
        return cls(list(d["entries"]))


def _sweep_config(gamma, channel, gamma_rho_ratio, n, seed):
    if channel == "both":
        return SyntheticConfig(n=n, gamma_pi=gamma, gamma_rho=gamma * gamma_rho_ratio, seed=seed)
    if channel == "pi":
        return SyntheticConfig(n=n, gamma_pi=gamma, gamma_rho=0.0, seed=seed)
    if channel == "rho":
        return SyntheticConfig(n=n, gamma_pi=0.0, gamma_rho=gamma, seed=seed)
    raise ConfigError(f"unknown sweep channel {channel!r}")


def _variance_run(args):
    gamma, run, learners, channel, ratio, n, seed, n_grid, k_folds, nuisance_configs, train = args
    cfg = _sweep_config(gamma, channel, ratio, n, seed)
    grid, _ = cfg.evaluation_sample(n_grid, RngStream(seed, 7))
    stream = RngStream(seed).substream("variance", run)
    data, _ = cfg.generate(rng=stream)
    cf = crossfit(data, k_folds, nuisance_configs, stream)
    preds = {}
    for kind in learners:
        est = HLTELearner(kind=kind, k_folds=k_folds, train=train, nuisance_configs=nuisance_configs,
                          random_state=stream).fit(data, cf)
        preds[kind] = est.predict(grid)
    return preds


def variance_vs_overlap(gammas=(0, 1, 2, 3), learners=("LT_O_DR", "LT_O_DO"), mc_runs=10, n=3000, seed=0,
                        channel="both", gamma_rho_ratio=0.5, n_grid=1000, k_folds=5, nuisance_configs=None,
                        train=None, jobs=None) -> VarianceStudyResult:
    """V = mean over a fixed covariate grid of the across-run variance of the fitted effect."""
    gammas = [float(g) for g in gammas]
    if len(gammas) < 2:
        raise ConfigError("need at least two gamma values")
    if int(mc_runs) < 2:
        raise ConfigError("variance needs at least two Monte-Carlo runs")
    learners = [normalize_kind(k) for k in learners]
    tasks = [(g, run, learners, channel, gamma_rho_ratio, n, seed, n_grid, k_folds, nuisance_configs, train)
             for g in gammas for run in range(int(mc_runs))]
    results = parallel_map(_variance_run, tasks, jobs)
    entries = []
    for g in gammas:
        runs = [res for t, res in zip(tasks, results) if t[0] == g]
        cfg = _sweep_config(g, channel, gamma_rho_ratio, n, seed)
        ov = mean_overlap(cfg, rng=seed)
        for kind in learners:
            stack = np.vstack([r[kind] for r in runs])
            entries.append({"gamma": g, "gamma_pi": cfg.gamma_pi, "gamma_rho": cfg.gamma_rho, "overlap": ov,
                            "learner": kind, "V": float(stack.var(axis=0, ddof=1).mean()), "runs": len(runs)})
    return VarianceStudyResult(entries)


# --------------------------------------------------------------------------- nuisance error vs n

def _nuisance_cell(args):
    n, sc, seed, learners, n_test, k_folds, nuisance_configs, train = args
    cfg = scenario(sc, n=n, seed=seed)
    data, _ = cfg.generate()
    fresh, _ = cfg.generate(n=n_test, rng=RngStream(seed, 5))
    nset = fit_nuisances(data, None, nuisance_configs, RngStream(seed).substream("nuisance", "full"))
    est_nv = evaluate_nuisances(nset, fresh)
    true_nv = oracle_nuisances(cfg, fresh)
    mse = {k: float(np.mean((getattr(est_nv, k) - getattr(true_nv, k)) ** 2)) for k in NUISANCE_NAMES}
    x_eval, tau_eval = cfg.evaluation_sample(n_test, RngStream(seed, 1))
    cf = crossfit(data, k_folds, nuisance_configs, RngStream(seed))
    scores = {}
    for kind in learners:
        est = HLTELearner(kind=kind, k_folds=k_folds, train=train, nuisance_configs=nuisance_configs,
                          random_state=RngStream(seed)).fit(data, cf)
        scores[kind] = pehe(est.predict(x_eval), tau_eval)
    return mse, scores


def nuisance_error_vs_n(sample_sizes=(250, 500, 1000, 2000, 4000), scenario_name="t+o", seeds=range(3),
                        learners=("LT_O_DO", "W_DR", "W_RA"), n_test=2000, k_folds=5, nuisance_configs=None,
                        train=None, jobs=None) -> dict:
    """Returns ``{"rows": [...], "pehe": [...], "mse": [...]}`` tables."""
    sizes = [int(s) for s in sample_sizes]
    if len(sizes) < 2:
        raise ConfigError("need at least two sample sizes")
    seeds = [int(s) for s in seeds]
    learners = [normalize_kind(k) for k in learners]
    tasks = [(n, scenario_name, sd, learners, n_test, k_folds, nuisance_configs, train) for n in sizes for sd in seeds]
    results = parallel_map(_nuisance_cell, tasks, jobs)
    rows = []
    for t, (mse, scores) in zip(tasks, results):
        rows.append({"n": t[0], "seed": t[2], "mse": mse, "pehe": scores})
    pehe_tab, mse_tab = [], []
    for n in sizes:
        sub = [r for r in rows if r["n"] == n]
        for k in learners:
            s = summarize([r["pehe"][k] for r in sub])
            pehe_tab.append({"n": n, "learner": k, "pehe_mean": s.mean, "pehe_std": s.std})
        for k in NUISANCE_NAMES:
            mse_tab.append({"n": n, "nuisance": k, "mse_mean": float(np.mean([r["mse"][k] for r in sub]))})
    return {"rows": rows, "pehe": pehe_tab, "mse": mse_tab}


# --------------------------------------------------------------------------- DR variance bound

@dataclass
class DrVarianceDiagnostic:
    edges: np.ndarray
    counts: np.ndarray
    empirical: np.ndarray  # NaN for dropped bins
    bound: np.ndarray
    retained: np.ndarray

    def ratio(self) -> np.ndarray:
        return self.empirical / self.bound

    def to_rows(self) -> list:
        rows = []
        for i in range(self.counts.shape[0]):
            rows.append({"bin": i, "lo": float(self.edges[i]), "hi": float(self.edges[i + 1]),
                         "count": int(self.counts[i]), "retained": bool(self.retained[i]),
                         "empirical_var": float(self.empirical[i]), "bound": float(self.bound[i])})
        return rows


def quantile_bins(score, bins):
    """Equal-frequency bin labels for ``score``."""
    edges = np.quantile(score, np.linspace(0, 1, int(bins) + 1))
    labels = np.clip(np.searchsorted(edges, score, side="right") - 1, 0, int(bins) - 1)
    return edges, labels


def dr_variance_diagnostic(data: CombinedDataset, nv: NuisanceValues, bins=20, min_count=10,
                           projection=None, sigma_t_form="exact") -> DrVarianceDiagnostic:
    """Binned Var(T_DR) against (1 - rho) Sigma_t + rho Sigma_o.

    ``nv`` should hold true nuisances.  Conditional variances are plug-in
    estimates within each bin: residual variance of ``h - mu_A`` over
    experimental units and of ``Y - h`` over observational units.  With
    ``sigma_t_form="exact"`` the treatment term carries the factor
    ``((A - pi) / (pi (1 - pi)))**2``; ``"loose"`` uses ``(1 / (pi (1 - pi)))**2``.
    """
    if sigma_t_form not in ("exact", "loose"):
        raise ConfigError("sigma_t_form must be 'exact' or 'loose'")
    score = data.x[:, 0] + data.x[:, 1] if projection is None else np.asarray(projection, dtype=float)
    units = (data.r.astype(float), data.a, data.y)
    t_dr = wt.dr_pseudo_outcome(units, nv)
    exp = data.r == 0
    a0 = np.where(exp, data.a, 0.0)
    pq = nv.pi * (1 - nv.pi)
    w_t = ((a0 - nv.pi) / pq) ** 2 if sigma_t_form == "exact" else 1.0 / pq ** 2
    with np.errstate(invalid="ignore"):
        w_o = ((1 - nv.rho_s) / nv.rho_s * (nv.pi_s - nv.pi) / pq) ** 2
        resid_h = nv.h - np.where(a0 == 1, nv.mu1, nv.mu0)
        resid_y = data.y - nv.h
    edges, labels = quantile_bins(score, bins)
    k = int(bins)
    counts = np.bincount(labels, minlength=k)
    emp, bnd, keep = np.full(k, np.nan), np.full(k, np.nan), np.zeros(k, bool)
    for b in range(k):
        m = labels == b
        m0, m1 = m & exp, m & ~exp
        if m.sum() < min_count or m0.sum() < 2 or m1.sum() < 2:
            continue
        sig_h = resid_h[m0].var(ddof=1)
        sig_y = resid_y[m1].var(ddof=1)
        per_unit = np.where(exp, w_t * sig_h, w_o * sig_y)[m]
        emp[b] = t_dr[m].var(ddof=1)
        bnd[b] = per_unit.mean()
        keep[b] = True
    return DrVarianceDiagnostic(edges, counts, emp, bnd, keep)


# --------------------------------------------------------------------------- serialization

def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([repr(v) if isinstance(v, float) else v for v in row])


def emit_report(report, fmt: str, path) -> list:
    """Write ``report`` as JSON or CSV; returns the paths written.

    Benchmark CSV is long format ``scenario,learner,seed,pehe`` (failed cells
    have an empty ``pehe`` and status ``failed``).  Variance studies write
    ``gamma,overlap,learner,V``; nuisance studies write
    ``n,learner,pehe_mean,pehe_std`` and a sibling ``*_mse.csv`` with
    ``n,nuisance,mse_mean``.
    """
    path = Path(path)
    if fmt not in ("json", "csv"):
        raise ConfigError(f"unknown report format {fmt!r}")
    if isinstance(report, BenchmarkReport):
        doc = report.to_dict()
    elif isinstance(report, VarianceStudyResult):
        doc = report.to_dict()
    elif isinstance(report, dict):
        doc = report
    else:
        raise DomainError(f"cannot serialize {type(report).__name__}")
    if fmt == "json":
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return [path]
    if isinstance(report, BenchmarkReport):
        rows = [(c["scenario"], c["learner"], c["seed"], c.get("pehe", ""), c["status"]) for c in doc["cells"]]
        _write_csv(path, ["scenario", "learner", "seed", "pehe", "status"], rows)
        return [path]
    if isinstance(report, VarianceStudyResult):
        rows = [(e["gamma"], e["overlap"], e["learner"], e["V"]) for e in report.entries]
        _write_csv(path, ["gamma", "overlap", "learner", "V"], rows)
        return [path]
    if "pehe" in doc and "mse" in doc:
        _write_csv(path, ["n", "learner", "pehe_mean", "pehe_std"],
                   [(r["n"], r["learner"], r["pehe_mean"], r["pehe_std"]) for r in doc["pehe"]])
        mse_path = path.with_name(path.stem + "_mse.csv")
        _write_csv(mse_path, ["n", "nuisance", "mse_mean"],
                   [(r["n"], r["nuisance"], r["mse_mean"]) for r in doc["mse"]])
        return [path, mse_path]
    raise DomainError("dict reports must be nuisance-study tables")
