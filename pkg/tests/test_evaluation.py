import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hlte import basemodels
from hlte.evaluation import (BenchmarkReport, VarianceStudyResult, dr_variance_diagnostic, emit_report,
                             mean_overlap, nuisance_error_vs_n, pehe, run_benchmark, variance_vs_overlap)
from hlte.exceptions import ConfigError, DomainError
from hlte.nuisance import NUISANCE_NAMES, NuisanceConfigs, oracle_nuisances
from hlte.simulate import SyntheticConfig

FAST_NUIS = NuisanceConfigs(basemodels.propensity_config(epochs=3), basemodels.outcome_config(epochs=3))
FAST_TRAIN = basemodels.second_stage_config(epochs=3)


def test_pehe_examples():
    t = np.array([0.3, -1.0, 2.0])
    assert pehe(t, t) == 0.0
    assert pehe(t + 1, t) == pytest.approx(1.0)
    assert pehe([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5))
    with pytest.raises(DomainError):
        pehe([1, 2], [1])
    with pytest.raises(DomainError):
        pehe([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.floats(-50, 50))
def test_pehe_detects_translation(tau, c):
    tau = np.array(tau)
    assert pehe(tau + c, tau) == pytest.approx(abs(c), abs=1e-9)


@pytest.fixture(scope="module")
def small_report():
    return run_benchmark(scenarios=("star", "t+o"), learners=("LT_T", "LT_O_DO"), n=400, seeds=(0, 1),
                         nuisance_configs=FAST_NUIS, train=FAST_TRAIN, k_folds=2, n_eval=200, jobs=1)


def test_benchmark_shape_and_improvement(small_report):
    r = small_report
    assert all(v is not None and v >= 0 for v in r.cells.values())
    assert len(r.cells) == 2 * 2 * 2
    for sc in r.scenarios:
        for lr in r.learners:
            assert r.summary(sc, lr).n == 2
    imp = r.improvement("t+o", ours=("LT_O_DO",), baselines=("LT_T",))
    b, o = r.mean("t+o", "LT_T"), r.mean("t+o", "LT_O_DO")
    assert imp == pytest.approx((b - o) / b)
    assert "LT_O_DO" in r.table()


def test_benchmark_deterministic_json(small_report, tmp_path):
    again = run_benchmark(scenarios=("star", "t+o"), learners=("LT_T", "LT_O_DO"), n=400, seeds=(0, 1),
                          nuisance_configs=FAST_NUIS, train=FAST_TRAIN, k_folds=2, n_eval=200, jobs=1)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    emit_report(small_report, "json", p1)
    emit_report(again, "json", p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_benchmark_parallel_matches_serial(small_report):
    par = run_benchmark(scenarios=("star", "t+o"), learners=("LT_T", "LT_O_DO"), n=400, seeds=(0, 1),
                        nuisance_configs=FAST_NUIS, train=FAST_TRAIN, k_folds=2, n_eval=200, jobs=2)
    assert par == small_report


def test_report_json_round_trip(small_report, tmp_path):
    p = tmp_path / "r.json"
    emit_report(small_report, "json", p)
    back = BenchmarkReport.from_dict(json.loads(p.read_text()))
    assert back == small_report


def test_report_csv_rows(small_report, tmp_path):
    p = tmp_path / "r.csv"
    emit_report(small_report, "csv", p)
    rows = list(csv.DictReader(p.open()))
    assert len(rows) == 2 * 2 * 2
    assert list(rows[0])[:4] == ["scenario", "learner", "seed", "pehe"]
    assert float(rows[0]["pehe"]) == small_report.cells[(rows[0]["scenario"], rows[0]["learner"], 0)]


def test_failed_cells_serialized(tmp_path):
    cells = {("t", "LT_T", 0): 0.5, ("t", "LT_T", 1): None}
    rep = BenchmarkReport(["t"], ["LT_T"], [0, 1], cells, {("t", "LT_T", 1): "FitError: boom"})
    assert rep.values("t", "LT_T") == [0.5]
    d = rep.to_dict()
    failed = [c for c in d["cells"] if c["status"] == "failed"]
    assert len(failed) == 1 and "pehe" not in failed[0]
    p = tmp_path / "f.csv"
    emit_report(rep, "csv", p)
    rows = list(csv.DictReader(p.open()))
    assert rows[1]["pehe"] == "" and rows[1]["status"] == "failed"
    assert BenchmarkReport.from_dict(d) == rep
    assert "failed" in BenchmarkReport(["t"], ["LT_T"], [1], {("t", "LT_T", 1): None}).table()


def test_benchmark_records_failures_and_continues():
    # the outcome nets diverge under an absurd learning rate; the grid still completes
    bad = NuisanceConfigs(basemodels.propensity_config(epochs=3),
                          basemodels.outcome_config(epochs=20, optimizer="sgd", learning_rate=1e3))
    rep = run_benchmark(scenarios=("t",), learners=("LT_T",), n=200, seeds=(0,), nuisance_configs=bad,
                        train=FAST_TRAIN, k_folds=2, n_eval=50, jobs=1)
    assert rep.cells[("t", "LT_T", 0)] is None
    msg = rep.errors[("t", "LT_T", 0)]
    assert msg.startswith("TrainingDivergedError") and "nuisance=" in msg and "fold=" in msg


def test_benchmark_bad_inputs():
    with pytest.raises(ConfigError):
        run_benchmark(scenarios=(), n=100)
    with pytest.raises(ConfigError):
        run_benchmark(scenarios=("t",), learners=("LT_T",), n=100, seeds=(0,), family="real")


def test_emit_report_format_errors(small_report, tmp_path):
    with pytest.raises(ConfigError):
        emit_report(small_report, "xml", tmp_path / "x")
    with pytest.raises(DomainError):
        emit_report(3.0, "json", tmp_path / "x")


def test_variance_study_errors():
    with pytest.raises(ConfigError):
        variance_vs_overlap(gammas=(0, 1), mc_runs=1)
    with pytest.raises(ConfigError):
        variance_vs_overlap(gammas=(0,), mc_runs=3)
    with pytest.raises(ConfigError):
        variance_vs_overlap(gammas=(0, 1), mc_runs=2, channel="x", n=100)


def test_variance_study_small(tmp_path):
    res = variance_vs_overlap(gammas=(0, 2), learners=("LT_O_DR", "LT_O_DO"), mc_runs=2, n=300, n_grid=50,
                              k_folds=2, nuisance_configs=FAST_NUIS, train=FAST_TRAIN, jobs=1)
    assert res.gammas == [0.0, 2.0]
    assert len(res.entries) == 4
    assert all(e["runs"] == 2 and e["V"] >= 0 for e in res.entries)
    assert res.entries[2]["gamma_rho"] == 1.0
    with pytest.raises(KeyError):
        res.value(5.0, "LT_O_DR")
    p = tmp_path / "v.csv"
    emit_report(res, "csv", p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == ["gamma", "overlap", "learner", "V"] and len(rows) == 5
    assert VarianceStudyResult.from_dict(json.loads(json.dumps(res.to_dict()))).entries == res.entries


def test_mean_overlap_matches_direct_average():
    cfg = SyntheticConfig(gamma_pi=2.0, gamma_rho=1.0)
    gen = np.random.default_rng(4)
    x = cfg.sample_covariates(400_000, gen)
    pi = cfg.pi(x)
    direct = np.mean(cfg.rho(x) * pi * (1 - pi))
    assert mean_overlap(cfg) == pytest.approx(direct, abs=2e-3)


def test_treatment_overlap_decreases_along_pi_sweep():
    vals = []
    for g in (0, 1, 2, 3):
        cfg = SyntheticConfig(gamma_pi=g, gamma_rho=0.0)
        x = cfg.sample_covariates(100_000, np.random.default_rng(0))
        vals.append(np.mean(cfg.pi(x) * (1 - cfg.pi(x))))
    assert np.all(np.diff(vals) < 0)


@pytest.fixture(scope="module")
def nuisance_study():
    return nuisance_error_vs_n(sample_sizes=(250, 4000), scenario_name="t+o", seeds=(0, 1), n_test=1000, jobs=1)


def test_nuisance_study(nuisance_study, tmp_path):
    mse = {(r["n"], r["nuisance"]): r["mse_mean"] for r in nuisance_study["mse"]}
    assert all(v >= 0 for v in mse.values())
    for k in NUISANCE_NAMES:
        assert mse[(4000, k)] < mse[(250, k)], k
    p = tmp_path / "n.csv"
    paths = emit_report(nuisance_study, "csv", p)
    assert [q.name for q in paths] == ["n.csv", "n_mse.csv"]
    assert len(list(csv.reader(paths[1].open()))) == 1 + 2 * len(NUISANCE_NAMES)
    with pytest.raises(ConfigError):
        nuisance_error_vs_n(sample_sizes=(250,))


def test_nuisance_study_orthogonal_beats_weighted_dr_at_small_n(nuisance_study):
    pe = {(r["n"], r["learner"]): r["pehe_mean"] for r in nuisance_study["pehe"]}
    assert pe[(250, "LT_O_DO")] <= pe[(250, "W_DR")]


def _diag(gamma_pi, gamma_rho, seed=3, projection=None, **kw):
    cfg = SyntheticConfig(n=100_000, gamma_pi=gamma_pi, gamma_rho=gamma_rho, seed=seed)
    data, _ = cfg.generate()
    nv = oracle_nuisances(cfg, data)
    proj = None if projection is None else data.x[:, projection]
    return dr_variance_diagnostic(data, nv, projection=proj, **kw)


def test_dr_bound_holds():
    d = _diag(2.0, 1.0)
    assert d.retained.all()
    assert np.all(d.bound[d.retained] >= 0)
    assert np.all(d.ratio()[d.retained] >= 0.9)
    assert len(d.to_rows()) == 20


def test_dr_bound_grows_with_treatment_difficulty():
    means = [np.nanmean(_diag(g, 0.0).bound) for g in (0.0, 1.0, 2.0, 3.0)]
    assert np.all(np.diff(means) > 0)


def test_dr_bound_flat_without_overlap_shift():
    # the fifth covariate enters the surrogate mean only, so overlap is constant along it
    d = _diag(0.0, 0.0, projection=4)
    b = d.bound[d.retained]
    assert b.max() / b.min() < 2


def test_dr_small_bins_dropped():
    cfg = SyntheticConfig(n=300, gamma_pi=1.0, gamma_rho=0.0, seed=0)
    data, _ = cfg.generate()
    d = dr_variance_diagnostic(data, oracle_nuisances(cfg, data), bins=40)
    assert not d.retained.any()
    assert np.isnan(d.empirical).all()
    with pytest.raises(ConfigError):
        dr_variance_diagnostic(data, oracle_nuisances(cfg, data), sigma_t_form="other")
