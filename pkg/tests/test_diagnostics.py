import numpy as np
import pytest
from dataclasses import replace

from hlte.diagnostics import (binned_identity_checks, constant_class_oracle, loglog_slope, orthogonality_curve,
                              population_weighted_ate)
from hlte.exceptions import ConfigError
from hlte.nuisance import oracle_nuisances
from hlte.simulate import SyntheticConfig, semisynthetic_scenario

KINDS = ("NO", "TO", "LO", "DO")


@pytest.fixture(scope="module")
def truth(synth_to):
    cfg, data, oracle = synth_to
    return cfg, data, oracle, oracle_nuisances(cfg, data)


@pytest.mark.parametrize("kind", KINDS)
def test_binned_identities_hold_with_true_nuisances(truth, kind):
    cfg, data, oracle, nv = truth
    checks = binned_identity_checks(data, nv, cfg.tau(data.x), kind)
    assert set(checks) == {"omega_residual", "omega_star", "ratio", "psi_obs", "aipw"}
    for name, c in checks.items():
        assert c.estimate.shape == (20,)
        assert c.pass_rate >= 0.95, (name, c.pass_rate)


def test_binned_checks_double_robustness(truth):
    cfg, data, oracle, nv = truth
    tau = cfg.tau(data.x)
    # a biased surrogate index alone leaves the residual terms mean-zero
    only_h = binned_identity_checks(data, replace(nv, h=nv.h + 0.5), tau, "DO")
    assert only_h["psi_obs"].pass_rate >= 0.95 and only_h["aipw"].pass_rate >= 0.95
    # pairing it with a wrong propensity breaks them
    with_pi_s = replace(nv, h=nv.h + 0.5, pi_s=np.clip(nv.pi_s + 0.2, 0.01, 0.99))
    assert binned_identity_checks(data, with_pi_s, tau, "DO")["psi_obs"].pass_rate < 0.5
    with_pi = replace(nv, h=nv.h + 0.5, pi=np.clip(nv.pi + 0.15, 0.01, 0.99))
    checks = binned_identity_checks(data, with_pi, tau, "DO")
    assert checks["aipw"].pass_rate < 0.5
    assert checks["omega_residual"].pass_rate < 0.5


def test_binned_checks_flag_a_wrong_effect(truth):
    cfg, data, oracle, nv = truth
    checks = binned_identity_checks(data, nv, cfg.tau(data.x) + 0.3, "TO")
    assert checks["ratio"].pass_rate < 0.5
    assert checks["aipw"].pass_rate < 0.5
    with pytest.raises(ConfigError):
        binned_identity_checks(data, nv, cfg.tau(data.x), "TO", bins=1)


@pytest.mark.parametrize("kind", KINDS)
def test_constant_oracle_matches_weighted_ate(truth, kind):
    cfg, data, oracle, nv = truth
    res = constant_class_oracle(data, nv, kind, cfg=cfg)
    assert abs(res.z) < 3, res
    assert res.stderr > 0 and res.target_stderr > 0


def test_constant_oracle_rejects_wrong_target(truth):
    cfg, data, oracle, nv = truth
    res = constant_class_oracle(data, nv, "DO", target=1.2)
    assert res.target_stderr == 0.0
    assert abs(res.z) > 3
    with pytest.raises(ConfigError):
        constant_class_oracle(data, nv, "DO")


def test_weighted_ate_against_direct_average():
    cfg = SyntheticConfig(gamma_pi=2.0, gamma_rho=1.0)
    x = cfg.sample_covariates(1_000_000, np.random.default_rng(9))
    pi, rho, tau = cfg.pi(x), cfg.rho(x), cfg.tau(x)
    for kind, w in (("NO", np.ones_like(pi)), ("DO", pi * (1 - pi) * rho)):
        q = (1 - rho) * w
        val, se = population_weighted_ate(cfg, kind, n=1_000_000)
        assert abs(val - np.sum(q * tau) / np.sum(q)) < 4 * se * np.sqrt(2)


def test_weighted_ate_differs_across_kinds():
    cfg = SyntheticConfig(gamma_pi=2.0, gamma_rho=1.0)
    dr, se = population_weighted_ate(cfg, "NO", n=400_000)
    lo, _ = population_weighted_ate(cfg, "LO", n=400_000)
    # rho grows with x1 + x2, the same direction the effect grows
    assert lo - dr > 10 * se


def test_loglog_slope():
    r = np.array([0.02, 0.04, 0.08, 0.16])
    assert loglog_slope(r, 3 * r ** 2) == pytest.approx(2.0)
    assert loglog_slope(r, 0.5 * r) == pytest.approx(1.0)


@pytest.mark.parametrize("kind,lo,hi", [("LT_O_DO", 1.7, 2.3), ("LT_O_DR", 1.7, 2.3), ("W_RA", 0.7, 1.3)])
def test_orthogonality_scaling_small(kind, lo, hi):
    res = orthogonality_curve(kind, n=20_000)
    assert lo <= res.slope <= hi, res.slope
    assert np.all(np.diff(res.magnitude) > 0)


def test_orthogonality_zero_perturbation_is_zero():
    # a vanishing perturbation leaves only quadrature error
    res = orthogonality_curve("LT_O_TO", r_values=(1e-12, 1.0), n=5000)
    assert res.magnitude[0] < 1e-8
    assert res.magnitude[1] > 1e-3


def test_orthogonality_errors():
    with pytest.raises(ConfigError):
        orthogonality_curve("LT_T", n=100)
    with pytest.raises(ConfigError):
        orthogonality_curve("W_RA", cfg=semisynthetic_scenario("t"), n=100)
