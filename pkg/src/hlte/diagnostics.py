"""Population-level checks of the weighting algebra under true nuisances.

* :func:`binned_identity_checks` -- conditional mean identities of the
  residual term, omega*, T_LT, psi_obs and tau_aipw, tested within
  equal-frequency covariate bins;
* :func:`constant_class_oracle` -- ``sum(T) / sum(omega*)`` against the
  weighted average effect;
* :func:`orthogonality_curve` -- size of the population loss gradient at the
  true effect as the nuisances are perturbed, with its log-log slope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import weighting as wt
from .datamodel import CombinedDataset
from .evaluation import quantile_bins
from .exceptions import ConfigError, DomainError
from .learners import ORTHOGONAL_WEIGHTS, normalize_kind
from .numerics import as_rng_stream, logit, sigmoid
from .nuisance import NuisanceValues
from .simulate import SyntheticConfig, _gh_nodes

__all__ = [
    "BinnedCheck",
    "ConstantOracleResult",
    "OrthogonalityResult",
    "binned_identity_checks",
    "constant_class_oracle",
    "loglog_slope",
    "orthogonality_curve",
    "population_weighted_ate",
]


# --------------------------------------------------------------------------- binned identities

@dataclass
class BinnedCheck:
    name: str
    estimate: np.ndarray
    target: np.ndarray
    stderr: np.ndarray

    @property
    def passed(self) -> np.ndarray:
        return np.abs(self.estimate - self.target) <= 3.0 * self.stderr + 1e-12

    @property
    def pass_rate(self) -> float:
        return float(self.passed.mean())


def _mean_check(values, labels, k, name):
    est, se = np.zeros(k), np.zeros(k)
    for b in range(k):
        v = values[labels == b]
        est[b] = v.mean()
        se[b] = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else np.inf
    return BinnedCheck(name, est, np.zeros(k), se)


def binned_identity_checks(data: CombinedDataset, nv: NuisanceValues, tau, kind, bins=20, projection=None):
    """Five conditional-mean identities per bin; returns ``{name: BinnedCheck}``.

    ``omega_residual``: mean of Omega is 0.  ``omega_star``: mean of
    ``omega* - (1 - rho) omega`` is 0.  ``ratio``: mean(T) / mean(omega*)
    equals the same ratio with T replaced by ``omega* tau`` (delta-method
    standard error).  ``psi_obs``: mean of ``1(R=1) psi_obs`` is 0.
    ``aipw``: mean of ``tau_aipw - tau`` over experimental units is 0.
    """
    if int(bins) < 2:
        raise ConfigError("need at least two bins")
    w = wt.weighting_function(kind)
    tau = np.asarray(tau, dtype=float)
    units = (data.r.astype(float), data.a, data.y)
    score = data.x[:, 0] + data.x[:, 1] if projection is None else np.asarray(projection, dtype=float)
    _, labels = quantile_bins(score, bins)
    k = int(bins)
    exp = data.r == 0
    omega = np.asarray(w(nv.pi, nv.rho), dtype=float)
    resid = wt.omega_residual(units, nv, w)
    om_star = wt.omega_star(units, nv, w)
    t = wt.t_lt(units, nv, w)
    psi = np.where(exp, 0.0, np.nan_to_num(wt.psi_obs(units, nv)))
    checks = {
        "omega_residual": _mean_check(resid, labels, k, "omega_residual"),
        "omega_star": _mean_check(om_star - (1 - nv.rho) * omega, labels, k, "omega_star"),
        "psi_obs": _mean_check(psi, labels, k, "psi_obs"),
    }
    est, target, se = np.zeros(k), np.zeros(k), np.zeros(k)
    for b in range(k):
        m = labels == b
        den = om_star[m].mean()
        est[b] = t[m].mean() / den
        target[b] = (om_star[m] * tau[m]).mean() / den
        infl = (t[m] - om_star[m] * tau[m]) / den
        se[b] = infl.std(ddof=1) / np.sqrt(m.sum())
    checks["ratio"] = BinnedCheck("ratio", est, target, se)
    aipw = np.where(exp, np.nan_to_num(wt.tau_aipw(units, nv)) - tau, np.nan)
    est, se = np.zeros(k), np.zeros(k)
    for b in range(k):
        v = aipw[(labels == b) & exp]
        est[b] = v.mean()
        se[b] = v.std(ddof=1) / np.sqrt(v.size)
    checks["aipw"] = BinnedCheck("aipw", est, np.zeros(k), se)
    return checks


# --------------------------------------------------------------------------- constant-class oracle

@dataclass
class ConstantOracleResult:
    estimate: float
    stderr: float
    target: float
    target_stderr: float

    @property
    def z(self) -> float:
        return (self.estimate - self.target) / np.hypot(self.stderr, self.target_stderr)


def population_weighted_ate(cfg: SyntheticConfig, kind, n=2_000_000, rng=0, chunk=500_000):
    """E[omega tau | R=0] / E[omega | R=0] by Monte Carlo over the covariates.

    Returns ``(value, stderr)``.  Conditioning on ``R = 0`` reweights the
    covariate density by ``1 - rho``.
    """
    w = wt.weighting_function(kind)
    gen = as_rng_stream(rng).substream("weighted-ate").generator()
    num, den = [], []
    left = int(n)
    while left > 0:
        m = min(chunk, left)
        x = cfg.sample_covariates(m, gen)
        q = (1 - cfg.rho(x)) * np.asarray(w(cfg.pi(x), cfg.rho(x)), dtype=float)
        num.append(q * cfg.tau(x))
        den.append(q)
        left -= m
    num, den = np.concatenate(num), np.concatenate(den)
    val = num.mean() / den.mean()
    se = (num - val * den).std(ddof=1) / (np.sqrt(num.size) * den.mean())
    return float(val), float(se)


def constant_class_oracle(data: CombinedDataset, nv: NuisanceValues, kind, target=None, cfg=None,
                          rng=0) -> ConstantOracleResult:
    """Constant minimiser of the empirical loss with its delta-method error."""
    units = (data.r.astype(float), data.a, data.y)
    om = wt.omega_star(units, nv, kind)
    t = wt.t_lt(units, nv, kind)
    den = om.mean()
    if not den > 0:
        raise DomainError("omega* sums to a non-positive value")
    est = t.mean() / den
    se = (t - est * om).std(ddof=1) / (np.sqrt(om.size) * den)
    if target is None:
        if cfg is None:
            raise ConfigError("need a target value or a generating config")
        target, target_se = population_weighted_ate(cfg, kind, rng=rng)
    else:
        target_se = 0.0
    return ConstantOracleResult(float(est), float(se), float(target), float(target_se))


# --------------------------------------------------------------------------- orthogonality

@dataclass
class OrthogonalityResult:
    kind: str
    r: np.ndarray
    magnitude: np.ndarray
    slope: float


def loglog_slope(r, m) -> float:
    """Least-squares slope of log(m) against log(r)."""
    lr, lm = np.log(np.asarray(r, dtype=float)), np.log(np.asarray(m, dtype=float))
    return float(np.polyfit(lr, lm, 1)[0])


class _Perturbation:
    """delta_j(x, s) = scale * sin(c_j . x + d_j s + b_j) for each nuisance j."""

    NAMES = ("pi", "pi_s", "rho", "rho_s", "h", "mu0", "mu1")

    def __init__(self, d_x, rng, scale=0.2):
        gen = as_rng_stream(rng).substream("perturbation").generator()
        self.scale = scale
        self.coef = {k: (gen.normal(0, 1, d_x), gen.normal(0, 1), gen.uniform(0, 2 * np.pi)) for k in self.NAMES}

    def __call__(self, name, x, s=None):
        c, d, b = self.coef[name]
        z = x @ c + b
        if s is not None and name in ("pi_s", "rho_s", "h"):
            z = z + d * s
        return self.scale * np.sin(z)


def _perturbed_values(cfg, x, s, r_size, delta):
    true = cfg.true_nuisances(x, s)
    out = {}
    for k in ("pi", "pi_s", "rho", "rho_s"):
        p = np.clip(true[k], 1e-12, 1 - 1e-12)
        out[k] = sigmoid(logit(p) + r_size * delta(k, x, s))
    for k in ("h", "mu0", "mu1"):
        out[k] = true[k] + r_size * delta(k, x, s)
    return out, true


def _conditional_means(cfg, x, r_size, delta, kind, nodes):
    """E[omega* | X] and E[T | X] (or the W_RA analogues) under the true law."""
    t_nodes, t_w = nodes
    n, q = x.shape[0], t_nodes.size
    xr = np.repeat(x, q, axis=0)
    rho, pi, e = cfg.rho(x), cfg.pi(x), cfg.e(x)
    e_om = np.zeros(n)
    e_t = np.zeros(n)
    w_ra = kind == "W_RA"
    if not w_ra:
        w = wt.weighting_function(ORTHOGONAL_WEIGHTS[kind])
    for r in (0, 1):
        for a in (0.0, 1.0):
            p_r = (1 - rho) if r == 0 else rho
            p_a = (pi if r == 0 else e)
            p_a = p_a if a == 1 else 1 - p_a
            s = (cfg.surrogate_mean(x, a)[:, None] + cfg.sigma_s * t_nodes[None, :]).ravel()
            vals, true = _perturbed_values(cfg, xr, s, r_size, delta)
            nv = NuisanceValues(**vals)
            rr = np.full(n * q, float(r))
            aa = np.full(n * q, a if r == 0 else np.nan)
            yy = true["h"] if r == 1 else np.full(n * q, np.nan)
            if w_ra:
                if r == 1:
                    continue
                om = np.zeros(n * q)
                t = wt.ra_pseudo_outcome((rr, aa, yy), nv)
            else:
                om = wt.omega_star((rr, aa, yy), nv, w)
                t = wt.t_lt((rr, aa, yy), nv, w)
            weight = (p_r * p_a)[:, None] * t_w[None, :]
            e_om += (weight * om.reshape(n, q)).sum(axis=1)
            e_t += (weight * t.reshape(n, q)).sum(axis=1)
    return e_om, e_t


def orthogonality_curve(kind, r_values=(0.02, 0.04, 0.08, 0.16), cfg=None, n=100_000, rng=0,
                        quad_nodes=20, scale=0.2) -> OrthogonalityResult:
    """Gradient norm of the population loss at ``g = tau`` under perturbed nuisances.

    For LT_O_* kinds the pointwise gradient is ``E[omega*|X] tau - E[T|X]``.
    For W_RA it is ``(1 - rho) omega (tau - E[T_RA | X, R=0])`` with the
    weight and pseudo-outcome formed from perturbed nuisances.  Expectations
    over ``R`` and ``A`` are exact sums, over ``S`` Gauss-Hermite quadrature,
    and over ``Y`` exact by linearity (``Y`` enters through ``E[Y|S,X]``);
    only the covariates are sampled.  Returns the L2 norm over covariates.
    """
    kind = normalize_kind(kind)
    if kind not in ORTHOGONAL_WEIGHTS and kind != "W_RA":
        raise ConfigError(f"orthogonality curve is defined for LT_O_* and W_RA, not {kind}")
    cfg = cfg or SyntheticConfig(gamma_pi=2.0, gamma_rho=1.0)
    if not isinstance(cfg, SyntheticConfig):
        raise ConfigError("orthogonality curve needs the synthetic generator")
    stream = as_rng_stream(rng)
    gen = stream.substream("orthogonality-x").generator()
    x = cfg.sample_covariates(int(n), gen)
    delta = _Perturbation(cfg.d_x, stream, scale)
    nodes = _gh_nodes(quad_nodes)
    tau = cfg.tau(x)
    mags = []
    chunk = 20_000
    for r_size in r_values:
        sq = 0.0
        for start in range(0, x.shape[0], chunk):
            xc = x[start:start + chunk]
            e_om, e_t = _conditional_means(cfg, xc, r_size, delta, kind, nodes)
            if kind == "W_RA":
                pi_r = sigmoid(logit(cfg.pi(xc)) + r_size * delta("pi", xc))
                rho_r = sigmoid(logit(cfg.rho(xc)) + r_size * delta("rho", xc))
                om = wt.weighting_function("DO")(pi_r, rho_r)
                # e_t already carries the factor (1 - rho)
                grad = om * ((1 - cfg.rho(xc)) * tau[start:start + chunk] - e_t)
            else:
                grad = e_om * tau[start:start + chunk] - e_t
            sq += float((grad ** 2).sum())
        mags.append(np.sqrt(sq / x.shape[0]))
    mags = np.array(mags)
    return OrthogonalityResult(kind, np.asarray(r_values, float), mags, loglog_slope(r_values, mags))
