"""Synthetic and semi-synthetic two-sample data generators.

Both generators draw, in order: the sample indicator ``R ~ Ber(rho(X))``; a
treatment from ``pi(X)`` (experimental units) or the implicit propensity
``e(X)`` (observational units, not recorded); the surrogate ``S``; and the
long-term outcome ``Y``, which is only recorded when ``R == 1``.  ``Y``
depends on ``(X, S)`` and noise only, so surrogacy holds by construction.

The true nuisances are available in closed form (up to Gauss-Hermite
quadrature for the logistic-normal integrals of the semi-synthetic model)
through :meth:`SyntheticConfig.true_nuisances` and
:meth:`SemiSyntheticConfig.true_nuisances`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .datamodel import CombinedDataset
from .exceptions import ConfigError, DomainError, ParseError, SchemaError
from .numerics import RngStream, as_rng_stream, sigmoid, trim

__all__ = [
    "ALPHA",
    "BETA",
    "GAMMA_B",
    "IST3_COLUMNS",
    "OracleBundle",
    "SCENARIOS",
    "SemiSyntheticConfig",
    "SyntheticConfig",
    "generate_semisynthetic",
    "generate_synthetic",
    "load_oracle_csv",
    "save_oracle_csv",
    "scenario",
    "semisynthetic_scenario",
    "standin_covariates",
]

SCENARIOS = {"star": (0.0, 0.0), "t": (2.0, 0.0), "o": (0.0, 1.0), "t+o": (2.0, 1.0)}
_ALIASES = {"*": "star", "d_*": "star", "t_plus_o": "t+o", "tpo": "t+o"}


def _scenario_key(name: str) -> str:
    key = _ALIASES.get(str(name).lower(), str(name).lower())
    if key not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; valid presets: {', '.join(SCENARIOS)}")
    return key


def _normal_pdf(z, sd):
    return np.exp(-0.5 * (z / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))


def _gh_nodes(k=40):
    """Nodes and weights for E[f(Z)], Z ~ N(0, 1)."""
    t, w = np.polynomial.hermite_e.hermegauss(k)
    return t, w / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class OracleBundle:
    tau: np.ndarray
    pi_true: np.ndarray
    rho_true: np.ndarray
    e_true: np.ndarray


def save_oracle_csv(oracle: OracleBundle, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["index", "tau_true", "pi_true", "rho_true"])
        for i, (t, p, q) in enumerate(zip(oracle.tau.tolist(), oracle.pi_true.tolist(), oracle.rho_true.tolist())):
            out.writerow([i, repr(t), repr(p), repr(q)])


def load_oracle_csv(path) -> OracleBundle:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["index", "tau_true", "pi_true", "rho_true"]:
            raise SchemaError(f"unexpected oracle header {header}", row=1)
        cols = [[], [], []]
        for i, rec in enumerate(rd, start=2):
            if len(rec) != 4:
                raise ParseError("expected 4 fields", row=i)
            for c, cell in zip(cols, rec[1:]):
                try:
                    c.append(float(cell))
                except ValueError:
                    raise ParseError("malformed number", row=i) from None
    tau, pi, rho = (np.array(c) for c in cols)
    return OracleBundle(tau, pi, rho, np.full_like(tau, np.nan))


# --------------------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticConfig:
    """Ten uniform covariates, one surrogate, additive effects."""

    n: int = 3000
    gamma_pi: float = 0.0
    gamma_rho: float = 0.0
    sigma_s: float = 0.2
    sigma_y: float = 0.5
    seed: int = 0
    d_x: int = field(default=10, init=False)

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigError("n must be at least 1")
        if not (self.sigma_s > 0 and self.sigma_y > 0):
            raise ConfigError("noise scales must be positive")

    # closed-form pieces, X columns 0..9 hold X_1..X_10
    def rho(self, x):
        return sigmoid(x[:, 0] + x[:, 1] + self.gamma_rho)

    def pi(self, x):
        z = -self.gamma_pi * (x[:, 0] * x[:, 1] + 1 + x[:, 2] + x[:, 3] + x[:, 7] ** 2) / 10
        return trim(sigmoid(z), 0.1)

    def e(self, x):
        return trim(sigmoid(x[:, 1] + x[:, 2] + x[:, 3]), 0.1)

    def a_fn(self, x):
        return (np.sin(np.pi * x[:, 0] * x[:, 1]) + 2 * (x[:, 2] - 0.5) ** 2
                + x[:, 3] + 0.5 * x[:, 4] + x[:, 5])

    def tau_s(self, x):
        return 1 + (x[:, 0] + x[:, 1] + x[:, 2] + x[:, 3]) / 4

    def tau(self, x):
        return self.tau_s(x)

    def b0(self, x):
        return np.sin(x[:, 0] * x[:, 1]) + x[:, 6] ** 2 + x[:, 7]

    def surrogate_mean(self, x, a):
        return self.a_fn(x) + (a - 0.5) * self.tau_s(x)

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.d_x:
            raise DomainError(f"synthetic covariates must have {self.d_x} columns")
        return x

    def sample_covariates(self, n, gen):
        return gen.uniform(-1.0, 1.0, size=(n, self.d_x))

    def true_nuisances(self, x, s) -> dict:
        x = self._check_x(x)
        s = np.asarray(s, dtype=float).reshape(x.shape[0], -1)[:, 0]
        pi, rho, e = self.pi(x), self.rho(x), self.e(x)
        f1 = _normal_pdf(s - self.surrogate_mean(x, 1.0), self.sigma_s)
        f0 = _normal_pdf(s - self.surrogate_mean(x, 0.0), self.sigma_s)
        return _posterior_nuisances(pi, rho, e, f1, f0,
                                    h=self.b0(x) + s,
                                    mu1=self.b0(x) + self.surrogate_mean(x, 1.0),
                                    mu0=self.b0(x) + self.surrogate_mean(x, 0.0))

    def conditional_variances(self, x) -> dict:
        """Var(S | A, X) and Var(Y | S, X) for the DR variance bound."""
        n = np.asarray(x).shape[0]
        return {"var_s": np.full(n, self.sigma_s ** 2), "var_y": np.full(n, self.sigma_y ** 2)}

    def simulate_units(self, x, gen):
        """Draw (r, a_full, s, y_full) for given covariates; a and y for every unit."""
        n = x.shape[0]
        rho, pi, e = self.rho(x), self.pi(x), self.e(x)
        r = (gen.uniform(size=n) < rho).astype(int)
        p_treat = np.where(r == 0, pi, e)
        a = (gen.uniform(size=n) < p_treat).astype(float)
        s = self.surrogate_mean(x, a) + gen.normal(0.0, self.sigma_s, size=n)
        y = self.b0(x) + s + gen.normal(0.0, self.sigma_y, size=n)
        return r, a, s, y

    def generate(self, n=None, rng=None):
        n = int(self.n if n is None else n)
        stream = as_rng_stream(self.seed if rng is None else rng)
        gen = stream.substream("synthetic").generator()
        x = self.sample_covariates(n, gen)
        r, a, s, y = self.simulate_units(x, gen)
        data = CombinedDataset(x, r, s[:, None], np.where(r == 0, a, np.nan), np.where(r == 1, y, np.nan),
                               require_both=False)
        oracle = OracleBundle(self.tau(x), self.pi(x), self.rho(x), self.e(x))
        return data, oracle

    def evaluation_sample(self, n, rng):
        """Covariates from the experimental population, X | R = 0, with oracle effects."""
        gen = as_rng_stream(rng).substream("evaluation").generator()
        chunks, have = [], 0
        while have < n:
            x = self.sample_covariates(max(2 * n, 64), gen)
            keep = gen.uniform(size=x.shape[0]) >= self.rho(x)
            chunks.append(x[keep])
            have += int(keep.sum())
        x = np.vstack(chunks)[:n]
        return x, self.tau(x)


def _posterior_nuisances(pi, rho, e, f1, f0, h, mu1, mu0) -> dict:
    """Bayes step shared by both generators: f_a is the density of S given A=a, X."""
    exp_mix = pi * f1 + (1 - pi) * f0
    obs_mix = e * f1 + (1 - e) * f0
    with np.errstate(invalid="ignore", divide="ignore"):
        pi_s = pi * f1 / exp_mix
        rho_s = rho * obs_mix / (rho * obs_mix + (1 - rho) * exp_mix)
    # both densities underflow far in the tails; fall back to the prior there
    pi_s = np.where(np.isfinite(pi_s), pi_s, pi)
    rho_s = np.where(np.isfinite(rho_s), rho_s, rho)
    return {"pi": pi, "pi_s": pi_s, "rho": rho, "rho_s": rho_s, "h": h, "mu0": mu0, "mu1": mu1}


def scenario(name: str, n: int = 3000, seed: int = 0) -> SyntheticConfig:
    """Preset: star (0, 0), t (2, 0), o (0, 1) or t+o (2, 1) for (gamma_pi, gamma_rho)."""
    gp, gr = SCENARIOS[_scenario_key(name)]
    return SyntheticConfig(n=n, gamma_pi=gp, gamma_rho=gr, seed=seed)


def generate_synthetic(cfg: SyntheticConfig):
    """Dataset and oracle bundle for ``cfg``."""
    return cfg.generate()


# --------------------------------------------------------------------------- semi-synthetic

IST3_COLUMNS = (
    "age", "gender", "randdelay", "country", "livealone_rand", "indepinadl_rand", "sbprand",
    "dbprand", "weight", "glucose", "gcs_score_rand", "nihss", "atrialfib_rand", "stroke_pre",
    "hypertension_pre", "diabetes_pre", "aspirin_pre", "other_antiplat_pre", "anticoag_pre",
    "stroketype", "R_infarct_size", "R_hypodensity", "R_swelling",
)
# columns entering the outcome formulas; these are z-scored before use
FORMULA_COLUMNS = (
    "age", "nihss", "randdelay", "gcs_score_rand", "glucose", "R_hypodensity", "R_swelling",
    "R_infarct_size", "atrialfib_rand", "diabetes_pre", "indepinadl_rand",
)
_CATEGORICAL = {
    "gender", "country", "livealone_rand", "indepinadl_rand", "atrialfib_rand", "stroke_pre",
    "hypertension_pre", "diabetes_pre", "aspirin_pre", "other_antiplat_pre", "anticoag_pre",
    "stroketype", "R_infarct_size", "R_hypodensity", "R_swelling",
}

ALPHA = (0.0, 0.9, 0.5, 0.4, 0.25, 0.18, 0.08, 0.10, 0.12, 0.25, 0.20, 0.10, 0.20, 0.12, 0.15)
BETA = (0.9, 0.30, 0.25, 0.15, 0.15, 0.10)
GAMMA_B = (-0.2, 0.01, 0.9, 0.2, 0.6, 0.25, 0.25, 0.15, 0.10, 0.08, 0.15, 0.12, 0.12, 0.08, 0.08)


def standin_covariates(n: int = 2720, rng=0):
    """Synthetic table with the IST-3 column layout.

    Marginals are loosely modelled on an acute-stroke cohort; there is no
    attempt to mimic the joint distribution of the real trial.  Returns
    ``(matrix, column_names)``.
    """
    gen = as_rng_stream(rng).substream("standin").generator()
    n = int(n)
    nihss = np.clip(np.round(gen.gamma(2.5, 4.8, n)), 0, 40)
    age = np.clip(gen.normal(78, 10, n) + 0.15 * (nihss - 12), 18, 100)
    cols = {
        "age": age,
        "gender": gen.binomial(1, 0.48, n),
        "randdelay": np.clip(gen.normal(4.0, 1.1, n), 0.5, 6.0),
        "country": gen.integers(0, 12, n),
        "livealone_rand": gen.binomial(1, 0.3, n),
        "indepinadl_rand": gen.binomial(1, 0.8, n),
        "sbprand": gen.normal(155, 23, n),
        "dbprand": gen.normal(82, 15, n),
        "weight": gen.normal(74, 15, n),
        "glucose": np.exp(gen.normal(np.log(6.8), 0.25, n)),
        "gcs_score_rand": np.clip(np.round(15 - 0.15 * nihss + gen.normal(0, 1.2, n)), 3, 15),
        "nihss": nihss,
        "atrialfib_rand": gen.binomial(1, 0.3, n),
        "stroke_pre": gen.binomial(1, 0.25, n),
        "hypertension_pre": gen.binomial(1, 0.64, n),
        "diabetes_pre": gen.binomial(1, 0.14, n),
        "aspirin_pre": gen.binomial(1, 0.5, n),
        "other_antiplat_pre": gen.binomial(1, 0.1, n),
        "anticoag_pre": gen.binomial(1, 0.05, n),
        "stroketype": gen.integers(0, 5, n),
        "R_infarct_size": gen.integers(0, 3, n),
        "R_hypodensity": gen.binomial(1, 0.35, n),
        "R_swelling": gen.binomial(1, 0.2, n),
    }
    return np.column_stack([np.asarray(cols[c], dtype=float) for c in IST3_COLUMNS]), IST3_COLUMNS


@dataclass(frozen=True)
class SemiSyntheticConfig:
    """Logistic surrogate and outcome on a named covariate table.

    ``covariates`` holds the raw table with ``columns`` naming its columns.
    With ``normalize`` set, numerical columns and every column used by the
    outcome formulas are z-scored; other categorical codes are left as is.
    ``n`` subsamples rows without replacement when given.
    """

    covariates: np.ndarray
    columns: tuple
    gamma_pi: float = 0.0
    gamma_rho: float = 0.0
    sigma_s: float = 0.2
    sigma_y: float = 0.5
    seed: int = 0
    mc_draws: int = 2000
    n: Optional[int] = None
    normalize: bool = True
    oracle_includes_outcome_noise: bool = False

    def __post_init__(self):
        cov = np.asarray(self.covariates, dtype=float)
        cols = tuple(self.columns)
        if cov.ndim != 2 or cov.shape[1] != len(cols):
            raise DomainError("covariate table and column names disagree")
        missing = [c for c in FORMULA_COLUMNS if c not in cols]
        if missing:
            raise SchemaError(f"covariate table lacks columns {missing}")
        if not np.all(np.isfinite(cov)):
            raise DomainError("covariate table must be finite")
        if self.mc_draws < 1:
            raise ConfigError("mc_draws must be at least 1")
        if not (self.sigma_s > 0 and self.sigma_y > 0):
            raise ConfigError("noise scales must be positive")
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "columns", cols)

    @property
    def d_x(self) -> int:
        return len(self.columns)

    def _norm_stats(self):
        cov = self.covariates
        center = np.zeros(cov.shape[1])
        scale = np.ones(cov.shape[1])
        if self.normalize:
            for j, c in enumerate(self.columns):
                if c in FORMULA_COLUMNS or c not in _CATEGORICAL:
                    sd = cov[:, j].std()
                    center[j], scale[j] = cov[:, j].mean(), (sd if sd > 0 else 1.0)
        return center, scale

    def normalize_table(self, raw) -> np.ndarray:
        """Apply this table's normalization to other raw rows."""
        center, scale = self._norm_stats()
        return (np.asarray(raw, dtype=float) - center) / scale

    def design_matrix(self) -> np.ndarray:
        return self.normalize_table(self.covariates)

    def evaluation_sample(self, n, rng, covariates=None):
        """Experimental-population covariates with oracle effects.

        Rows come from ``covariates`` (raw, normalized with this table's
        statistics) or, by default, are resampled from this table; each
        candidate row is kept with probability ``1 - rho(x)``.
        """
        stream = as_rng_stream(rng).substream("evaluation")
        gen = stream.generator()
        pool = self.design_matrix() if covariates is None else self.normalize_table(covariates)
        chunks, have = [], 0
        while have < n:
            x = pool[gen.integers(0, pool.shape[0], size=max(2 * n, 64))] if covariates is None else pool
            keep = gen.uniform(size=x.shape[0]) >= self.rho(x)
            chunks.append(x[keep])
            have += int(keep.sum())
            if covariates is not None and have < n:
                raise ConfigError(f"only {have} evaluation rows survived selection, need {n}")
        x = np.vstack(chunks)[:n]
        return x, self.oracle_tau(x, stream)

    def _col(self, x, name):
        return x[..., self.columns.index(name)]

    def rho(self, x):
        c = lambda k: self._col(x, k)
        return trim(sigmoid(1.2 - 0.25 * c("nihss") + 0.10 * c("age") + self.gamma_rho), 0.01)

    def pi(self, x):
        c = lambda k: self._col(x, k)
        return trim(sigmoid(self.gamma_pi * (c("nihss") * c("randdelay") + 1)), 0.01)

    def e(self, x):
        return trim(sigmoid(-0.3 + 0.03 * self._col(x, "nihss")), 0.01)

    def a_fn(self, x):
        c = lambda k: self._col(x, k)
        al = ALPHA
        return (al[0] + al[1] * np.exp(-0.7 * c("nihss")) + al[2] * np.exp(-0.4 * c("age"))
                + al[3] * np.exp(-0.6 * c("randdelay")) + al[4] * c("gcs_score_rand")
                - al[5] * c("nihss") ** 2 - al[6] * c("age") ** 2 - al[7] * c("randdelay") ** 2
                - al[8] * c("nihss") * c("age") - al[9] * c("R_hypodensity") - al[10] * c("R_swelling")
                - al[11] * c("R_infarct_size") - al[12] * c("atrialfib_rand")
                - al[13] * c("diabetes_pre") + al[14] * c("indepinadl_rand") - 0.05 * c("glucose"))

    def tau_s(self, x):
        c = lambda k: self._col(x, k)
        be = BETA
        return (be[0] - be[1] * c("nihss") - be[2] * c("randdelay") - be[3] * c("age")
                + be[4] * c("gcs_score_rand") - be[5] * c("R_hypodensity"))

    def b(self, x, s):
        """Long-term logit; ``s`` is the surrogate on its [0, 1] scale."""
        c = lambda k: self._col(x, k)
        g = GAMMA_B
        u = s - 0.5
        return (g[0] + g[1] * np.exp(0.1 * u) + g[2] * u - g[3] * u ** 2
                + g[4] * np.exp(-0.6 * c("nihss")) + g[5] * np.exp(-0.3 * c("age"))
                + g[6] * np.exp(-0.4 * c("randdelay")) + g[7] * c("gcs_score_rand")
                - g[8] * c("nihss") ** 2 - g[9] * c("nihss") * c("age") - g[10] * c("R_hypodensity")
                - g[11] * c("R_swelling") - g[12] * c("atrialfib_rand") - g[13] * c("diabetes_pre")
                + g[14] * c("indepinadl_rand"))

    def surrogate_logit_mean(self, x, a):
        return self.a_fn(x) + (a - 0.5) * self.tau_s(x)

    def _h_of_logit(self, x, s, nodes=None):
        """E[sigmoid(b(x, s) + eps)] by Gauss-Hermite quadrature over eps."""
        t, w = nodes if nodes is not None else _gh_nodes()
        base = self.b(x, s)
        z = base[..., None] + self.sigma_y * t
        return (1.0 / (1.0 + np.exp(-z))) @ w

    def oracle_tau(self, x, rng):
        """Monte-Carlo effect with a shared surrogate draw for both arms."""
        gen = as_rng_stream(rng).substream("oracle").generator()
        n = x.shape[0]
        acc = np.zeros(n)
        m1, m0 = self.surrogate_logit_mean(x, 1.0), self.surrogate_logit_mean(x, 0.0)
        block = 250
        done = 0
        while done < self.mc_draws:
            k = min(block, self.mc_draws - done)
            d = gen.normal(0.0, self.sigma_s, size=(k, n))
            s1 = 1.0 / (1.0 + np.exp(-(m1 + d)))
            s0 = 1.0 / (1.0 + np.exp(-(m0 + d)))
            if self.oracle_includes_outcome_noise:
                xt = np.broadcast_to(x, (k,) + x.shape)
                acc += (self._h_of_logit(xt, s1) - self._h_of_logit(xt, s0)).sum(axis=0)
            else:
                acc += (sigmoid(self.b(x[None], s1)) - sigmoid(self.b(x[None], s0))).sum(axis=0)
            done += k
        return acc / self.mc_draws

    def true_nuisances(self, x, s) -> dict:
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float).reshape(x.shape[0], -1)[:, 0]
        pi, rho, e = self.pi(x), self.rho(x), self.e(x)
        # densities of S differ from those of logit(S) by a common Jacobian
        ls = np.log(s) - np.log1p(-s)
        f1 = _normal_pdf(ls - self.surrogate_logit_mean(x, 1.0), self.sigma_s)
        f0 = _normal_pdf(ls - self.surrogate_logit_mean(x, 0.0), self.sigma_s)
        nodes = _gh_nodes()
        h = self._h_of_logit(x, s, nodes)
        mus = []
        for arm in (0.0, 1.0):
            m = self.surrogate_logit_mean(x, arm)
            acc = np.zeros(x.shape[0])
            for t, w in zip(*nodes):
                acc += w * self._h_of_logit(x, sigmoid(m + self.sigma_s * t), nodes)
            mus.append(acc)
        return _posterior_nuisances(pi, rho, e, f1, f0, h=h, mu1=mus[1], mu0=mus[0])

    def conditional_variances(self, x) -> dict:
        raise DomainError("conditional variances are only tabulated for the synthetic model")

    def simulate_units(self, x, gen):
        n = x.shape[0]
        rho, pi, e = self.rho(x), self.pi(x), self.e(x)
        r = (gen.uniform(size=n) < rho).astype(int)
        a = (gen.uniform(size=n) < np.where(r == 0, pi, e)).astype(float)
        s = sigmoid(self.surrogate_logit_mean(x, a) + gen.normal(0.0, self.sigma_s, size=n))
        y = sigmoid(self.b(x, s) + gen.normal(0.0, self.sigma_y, size=n))
        return r, a, s, y

    def generate(self, rng=None):
        stream = as_rng_stream(self.seed if rng is None else rng)
        gen = stream.substream("semisynthetic").generator()
        x = self.design_matrix()
        if self.n is not None:
            if self.n > x.shape[0]:
                raise ConfigError(f"cannot subsample {self.n} rows from {x.shape[0]}")
            x = x[np.sort(gen.choice(x.shape[0], size=int(self.n), replace=False))]
        r, a, s, y = self.simulate_units(x, gen)
        data = CombinedDataset(x, r, s[:, None], np.where(r == 0, a, np.nan), np.where(r == 1, y, np.nan),
                               require_both=False)
        oracle = OracleBundle(self.oracle_tau(x, stream), self.pi(x), self.rho(x), self.e(x))
        return data, oracle


def generate_semisynthetic(cfg: SemiSyntheticConfig):
    """Dataset and oracle bundle for ``cfg``."""
    return cfg.generate()


def semisynthetic_scenario(name: str, covariates=None, columns=IST3_COLUMNS, seed: int = 0,
                           **kwargs) -> SemiSyntheticConfig:
    """Same (gamma_pi, gamma_rho) presets as the synthetic benchmark."""
    gp, gr = SCENARIOS[_scenario_key(name)]
    if covariates is None:
        covariates, columns = standin_covariates(rng=seed)
    return SemiSyntheticConfig(covariates=covariates, columns=tuple(columns), gamma_pi=gp, gamma_rho=gr,
                               seed=seed, **kwargs)
