"""Stage-one nuisance models and their per-unit values.

The seven fitted models are ``pi(x)``, ``pi_s(s, x)``, ``rho(x)``,
``rho_s(s, x)``, ``h(s, x)`` and the two arms of ``mu(a, x)``.  ``mu`` is
regressed on the predictions of the same set's ``h`` over experimental
units, never on raw outcomes (which the experimental sample lacks).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import basemodels
from ._parallel import parallel_map
from .basemodels import TrainConfig, model_from_dict, model_to_dict
from .datamodel import CombinedDataset, FoldAssignment
from .exceptions import DomainError, FitError
from .numerics import as_rng_stream

__all__ = [
    "NUISANCE_NAMES",
    "NuisanceConfigs",
    "NuisanceSet",
    "NuisanceValues",
    "crossfit_nuisances",
    "evaluate_nuisances",
    "fit_nuisances",
    "oracle_nuisances",
]

NUISANCE_NAMES = ("pi", "pi_s", "rho", "rho_s", "h", "mu0", "mu1")
PROBABILITIES = ("pi", "pi_s", "rho", "rho_s")


@dataclass(frozen=True)
class NuisanceValues:
    """Per-unit nuisance values.

    ``r`` (when known) records which sample each unit came from: ``pi``,
    ``pi_s`` and ``mu`` are in-support on ``r == 0`` and extrapolated on
    ``r == 1``; ``h`` is in-support on ``r == 1``.
    """

    pi: np.ndarray
    pi_s: np.ndarray
    rho: np.ndarray
    rho_s: np.ndarray
    h: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    r: Optional[np.ndarray] = None

    def __post_init__(self):
        n = None
        for name in NUISANCE_NAMES:
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if n is None:
                n = arr.shape[0]
            if arr.shape != (n,):
                raise DomainError(f"nuisance {name!r} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr)
        if self.r is not None:
            object.__setattr__(self, "r", np.asarray(self.r, dtype=np.int8))

    def __len__(self):
        return self.pi.shape[0]

    @property
    def tau_plugin(self) -> np.ndarray:
        return self.mu1 - self.mu0

    def subset(self, idx) -> "NuisanceValues":
        return NuisanceValues(**{k: getattr(self, k)[idx] for k in NUISANCE_NAMES},
                              r=None if self.r is None else self.r[idx])

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in NUISANCE_NAMES}

    def perturbed(self, **updates) -> "NuisanceValues":
        d = self.as_dict()
        d.update(updates)
        return NuisanceValues(**d, r=self.r)

    @classmethod
    def concatenate_into(cls, n, parts) -> "NuisanceValues":
        """Assemble full-length values from ``(indices, values)`` pieces."""
        out = {k: np.full(n, np.nan) for k in NUISANCE_NAMES}
        r = np.zeros(n, dtype=np.int8)
        for idx, nv in parts:
            for k in NUISANCE_NAMES:
                out[k][idx] = getattr(nv, k)
            if nv.r is not None:
                r[idx] = nv.r
        return cls(**out, r=r)


@dataclass(frozen=True)
class NuisanceConfigs:
    """Training configuration per nuisance family."""

    propensity: TrainConfig = field(default_factory=basemodels.propensity_config)
    outcome: TrainConfig = field(default_factory=basemodels.outcome_config)

    def for_name(self, name: str) -> TrainConfig:
        return self.propensity if name in PROBABILITIES else self.outcome

    def to_dict(self) -> dict:
        return {"propensity": self.propensity.to_dict(), "outcome": self.outcome.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "NuisanceConfigs":
        return cls(TrainConfig.from_dict(d["propensity"]), TrainConfig.from_dict(d["outcome"]))

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class NuisanceSet:
    pi: object
    pi_s: object
    rho: object
    rho_s: object
    h: object
    mu0: object
    mu1: object
    fold: Optional[int] = None
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {"fold": self.fold, "config_hash": self.config_hash,
                "models": {k: model_to_dict(getattr(self, k)) for k in NUISANCE_NAMES}}

    @classmethod
    def from_dict(cls, d: dict) -> "NuisanceSet":
        models = {k: model_from_dict(d["models"][k]) for k in NUISANCE_NAMES}
        return cls(**models, fold=d.get("fold"), config_hash=d.get("config_hash", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "NuisanceSet":
        return cls.from_dict(json.loads(text))


def _fit(kind, name, fold, inputs, target, cfg, rng, weights=None, stream=None):
    cfg = cfg.with_seed(rng.substream(stream or name))
    try:
        if kind == "classifier":
            return basemodels.fit_classifier(inputs, target, cfg)
        return basemodels.fit_regressor(inputs, target, weights, cfg)
    except FitError as exc:
        exc.nuisance, exc.fold = name, fold
        raise


def fit_nuisances(data: CombinedDataset, train_indices=None, configs: Optional[NuisanceConfigs] = None,
                  rng=0, fold: Optional[int] = None) -> NuisanceSet:
    """Fit all nuisances on ``train_indices`` (default: every unit)."""
    configs = configs or NuisanceConfigs()
    rng = as_rng_stream(rng)
    idx = np.arange(data.n) if train_indices is None else np.asarray(train_indices)
    x, xs, r = data.x[idx], data.xs[idx], data.r[idx]
    if r.min() == r.max():
        raise FitError("training units must contain both samples", nuisance="rho", fold=fold)
    exp = r == 0
    a = data.a[idx][exp]
    if a.min() == a.max():
        arm = "mu0" if a.min() == 1 else "mu1"
        raise FitError(f"experimental training units lack an arm needed by {arm}", nuisance=arm, fold=fold)
    prop, out = configs.propensity, configs.outcome

    rho = _fit("classifier", "rho", fold, x, r, prop, rng)
    rho_s = _fit("classifier", "rho_s", fold, xs, r, prop, rng)
    pi = _fit("classifier", "pi", fold, x[exp], a, prop, rng)
    pi_s = _fit("classifier", "pi_s", fold, xs[exp], a, prop, rng)
    h = _fit("regressor", "h", fold, xs[~exp], data.y[idx][~exp], out, rng)
    h_exp = h.predict(xs[exp])
    # both arms share one stream (same init and shuffling) so their fitting
    # errors are correlated and largely cancel in mu1 - mu0
    mu1 = _fit("regressor", "mu1", fold, x[exp][a == 1], h_exp[a == 1], out, rng, stream="mu")
    mu0 = _fit("regressor", "mu0", fold, x[exp][a == 0], h_exp[a == 0], out, rng, stream="mu")
    return NuisanceSet(pi=pi, pi_s=pi_s, rho=rho, rho_s=rho_s, h=h, mu0=mu0, mu1=mu1,
                       fold=fold, config_hash=configs.hash())


def evaluate_nuisances(nset: NuisanceSet, data: CombinedDataset, indices=None) -> NuisanceValues:
    """Nuisance values for ``indices``; probabilities come back clipped."""
    idx = np.arange(data.n) if indices is None else np.asarray(indices)
    x, xs = data.x[idx], data.xs[idx]
    p = basemodels.predict
    return NuisanceValues(pi=p(nset.pi, x), pi_s=p(nset.pi_s, xs), rho=p(nset.rho, x),
                          rho_s=p(nset.rho_s, xs), h=p(nset.h, xs), mu0=p(nset.mu0, x),
                          mu1=p(nset.mu1, x), r=data.r[idx])


def oracle_nuisances(config, data: CombinedDataset) -> NuisanceValues:
    """True nuisance values under the generating configuration."""
    if data.d_x != config.d_x or data.d_s != 1:
        raise DomainError(f"dataset shape ({data.d_x} covariates, {data.d_s} surrogates) "
                          f"does not match the generator")
    return NuisanceValues(**config.true_nuisances(data.x, data.s), r=data.r)


def crossfit_nuisances(data: CombinedDataset, folds: FoldAssignment, configs=None, rng=0, jobs=None):
    """Fit one nuisance set per fold complement; return the sets and out-of-fold values."""
    rng = as_rng_stream(rng)

    def task(b):
        nset = fit_nuisances(data, folds.train_indices(b), configs, rng.substream("nuisance", b), fold=b)
        test = folds.test_indices(b)
        return nset, (test, evaluate_nuisances(nset, data, test))

    results = parallel_map(task, range(folds.k), jobs)
    sets = [s for s, _ in results]
    return sets, NuisanceValues.concatenate_into(data.n, [p for _, p in results])
