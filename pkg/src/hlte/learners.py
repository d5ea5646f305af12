"""Two-stage cross-fitted long-term effect learners.

Nine learner kinds share one pipeline: the data are split into ``k_folds``
folds stratified on the sample indicator; for every fold the nuisances are
fit on the remaining folds and evaluated on the fold itself, after which the
fold's second-stage network is trained on the fold's pseudo-outcomes.  The
final estimate averages the per-fold networks.

========  ==========================================================
LT_T      plug-in ``mu1 - mu0`` (no second stage)
LT_RA     squared loss on the RA pseudo-outcome, experimental units
LT_IPW    squared loss on the IPW pseudo-outcome, experimental units
LT_O_*    bilinear orthogonal loss with NO/TO/LO/DO weights, all units
W_RA      weighted squared loss on the RA pseudo-outcome
W_DR      weighted (non-orthogonal) DR loss, all units
========  ==========================================================
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import weighting as wt
from ._parallel import parallel_map
from ._validation import as_matrix, as_vector
from .basemodels import BilinearMLP, MLPRegressor, TrainConfig, model_from_dict, model_to_dict, second_stage_config
from .datamodel import CombinedDataset, FoldAssignment, make_folds
from .exceptions import ConfigError, DomainError, FitError, UnsupportedKindError
from .numerics import RngStream, as_rng_stream
from .nuisance import NuisanceConfigs, NuisanceSet, NuisanceValues, crossfit_nuisances

__all__ = [
    "LEARNER_KINDS",
    "CrossFit",
    "HLTELearner",
    "SecondStageConfig",
    "crossfit",
    "fit",
    "normalize_kind",
    "predict_tau",
    "second_stage_objective",
    "second_stage_data",
]

LEARNER_KINDS = ("LT_T", "LT_RA", "LT_IPW", "LT_O_DR", "LT_O_TO", "LT_O_LO", "LT_O_DO", "W_RA", "W_DR")
ORTHOGONAL_WEIGHTS = {"LT_O_DR": "NO", "LT_O_TO": "TO", "LT_O_LO": "LO", "LT_O_DO": "DO"}
AGGREGATIONS = ("average", "pooled")


def normalize_kind(kind: str) -> str:
    """Accept ``lt-o-do``, ``LT_O_DO`` and similar spellings."""
    key = str(kind).upper().replace("-", "_")
    if key not in LEARNER_KINDS:
        raise UnsupportedKindError(f"unknown learner {kind!r}; expected one of {', '.join(LEARNER_KINDS)}")
    return key


@dataclass(frozen=True)
class SecondStageConfig:
    k_folds: int = 5
    train: TrainConfig = field(default_factory=second_stage_config)
    aggregation: str = "average"

    def __post_init__(self):
        if int(self.k_folds) < 2:
            raise ConfigError("k_folds must be at least 2")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")


# --------------------------------------------------------------------------- cross-fitting

@dataclass
class CrossFit:
    """Folds, per-fold nuisance sets and out-of-fold nuisance values.

    Only depends on the data, fold count, nuisance configs and seed, so one
    instance can be shared by every learner kind.
    """

    folds: FoldAssignment
    sets: list
    values: NuisanceValues
    seed: object = None


def crossfit(data: CombinedDataset, k_folds=5, nuisance_configs=None, rng=0, jobs=None) -> CrossFit:
    rng = as_rng_stream(rng)
    folds = make_folds(data, k_folds, rng.substream("folds"))
    sets, values = crossfit_nuisances(data, folds, nuisance_configs, rng, jobs)
    return CrossFit(folds, sets, values, seed=rng)


# --------------------------------------------------------------------------- second stage

def second_stage_data(kind: str, data: CombinedDataset, nv: NuisanceValues, weighting="DO"):
    """Inputs for the second-stage fit of ``kind`` on the units of ``data``.

    Returns ``(loss, unit_mask, a, b)``: for ``loss == "mse"`` ``a`` is the
    target and ``b`` the sample weight; for ``loss == "bilinear"`` ``a`` is
    omega* and ``b`` the pseudo-outcome.
    """
    kind = normalize_kind(kind)
    units = (data.r.astype(float), data.a, data.y)
    exp = data.r == 0
    if kind in ("LT_RA", "LT_IPW", "W_RA"):
        fn = wt.ipw_pseudo_outcome if kind == "LT_IPW" else wt.ra_pseudo_outcome
        target = np.where(exp, fn(units, nv), 0.0)
        if kind == "W_RA":
            w = wt.weighting_function(weighting)(nv.pi, nv.rho)
        else:
            w = np.ones(data.n)
        return "mse", exp, target, np.asarray(w, dtype=float)
    if kind in ORTHOGONAL_WEIGHTS:
        table = wt.compute_pseudo_outcomes(units, nv, ORTHOGONAL_WEIGHTS[kind])
        return "bilinear", np.ones(data.n, bool), table.omega_star, table.t_lt
    if kind == "W_DR":
        w = np.asarray(wt.weighting_function(weighting)(nv.pi, nv.rho), dtype=float)
        t_dr = wt.dr_pseudo_outcome(units, nv)
        return "bilinear", np.ones(data.n, bool), w * exp, w * t_dr
    raise UnsupportedKindError(f"{kind} has no second stage")


def _train_second_stage(kind, x, data, nv, cfg: TrainConfig, seed, weighting):
    loss, mask, a, b = second_stage_data(kind, data, nv, weighting)
    params = cfg.with_seed(seed).estimator_params()
    flagged = False
    if loss == "mse":
        if not mask.any():
            raise FitError(f"{kind}: fold has no experimental units")
        model = MLPRegressor(**params).fit(x[mask], a[mask], sample_weight=b[mask])
    else:
        flagged = not a.sum() > 0
        model = BilinearMLP(**params).fit(x[mask], a[mask], b[mask])
    return model, flagged


def second_stage_objective(g_values, rows) -> float:
    """mean(omega* g^2 - 2 T g) over pseudo-outcome rows."""
    if isinstance(rows, wt.PseudoOutcomeTable):
        om, t = rows.omega_star, rows.t_lt
    else:
        rows = list(rows)
        om = np.array([r.omega_star for r in rows], dtype=float)
        t = np.array([r.t_lt for r in rows], dtype=float)
    g = as_vector(g_values, n=om.shape[0], name="g_values")
    if g.shape[0] == 0:
        raise DomainError("objective needs at least one row")
    return float(np.mean(om * g * g - 2.0 * t * g))


# --------------------------------------------------------------------------- estimator

class HLTELearner(BaseEstimator):
    """Cross-fitted estimator of the long-term conditional effect.

    Parameters
    ----------
    kind : str
        One of :data:`LEARNER_KINDS`.
    k_folds : int
        Number of cross-fitting folds.
    train : TrainConfig, optional
        Second-stage network configuration (default widths (20, 20, 10, 10),
        40 epochs).
    nuisance_configs : NuisanceConfigs, optional
    aggregation : {"average", "pooled"}
        Average the per-fold networks, or train one network on all
        out-of-fold pseudo-outcomes.
    weighting : str
        Weighting kind used by the W_RA and W_DR ablations.
    random_state : int or RngStream
    n_jobs : int, optional
        Worker count for per-fold fitting; defaults to ``$HLTE_JOBS``.
    """

    def __init__(self, kind="LT_O_DO", k_folds=5, train=None, nuisance_configs=None,
                 aggregation="average", weighting="DO", random_state=0, n_jobs=None):
        self.kind = kind
        self.k_folds = k_folds
        self.train = train
        self.nuisance_configs = nuisance_configs
        self.aggregation = aggregation
        self.weighting = weighting
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _stage_config(self) -> SecondStageConfig:
        return SecondStageConfig(k_folds=self.k_folds, train=self.train or second_stage_config(),
                                 aggregation=self.aggregation)

    def fit(self, data: CombinedDataset, crossfit_result: Optional[CrossFit] = None):
        """Fit on ``data``; ``crossfit_result`` reuses precomputed nuisances."""
        kind = normalize_kind(self.kind)
        cfg = self._stage_config()
        rng = as_rng_stream(self.random_state)
        if crossfit_result is None:
            crossfit_result = crossfit(data, cfg.k_folds, self.nuisance_configs, rng, self.n_jobs)
        elif crossfit_result.folds.k != cfg.k_folds or crossfit_result.values.pi.shape[0] != data.n:
            raise ConfigError("precomputed cross-fit does not match data or fold count")
        folds, nv = crossfit_result.folds, crossfit_result.values
        warnings = []
        if kind == "LT_T":
            models = [(s.mu1, s.mu0) for s in crossfit_result.sets]
        elif cfg.aggregation == "pooled":
            model, flagged = _train_second_stage(kind, data.x, data, nv, cfg.train,
                                                 rng.substream("stage2", "pooled"), self.weighting)
            models = [model]
            if flagged:
                warnings.append("non-positive omega* sum in pooled fit")
        else:
            def task(b):
                idx = folds.test_indices(b)
                sub = data.subset(idx)
                try:
                    return _train_second_stage(kind, sub.x, sub, nv.subset(idx), cfg.train,
                                               rng.substream("stage2", b), self.weighting)
                except FitError as exc:
                    exc.fold = b
                    raise
            results = parallel_map(task, range(folds.k), self.n_jobs)
            models = [m for m, _ in results]
            warnings += [f"non-positive omega* sum in fold {b}" for b, (_, f) in enumerate(results) if f]
        self.kind_ = kind
        self.models_ = models
        self.n_features_in_ = data.d_x
        self.provenance_ = {
            "kind": kind,
            "aggregation": cfg.aggregation,
            "k_folds": cfg.k_folds,
            "seed": [rng.seed, rng.stream_id],
            "data_fingerprint": data.fingerprint(),
            "train_config": cfg.train.to_dict(),
            "nuisance_config_hash": (self.nuisance_configs or NuisanceConfigs()).hash(),
            "weighting": str(self.weighting) if kind in ("W_RA", "W_DR") else None,
            "warnings": warnings,
        }
        self.provenance_["hash"] = _provenance_hash(self.provenance_)
        return self

    def predict(self, X) -> np.ndarray:
        """Mean over per-fold predictions."""
        check_is_fitted(self, "models_")
        X = as_matrix(X, n_features=self.n_features_in_)
        if self.kind_ == "LT_T":
            preds = [m1.predict(X) - m0.predict(X) for m1, m0 in self.models_]
        else:
            preds = [m.predict(X) for m in self.models_]
        return np.mean(preds, axis=0)

    predict_tau = predict

    # serialization
    def to_dict(self) -> dict:
        check_is_fitted(self, "models_")
        if self.kind_ == "LT_T":
            folds = [{"mu1": model_to_dict(a), "mu0": model_to_dict(b)} for a, b in self.models_]
        else:
            folds = [model_to_dict(m) for m in self.models_]
        return {"kind": self.kind_, "n_features": self.n_features_in_, "provenance": self.provenance_,
                "fold_models": folds}

    @classmethod
    def from_dict(cls, d: dict) -> "HLTELearner":
        prov = d["provenance"]
        est = cls(kind=d["kind"], k_folds=prov["k_folds"], aggregation=prov["aggregation"],
                  random_state=RngStream(*prov["seed"]))
        est.kind_ = d["kind"]
        est.n_features_in_ = int(d["n_features"])
        if est.kind_ == "LT_T":
            est.models_ = [(model_from_dict(f["mu1"]), model_from_dict(f["mu0"])) for f in d["fold_models"]]
        else:
            est.models_ = [model_from_dict(f) for f in d["fold_models"]]
        est.provenance_ = prov
        return est

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "HLTELearner":
        return cls.from_dict(json.loads(text))


def _provenance_hash(prov: dict) -> str:
    body = {k: v for k, v in prov.items() if k != "hash"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


def fit(kind, data: CombinedDataset, cfg: Optional[SecondStageConfig] = None, nuisance_cfgs=None,
        rng=0, crossfit_result=None, weighting="DO", jobs=None) -> HLTELearner:
    """Functional entry point returning a fitted :class:`HLTELearner`."""
    cfg = cfg or SecondStageConfig()
    est = HLTELearner(kind=kind, k_folds=cfg.k_folds, train=cfg.train, nuisance_configs=nuisance_cfgs,
                      aggregation=cfg.aggregation, weighting=weighting, random_state=rng, n_jobs=jobs)
    return est.fit(data, crossfit_result)


def predict_tau(model: HLTELearner, x) -> np.ndarray:
    return model.predict(x)


def save_predictions(tau_hat, path) -> None:
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["index", "tau_hat"])
        for i, v in enumerate(np.asarray(tau_hat, dtype=float).tolist()):
            out.writerow([i, repr(v)])
