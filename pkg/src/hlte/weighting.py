"""Weighting functions and pseudo-outcome algebra.

Every function here is vectorized over units.  Units may be passed as a
single :class:`~hlte.datamodel.UnitRecord`, a
:class:`~hlte.datamodel.CombinedDataset`, or a tuple of arrays ``(r, a, y)``;
nuisance values as any object (or mapping) exposing arrays named ``pi``,
``pi_s``, ``rho``, ``rho_s``, ``h``, ``mu0`` and ``mu1``.  A single unit
returns a float, anything else an array.

Quantities that only exist on one sample (``tau_aipw`` and the RA/IPW
pseudo-outcomes on ``r == 0``, ``psi_obs`` on ``r == 1``) are ``NaN`` on the
other sample; a lone unit from the wrong sample raises :class:`DomainError`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .datamodel import CombinedDataset, UnitRecord
from .exceptions import DegenerateWeightError, DomainError, ParseError, SchemaError, UnsupportedKindError

__all__ = [
    "KINDS",
    "PseudoOutcomeRow",
    "PseudoOutcomeTable",
    "WeightedAte",
    "WeightingFunction",
    "closed_form_omega_star",
    "closed_form_t_lt",
    "compute_pseudo_outcomes",
    "dr_pseudo_outcome",
    "ipw_pseudo_outcome",
    "omega_residual",
    "omega_star",
    "psi_obs",
    "ra_pseudo_outcome",
    "t_lt",
    "tau_aipw",
    "to_learner_terms",
    "weighted_ate",
    "weighting_function",
]

KINDS = ("NO", "TO", "LO", "DO")


# --------------------------------------------------------------------------- weighting functions

@dataclass(frozen=True)
class WeightingFunction:
    """omega(pi, rho) together with its two analytic partial derivatives."""

    kind: str
    value: Callable
    d_pi: Callable
    d_rho: Callable

    def __call__(self, pi, rho):
        return self.value(pi, rho)

    def __repr__(self):
        return f"WeightingFunction({self.kind!r})"

    @classmethod
    def custom(cls, value, d_pi, d_rho, name="custom") -> "WeightingFunction":
        for f in (value, d_pi, d_rho):
            if not callable(f):
                raise DomainError("custom weighting needs callable value and partials")
        return cls(name, value, d_pi, d_rho)


def _zeros(pi, rho):
    return np.zeros(np.broadcast(np.asarray(pi), np.asarray(rho)).shape)


def _ones(pi, rho):
    return np.ones(np.broadcast(np.asarray(pi), np.asarray(rho)).shape)


_NAMED = {
    "NO": (_ones, _zeros, _zeros),
    "TO": (lambda p, q: p * (1 - p) + 0 * q,
           lambda p, q: 1 - 2 * p + 0 * q,
           _zeros),
    "LO": (lambda p, q: q + 0 * p,
           _zeros,
           _ones),
    "DO": (lambda p, q: p * (1 - p) * q,
           lambda p, q: (1 - 2 * p) * q,
           lambda p, q: p * (1 - p) + 0 * q),
}


def weighting_function(kind) -> WeightingFunction:
    """Named weighting: NO (1), TO (pi(1-pi)), LO (rho) or DO (pi(1-pi)rho)."""
    if isinstance(kind, WeightingFunction):
        return kind
    key = str(kind).upper()
    if key not in _NAMED:
        raise UnsupportedKindError(f"unknown weighting kind {kind!r}; expected one of {KINDS}")
    return WeightingFunction(key, *_NAMED[key])


# --------------------------------------------------------------------------- input plumbing

def _units(unit):
    """Return (r, a, y, is_scalar) as float arrays; absent entries are NaN."""
    if isinstance(unit, UnitRecord):
        a = np.nan if unit.a is None else float(unit.a)
        y = np.nan if unit.y is None else float(unit.y)
        return np.array([float(unit.r)]), np.array([a]), np.array([y]), True
    if isinstance(unit, CombinedDataset):
        return unit.r.astype(float), unit.a, unit.y, False
    try:
        r, a, y = unit
    except (TypeError, ValueError):
        raise DomainError("units must be a UnitRecord, CombinedDataset or (r, a, y) tuple") from None
    r = np.atleast_1d(np.asarray(r, dtype=float))
    a = np.broadcast_to(np.asarray(np.nan if a is None else a, dtype=float), r.shape)
    y = np.broadcast_to(np.asarray(np.nan if y is None else y, dtype=float), r.shape)
    return r, a, y, False


class _NV:
    """Attribute view over nuisance values broadcasting to the unit count."""

    def __init__(self, nv, n):
        self._nv, self._n = nv, n

    def __getattr__(self, name):
        src = self._nv
        val = src[name] if isinstance(src, dict) else getattr(src, name, None)
        if val is None:
            raise DomainError(f"nuisance value {name!r} is required")
        arr = np.atleast_1d(np.asarray(val, dtype=float))
        if arr.shape[0] not in (1, self._n):
            raise DomainError(f"nuisance {name!r} has {arr.shape[0]} entries, expected {self._n}")
        return np.broadcast_to(arr, (self._n,))


def _prep(unit, nv):
    r, a, y, scalar = _units(unit)
    return r, a, y, _NV(nv, r.shape[0]), scalar


def _out(values, scalar):
    return float(values[0]) if scalar else values


def _require(r, stratum, scalar, what):
    if scalar and r[0] != stratum:
        raise DomainError(f"{what} is only defined for r={stratum} units")


def _mu_a(a, nv):
    return np.where(a == 1, nv.mu1, nv.mu0)


# --------------------------------------------------------------------------- components

def _aipw(a, nv):
    pi = nv.pi
    return nv.mu1 - nv.mu0 + (a - pi) / (pi * (1 - pi)) * (nv.h - _mu_a(a, nv))


def _psi(y, nv):
    pi, rs = nv.pi, nv.rho_s
    return (1 - rs) / rs * ((nv.pi_s - pi) / (pi * (1 - pi))) * (y - nv.h)


def tau_aipw(unit, nv):
    """mu1 - mu0 + (A - pi) / (pi (1 - pi)) * (h - mu_A), experimental units."""
    r, a, y, nv, scalar = _prep(unit, nv)
    _require(r, 0, scalar, "tau_aipw")
    return _out(np.where(r == 0, _aipw(a, nv), np.nan), scalar)


def psi_obs(unit, nv):
    """(1 - rho_s)/rho_s * (pi_s - pi)/(pi (1 - pi)) * (Y - h), observational units."""
    r, a, y, nv, scalar = _prep(unit, nv)
    _require(r, 1, scalar, "psi_obs")
    return _out(np.where(r == 1, _psi(y, nv), np.nan), scalar)


def _omega_parts(r, a, nv, w):
    pi, rho = nv.pi, nv.rho
    value = np.asarray(w.value(pi, rho), dtype=float)
    a0 = np.where(r == 0, a, 0.0)
    resid = np.where(r == 0, w.d_pi(pi, rho) * (a0 - pi), 0.0) + (1 - rho) * w.d_rho(pi, rho) * (r - rho)
    return value, resid


def omega_residual(unit, nv, w):
    """1(R=0) d_pi omega (A - pi) + (1 - rho) d_rho omega (R - rho)."""
    r, a, y, nv, scalar = _prep(unit, nv)
    return _out(_omega_parts(r, a, nv, weighting_function(w))[1], scalar)


def omega_star(unit, nv, w):
    """1(R=0) omega + Omega.  May be negative on individual units."""
    r, a, y, nv, scalar = _prep(unit, nv)
    value, resid = _omega_parts(r, a, nv, weighting_function(w))
    return _out(np.where(r == 0, value, 0.0) + resid, scalar)


def _t_lt(r, a, y, nv, w):
    value, resid = _omega_parts(r, a, nv, w)
    exp = r == 0
    with np.errstate(invalid="ignore"):
        branch = np.where(exp, value * _aipw(np.where(exp, a, 0.0), nv),
                          value * _psi(np.where(exp, 0.0, y), nv))
    return branch + (nv.mu1 - nv.mu0) * resid


def t_lt(unit, nv, w):
    """1(R=0) omega tau_aipw + 1(R=1) omega psi_obs + (mu1 - mu0) Omega."""
    r, a, y, nv, scalar = _prep(unit, nv)
    return _out(_t_lt(r, a, y, nv, weighting_function(w)), scalar)


def dr_pseudo_outcome(unit, nv):
    """tau_aipw on experimental units, psi_obs on observational units."""
    return t_lt(unit, nv, "NO")


# --------------------------------------------------------------------------- closed forms

def _closed_kind(kind) -> str:
    key = kind.kind if isinstance(kind, WeightingFunction) else str(kind).upper()
    if key not in ("TO", "LO", "DO"):
        raise UnsupportedKindError(f"no closed form for weighting kind {key!r}")
    return key


def _closed_omega(key, r, a, nv):
    pi, rho = nv.pi, nv.rho
    exp = r == 0
    a0 = np.where(exp, a, 0.0)
    if key == "TO":
        return np.where(exp, (a0 - pi) ** 2, 0.0)
    if key == "LO":
        return (r - rho) ** 2
    return np.where(exp, rho * (rho * pi * (1 - pi) + (1 - 2 * pi) * (a0 - pi)),
                    pi * (1 - pi) * (1 - rho) ** 2)


def closed_form_omega_star(unit, nv, kind):
    """Simplified omega* for TO, LO and DO weighting."""
    key = _closed_kind(kind)
    r, a, y, nv, scalar = _prep(unit, nv)
    return _out(_closed_omega(key, r, a, nv), scalar)


def closed_form_t_lt(unit, nv, kind):
    """Simplified T_LT for TO, LO and DO weighting.

    TO: ``(A - pi)(h - m)`` on experimental units and ``psi_t`` on
    observational units.  LO and DO: ``(mu1 - mu0) omega*`` plus the weighted
    residual corrections.
    """
    key = _closed_kind(kind)
    r, a, y, nv, scalar = _prep(unit, nv)
    exp = r == 0
    a0 = np.where(exp, a, 0.0)
    y1 = np.where(exp, 0.0, y)
    pi, rho = nv.pi, nv.rho
    if key == "TO":
        m, psi_t = _to_terms(r, y1, nv)
        out = np.where(exp, (a0 - pi) * (nv.h - m), psi_t)
    else:
        delta = nv.mu1 - nv.mu0
        resid = nv.h - _mu_a(a0, nv)
        if key == "LO":
            corr = np.where(exp, rho * (a0 - pi) / (pi * (1 - pi)) * resid, rho * _psi(y1, nv))
        else:
            corr = np.where(exp, rho * (a0 - pi) * resid, rho * pi * (1 - pi) * _psi(y1, nv))
        out = delta * _closed_omega(key, r, a, nv) + corr
    return _out(out, scalar)


def _to_terms(r, y, nv):
    m = nv.pi * nv.mu1 + (1 - nv.pi) * nv.mu0
    rs = nv.rho_s
    psi_t = np.where(r == 1, (1 - rs) / rs * (nv.pi_s - nv.pi) * (y - nv.h), 0.0)
    return m, psi_t


def to_learner_terms(unit, nv):
    """(m, psi_t) with m = pi mu1 + (1 - pi) mu0 and psi_t zero on r=0 units."""
    r, a, y, nv, scalar = _prep(unit, nv)
    m, psi_t = _to_terms(r, np.where(r == 1, y, 0.0), nv)
    if scalar:
        return float(m[0]), float(psi_t[0])
    return m, psi_t


# --------------------------------------------------------------------------- baselines

def ra_pseudo_outcome(unit, nv):
    """A (h - mu0) + (1 - A)(mu1 - h) on experimental units."""
    r, a, y, nv, scalar = _prep(unit, nv)
    _require(r, 0, scalar, "ra_pseudo_outcome")
    out = a * (nv.h - nv.mu0) + (1 - a) * (nv.mu1 - nv.h)
    return _out(np.where(r == 0, out, np.nan), scalar)


def ipw_pseudo_outcome(unit, nv):
    """(A / pi - (1 - A) / (1 - pi)) h on experimental units."""
    r, a, y, nv, scalar = _prep(unit, nv)
    _require(r, 0, scalar, "ipw_pseudo_outcome")
    out = (a / nv.pi - (1 - a) / (1 - nv.pi)) * nv.h
    return _out(np.where(r == 0, out, np.nan), scalar)


# --------------------------------------------------------------------------- weighted ATE

@dataclass(frozen=True)
class WeightedAte:
    numerator: float
    denominator: float

    @property
    def value(self) -> float:
        return self.numerator / self.denominator


def weighted_ate(pi, rho, tau, w, r=None) -> WeightedAte:
    """mean(omega tau) / mean(omega) over experimental units.

    ``r`` selects the experimental units; when omitted all entries are taken
    to be experimental.
    """
    w = weighting_function(w)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    pi = np.broadcast_to(np.asarray(pi, dtype=float), tau.shape)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), tau.shape)
    mask = np.ones(tau.shape, bool) if r is None else (np.asarray(r) == 0)
    if not mask.any():
        raise DomainError("weighted_ate needs at least one experimental unit")
    om = np.broadcast_to(np.asarray(w.value(pi, rho), dtype=float), tau.shape)[mask]
    den = float(om.mean())
    if not den > 0:
        raise DegenerateWeightError(f"weight normaliser is {den}, must be positive")
    return WeightedAte(float((om * tau[mask]).mean()), den)


# --------------------------------------------------------------------------- pseudo-outcome tables

class PseudoOutcomeRow(NamedTuple):
    index: int
    r: int
    omega_star: float
    t_lt: float


class PseudoOutcomeTable:
    """Column store of per-unit (omega*, T) pairs."""

    def __init__(self, index, r, omega_star, t_lt):
        self.index = np.asarray(index, dtype=np.int64)
        self.r = np.asarray(r, dtype=np.int8)
        self.omega_star = np.asarray(omega_star, dtype=float)
        self.t_lt = np.asarray(t_lt, dtype=float)
        n = self.index.shape[0]
        if not (self.r.shape == self.omega_star.shape == self.t_lt.shape == (n,)):
            raise DomainError("pseudo-outcome columns must have equal length")

    def __len__(self):
        return self.index.shape[0]

    def __iter__(self):
        for row in zip(self.index.tolist(), self.r.tolist(), self.omega_star.tolist(), self.t_lt.tolist()):
            yield PseudoOutcomeRow(*row)

    def __eq__(self, other):
        if not isinstance(other, PseudoOutcomeTable):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("index", "r", "omega_star", "t_lt"))

    @classmethod
    def from_rows(cls, rows):
        rows = list(rows)
        cols = list(zip(*rows)) if rows else [[], [], [], []]
        return cls(*cols)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["index", "r", "omega_star", "t_lt"])
            for row in self:
                out.writerow([row.index, row.r, repr(row.omega_star), repr(row.t_lt)])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rd = csv.reader(fh)
            header = next(rd, None)
            if header != ["index", "r", "omega_star", "t_lt"]:
                raise SchemaError(f"unexpected pseudo-outcome header {header}", row=1)
            cols = [[], [], [], []]
            for i, rec in enumerate(rd, start=2):
                if len(rec) != 4:
                    raise ParseError("expected 4 fields", row=i)
                try:
                    cols[0].append(int(rec[0]))
                    cols[1].append(int(rec[1]))
                    cols[2].append(float(rec[2]))
                    cols[3].append(float(rec[3]))
                except ValueError:
                    raise ParseError("malformed number", row=i) from None
        return cls(*cols)


def compute_pseudo_outcomes(data, nv, w, index=None) -> PseudoOutcomeTable:
    """omega* and T_LT for every unit of ``data``."""
    r, a, y, view, _ = _prep(data, nv)
    w = weighting_function(w)
    value, resid = _omega_parts(r, a, view, w)
    om = np.where(r == 0, value, 0.0) + resid
    t = _t_lt(r, a, y, view, w)
    idx = np.arange(r.shape[0]) if index is None else index
    return PseudoOutcomeTable(idx, r.astype(np.int8), om, t)
