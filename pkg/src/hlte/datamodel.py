"""Two-sample dataset container, CSV persistence and stratified folds.

Rows with ``r == 0`` come from the short-term randomized experiment and carry
a treatment ``a`` but no long-term outcome; rows with ``r == 1`` come from the
observational sample and carry ``y`` but no treatment.  Absent values are held
as ``NaN`` in memory and written as empty CSV cells.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .exceptions import ConfigError, DomainError, ParseError, SchemaError
from .numerics import RngStream, as_rng_stream

__all__ = [
    "CombinedDataset",
    "FoldAssignment",
    "UnitRecord",
    "load_csv",
    "make_folds",
    "save_csv",
]


@dataclass(frozen=True)
class UnitRecord:
    x: np.ndarray
    r: int
    s: np.ndarray
    a: Optional[int] = None
    y: Optional[float] = None

    def __post_init__(self):
        if self.r not in (0, 1):
            raise DomainError(f"r must be 0 or 1, got {self.r}")
        if self.r == 0 and (self.a is None or self.y is not None):
            raise DomainError("experimental units need a treatment and no outcome")
        if self.r == 1 and (self.y is None or self.a is not None):
            raise DomainError("observational units need an outcome and no treatment")


class CombinedDataset:
    """Immutable union of the experimental and observational samples.

    Parameters
    ----------
    x : array of shape (n, d_x)
    r : array of shape (n,), values in {0, 1}
    s : array of shape (n, d_s)
    a : array of shape (n,); NaN where ``r == 1``
    y : array of shape (n,); NaN where ``r == 0``
    """

    def __init__(self, x, r, s, a, y, *, require_both=True):
        x = np.array(x, dtype=float, copy=True)
        s = np.array(s, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if s.ndim == 1:
            s = s[:, None]
        r = np.asarray(r)
        a = np.array(a, dtype=float, copy=True)
        y = np.array(y, dtype=float, copy=True)
        n = x.shape[0]
        for name, arr in (("r", r), ("s", s), ("a", a), ("y", y)):
            if arr.shape[0] != n:
                raise DomainError(f"{name} has {arr.shape[0]} rows, expected {n}")
        if not np.all(np.isin(r, (0, 1))):
            raise DomainError("r must contain only 0 and 1")
        r = r.astype(np.int8)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(s))):
            raise DomainError("covariates and surrogates must be finite")
        exp, obs = r == 0, r == 1
        if np.any(np.isnan(a[exp])) or np.any(~np.isin(a[exp], (0.0, 1.0))):
            raise DomainError("experimental units need a binary treatment")
        if np.any(~np.isnan(a[obs])):
            raise DomainError("observational units must not carry a treatment")
        if np.any(~np.isfinite(y[obs])):
            raise DomainError("observational units need a finite outcome")
        if np.any(~np.isnan(y[exp])):
            raise DomainError("experimental units must not carry an outcome")
        if require_both and (not exp.any() or not obs.any()):
            raise DomainError("dataset needs at least one unit from each sample")
        for arr in (x, s, a, y, r):
            arr.setflags(write=False)
        self.x, self.r, self.s, self.a, self.y = x, r, s, a, y

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_s(self) -> int:
        return self.s.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> UnitRecord:
        r = int(self.r[i])
        return UnitRecord(
            x=self.x[i], r=r, s=self.s[i],
            a=int(self.a[i]) if r == 0 else None,
            y=float(self.y[i]) if r == 1 else None,
        )

    def units(self) -> Iterator[UnitRecord]:
        for i in range(self.n):
            yield self[i]

    @classmethod
    def from_units(cls, units) -> "CombinedDataset":
        units = list(units)
        if not units:
            raise DomainError("no units given")
        x = np.stack([np.atleast_1d(u.x) for u in units])
        s = np.stack([np.atleast_1d(u.s) for u in units])
        r = np.array([u.r for u in units])
        a = np.array([np.nan if u.a is None else u.a for u in units], dtype=float)
        y = np.array([np.nan if u.y is None else u.y for u in units], dtype=float)
        return cls(x, r, s, a, y)

    def subset(self, idx, *, require_both=False) -> "CombinedDataset":
        idx = np.asarray(idx)
        return CombinedDataset(self.x[idx], self.r[idx], self.s[idx], self.a[idx], self.y[idx],
                               require_both=require_both)

    @property
    def xs(self) -> np.ndarray:
        """Surrogate-and-covariate design matrix ``[s, x]``."""
        return np.hstack([self.s, self.x])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.x, self.r.astype(float), self.s, self.a, self.y):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, CombinedDataset):
            return NotImplemented
        return all(
            a.shape == b.shape and np.array_equal(a, b, equal_nan=True)
            for a, b in ((self.x, other.x), (self.r, other.r), (self.s, other.s),
                         (self.a, other.a), (self.y, other.y))
        )

    def __repr__(self):
        n_exp = int((self.r == 0).sum())
        return (f"CombinedDataset(n={self.n}, experimental={n_exp}, "
                f"observational={self.n - n_exp}, d_x={self.d_x}, d_s={self.d_s})")


def _header(d_x: int, d_s: int) -> list[str]:
    return [f"x{j}" for j in range(d_x)] + ["r", "a"] + [f"s{j}" for j in range(d_s)] + ["y"]


def _fmt(v: float) -> str:
    # repr gives the shortest decimal that round-trips (at most 17 digits)
    return repr(float(v))


def save_csv(data: CombinedDataset, path) -> None:
    """Write ``data`` in input order; absent ``a``/``y`` become empty cells."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(data.d_x, data.d_s))
        for i in range(data.n):
            r = int(data.r[i])
            row = [_fmt(v) for v in data.x[i]]
            row += [str(r), "" if r == 1 else str(int(data.a[i]))]
            row += [_fmt(v) for v in data.s[i]]
            row.append("" if r == 0 else _fmt(data.y[i]))
            writer.writerow(row)


def _parse_header(header: list[str]) -> tuple[int, int]:
    try:
        r_pos = header.index("r")
    except ValueError:
        raise SchemaError("header lacks an 'r' column", row=1) from None
    d_x = r_pos
    d_s = len(header) - d_x - 3
    if d_s < 0 or header != _header(d_x, d_s):
        raise SchemaError("header does not match x0..,r,a,s0..,y", row=1)
    if d_x < 1 or d_s < 1:
        raise SchemaError("need at least one covariate and one surrogate column", row=1)
    return d_x, d_s


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"cannot parse {cell!r} as a number", row=row, column=col) from None
    if not np.isfinite(v):
        raise ParseError("non-finite value", row=row, column=col)
    return v


def load_csv(path) -> CombinedDataset:
    """Read and validate a dataset written by :func:`save_csv`.

    Row numbers in error messages count the header as row 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file", row=1) from None
        d_x, d_s = _parse_header(header)
        xs, ss, rs, as_, ys = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(row)}", row=lineno)
            x = [_parse_float(row[j], lineno, header[j]) for j in range(d_x)]
            r_cell, a_cell = row[d_x].strip(), row[d_x + 1].strip()
            if r_cell not in ("0", "1"):
                raise ParseError(f"r must be 0 or 1, got {r_cell!r}", row=lineno, column="r")
            r = int(r_cell)
            s = [_parse_float(row[d_x + 2 + j], lineno, f"s{j}") for j in range(d_s)]
            y_cell = row[-1].strip()
            if r == 0:
                if a_cell not in ("0", "1"):
                    raise ParseError("experimental unit needs a in {0, 1}", row=lineno, column="a")
                if y_cell:
                    raise ParseError("y present for an experimental unit", row=lineno, column="y")
                a, y = float(a_cell), np.nan
            else:
                if a_cell:
                    raise ParseError("a present for an observational unit", row=lineno, column="a")
                if not y_cell:
                    raise ParseError("observational unit lacks y", row=lineno, column="y")
                a, y = np.nan, _parse_float(y_cell, lineno, "y")
            xs.append(x)
            ss.append(s)
            rs.append(r)
            as_.append(a)
            ys.append(y)
    if not rs:
        raise ParseError("file has no data rows", row=2)
    return CombinedDataset(np.array(xs), np.array(rs), np.array(ss), np.array(as_), np.array(ys))


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    def __iter__(self):
        for b in range(self.k):
            yield self.train_indices(b), self.test_indices(b)


def make_folds(data: CombinedDataset, k: int, rng) -> FoldAssignment:
    """Random ``k``-fold partition stratified on the sample indicator."""
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    gen = as_rng_stream(rng).generator()
    fold_of = np.empty(data.n, dtype=np.int64)
    for stratum in (0, 1):
        idx = np.flatnonzero(data.r == stratum)
        if idx.size < k:
            raise ConfigError(f"stratum r={stratum} has {idx.size} units, fewer than k={k}")
        perm = gen.permutation(idx)
        fold_of[perm] = np.arange(perm.size) % k
    fold_of.setflags(write=False)
    return FoldAssignment(k, fold_of)
