import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hlte.datamodel import CombinedDataset, UnitRecord, load_csv, make_folds, save_csv
from hlte.exceptions import ConfigError, DomainError, ParseError
from hlte.numerics import RngStream
from conftest import small_dataset


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_unit_record_invariants():
    UnitRecord(x=np.zeros(2), r=0, s=np.zeros(1), a=1)
    UnitRecord(x=np.zeros(2), r=1, s=np.zeros(1), y=0.3)
    with pytest.raises(DomainError):
        UnitRecord(x=np.zeros(2), r=1, s=np.zeros(1), a=1, y=0.2)
    with pytest.raises(DomainError):
        UnitRecord(x=np.zeros(2), r=0, s=np.zeros(1), a=1, y=0.2)
    with pytest.raises(DomainError):
        UnitRecord(x=np.zeros(2), r=2, s=np.zeros(1), a=1)


def test_dataset_needs_both_samples():
    with pytest.raises(DomainError):
        CombinedDataset(np.zeros((2, 1)), [0, 0], np.zeros((2, 1)), [0, 1], [np.nan, np.nan])


def test_load_row_mapping(tmp_path):
    p = _write(tmp_path / "d.csv", "x0,x1,r,a,s0,y\n0.1,0.2,0,1,0.3,\n0.5,0.6,1,,0.7,1.5\n")
    d = load_csv(p)
    u = d[0]
    assert u.r == 0 and u.a == 1 and u.y is None
    assert d[1].y == 1.5 and d[1].a is None
    assert d.d_x == 2 and d.d_s == 1


@pytest.mark.parametrize("row,col", [
    ("0.1,0.2,1,1,0.3,2.0", "a"),
    ("0.1,0.2,0,1,0.3,2.0", "y"),
    ("0.1,0.2,3,1,0.3,", "r"),
    ("0.1,inf,0,1,0.3,", "x1"),
    ("0.1,abc,0,1,0.3,", "x1"),
])
def test_load_parse_errors_name_row_and_column(tmp_path, row, col):
    p = _write(tmp_path / "d.csv", f"x0,x1,r,a,s0,y\n0.5,0.6,1,,0.7,1.5\n{row}\n")
    with pytest.raises(ParseError) as exc:
        load_csv(p)
    assert exc.value.row == 3
    assert exc.value.column == col


def test_load_schema_mismatch(tmp_path):
    p = _write(tmp_path / "d.csv", "x0,a,r,s0,y\n")
    with pytest.raises(ParseError):
        load_csv(p)


def test_save_counts_and_empty_cells(tmp_path):
    d = CombinedDataset(np.arange(3.0)[:, None], [0, 1, 0], np.ones((3, 1)), [1, np.nan, 0], [np.nan, 2.5, np.nan])
    p = tmp_path / "d.csv"
    save_csv(d, p)
    lines = p.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == "x0,r,a,s0,y"
    assert lines[1].endswith(",")
    assert ",1,," in lines[2]


def test_round_trip_bit_exact(tmp_path):
    d = small_dataset(300, seed=4)
    p = tmp_path / "d.csv"
    save_csv(d, p)
    e = load_csv(p)
    for f in ("x", "s", "r"):
        assert np.array_equal(getattr(d, f), getattr(e, f))
    assert np.array_equal(d.a, e.a, equal_nan=True)
    assert np.array_equal(d.y, e.y, equal_nan=True)
    assert d.fingerprint() == e.fingerprint()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=2, max_size=20))
def test_round_trip_property(tmp_path_factory, xs):
    n = len(xs)
    r = np.arange(n) % 2
    d = CombinedDataset(np.array(xs)[:, None], r, np.array(xs)[::-1, None],
                        np.where(r == 0, 1.0, np.nan), np.where(r == 1, np.array(xs), np.nan))
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    save_csv(d, p)
    e = load_csv(p)
    assert np.array_equal(d.x, e.x) and np.array_equal(d.y, e.y, equal_nan=True)


def _strat_data(n0, n1):
    n = n0 + n1
    r = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    return CombinedDataset(np.zeros((n, 1)), r, np.zeros((n, 1)), np.where(r == 0, 0.0, np.nan),
                           np.where(r == 1, 0.0, np.nan))


def test_folds_balanced():
    d = _strat_data(100, 100)
    f = make_folds(d, 5, RngStream(0))
    for b in range(5):
        idx = f.test_indices(b)
        assert (d.r[idx] == 0).sum() == 20 and (d.r[idx] == 1).sum() == 20


def test_folds_remainder():
    d = _strat_data(3, 4)
    f = make_folds(d, 2, RngStream(0))
    sizes = sorted((d.r[f.test_indices(b)] == 0).sum() for b in range(2))
    assert sizes == [1, 2]


def test_folds_deterministic_and_seed_sensitive():
    d = _strat_data(50, 70)
    a = make_folds(d, 5, RngStream(3)).fold_of
    assert np.array_equal(a, make_folds(d, 5, RngStream(3)).fold_of)
    assert not np.array_equal(a, make_folds(d, 5, RngStream(4)).fold_of)


def test_folds_too_small():
    with pytest.raises(ConfigError):
        make_folds(_strat_data(3, 10), 5, RngStream(0))
    with pytest.raises(ConfigError):
        make_folds(_strat_data(10, 10), 1, RngStream(0))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.integers(2, 60), st.integers(2, 6), st.integers(0, 2**32))
def test_folds_partition_property(n0, n1, k, seed):
    if min(n0, n1) < k:
        return
    d = _strat_data(n0, n1)
    f = make_folds(d, k, RngStream(seed))
    allidx = np.concatenate([f.test_indices(b) for b in range(k)])
    assert np.array_equal(np.sort(allidx), np.arange(d.n))
    for b in range(k):
        assert np.intersect1d(f.test_indices(b), f.train_indices(b)).size == 0
    for stratum in (0, 1):
        counts = [(d.r[f.test_indices(b)] == stratum).sum() for b in range(k)]
        assert max(counts) - min(counts) <= 1 and min(counts) >= 1
