import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gerbil.core import (
    EOS,
    PAD,
    SOS,
    EmptySubset,
    ParseError,
    SchemaError,
    SubsetRecord,
    TabularDataset,
    TokenOutOfRange,
    Vocabulary,
    apply_subset,
    canonicalize,
    is_canonical,
    load_dataset,
    load_records,
    save_dataset,
    save_records,
)


def b(i):
    # feature token for column i
    return i + 3


def test_canonicalize_literal_example():
    assert canonicalize([b(2), b(6), b(5), EOS, b(8)]) == (b(2), b(5), b(6))


def test_canonicalize_trivial_cases():
    assert canonicalize([EOS]) == ()
    assert canonicalize([b(3), b(3), b(1)]) == (b(1), b(3))
    assert canonicalize([SOS, b(4), PAD, b(1)]) == (b(1), b(4))


raw_seqs = st.lists(st.integers(min_value=0, max_value=20), max_size=30)


@settings(max_examples=200, deadline=None)
@given(raw_seqs)
def test_canonicalize_idempotent(seq):
    once = canonicalize(seq)
    assert canonicalize(once) == once
    assert once == () or is_canonical(once)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(min_value=3, max_value=20), max_size=20), st.randoms())
def test_canonicalize_permutation_invariant_without_eos(seq, rnd):
    shuffled = list(seq)
    rnd.shuffle(shuffled)
    assert canonicalize(shuffled) == canonicalize(seq)


def test_vocabulary_round_trip():
    v = Vocabulary(5)
    assert v.size == 8
    assert v.tokens([0, 4]) == [3, 7]
    assert v.columns([3, 7]) == [0, 4]
    assert not v.is_feature(EOS)
    with pytest.raises(TokenOutOfRange):
        v.column(8)


def test_dataset_validation():
    with pytest.raises(Exception):
        TabularDataset(np.zeros((3, 2)), np.array([0, 1, 2]))
    with pytest.raises(Exception):
        TabularDataset(np.array([[np.nan]]), np.array([0]))
    ds = TabularDataset(np.zeros((2, 2)), np.array([0, 1]))
    assert ds.features.flags.writeable is False


def test_apply_subset():
    X = np.arange(20, dtype=float).reshape(4, 5)
    ds = TabularDataset(X, np.array([0, 1, 0, 1]))
    sub = apply_subset(ds, [b(1), b(3)])
    np.testing.assert_array_equal(sub.features, X[:, [1, 3]])
    np.testing.assert_array_equal(sub.labels, ds.labels)
    full = apply_subset(ds, [b(i) for i in range(5)])
    np.testing.assert_array_equal(full.features, X)
    with pytest.raises(TokenOutOfRange):
        apply_subset(ds, [b(7)])
    with pytest.raises(EmptySubset):
        apply_subset(ds, [])


def test_records_round_trip(tmp_path):
    path = tmp_path / "r.jsonl"
    recs = [SubsetRecord((3, 5), 0.867)]
    save_records(recs, path)
    assert load_records(path) == recs


def test_record_validation():
    with pytest.raises(EmptySubset):
        SubsetRecord((), 0.5)
    with pytest.raises(ValueError):
        SubsetRecord((3,), 1.5)


def test_load_records_bad_line(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text('{"tokens": [3], "utility": 0.5}\n{oops\n')
    with pytest.raises(ParseError) as err:
        load_records(path)
    assert err.value.line == 2


def test_dataset_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = TabularDataset(rng.standard_normal((6, 3)), np.array([0, 1] * 3), ("a", "b", "c"))
    save_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.feature_names == ("a", "b", "c")


def test_csv_non_numeric_names_row_and_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x,y,label\n1,2,0\n3,abc,1\n")
    with pytest.raises(ParseError) as err:
        load_dataset(path)
    assert err.value.line == 3
    assert err.value.column == "y"
    assert "abc" in str(err.value)


def test_csv_missing_label(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(SchemaError):
        load_dataset(path)
