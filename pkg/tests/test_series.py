import json

import numpy as np
import pytest
from conftest import make_series
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from cdepaths.errors import (
    BadRatios,
    EmptySplit,
    IoError,
    ParseError,
    ShapeError,
    TooShort,
)
from cdepaths.series import (
    Dataset,
    RawSeries,
    augment,
    emit_csv,
    forward_fill,
    load_manifest,
    normalize,
    parse_csv,
    read_csv,
    save_manifest,
    split,
)

# ---------------------------------------------------------------------------
# parsing

def test_parse_all_observed():
    raw = parse_csv("time,a\n0,1.0\n1,2.0")
    assert raw.n == 1
    assert raw.fully_observed
    assert_array_equal(raw.values[:, 0], [1.0, 2.0])
    assert raw.channel_names == ("a",)


def test_parse_empty_cell_is_missing():
    raw = parse_csv("time,a\n0,1.0\n1,")
    assert_array_equal(raw.mask, [[True], [False]])


def test_parse_nan_cell_is_missing():
    raw = parse_csv("time,a,b\n0,1.0,nan\n1,NaN,2\n")
    assert_array_equal(raw.mask, [[True, False], [False, True]])


def test_parse_non_monotone_time_reports_row():
    with pytest.raises(ParseError) as info:
        parse_csv("time,a\n1,1.0\n0,2.0")
    assert info.value.row == 2


def test_parse_non_numeric_reports_row_and_col():
    with pytest.raises(ParseError) as info:
        parse_csv("time,a,b\n0,1,2\n1,3,abc\n")
    assert (info.value.row, info.value.col) == (2, 2)


@pytest.mark.parametrize("text", ["time,a\n", "time,a\n0,1\n"])
def test_parse_too_short(text):
    with pytest.raises(TooShort):
        parse_csv(text)


def test_parse_bad_header():
    with pytest.raises(ParseError):
        parse_csv("t,a\n0,1\n1,2\n")


def test_fully_unobserved_row_is_allowed():
    raw = parse_csv("time,a\n0,1\n1,\n2,3\n")
    assert not raw.mask[1].any()


def test_read_csv_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_csv(tmp_path / "absent.csv")


@st.composite
def raw_series(draw, max_rows=12, max_channels=3):
    n = draw(st.integers(2, max_rows))
    v = draw(st.integers(1, max_channels))
    gaps = draw(st.lists(st.floats(0.01, 10.0), min_size=n - 1, max_size=n - 1))
    t0 = draw(st.floats(-100.0, 100.0))
    t = t0 + np.concatenate([[0.0], np.cumsum(gaps)])
    if np.any(np.diff(t) <= 0):
        t = np.arange(n, dtype=float)
    vals = np.array(draw(st.lists(st.floats(-1e6, 1e6), min_size=n * v, max_size=n * v)))
    mask = np.array(draw(st.lists(st.booleans(), min_size=n * v, max_size=n * v)))
    vals, mask = vals.reshape(n, v), mask.reshape(n, v)
    return RawSeries(t, np.where(mask, vals, 0.0), mask, tuple(f"c{k}" for k in range(v)))


@settings(max_examples=60, deadline=None)
@given(raw_series())
def test_csv_round_trip(raw):
    assert parse_csv(emit_csv(raw)) == raw


def test_raw_series_rejects_decreasing_times():
    with pytest.raises(ParseError):
        RawSeries([0.0, 0.0], [[1.0], [2.0]], [[True], [True]], ("a",))


def test_raw_series_shape_mismatch():
    with pytest.raises(ShapeError):
        RawSeries([0.0, 1.0], [[1.0], [2.0], [3.0]], [[True], [True], [True]], ("a",))


def test_raw_series_is_immutable():
    raw = make_series([0, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        raw.values[0, 0] = 5.0


# ---------------------------------------------------------------------------
# augmentation

def test_intensity_counts_observations():
    raw = make_series([0, 1, 2], [1.0, None, 3.0])
    assert_array_equal(augment(raw).intensity[:, 0], [1, 1, 2])


def test_forward_fill_example():
    raw = make_series([0, 1, 2], [5.0, None, None])
    assert_array_equal(augment(raw).filled_values[:, 0], [5.0, 5.0, 5.0])


def test_leading_gap_filled_with_zero():
    raw = make_series([0, 1, 2], [None, 4.0, None])
    assert_array_equal(augment(raw).filled_values[:, 0], [0.0, 4.0, 4.0])


def test_all_observed_fill_is_identity(rng):
    v = rng.normal(size=(6, 3))
    raw = RawSeries(np.arange(6.0), v, np.ones_like(v, dtype=bool), ("a", "b", "c"))
    assert_array_equal(augment(raw).filled_values, v)


def test_channel_layout():
    raw = make_series([0, 1], [[1.0, 2.0], [3.0, None]], names=("a", "b"))
    aug = augment(raw, include_intensity=True)
    assert aug.channel_labels == ("time", "a", "b", "count_a", "count_b")
    assert aug.out_dim == 5
    assert augment(raw, include_time=False).out_dim == 2


@settings(max_examples=60, deadline=None)
@given(raw_series())
def test_intensity_and_fill_invariants(raw):
    aug = augment(raw, include_intensity=True)
    assert np.all(np.diff(aug.intensity, axis=0) >= 0)
    assert_array_equal(aug.intensity[-1], raw.mask.sum(axis=0))
    for j in range(raw.n_channels):
        for i in range(raw.n + 1):
            seen = np.flatnonzero(raw.mask[: i + 1, j])
            expected = raw.values[seen[-1], j] if seen.size else 0.0
            assert aug.filled_values[i, j] == expected


@settings(max_examples=40, deadline=None)
@given(raw_series())
def test_forward_fill_idempotent(raw):
    once = forward_fill(raw.values, raw.mask)
    refilled = augment(RawSeries(raw.timestamps, once, np.ones_like(raw.mask), raw.channel_names))
    assert_array_equal(refilled.filled_values, once)
    assert_array_equal(forward_fill(once, raw.mask), once)


# ---------------------------------------------------------------------------
# normalization

def _dataset(columns, tags):
    raws = [make_series(np.arange(len(c)), c) for c in columns]
    return Dataset.from_raw(raws, np.zeros(len(raws)), split_assignment=tags)


def test_normalize_two_point():
    ds = normalize(_dataset([[0.0, 2.0]], ["train"]))
    assert_allclose(ds.samples[0].values[:, 0], [-1.0, 1.0])
    assert_allclose(ds.normalization_stats[0], [1.0])
    assert_allclose(ds.normalization_stats[1], [1.0])


def test_normalize_constant_channel_is_centred():
    ds = normalize(_dataset([[3.0, 3.0, 3.0]], ["train"]))
    assert_array_equal(ds.samples[0].values[:, 0], [0.0, 0.0, 0.0])


def test_normalize_uses_train_statistics_only():
    ds = normalize(_dataset([[0.0, 2.0], [4.0, 4.0]], ["train", "val"]))
    assert_allclose(ds.samples[1].values[:, 0], [3.0, 3.0])


def test_normalize_ignores_missing_cells():
    ds = normalize(_dataset([[0.0, None, 2.0]], ["train"]))
    assert_allclose(ds.samples[0].values[[0, 2], 0], [-1.0, 1.0])
    assert not ds.samples[0].mask[1, 0]


def test_normalize_train_moments(rng):
    raws = [RawSeries(np.arange(8.0), rng.normal(3.0, 5.0, size=(8, 2)), np.ones((8, 2), bool),
                      ("a", "b")) for _ in range(10)]
    ds = split(Dataset.from_raw(raws, np.zeros(10)), seed=1)
    ds = normalize(ds)
    train, _ = ds.subset("train")
    vals = np.concatenate([s.values for s in train])
    assert np.all(np.abs(vals.mean(axis=0)) <= 1e-9)
    assert np.all(np.abs(vals.std(axis=0) - 1.0) <= 1e-9)


def test_normalize_without_train_split():
    with pytest.raises(EmptySplit):
        normalize(_dataset([[0.0, 1.0]], ["val"]))


# ---------------------------------------------------------------------------
# splits

def _two_class(n):
    raws = [make_series([0, 1], [float(i), 1.0]) for i in range(n)]
    return Dataset.from_raw(raws, np.arange(n) % 2)


def test_split_sizes_70_15_15():
    ds = split(_two_class(100))
    counts = [len(ds.indices(name)) for name in ("train", "val", "test")]
    assert counts == [70, 15, 15]


def test_split_deterministic():
    a = split(_two_class(37), seed=4)
    b = split(_two_class(37), seed=4)
    assert a.split_assignment == b.split_assignment
    assert split(_two_class(37), seed=5).split_assignment != a.split_assignment


def test_stratified_split_balances_classes():
    # per class: 10 * (0.5, 0.25, 0.25) = (5, 2.5, 2.5) -> floor (5, 2, 2),
    # the spare sample goes to the earlier of the tied splits -> (5, 3, 2)
    ds = split(_two_class(20), ratios=(0.5, 0.25, 0.25), seed=0, stratify_labels=True)
    for name, size in zip(("train", "val", "test"), (5, 3, 2)):
        labels = ds.labels[ds.indices(name)]
        assert (labels == 0).sum() == size
        assert (labels == 1).sum() == size


@pytest.mark.parametrize("ratios", [(0.5, 0.5, 0.5), (0.7, 0.3), (1.2, -0.1, -0.1)])
def test_split_bad_ratios(ratios):
    with pytest.raises(BadRatios):
        split(_two_class(10), ratios=ratios)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 10))
def test_split_fractions_within_one(n, a, b, seed):
    a, b = sorted((a, b))
    ratios = (a, b - a, 1.0 - b)
    ds = split(_two_class(n), ratios=ratios, seed=seed)
    for name, r in zip(("train", "val", "test"), ratios):
        assert abs(len(ds.indices(name)) - r * n) <= 1.0


# ---------------------------------------------------------------------------
# manifests

def test_manifest_round_trip(tmp_path):
    files = []
    for k in range(3):
        path = tmp_path / f"s{k}.csv"
        path.write_text(emit_csv(make_series([0, 1, 2], [1.0, None, float(k)])))
        files.append(path.name)
    save_manifest(tmp_path / "m.json", files, [0, 1, 0], ("train", "val", "test"),
                  include_intensity=True)
    ds, _ = load_manifest(tmp_path / "m.json")
    assert len(ds) == 3
    assert ds.split_assignment == ("train", "val", "test")
    assert ds.samples[0].include_intensity
    assert_array_equal(ds.labels, [0, 1, 0])


def test_manifest_unknown_key(tmp_path):
    (tmp_path / "a.csv").write_text("time,a\n0,1\n1,2\n")
    (tmp_path / "m.json").write_text(json.dumps({"samples": [{"file": "a.csv", "label": 0,
                                                              "weight": 2}]}))
    with pytest.raises(ParseError):
        load_manifest(tmp_path / "m.json")
