import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_income
from fmeval.domain import (
    CATEGORICAL,
    Example,
    FeatureSchema,
    SeriesDataset,
    TabularDataset,
    denormalize,
    dumps_csv,
    dumps_schema,
    loads_dataset,
    normalize_minmax,
    split,
)
from fmeval.errors import InvalidData, InvalidSplit


def numeric_ds(values, name="v"):
    rows = tuple(Example((float(v),), 0.0, i) for i, v in enumerate(values))
    return TabularDataset((FeatureSchema(name),), rows, FeatureSchema("y"))


def binary_ds(n_pos, n_neg):
    labels = [1] * n_pos + [0] * n_neg
    rows = tuple(Example((float(i),), lab, i) for i, lab in enumerate(labels))
    return TabularDataset((FeatureSchema("x"),), rows, FeatureSchema("c", CATEGORICAL, ("a", "b")))


def test_schema_rejects_bad_declarations():
    with pytest.raises(InvalidData):
        FeatureSchema("c", CATEGORICAL, ())
    with pytest.raises(InvalidData):
        FeatureSchema("c", CATEGORICAL, ("a", "a"))
    with pytest.raises(InvalidData):
        FeatureSchema("", "numeric")


def test_dataset_rejects_duplicate_names_and_bad_rows():
    f = FeatureSchema("x")
    with pytest.raises(InvalidData):
        TabularDataset((f, f), (), FeatureSchema("y"))
    with pytest.raises(InvalidData):
        TabularDataset((f,), (Example((1.0, 2.0), 0.0),), FeatureSchema("y"))
    cat = FeatureSchema("c", CATEGORICAL, ("a", "b"))
    with pytest.raises(InvalidData):
        TabularDataset((cat,), (Example(("z",), 0.0),), FeatureSchema("y"))


def test_series_must_increase():
    with pytest.raises(InvalidData):
        SeriesDataset(((1.0, 0.0), (1.0, 1.0)))


def test_normalize_endpoints():
    out, _ = normalize_minmax(numeric_ds([0, 50, 100]))
    assert [r.features[0] for r in out.rows] == [0.0, 0.5, 1.0]


def test_normalize_age_example():
    _, params = normalize_minmax(numeric_ds([0, 100], "age"))
    assert params.normalize("age", 33) == pytest.approx(0.33, abs=1e-12)


def test_constant_column_maps_to_half():
    out, _ = normalize_minmax(numeric_ds([7, 7, 7]))
    assert [r.features[0] for r in out.rows] == [0.5, 0.5, 0.5]


def test_normalize_rejects_non_finite():
    with pytest.raises(InvalidData):
        normalize_minmax(numeric_ds([1.0, math.nan]))


def test_test_rows_use_training_statistics():
    _, params = normalize_minmax(numeric_ds([0, 10]))
    out, _ = normalize_minmax(numeric_ds([20]), params)
    assert out.rows[0].features[0] == 2.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=30))
def test_normalize_round_trip_and_training_bound(values):
    ds = numeric_ds(values)
    out, params = normalize_minmax(ds)
    normed = [r.features[0] for r in out.rows]
    assert all(0.0 <= v <= 1.0 for v in normed)
    if max(values) > min(values):
        back = [r.features[0] for r in denormalize(out, params).rows]
        scale = max(1.0, max(abs(v) for v in values))
        assert np.allclose(back, values, rtol=0, atol=1e-12 * scale * 4)


def test_split_cardinality_and_disjointness():
    ds = numeric_ds(range(200))
    train, test = split(ds, 100, seed=1)
    assert len(train) == len(test) == 100
    assert not set(train.row_ids()) & set(test.row_ids())


def test_split_is_deterministic():
    ds = numeric_ds(range(200))
    a = split(ds, 100, seed=1)
    b = split(ds, 100, seed=1)
    assert a[0].row_ids() == b[0].row_ids() and a[1].row_ids() == b[1].row_ids()


def test_split_stratifies_labels():
    train, _ = split(binary_ds(100, 100), 100, seed=3)
    pos = sum(r.target for r in train.rows)
    assert abs(pos - 50) <= 2


def test_split_rejects_oversized_train():
    with pytest.raises(InvalidSplit):
        split(numeric_ds(range(10)), 10, seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 59))
def test_split_property(seed, train_n):
    ds = binary_ds(23, 37)
    train, test = split(ds, train_n, seed)
    assert len(train) + len(test) == 60
    assert not set(train.row_ids()) & set(test.row_ids())
    # stratification: each class share within one row of its quota
    pos = sum(r.target for r in train.rows)
    assert abs(pos - 23 * train_n / 60) < 1.0 + 1e-9


def test_serialization_round_trip_is_byte_identical():
    ds = small_income()
    csv_text, schema_text = dumps_csv(ds), dumps_schema(ds)
    again = loads_dataset(csv_text, schema_text)
    assert dumps_csv(again) == csv_text
    assert dumps_schema(again) == schema_text
    assert again == ds


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e9, 1e9, allow_nan=False), st.sampled_from(["a", "b,c", "d e"]),
                          st.integers(0, 1)), min_size=1, max_size=20))
def test_serialization_round_trip_property(cells):
    schema = (FeatureSchema("num"), FeatureSchema("cat", CATEGORICAL, ("a", "b,c", "d e")))
    rows = tuple(Example((v, c), t, i) for i, (v, c, t) in enumerate(cells))
    ds = TabularDataset(schema, rows, FeatureSchema("t", CATEGORICAL, ("no", "yes")))
    text = dumps_csv(ds)
    assert dumps_csv(loads_dataset(text, dumps_schema(ds))) == text


def test_loads_dataset_rejects_header_mismatch():
    ds = small_income()
    bad = dumps_csv(ds).replace("degree", "school", 1)
    with pytest.raises(InvalidData):
        loads_dataset(bad, dumps_schema(ds))
