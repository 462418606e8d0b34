import json
import os

import numpy as np
import pandas as pd
import pytest

from dr_glm.dataio import (BINARY, CATEGORICAL, COUNT, NUMERIC, ModelSpec, Schema, design_layout,
                           encode_chunk, read_column, scan_schema, stream_subsets)
from dr_glm.errors import DataError, SpecError
from dr_glm.harness import SynthConfig, generate_synthetic
from dr_glm.partition import replicate_plan, sequential_plan, stratified_plan

from helpers import write_csv

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


@pytest.fixture
def small_csv(tmp_path):
    rows = [(i, "abc"[i % 3], 0.5 * i, i % 2, i % 4) for i in range(10)]
    return write_csv(tmp_path / "small.csv", ["id", "g", "x", "y", "c"], rows)


def spec_for(response="y", predictors=("x", "g"), family="binomial", **kw):
    return ModelSpec(response=response, predictors=list(predictors), family=family, **kw)


# -- schema --------------------------------------------------------------------

def test_scan_sorted_levels(tmp_path):
    path = write_csv(tmp_path / "a.csv", ["g", "x"], [("b", 1), ("a", 2), ("b", 3)])
    schema = scan_schema(path)
    assert schema.factor_levels["g"] == ["a", "b"]
    assert schema.type_of("g") == CATEGORICAL and schema.type_of("x") == NUMERIC
    assert schema.row_count == 3


def test_scan_levels_sorted_by_bytes(tmp_path):
    path = write_csv(tmp_path / "u.csv", ["g"], [("é",), ("z",), ("B",), ("a",), ("10",),
                                                  ("9",)])
    assert scan_schema(path).factor_levels["g"] == ["10", "9", "B", "a", "z", "é"]


def test_scan_empty_data_is_error(tmp_path):
    path = write_csv(tmp_path / "e.csv", ["x", "y"], [])
    with pytest.raises(DataError, match="no data rows"):
        scan_schema(path)


@pytest.mark.parametrize("token", ["", "NA", "NaN", "nan", "N/A"])
def test_missing_values_rejected(tmp_path, token):
    path = write_csv(tmp_path / "m.csv", ["x", "g"], [(1, "a"), (token, "b"), (3, "a")])
    with pytest.raises(DataError) as info:
        scan_schema(path, {"x": NUMERIC})
    assert (info.value.row, info.value.column) == (1, "x")
    path = write_csv(tmp_path / "m2.csv", ["x", "g"], [(1, "a"), (2, token), (3, "a")])
    with pytest.raises(DataError) as info:
        scan_schema(path)
    assert (info.value.row, info.value.column) == (1, "g")


def test_unparseable_numeric_reports_cell(tmp_path):
    path = write_csv(tmp_path / "b.csv", ["x"], [(1,), (2,), ("two",)])
    with pytest.raises(DataError) as info:
        scan_schema(path, {"x": NUMERIC})
    assert (info.value.row, info.value.column) == (2, "x")


def test_count_column_validated(tmp_path):
    path = write_csv(tmp_path / "c.csv", ["k"], [(0,), (2,), (1.5,)])
    with pytest.raises(DataError):
        scan_schema(path, {"k": COUNT})


def test_binary_with_three_levels(tmp_path):
    path = write_csv(tmp_path / "b3.csv", ["s"], [(0,), (1,), (2,)])
    with pytest.raises(DataError):
        scan_schema(path, {"s": BINARY})


def test_scan_is_stable_and_chunk_independent(small_csv):
    a = scan_schema(small_csv, chunk_rows=3)
    b = scan_schema(small_csv, chunk_rows=100)
    assert a == b
    assert Schema.from_json(json.loads(json.dumps(a.to_json()))) == a


def test_schema_cache_invalidation(tmp_path):
    path = write_csv(tmp_path / "k.csv", ["g"], [("a",), ("b",)])
    first = scan_schema(path, cache=True)
    assert os.path.exists(path + ".schema.json")
    assert scan_schema(path, cache=True) == first
    write_csv(path, ["g"], [("a",), ("b",), ("c",), ("d",)])
    assert scan_schema(path, cache=True).factor_levels["g"] == ["a", "b", "c", "d"]
    assert scan_schema(path, {"g": CATEGORICAL}, cache=True).row_count == 4


# -- spec and layout -----------------------------------------------------------

def test_model_spec_validation():
    with pytest.raises(SpecError) as info:
        ModelSpec.from_json({"response": "y", "predictors": ["y"], "family": "poisson"})
    assert info.value.path == "predictors"
    with pytest.raises(SpecError) as info:
        ModelSpec.from_json({"response": "y", "predictors": [], "family": "weibull"})
    assert info.value.path == "family"
    with pytest.raises(SpecError) as info:
        ModelSpec.from_json({"response": "y", "predictors": [], "family": "poisson",
                             "confidence": 1.5})
    assert info.value.path == "confidence"
    with pytest.raises(SpecError) as info:
        ModelSpec.from_json({"predictors": [], "family": "poisson"})
    assert info.value.path == "response"
    with pytest.raises(SpecError):
        ModelSpec.from_json({"response": "y", "predictors": [], "family": "poisson", "x": 1})


def test_model_spec_round_trip():
    spec = spec_for(reference_levels={"g": "b"}, confidence=0.9)
    assert ModelSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec


def test_layout_labels_and_reference(small_csv):
    spec = spec_for(predictors=("x", "g"))
    schema = scan_schema(small_csv, spec.declarations())
    layout = design_layout(schema, spec)
    assert layout.labels == ["(Intercept)", "x", "gb", "gc"]
    ref = spec_for(predictors=("g",), reference_levels={"g": "b"})
    assert design_layout(schema, ref).labels == ["(Intercept)", "ga", "gc"]
    with pytest.raises(SpecError):
        design_layout(schema, spec_for(predictors=("g",), reference_levels={"g": "z"}))
    with pytest.raises(SpecError) as info:
        design_layout(schema, spec_for(predictors=("x", "nope")))
    assert info.value.path == "predictors[1]"


def test_response_level_checks(small_csv):
    schema = scan_schema(small_csv, {"c": CATEGORICAL, "y": CATEGORICAL})
    with pytest.raises(SpecError):
        design_layout(schema, spec_for(response="c", family="binomial"))
    with pytest.raises(SpecError):
        design_layout(schema, spec_for(response="y", family="multinomial"))
    layout = design_layout(schema, spec_for(response="c", family="multinomial",
                                            predictors=("x",)))
    assert layout.family.num_categories == 4
    assert layout.coefficient_labels() == ["1:(Intercept)", "1:x", "2:(Intercept)", "2:x",
                                           "3:(Intercept)", "3:x"]


def test_encode_dummy_coding():
    schema = Schema([("cp", CATEGORICAL), ("sex", BINARY), ("y", NUMERIC)],
                    {"cp": ["1", "2", "3", "4"], "sex": ["0", "1"]}, 3)
    spec = ModelSpec(response="y", predictors=["cp", "sex"], family="gaussian")
    rows = pd.DataFrame({"cp": ["2", "1", "4"], "sex": ["1", "0", "0"], "y": ["1", "2", "3"]})
    X, y = encode_chunk(rows, schema, spec)
    assert design_layout(schema, spec).labels == ["(Intercept)", "cp2", "cp3", "cp4", "sex1"]
    np.testing.assert_array_equal(X, [[1, 1, 0, 0, 1], [1, 0, 0, 0, 0], [1, 0, 0, 1, 0]])
    np.testing.assert_array_equal(y, [1.0, 2.0, 3.0])


def test_encode_unseen_level_is_error():
    schema = Schema([("g", CATEGORICAL), ("y", NUMERIC)], {"g": ["a", "b"]}, 1)
    spec = ModelSpec(response="y", predictors=["g"], family="gaussian")
    with pytest.raises(DataError) as info:
        encode_chunk({"g": ["a", "q"], "y": ["1", "2"]}, schema, spec, row_offset=10)
    assert info.value.row == 11


def test_encode_responses():
    schema = Schema([("x", NUMERIC), ("y", CATEGORICAL)], {"y": ["no", "yes"]}, 3)
    X, y = encode_chunk({"x": ["1", "2", "3"], "y": ["yes", "no", "yes"]}, schema,
                        ModelSpec(response="y", predictors=["x"], family="binomial"))
    np.testing.assert_array_equal(y, [1.0, 0.0, 1.0])
    schema = Schema([("x", NUMERIC), ("y", CATEGORICAL)], {"y": ["a", "b", "c"]}, 3)
    _, y = encode_chunk({"x": ["1", "2", "3"], "y": ["c", "a", "b"]}, schema,
                        ModelSpec(response="y", predictors=["x"], family="multinomial"))
    np.testing.assert_array_equal(y, [3.0, 1.0, 2.0])


def test_intercept_free_design():
    schema = Schema([("x", NUMERIC), ("y", NUMERIC)], {}, 2)
    spec = ModelSpec(response="y", predictors=["x"], family="gaussian", intercept=False)
    X, _ = encode_chunk({"x": ["1", "2"], "y": ["0", "1"]}, schema, spec)
    np.testing.assert_array_equal(X, [[1.0], [2.0]])


def test_table_shaped_column_count(tmp_path):
    with open(os.path.join(CONFIG_DIR, "cleveland_like.json"), encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["n"] = 400
    path = str(tmp_path / "cl.csv")
    truth = generate_synthetic(SynthConfig.from_json(doc), path)
    spec = ModelSpec.from_json(truth["model_spec"])
    schema = scan_schema(path, spec.declarations())
    assert len(schema.columns) == 14
    layout = design_layout(schema, spec)
    expected = 1
    for name in spec.predictors:
        expected += len(schema.factor_levels[name]) - 1 if schema.is_factor(name) else 1
    assert layout.p == expected == 19
    assert "Sex1" in layout.labels and "Chest_Pain_Type2" in layout.labels


# -- streaming -----------------------------------------------------------------

def _delivered(path, plan, chunk_rows, spec=None):
    spec = spec or spec_for(response="x", predictors=("id",), family="gaussian")
    schema = scan_schema(path, spec.declarations())
    return list(stream_subsets(path, plan, schema, spec, chunk_rows))


def test_stream_whole_subsets(small_csv):
    chunks = _delivered(small_csv, sequential_plan(10, 2), 10)
    assert [(c.subset, len(c.y)) for c in chunks] == [(1, 5), (2, 5)]


def test_stream_chunking_within_subset(small_csv):
    chunks = _delivered(small_csv, sequential_plan(10, 2), 3)
    assert [(c.subset, len(c.y)) for c in chunks] == [(1, 3), (1, 2), (2, 3), (2, 2)]


def test_replicate_delivery_matches_plan(tmp_path):
    path = write_csv(tmp_path / "r.csv", ["id", "x"], [(i, i * 0.25) for i in range(100)])
    plan = replicate_plan(100, 4, seed=17)
    chunks = _delivered(path, plan, 7)
    for k in range(1, 5):
        got = np.concatenate([c.X[:, 1] for c in chunks if c.subset == k])
        np.testing.assert_array_equal(np.sort(got), np.sort(plan.rows_of(k)).astype(float))
        rows = np.concatenate([c.rows for c in chunks if c.subset == k])
        np.testing.assert_array_equal(rows, np.sort(plan.rows_of(k)))
    assert max(len(c.y) for c in chunks) <= 7


@pytest.mark.parametrize("make_plan", [
    lambda n: sequential_plan(n, 7),
    lambda n: replicate_plan(n, 5, seed=3),
    lambda n: stratified_plan(np.arange(n) % 3, 900),
])
def test_stream_reconstructs_source(tmp_path, make_plan):
    n = 3000
    rng = np.random.default_rng(0)
    x = np.round(rng.normal(size=n), 6)
    path = write_csv(tmp_path / "s.csv", ["id", "x"], [(i, v) for i, v in enumerate(x)])
    plan = make_plan(n)
    chunks = _delivered(path, plan, 256)
    rows = np.concatenate([c.rows for c in chunks])
    ids = np.concatenate([c.X[:, 1] for c in chunks])
    ys = np.concatenate([c.y for c in chunks])
    np.testing.assert_array_equal(ids, rows.astype(float))
    back = np.empty(n)
    back[rows] = ys
    np.testing.assert_array_equal(back, x)
    np.testing.assert_array_equal(np.sort(rows), np.arange(n))


@pytest.mark.parametrize("plan", [sequential_plan(10, 2), replicate_plan(10, 2, seed=1)])
def test_row_count_drift_detected(small_csv, plan):
    spec = spec_for(response="x", predictors=("id",), family="gaussian")
    schema = scan_schema(small_csv, spec.declarations())
    with open(small_csv, "a", encoding="utf-8") as fh:
        fh.write("10,a,5.0,0,2\n")
    with pytest.raises(DataError, match="row count changed"):
        list(stream_subsets(small_csv, plan, schema, spec, 4))


def test_plan_schema_mismatch(small_csv):
    spec = spec_for(response="x", predictors=("id",), family="gaussian")
    schema = scan_schema(small_csv)
    with pytest.raises(DataError):
        list(stream_subsets(small_csv, sequential_plan(9, 2), schema, spec))


def test_read_column(small_csv):
    assert read_column(small_csv, "g").tolist() == list("abcabcabca")
