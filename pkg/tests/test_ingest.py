import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stratquery.ingest import CSVSchema, IngestError, collapse_features, ingest_csv, read_column, write_csv
from stratquery.regions import Dataset

SCHEMA = CSVSchema(("a", "b"), "treatment", "visit", 0.85)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_three_rows(tmp_path):
    p = write(tmp_path, "a,b,treatment,visit\n1,2,1,0\n3,4,0,1\n5.5,-6,1,1\n")
    d = ingest_csv(p, SCHEMA)
    assert len(d) == 3 and d.ndim == 2
    assert d.propensity == 0.85
    np.testing.assert_array_equal(d.covariates[2], [5.5, -6.0])
    np.testing.assert_array_equal(d.treatment, [1, 0, 1])


def test_nonbinary_treatment_cites_line(tmp_path):
    rows = "".join(f"{i},{i},1,0\n" for i in range(3))
    p = write(tmp_path, "a,b,treatment,visit\n" + rows + "9,9,2,0\n")
    with pytest.raises(IngestError) as exc:
        ingest_csv(p, SCHEMA)
    assert exc.value.lines == [5]
    assert "line" in str(exc.value) and "5" in str(exc.value)


def test_unparseable_lines_capped_at_twenty(tmp_path):
    rows = "".join("x,1,1,0\n" for _ in range(30))
    p = write(tmp_path, "a,b,treatment,visit\n" + rows)
    with pytest.raises(IngestError) as exc:
        ingest_csv(p, SCHEMA)
    assert exc.value.lines == list(range(2, 22))


def test_missing_column_and_file(tmp_path):
    p = write(tmp_path, "a,treatment,visit\n1,1,0\n")
    with pytest.raises(IngestError, match="missing columns"):
        ingest_csv(p, SCHEMA)
    with pytest.raises(IngestError, match="not found"):
        ingest_csv(tmp_path / "nope.csv", SCHEMA)


def test_nonfinite_rejected(tmp_path):
    p = write(tmp_path, "a,b,treatment,visit\n1,2,1,0\nnan,2,1,0\n")
    with pytest.raises(IngestError) as exc:
        ingest_csv(p, SCHEMA)
    assert exc.value.lines == [3]


def test_extra_columns_ignored(tmp_path):
    p = write(tmp_path, "conversion,a,b,treatment,visit,tau\n0,1,2,1,0,0.5\n1,3,4,0,1,0.25\n")
    d = ingest_csv(p, SCHEMA)
    np.testing.assert_array_equal(d.covariates, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(read_column(p, "tau"), [0.5, 0.25])


def test_schema_validation():
    with pytest.raises(ValueError):
        CSVSchema(())
    with pytest.raises(ValueError):
        CSVSchema(("a",), propensity=1.0)


def twelve_feature_dataset():
    X = np.arange(24, dtype=float).reshape(2, 12)
    return Dataset(X, [1, 0], [0.0, 1.0], 0.85, tuple(f"f{i}" for i in range(12)))


def test_collapse_to_three():
    d = collapse_features(twelve_feature_dataset(), ["f0", "f6"], True)
    assert d.feature_names == ("f0", "f6", "rest_sum")
    row = np.arange(12.0)
    np.testing.assert_allclose(d.covariates[0], [0.0, 6.0, row.sum() - 6.0])


def test_collapse_identity_and_errors():
    base = twelve_feature_dataset()
    same = collapse_features(base, base.feature_names, False)
    np.testing.assert_array_equal(same.covariates, base.covariates)
    with pytest.raises(ValueError):
        collapse_features(base, [], False)
    with pytest.raises(ValueError):
        collapse_features(base, ["f99"], True)


def test_collapse_rest_sum_arithmetic():
    X = np.array([[1.0, 2.0, 3.0, 2.5]])
    d = collapse_features(Dataset(X, [1], [0.0], 0.5, ("f0", "f1", "f6", "f3")), ["f0", "f6"])
    assert d.covariates[0, 2] == 7.5 - 3.0


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 4)), elements=st.floats(-1e12, 1e12)),
    st.data(),
)
def test_roundtrip(tmp_path_factory, X, data):
    n = X.shape[0]
    W = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
    Y = np.array(data.draw(st.lists(st.floats(-1e6, 1e6), min_size=n, max_size=n)))
    d = Dataset(X, W, Y, 0.3)
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    schema = write_csv(d, path)
    back = ingest_csv(path, schema)
    np.testing.assert_array_equal(back.covariates, d.covariates)
    np.testing.assert_array_equal(back.treatment, d.treatment)
    np.testing.assert_array_equal(back.outcome, d.outcome)
    assert back.propensity == 0.3
