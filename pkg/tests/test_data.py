import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mobpart.data import (
    Column,
    DataError,
    Dataset,
    RoleError,
    RoleMap,
    complete_cases,
    dataset_to_csv,
    load_csv,
    schema_of,
    validate_roles,
    write_csv,
)

SCHEMA = {"y": "continuous", "trt": {"kind": "nominal", "levels": ["C", "A"]},
          "grade": {"kind": "ordinal", "levels": ["low", "mid", "high"]}, "t": "time", "d": "event"}


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_types_and_missing(tmp_path):
    p = write(tmp_path, "y,trt,grade,t,d,extra\n1.5,C,low,2,1,x\nNA,A,,3.5,0,y\n-2,A,high,1,1,z\n")
    ds = load_csv(p, SCHEMA)
    assert ds.names == ["y", "trt", "grade", "t", "d"]
    assert np.isnan(ds.values("y")[1]) and ds["y"].missing[1]
    assert list(ds.values("trt")) == [0, 1, 1]
    assert ds["grade"].missing[1] and ds.values("grade")[2] == 2
    assert len(ds) == 3


def test_csv_round_trip_is_byte_identical(tmp_path):
    text = "y,trt,grade,t,d\n0.10000000000000001,C,low,2,1\nNA,A,NA,3.5,0\n"
    ds = load_csv(write(tmp_path, text), SCHEMA)
    out = tmp_path / "out.csv"
    write_csv(ds, out)
    again = load_csv(out, schema_of(ds))
    assert dataset_to_csv(again) == out.read_text()
    assert out.read_text() == text


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_float_round_trip_is_exact(tmp_path_factory, xs):
    ds = Dataset.from_arrays({"v": xs})
    p = tmp_path_factory.mktemp("rt") / "v.csv"
    write_csv(ds, p)
    back = load_csv(p, {"v": "continuous"})
    assert np.array_equal(back.values("v"), np.asarray(xs, dtype=float))


@pytest.mark.parametrize("text, message", [
    ("y,trt,grade,t\n1,C,low,1\n", "missing from header"),
    ("y,trt,grade,t,d\n1,C,low,1\n", "expected 5 fields"),
    ("y,trt,grade,t,d\n1,B,low,1,1\n", "unknown level"),
    ("y,trt,grade,t,d\nabc,C,low,1,1\n", "cannot parse"),
    ("y,trt,grade,t,d\ninf,C,low,1,1\n", "non-finite"),
    ("y,trt,grade,t,d\n1,C,low,-1,1\n", "negative time in row 1"),
    ("y,trt,grade,t,d\n1,C,low,1,2\n", "not 0/1"),
    ("y,y,trt,grade,t,d\n1,1,C,low,1,1\n", "duplicate"),
    ("", "empty"),
])
def test_load_csv_errors(tmp_path, text, message):
    with pytest.raises(DataError, match=message):
        load_csv(write(tmp_path, text), SCHEMA)


def test_categorical_schema_requires_levels(tmp_path):
    with pytest.raises(DataError):
        load_csv(write(tmp_path, "g\na\n"), {"g": {"kind": "ordinal"}})


def test_columns_are_read_only():
    ds = Dataset.from_arrays({"a": [1.0, 2.0]})
    with pytest.raises(ValueError):
        ds.values("a")[0] = 5.0


def test_subset_copies_rows():
    ds = Dataset.from_arrays({"a": [1.0, 2.0, 3.0]})
    sub = ds.subset([2, 0])
    assert list(sub.values("a")) == [3.0, 1.0]


def test_complete_cases():
    ds = Dataset.from_arrays({"a": [1.0, np.nan, 3.0], "b": [1.0, 2.0, np.nan]})
    assert list(complete_cases(ds, ["a"])) == [0, 2]
    assert list(complete_cases(ds, ["a", "b"])) == [0]
    assert list(complete_cases(ds, ["b"], rows=[1, 2])) == [1]


def _surv():
    return Dataset.from_arrays({"t": [1.0, 2.0, 3.0, 4.0], "d": [1, 0, 1, 1], "x": [0, 1, 0, 1],
                                "z": [1.0, 2.0, 3.0, 4.0]}, {"t": "time", "d": "event"})


def test_validate_roles_accepts_valid_map():
    validate_roles(_surv(), RoleMap("cox", {"time": "t", "event": "d"}, "x", ("z",)))


@pytest.mark.parametrize("roles, field", [
    (RoleMap("probit", {}, "x"), "roles.family"),
    (RoleMap("cox", {"time": "t"}, "x"), "roles.endpoint.event"),
    (RoleMap("cox", {"time": "t", "event": "d"}, ""), "roles.treatment"),
    (RoleMap("cox", {"time": "t", "event": "d"}, "nope"), "roles"),
    (RoleMap("cox", {"time": "t", "event": "d"}, "x", ("t",)), "roles.partitioning"),
    (RoleMap("cox", {"time": "t", "event": "d"}, "x", ("z", "z")), "roles.partitioning"),
    (RoleMap("cox", {"time": "t", "event": "d"}, "z"), "roles.treatment"),
    (RoleMap("cox", {"time": "t", "event": "z"}, "x"), "roles.endpoint.event"),
])
def test_validate_roles_names_the_field(roles, field):
    with pytest.raises(RoleError) as exc:
        validate_roles(_surv(), roles)
    assert exc.value.field == field


def test_validate_roles_single_arm_and_positivity():
    ds = Dataset.from_arrays({"y": [1.0, -1.0], "x": [1.0, 1.0], "o": [0.0, 0.0]})
    with pytest.raises(RoleError, match="both arms"):
        validate_roles(ds, RoleMap("linear", {"response": "y"}, "x"))
    ds = Dataset.from_arrays({"y": [1.0, -1.0], "x": [0.0, 1.0], "o": [0.0, 0.0]})
    with pytest.raises(RoleError, match="positive"):
        validate_roles(ds, RoleMap("gaussian-log", {"response": "y", "offset": "o"}, "x"))


def test_column_rejects_bad_levels():
    with pytest.raises(DataError):
        Column("g", "ordinal", np.array([0.0, 3.0]), np.zeros(2, bool), ("a", "b"))
