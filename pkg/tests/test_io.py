import numpy as np
import pytest

from skewglmm import io
from skewglmm.io import DataFileError
from skewglmm.simgen import DesignSpec, gen_bivariate
from skewglmm.skewnormal import DomainError


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_round_trip(tmp_path):
    ds, _ = gen_bivariate(DesignSpec("bivariate", m=6, seed=1))
    path = str(tmp_path / "d.csv")
    io.write_dataset(ds, path)
    back = io.read_dataset(path)
    assert back.covariate_names == ds.covariate_names
    for u, v in zip(ds.units, back.units):
        assert u.unit_id == v.unit_id
        assert np.array_equal(u.y, v.y) and np.array_equal(u.X, v.X) and np.array_equal(u.times, v.times)


def test_rows_sorted_within_unit_and_interleaved(tmp_path):
    path = _write(tmp_path, "unit_id,time,y,x\na,2,1.5,0.1\nb,1,2.0,0.2\na,1,0.5,0.3\n")
    ds = io.read_dataset(path)
    a = ds.units[0]
    assert a.unit_id == "a" and a.times.tolist() == [1.0, 2.0] and a.y.tolist() == [0.5, 1.5]
    assert a.X[:, 1].tolist() == [0.3, 0.1]


@pytest.mark.parametrize(
    "text,row",
    [
        ("unit_id,time,y\na,1,1.0\na,2,0.0\n", 3),
        ("unit_id,time,y\na,1,-2\n", 2),
        ("unit_id,time,y\na,1,abc\n", 2),
        ("unit_id,time,y\na,1\n", 2),
        ("unit_id,time,y\na,1,nan\n", 2),
        ("unit_id,y\na,1\n", 1),
        ("", 1),
    ],
)
def test_malformed_rows_are_named(tmp_path, text, row):
    with pytest.raises(DataFileError) as info:
        io.read_table(_write(tmp_path, text))
    assert info.value.row == row and f"row {row}" in str(info.value)


def test_repeated_times_rejected(tmp_path):
    with pytest.raises(DataFileError):
        io.read_dataset(_write(tmp_path, "unit_id,time,y\na,1,1.0\na,1,2.0\n"))


def test_formula():
    assert io.parse_formula("y ~ x1 + time", ["x1", "x2"]) == ["x1", "time"]
    assert io.parse_formula("y ~ 1", ["x1"]) == []
    assert io.parse_formula(None, ["x1", "x2"]) == ["x1", "x2"]
    for bad in ("x1 + x2", "z ~ x1", "y ~ x3", "y ~ x1 + x1"):
        with pytest.raises(DomainError):
            io.parse_formula(bad, ["x1", "x2"])


def test_time_transform(tmp_path):
    f = io.parse_time_transform("(t-5)/10")
    assert np.allclose(f(np.array([5.0, 15.0])), [0.0, 1.0])
    assert io.parse_time_transform("-t")(2.0) == -2.0
    for bad in ("t*t", "log(t)", "5", "(t-"):
        with pytest.raises(DomainError):
            io.parse_time_transform(bad)
    path = _write(tmp_path, "unit_id,time,y\na,5,1.0\na,15,2.0\n")
    ds = io.read_dataset(path, "y ~ time", "(t-5)/10")
    assert np.allclose(ds.units[0].X[:, 1], [0.0, 1.0], atol=1e-15)
    # the correlation still uses the raw times
    assert ds.units[0].times.tolist() == [5.0, 15.0]


def test_sidecar_and_json(tmp_path):
    assert io.sidecar_path("a/b.csv") == "a/b.truth.json"
    assert io.sidecar_path("data") == "data.truth.json"
    p = str(tmp_path / "x.json")
    io.write_json({"a": [1, 2]}, p)
    assert io.read_json(p) == {"a": [1, 2]}
