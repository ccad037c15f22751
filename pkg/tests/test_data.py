import io

import numpy as np
import pytest

from wgeesel.data import (
    LongitudinalDataset,
    MeanModelSpec,
    Schema,
    design_matrices,
    load_long_csv,
    read_schema,
    validate_monotone,
    write_long_csv,
)
from wgeesel.exceptions import DataValidationError, NonMonotoneError

CSV = """id,time,y,x.a,h.z
1,1,1,0.5,0.1
1,2,0,0.5,0.2
1,3,1,0.5,0.3
2,1,0,1.5,0.0
2,2,1,1.5,0.4
2,3,,1.5,0.1
"""


def test_complete_panel_all_observed():
    ds = load_long_csv(io.StringIO(CSV.replace("2,3,,", "2,3,1,")))
    assert ds.r.tolist() == [[1, 1, 1], [1, 1, 1]]


def test_dropout_row():
    ds = load_long_csv(io.StringIO(CSV))
    assert ds.r[1].tolist() == [1, 1, 0]
    assert np.isnan(ds.y[1, 2])
    assert ds.covariate_names == ("a",) and ds.dropout_names == ("z",)


def test_non_monotone_csv():
    bad = CSV.replace("1,2,0,", "1,2,,")
    with pytest.raises(NonMonotoneError) as err:
        load_long_csv(io.StringIO(bad))
    assert err.value.violations == [("1", 3)]


def test_csv_sources_equivalent(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(CSV)
    a = load_long_csv(p)
    b = load_long_csv(CSV.encode())
    c = load_long_csv(io.BytesIO(CSV.encode()))
    for other in (b, c):
        np.testing.assert_array_equal(a.x, other.x)
        np.testing.assert_array_equal(a.r, other.r)


@pytest.mark.parametrize("text, msg", [
    (CSV + "2,3,1,1.5,0.1\n", "duplicate"),
    ("\n".join(CSV.splitlines()[:-1]) + "\n", "ragged|occasions"),
    (CSV.replace("0.5,0.1", "abc,0.1", 1), "non-numeric"),
    (CSV.replace("1,1,1,", "1,1,2,", 1), "0 or 1"),
])
def test_csv_validation(text, msg):
    with pytest.raises(DataValidationError, match=msg):
        load_long_csv(io.StringIO(text))


def test_schema_mapping():
    text = "id,t,out,age,haz\n1,1,1.5,3,0\n1,2,2.5,3,1\n"
    schema = read_schema("id = id\ntime = t\ny = out\nx = age\nh = haz\nfamily = gaussian  # comment\n")
    ds = load_long_csv(io.StringIO(text), schema)
    assert ds.family == "gaussian" and ds.covariate_names == ("age",)
    with pytest.raises(DataValidationError):
        read_schema("bogus = 1")


def test_round_trip(sim_dataset):
    buf = io.StringIO()
    write_long_csv(sim_dataset, buf)
    back = load_long_csv(io.StringIO(buf.getvalue()), Schema())
    np.testing.assert_array_equal(back.r, sim_dataset.r)
    np.testing.assert_array_equal(back.x, sim_dataset.x)
    np.testing.assert_array_equal(back.y_filled, sim_dataset.y_filled)


@pytest.mark.parametrize("row, expected", [
    ([1, 1, 1], []), ([1, 0, 0], []), ([1, 0, 1], [(1, 3)]), ([0, 0, 0], [(1, 1)]),
])
def test_validate_monotone(row, expected):
    assert validate_monotone([row]) == expected


def test_dataset_is_immutable(sim_dataset):
    with pytest.raises(ValueError):
        sim_dataset.y[0, 0] = 5.0


def test_design_intercept_only(sim_dataset):
    X = design_matrices(sim_dataset, MeanModelSpec(()))
    assert X.shape == (sim_dataset.n, 3, 1) and np.all(X == 1)


def test_design_columns(sim_dataset):
    X = design_matrices(sim_dataset, MeanModelSpec((0, 1)))
    np.testing.assert_array_equal(X[:, :, 2], np.tile([0.0, 1.0, 2.0], (sim_dataset.n, 1)))
    np.testing.assert_array_equal(X[:, :, 1], sim_dataset.x[:, :, 0])
    assert np.all(X[:, :, 1] == X[:, :1, 1])  # x1 is constant within subject


def test_design_projection(sim_dataset):
    full = design_matrices(sim_dataset, MeanModelSpec((0, 1, 2)))
    sub = design_matrices(sim_dataset, MeanModelSpec((0, 2)))
    np.testing.assert_array_equal(sub, full[:, :, [0, 1, 3]])
    with pytest.raises(IndexError):
        design_matrices(sim_dataset, MeanModelSpec((7,)))


def test_spec_label_and_nesting():
    names = ("x1", "x2", "x3")
    assert MeanModelSpec(()).label(names) == "1"
    assert MeanModelSpec((0, 2)).label(names) == "x1+x3"
    assert MeanModelSpec((0, 1, 2)).contains(MeanModelSpec((1,)))
    assert not MeanModelSpec((1,)).contains(MeanModelSpec((0,)))
    with pytest.raises(ValueError):
        MeanModelSpec((1, 1))


def test_subset_keeps_ids(sim_dataset):
    sub = sim_dataset.subset([3, 1])
    assert sub.ids == (4, 2)
    np.testing.assert_array_equal(sub.r, sim_dataset.r[[3, 1]])


def test_dataset_rejects_bad_shapes():
    with pytest.raises(DataValidationError):
        LongitudinalDataset(y=np.zeros((2, 3)), r=np.ones((2, 2)), x=np.zeros((2, 3, 1)), h=None,
                            covariate_names=("a",))
