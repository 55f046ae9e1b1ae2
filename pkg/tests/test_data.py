import numpy as np
import pytest

from nsi.data import ColumnRoles, Dataset, assign_folds, load_csv, validate_roles
from nsi.exceptions import (
    DataValidationError, DegenerateDataError, InsufficientDataError, RoleError,
)

ROLES = ColumnRoles(benchmark="y1", measurements=("y2",), treatments=("z",))


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_four_rows(tmp_path):
    p = write(tmp_path, "y1,y2,z\n1,2,0\n2,4,1\n3,6,0\n4,8,1\n")
    ds = load_csv(p, ROLES)
    assert ds.n == 4
    assert ds.n_dropped == 0
    np.testing.assert_array_equal(ds["y2"], [2, 4, 6, 8])


def test_load_csv_non_binary_treatment(tmp_path):
    p = write(tmp_path, "y1,y2,z\n1,2,0\n2,4,2\n3,6,0\n4,8,1\n")
    with pytest.raises(DataValidationError):
        load_csv(p, ROLES)


def test_load_csv_drops_missing_rows(tmp_path):
    p = write(tmp_path, "y1,y2,z\n1,2,0\n2,,1\n3,6,0\n4,8,1\n")
    ds = load_csv(p, ROLES)
    assert ds.n == 3
    assert ds.n_dropped == 1


def test_load_csv_missing_column(tmp_path):
    p = write(tmp_path, "y1,z\n1,0\n2,1\n")
    with pytest.raises(RoleError):
        load_csv(p, ROLES)


def test_load_csv_too_few_rows(tmp_path):
    p = write(tmp_path, "y1,y2,z\n1,2,0\n")
    with pytest.raises(DegenerateDataError):
        load_csv(p, ROLES)


def test_load_csv_is_deterministic(tmp_path):
    p = write(tmp_path, "y1,y2,z\n1.1,2,0\n2,4.25,1\n3,6,0\n")
    a, b = load_csv(p, ROLES), load_csv(p, ROLES)
    for c in ("y1", "y2", "z"):
        assert a[c].tobytes() == b[c].tobytes()


def test_dataset_is_read_only():
    ds = Dataset(columns={"y1": [1.0, 2.0], "y2": [1.0, 3.0], "z": [0, 1]}, roles=ROLES)
    with pytest.raises(ValueError):
        ds["y1"][0] = 5.0


def test_roles_must_be_disjoint():
    with pytest.raises(RoleError):
        ColumnRoles(benchmark="y1", measurements=("y1",), treatments=("z",))


def test_benchmark_never_instrument():
    with pytest.raises(RoleError):
        ColumnRoles(benchmark="y1", measurements=("y2",), treatments=("z",), instruments=("y1", "z"))


def test_default_instruments_exclude_bridged_measurement():
    roles = ColumnRoles(benchmark="y1", measurements=("y2", "y3"), treatments=("z",), covariates=("x",))
    assert roles.instruments_for("y2") == ("z", "x", "y3")
    assert roles.instruments_for("y3") == ("z", "x", "y2")


@pytest.mark.parametrize("n,sizes", [(10, [2, 2, 2, 2, 2]), (11, [3, 2, 2, 2, 2])])
def test_assign_folds_balanced(n, sizes):
    f = assign_folds(n, 5, seed=1)
    assert sorted(f.sizes().tolist(), reverse=True) == sizes
    idx = np.sort(np.concatenate([f.test_index(k) for k in range(5)]))
    np.testing.assert_array_equal(idx, np.arange(n))


def test_assign_folds_too_small():
    with pytest.raises(InsufficientDataError):
        assign_folds(8, 5, seed=1)


def test_assign_folds_deterministic():
    a, b = assign_folds(50, 5, 7), assign_folds(50, 5, 7)
    np.testing.assert_array_equal(a.fold_of, b.fold_of)
    assert not np.array_equal(a.fold_of, assign_folds(50, 5, 8).fold_of)


def test_validate_roles_share_and_warnings():
    z = np.r_[np.ones(50), np.zeros(50)]
    ds = Dataset(columns={"y1": np.arange(100.0), "y2": np.ones(100), "z": z}, roles=ROLES)
    rep = validate_roles(ds)
    assert rep["pi"]["z"] == pytest.approx(0.5)
    assert any("y2" in w for w in rep["warnings"])


def test_validate_roles_two_treatments():
    rng = np.random.default_rng(0)
    roles = ColumnRoles(benchmark="y1", measurements=("y2",), treatments=("t1", "t2"))
    ds = Dataset(columns={"y1": rng.normal(size=20), "y2": rng.normal(size=20),
                          "t1": np.r_[np.ones(10), np.zeros(10)], "t2": np.tile([0.0, 1.0], 10)}, roles=roles)
    assert set(validate_roles(ds)["pi"]) == {"t1", "t2"}


def test_design_probability_used_when_given():
    ds = Dataset(columns={"y1": [1.0, 2, 3, 4], "y2": [1.0, 2, 3, 4], "z": [1, 1, 1, 0]}, roles=ROLES,
                 pi={"z": 0.5})
    assert ds.treatment_share("z") == 0.5
