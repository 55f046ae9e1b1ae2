import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsi.basis import BasisSpec
from nsi.bridge import BridgeFit, HyperParams, NuisanceFit
from nsi.data import ColumnRoles, Dataset, assign_folds
from nsi.exceptions import DataValidationError, RankError
from nsi.scores import (
    compute_riesz_weights, crossfit_scores, fits_to_dict, ht_transform, ht_weights, scores_from_fits,
)

from conftest import make_dataset


def test_ht_transform_examples():
    np.testing.assert_allclose(ht_transform([1, 0], 0.5), [2, -2])
    np.testing.assert_allclose(ht_transform([1, 0], 0.25), [4, -4 / 3])
    assert ht_transform([1, 0], 0.5).mean() == 0.0
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(DataValidationError):
            ht_transform([1, 0], bad)


def test_riesz_two_by_two_oracle():
    ds = make_dataset(n=40, seed=1, covariate=False)
    pi = ds["z"].mean()
    rw = compute_riesz_weights(ds, ds, ("z",))
    # hand inverse of ((1, pi), (pi, pi))
    Minv = np.array([[1, -1], [-1, 1 / pi]]) / (1 - pi)
    R = np.column_stack([np.ones(40), ds["z"]])
    np.testing.assert_allclose(rw.alpha, R @ Minv.T, atol=1e-12)
    z = ds["z"]
    np.testing.assert_allclose(rw.alpha[:, 1], np.where(z == 1, 1 / pi, -1 / (1 - pi)), atol=1e-12)


def test_riesz_intercept_only_is_one():
    ds = make_dataset(n=30, seed=2)
    np.testing.assert_allclose(compute_riesz_weights(ds, ds, ()).alpha, 1.0)


def test_riesz_duplicated_covariate_names_column():
    ds = make_dataset(n=50, seed=3)
    cols = {k: ds[k] for k in ("y1", "y2", "y3", "z", "x")}
    cols["x_copy"] = ds["x"].copy()
    roles = ColumnRoles(benchmark="y1", measurements=("y2", "y3"), treatments=("z",),
                        covariates=("x", "x_copy"))
    dup = Dataset(columns=cols, roles=roles)
    with pytest.raises(RankError, match="x_copy"):
        compute_riesz_weights(dup, dup, ("z", "x", "x_copy"))


@settings(max_examples=100, deadline=None)
@given(n=st.integers(6, 80), seed=st.integers(0, 2 ** 31 - 1), split=st.floats(0.2, 0.8))
def test_riesz_matches_ht_on_random_datasets(n, seed, split):
    rng = np.random.default_rng(seed)
    z = (rng.random(n) < split).astype(float)
    z[0], z[1] = 0.0, 1.0
    y = rng.standard_normal(n)
    roles = ColumnRoles(benchmark="y1", measurements=(), treatments=("z",))
    ds = Dataset(columns={"y1": y, "z": z}, roles=roles)
    tr = ds.take(np.arange(n - 2))
    if tr["z"].min() == tr["z"].max():
        tr = ds
    alpha = compute_riesz_weights(tr, ds, ("z",)).alpha[:, 1]
    np.testing.assert_allclose(alpha, ht_transform(z, tr["z"].mean()), atol=1e-10)


def test_ht_weights_prefer_design_pi():
    ds = make_dataset(n=40, seed=4, pi={"z": 0.5})
    np.testing.assert_allclose(ht_weights(ds, ds, "z").alpha[:, 0], ht_transform(ds["z"], 0.5))


def test_benchmark_column_is_ht_times_y1():
    ds = make_dataset(n=200, seed=5, pi={"z": 0.5})
    sm = crossfit_scores(ds, assign_folds(ds.n, 2, 0), regressors="ht")
    np.testing.assert_allclose(sm.scores["y1"][:, 0], ht_transform(ds["z"], 0.5) * ds["y1"])
    assert sm.variance_scores is None


def test_duplicate_benchmark_scores_agree():
    ds0 = make_dataset(n=1000, seed=6)
    cols = {k: ds0[k] for k in ("y1", "z", "x")}
    cols["y2"] = ds0["y1"].copy()
    ds = Dataset(columns=cols, roles=ColumnRoles(benchmark="y1", measurements=("y2",), treatments=("z",),
                                                 covariates=("x",)))
    sm = crossfit_scores(ds, assign_folds(ds.n, 5, 0), hyper=HyperParams(mu=1e-6, gamma_phi=1e-6))
    s1, s2 = sm.scores["y1"][:, 0], sm.scores["y2"][:, 0]
    se = np.std(s1 - s2, ddof=1) / np.sqrt(ds.n) + np.std(s1, ddof=1) / np.sqrt(ds.n)
    assert abs(s1.mean() - s2.mean()) < 2 * se


def test_identity_bridge_and_zero_q_collapse(linear_ds):
    folds = assign_folds(linear_ds.n, 2, 0)
    sm = crossfit_scores(linear_ds, folds)
    ident = BasisSpec(kind="polynomial", degree=1, include_intercept=False, standardize=False)
    fits = []
    for f in sm.fits:
        meas = {}
        for m, d in f["measurements"].items():
            b = d["bridge"]
            phi = ident.build().fit(linear_ds.matrix([m]))
            bf = BridgeFit(phi, b.w_basis, np.array([1.0]), b.hyper, np.eye(1), b.G_c, b.B[:, :1],
                           b.r, b.n_train, measurement=m, instruments=b.instruments)
            meas[m] = {"bridge": bf, "nuisance": NuisanceFit(np.zeros(1), np.zeros(b.G_c.shape[0]), 0.0)}
        fits.append({"fold": f["fold"], "measurements": meas})
    out = scores_from_fits(linear_ds, folds, fits)
    for m in ("y2", "y3"):
        alpha = np.empty(linear_ds.n)
        for f in out.fits:
            alpha[folds.test_index(f["fold"])] = f["riesz"].alpha[:, 0]
        np.testing.assert_allclose(out.scores[m][:, 0], alpha * linear_ds[m])


def test_fold_hygiene(linear_ds):
    # permuting rows inside fold 0 moves no nuisance fit for rows of fold 0's
    # training complement, so every held-out score outside fold 0 and the
    # fold-0 scores (as a set) stay fixed
    folds = assign_folds(linear_ds.n, 3, 1)
    base = crossfit_scores(linear_ds, folds, seed=3)
    idx0 = folds.test_index(0)
    perm = np.arange(linear_ds.n)
    perm[idx0] = np.random.default_rng(0).permutation(idx0)
    shuffled = linear_ds.take(perm)
    alt = crossfit_scores(shuffled, folds, seed=3)
    for m in base.scores:
        a = alt.scores[m][:, 0]
        b = base.scores[m][perm, 0]
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_fit_serialization_round_trip(linear_ds):
    folds = assign_folds(linear_ds.n, 3, 0)
    sm = crossfit_scores(linear_ds, folds)
    again = scores_from_fits(linear_ds, folds, fits_to_dict(sm.fits))
    np.testing.assert_allclose(again.stacked(), sm.stacked(), atol=0)
    np.testing.assert_allclose(again.variance_stacked(), sm.variance_stacked(), atol=0)


def test_variance_adjustment_matches_diff_in_means_influence():
    # with only the benchmark, the adjusted score is the diff-in-means
    # influence function s(Z)(Y1 - mu_Z)
    ds0 = make_dataset(n=300, seed=8, covariate=False)
    ds = Dataset(columns={"y1": ds0["y1"], "z": ds0["z"]},
                 roles=ColumnRoles(benchmark="y1", measurements=(), treatments=("z",)))
    sm = crossfit_scores(ds, assign_folds(ds.n, 2, 0))
    z, y = ds["z"], ds["y1"]
    mu = np.where(z == 1, y[z == 1].mean(), y[z == 0].mean())
    alpha = sm.scores["y1"][:, 0] / y
    np.testing.assert_allclose(sm.variance_scores["y1"][:, 0], alpha * (y - mu), atol=1e-10)


def test_score_csv_layout(tmp_path, linear_ds):
    sm = crossfit_scores(linear_ds, assign_folds(linear_ds.n, 2, 0))
    p = tmp_path / "s.csv"
    sm.to_csv(p)
    header = p.read_text().splitlines()[0].split(",")
    assert header == ["unit", "fold", "psi_y1_z", "psi_y2_z", "psi_y3_z"]
