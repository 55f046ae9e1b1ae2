import numpy as np
import pytest

from nsi.baselines import (
    ICWIndex, PCAIndex, WSIEstimator, icw_index, icw_weights, index_diff_in_means, pca_index, wsi_estimate,
    wsi_lambdas,
)
from nsi.data import ColumnRoles, Dataset
from nsi.estimator import NSIEstimator
from nsi.exceptions import DataValidationError, DegenerateDataError, WeakInstrumentError
from nsi.simulation import generate_study, linear_spec


def small_ds(y1, y2, z):
    roles = ColumnRoles(benchmark="y1", measurements=("y2",), treatments=("z",))
    return Dataset(columns={"y1": np.asarray(y1, float), "y2": np.asarray(y2, float),
                            "z": np.asarray(z, float)}, roles=roles)


def test_pca_perfectly_correlated():
    y = np.random.default_rng(0).standard_normal(50)
    fit = pca_index(np.column_stack([y, 3 * y + 1]))
    np.testing.assert_allclose(fit.weights, [2 ** -0.5, 2 ** -0.5])
    ys = (y - y.mean()) / y.std()
    np.testing.assert_allclose(fit.index_values, 2 * ys / np.sqrt(2))


def test_pca_tie_breaks_to_first_axis():
    Y = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], float)
    np.testing.assert_allclose(pca_index(Y).weights, [1.0, 0.0])


def test_pca_dominant_axis_covariance_variant():
    # orthogonal mean-zero Hadamard columns give covariance exactly diag(4, 1, 1)
    H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], float)
    Y = H[:, 1:] * [2.0, 1.0, 1.0]
    np.testing.assert_allclose(Y.T @ Y / 4, np.diag([4.0, 1.0, 1.0]))
    np.testing.assert_allclose(pca_index(Y, standardize=False).weights, [1.0, 0.0, 0.0], atol=1e-12)


def test_pca_contracts_and_determinism():
    with pytest.raises(DataValidationError):
        pca_index(np.ones((5, 1)))
    with pytest.raises(DegenerateDataError):
        pca_index(np.column_stack([np.ones(5), np.arange(5.0)]))
    Y = np.random.default_rng(1).standard_normal((40, 3))
    np.testing.assert_array_equal(pca_index(Y).weights, pca_index(Y.copy()).weights)
    assert abs(np.linalg.norm(pca_index(Y).weights) - 1) < 1e-12


def test_icw_weights_examples():
    np.testing.assert_allclose(icw_weights(np.eye(2)), [0.5, 0.5])
    np.testing.assert_allclose(icw_weights(np.diag([2.0, 1.0])), [1 / 3, 2 / 3])
    y = np.arange(6.0)
    fit = icw_index(y)
    np.testing.assert_allclose(fit.weights, [1.0])
    np.testing.assert_allclose(fit.index_values, (y - y.mean()) / y.std(ddof=1))


def test_icw_singular_fallback_warns():
    with pytest.warns(UserWarning, match="singular"):
        w = icw_weights(np.ones((2, 2)))
    np.testing.assert_allclose(w.sum(), 1.0)


def test_icw_doubling_variance_lowers_weight():
    S = np.array([[1.0, 0.3], [0.3, 1.0]])
    S2 = S.copy()
    S2[0, 0] = 2.0
    assert icw_weights(S2)[0] < icw_weights(S)[0]


def test_diff_in_means_examples():
    z = np.array([0, 1, 0, 1], float)
    assert index_diff_in_means(np.full(4, 3.0), z)["tau_hat"] == 0.0
    assert index_diff_in_means(z, z, 0.5)["tau_hat"] == pytest.approx(1.0)
    assert index_diff_in_means(-z, z, 0.5)["tau_hat"] == pytest.approx(-1.0)
    with pytest.raises(DegenerateDataError):
        index_diff_in_means(z, np.ones(4))


def test_wsi_lambda_examples():
    ds = small_ds([0, 1, 2, 3], [0, 2, 4, 6], [0, 0, 1, 1])
    assert wsi_lambdas(ds)[1] == 2.0
    rng = np.random.default_rng(2)
    y = rng.standard_normal(100)
    ds = small_ds(y, 2 * y, (rng.random(100) < 0.5).astype(float))
    np.testing.assert_allclose(wsi_lambdas(ds), [1.0, 2.0])


def test_wsi_weak_instrument():
    ds = small_ds([1, 0, 0, 1], [0, 2, 4, 6], [0, 0, 1, 1])
    with pytest.raises(WeakInstrumentError):
        wsi_estimate(ds)


def test_wsi_weights_sum_to_one_and_linear_recovery():
    ds = generate_study(linear_spec(n=2000), "A", 0)
    est, fit = wsi_estimate(ds)
    assert fit.weights.sum() == pytest.approx(1.0)
    assert abs(est.beta[0] - 0.8) < 0.1
    assert est.weighting == "plug-in"


def test_wsi_agrees_with_nsi_on_linear_data():
    ds = generate_study(linear_spec(n=2000), "A", 0)
    w = WSIEstimator().fit(ds)
    n = NSIEstimator().fit(ds)
    assert abs(w.coef_[0] - n.tau_) < 2 * np.hypot(w.se_[0], n.tau_se_)


def test_transformer_wrappers():
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((60, 3)) + rng.standard_normal((60, 1))
    z = (rng.random(60) < 0.5).astype(float)
    np.testing.assert_allclose(PCAIndex().fit_transform(Y), pca_index(Y).index_values)
    np.testing.assert_allclose(ICWIndex().fit(Y, z).transform(Y), icw_index(Y, z).index_values)
