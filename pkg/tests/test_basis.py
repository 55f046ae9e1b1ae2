import json
import warnings

import numpy as np
import pytest

from nsi.basis import (
    BasisSpec, NystromBasis, PolynomialBasis, TreeLeafBasis, basis_from_dict, evaluate, fit_basis,
)
from nsi.exceptions import ConfigError, StandardizationError

rng = np.random.default_rng(0)
Y = rng.standard_normal((200, 1))
X2 = rng.standard_normal((200, 2))


def test_polynomial_dimension_and_values():
    spec = BasisSpec(kind="polynomial", degree=2, standardize=False)
    b = fit_basis(spec, Y)
    assert b.dimension == 3
    np.testing.assert_allclose(evaluate(b, [[2.0]]), [[1.0, 2.0, 4.0]])


def test_polynomial_standardized_columns_centered():
    b = fit_basis(BasisSpec(kind="polynomial", degree=3, interactions=True), X2)
    F = b.transform(X2)
    np.testing.assert_allclose(F[:, 1:].mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_array_equal(F[:, 0], 1.0)


def test_polynomial_binary_input_single_power():
    z = rng.integers(0, 2, size=(50, 1)).astype(float)
    b = PolynomialBasis(degree=3).fit(z)
    assert b.dimension == 2


def test_polynomial_interactions_count():
    b = PolynomialBasis(degree=2, interactions=True).fit(X2)
    assert b.dimension == 1 + 4 + 1


def test_zero_variance_input_raises():
    with pytest.raises(StandardizationError):
        fit_basis(BasisSpec(kind="polynomial"), np.ones((10, 1)))


def test_dimension_mismatch():
    b = fit_basis(BasisSpec(kind="polynomial"), X2)
    with pytest.raises(ValueError):
        b.transform(Y)


def test_nystrom_clips_centers_with_warning():
    with pytest.warns(UserWarning):
        b = fit_basis(BasisSpec(kind="kernel_nystrom", n_centers=4, include_intercept=False),
                      np.array([[0.0], [1.0], [2.0]]))
    assert b.dimension == 3


def test_nystrom_kernel_at_center_is_one():
    b = NystromBasis(n_centers=5, bandwidth=0.7, include_intercept=False, standardize=False).fit(Y)
    K = b.kernel_values(b.centers_)
    np.testing.assert_allclose(np.diag(K), 1.0)


def test_nystrom_median_bandwidth_and_seeded_centers():
    a = NystromBasis(n_centers=10, random_state=3).fit(X2)
    b = NystromBasis(n_centers=10, random_state=3).fit(X2)
    np.testing.assert_array_equal(a.centers_, b.centers_)
    assert a.bandwidth_ > 0


def test_nystrom_features_reproduce_kernel_on_centers():
    b = NystromBasis(n_centers=8, include_intercept=False, random_state=1).fit(X2)
    F = b.transform(b.centers_ * b.scale_ + b.mean_)
    K = b.kernel_values(b.centers_ * b.scale_ + b.mean_)
    np.testing.assert_allclose(F @ F.T, K, atol=1e-6)


def test_tree_leaf_partition_property():
    y = X2[:, 0] + X2[:, 1] ** 2
    b = fit_basis(BasisSpec(kind="tree_leaf", n_trees=2, max_depth=1), X2, targets=y)
    F = b.transform(X2)
    assert F.shape[1] <= 4
    np.testing.assert_array_equal(F.sum(axis=1), 2.0)


def test_tree_leaf_matches_sklearn_apply():
    from sklearn.ensemble import RandomForestRegressor

    y = X2[:, 0] * 2 + rng.standard_normal(200)
    b = TreeLeafBasis(n_trees=3, max_depth=3, standardize=False, random_state=5).fit(X2, y)
    rf = RandomForestRegressor(n_estimators=3, max_depth=3, min_samples_leaf=5, random_state=5).fit(X2, y)
    np.testing.assert_array_equal(b.apply(X2), rf.apply(X2))


def test_tree_leaf_requires_targets():
    with pytest.raises(ValueError):
        fit_basis(BasisSpec(kind="tree_leaf"), X2)


@pytest.mark.parametrize("spec", [
    BasisSpec(kind="polynomial", degree=3, interactions=True),
    BasisSpec(kind="kernel_nystrom", n_centers=12),
    BasisSpec(kind="tree_leaf", n_trees=4, max_depth=2),
])
def test_serialization_round_trip(spec):
    y = X2.sum(axis=1)
    b = fit_basis(spec, X2, targets=y, seed=2)
    clone = basis_from_dict(json.loads(json.dumps(b.to_dict())))
    np.testing.assert_array_equal(clone.transform(X2), b.transform(X2))


@pytest.mark.parametrize("kind", ["polynomial", "kernel_nystrom", "tree_leaf"])
def test_deterministic(kind):
    spec = BasisSpec(kind=kind)
    y = X2[:, 0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = fit_basis(spec, X2, y, seed=4).transform(X2)
        b = fit_basis(spec, X2, y, seed=4).transform(X2)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.isfinite(a))


@pytest.mark.parametrize("bad", [dict(kind="spline"), dict(degree=0), dict(bandwidth=-1.0), dict(n_trees=0)])
def test_spec_validation(bad):
    with pytest.raises(ConfigError):
        BasisSpec(**bad)


def test_spec_dict_round_trip():
    s = BasisSpec(kind="kernel_nystrom", n_centers=7, bandwidth=0.3)
    assert BasisSpec.from_dict(s.to_dict()) == s
    with pytest.raises(ConfigError):
        BasisSpec.from_dict({"kind": "polynomial", "depth": 2})
