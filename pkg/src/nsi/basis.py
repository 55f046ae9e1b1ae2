"""Finite feature dictionaries for bridge functions, critics and nuisances.

Three families are provided as scikit-learn transformers:

* :class:`PolynomialBasis` -- per-column powers plus optional pairwise
  interactions, on standardized inputs;
* :class:`NystromBasis` -- Gaussian-kernel Nystrom features;
* :class:`TreeLeafBasis` -- one-hot leaf membership of a regression forest.

:func:`fit_basis` / :func:`evaluate` give a spec-driven functional interface
over the same classes, and every fitted basis round-trips through a plain
JSON-compatible ``dict`` (:meth:`to_dict` / :func:`basis_from_dict`).
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.ensemble import RandomForestRegressor
from sklearn.utils.validation import check_array, check_is_fitted

from ._linalg import pinv_sqrt_psd
from .exceptions import ConfigError, StandardizationError

KINDS = ("polynomial", "kernel_nystrom", "tree_leaf")


@dataclass(frozen=True)
class BasisSpec:
    kind: str = "polynomial"
    degree: int = 3
    interactions: bool = False
    n_centers: int = 50
    bandwidth: float | None = None
    n_trees: int = 10
    max_depth: int = 3
    include_intercept: bool | None = None
    standardize: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown basis kind {self.kind!r}; expected one of {KINDS}")
        if self.degree < 1 or self.n_centers < 1 or self.n_trees < 1 or self.max_depth < 1:
            raise ConfigError("degree, n_centers, n_trees and max_depth must all be >= 1")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")

    @property
    def intercept(self) -> bool:
        # leaf indicators of one tree already sum to one
        if self.include_intercept is None:
            return self.kind != "tree_leaf"
        return bool(self.include_intercept)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "BasisSpec":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown basis options {sorted(unknown)}")
        return cls(**d)

    def build(self, random_state=0):
        """Unfitted transformer for this spec."""
        if self.kind == "polynomial":
            return PolynomialBasis(degree=self.degree, interactions=self.interactions,
                                   include_intercept=self.intercept, standardize=self.standardize)
        if self.kind == "kernel_nystrom":
            return NystromBasis(n_centers=self.n_centers, bandwidth=self.bandwidth,
                                include_intercept=self.intercept, standardize=self.standardize,
                                random_state=random_state)
        return TreeLeafBasis(n_trees=self.n_trees, max_depth=self.max_depth,
                             include_intercept=self.intercept, standardize=self.standardize,
                             random_state=random_state)


class _BasisMixin(TransformerMixin, BaseEstimator):
    """Input standardization, intercept handling and dimension checks."""

    def _fit_scaling(self, X):
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            self.scale_ = X.std(axis=0)
            bad = np.flatnonzero(self.scale_ == 0)
            if bad.size:
                raise StandardizationError(f"input column(s) {bad.tolist()} have zero variance")
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        self.n_features_in_ = X.shape[1]

    def _check_input(self, X):
        X = check_array(X, ensure_2d=False, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if hasattr(self, "n_features_in_") and X.shape[1] != self.n_features_in_:
            raise ValueError(f"basis was fitted on {self.n_features_in_} input columns, got {X.shape[1]}")
        return X

    def _scaled(self, X):
        return (X - self.mean_) / self.scale_

    def _with_intercept(self, F):
        if self.include_intercept:
            return np.column_stack([np.ones(F.shape[0]), F])
        return F

    @property
    def dimension(self) -> int:
        check_is_fitted(self, "n_features_out_")
        return self.n_features_out_

    def _state(self) -> dict:
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist(),
                "n_features_in": int(self.n_features_in_)}

    def _load_state(self, st):
        self.mean_ = np.asarray(st["mean"], dtype=float)
        self.scale_ = np.asarray(st["scale"], dtype=float)
        self.n_features_in_ = int(st["n_features_in"])


class PolynomialBasis(_BasisMixin):
    """Monomial dictionary on (optionally standardized) inputs.

    For each input column the powers ``1..degree`` are used, capped at
    ``n_unique - 1`` for columns with few distinct values (binary columns
    contribute a single linear term). ``interactions`` adds all pairwise
    products of the linear terms. With ``standardize`` the expanded
    non-intercept features are also centered and scaled on the training rows.
    """

    def __init__(self, degree=3, interactions=False, include_intercept=True, standardize=True):
        self.degree = degree
        self.interactions = interactions
        self.include_intercept = include_intercept
        self.standardize = standardize

    def fit(self, X, y=None):
        X = self._check_input(X)
        self._fit_scaling(X)
        n_unique = [len(np.unique(X[:, k])) for k in range(X.shape[1])]
        self.powers_ = [max(1, min(self.degree, u - 1)) for u in n_unique]
        raw = self._expand(X)
        if self.standardize:
            self.feature_mean_ = raw.mean(axis=0)
            sd = raw.std(axis=0)
            self.feature_scale_ = np.where(sd > 0, sd, 1.0)
        else:
            self.feature_mean_ = np.zeros(raw.shape[1])
            self.feature_scale_ = np.ones(raw.shape[1])
        self.n_features_out_ = raw.shape[1] + int(self.include_intercept)
        return self

    def _expand(self, X):
        Xs = self._scaled(X)
        cols = []
        for k, pk in enumerate(self.powers_):
            for p in range(1, pk + 1):
                cols.append(Xs[:, k] ** p)
        if self.interactions:
            for a, b in combinations(range(Xs.shape[1]), 2):
                cols.append(Xs[:, a] * Xs[:, b])
        return np.column_stack(cols)

    def transform(self, X):
        check_is_fitted(self, "powers_")
        X = self._check_input(X)
        F = (self._expand(X) - self.feature_mean_) / self.feature_scale_
        return self._with_intercept(F)

    def to_dict(self) -> dict:
        return {
            "kind": "polynomial",
            "params": self.get_params(),
            "state": {**self._state(), "powers": list(self.powers_),
                      "feature_mean": self.feature_mean_.tolist(),
                      "feature_scale": self.feature_scale_.tolist(),
                      "n_features_out": int(self.n_features_out_)},
        }

    def _load(self, st):
        self._load_state(st)
        self.powers_ = list(st["powers"])
        self.feature_mean_ = np.asarray(st["feature_mean"], dtype=float)
        self.feature_scale_ = np.asarray(st["feature_scale"], dtype=float)
        self.n_features_out_ = int(st["n_features_out"])


def median_heuristic(X, max_rows=1000, random_state=0):
    """Median pairwise Euclidean distance (on a seeded subsample of rows)."""
    if X.shape[0] > max_rows:
        idx = np.random.default_rng(random_state).choice(X.shape[0], max_rows, replace=False)
        X = X[np.sort(idx)]
    d = pdist(X)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


class NystromBasis(_BasisMixin):
    """Gaussian-kernel Nystrom feature map.

    Features are ``k(x, C) K_CC^{-1/2}`` for a seeded subsample ``C`` of the
    training rows, with ``k(x, c) = exp(-|x - c|^2 / (2 h^2))``. The bandwidth
    ``h`` defaults to the median pairwise distance of the (standardized)
    training inputs.
    """

    def __init__(self, n_centers=50, bandwidth=None, include_intercept=True, standardize=True,
                 random_state=0):
        self.n_centers = n_centers
        self.bandwidth = bandwidth
        self.include_intercept = include_intercept
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y=None):
        X = self._check_input(X)
        self._fit_scaling(X)
        Xs = self._scaled(X)
        n = Xs.shape[0]
        m = self.n_centers
        if m > n:
            warnings.warn(f"n_centers={m} exceeds the {n} training rows; clipped to {n}", stacklevel=2)
            m = n
        rng = np.random.default_rng(self.random_state)
        self.centers_ = Xs[np.sort(rng.choice(n, m, replace=False))]
        self.bandwidth_ = float(self.bandwidth) if self.bandwidth else median_heuristic(Xs, random_state=self.random_state)
        K = self.kernel_values(self.centers_, scaled=True)
        self.normalization_ = pinv_sqrt_psd(K)
        self.n_features_out_ = m + int(self.include_intercept)
        return self

    def kernel_values(self, X, scaled=False):
        """Raw Gaussian kernel evaluations against the centers."""
        Xs = X if scaled else self._scaled(self._check_input(X))
        d2 = cdist(Xs, self.centers_, "sqeuclidean")
        return np.exp(-d2 / (2.0 * self.bandwidth_ ** 2))

    def transform(self, X):
        check_is_fitted(self, "centers_")
        return self._with_intercept(self.kernel_values(X) @ self.normalization_)

    def to_dict(self) -> dict:
        return {
            "kind": "kernel_nystrom",
            "params": self.get_params(),
            "state": {**self._state(), "centers": self.centers_.tolist(),
                      "bandwidth": self.bandwidth_,
                      "normalization": self.normalization_.tolist(),
                      "n_features_out": int(self.n_features_out_)},
        }

    def _load(self, st):
        self._load_state(st)
        self.centers_ = np.asarray(st["centers"], dtype=float)
        self.bandwidth_ = float(st["bandwidth"])
        self.normalization_ = np.asarray(st["normalization"], dtype=float)
        self.n_features_out_ = int(st["n_features_out"])


class TreeLeafBasis(_BasisMixin):
    """One-hot leaf indicators of a regression forest grown on ``(X, y)``.

    Split structure is copied out of the fitted scikit-learn trees so the basis
    can be evaluated (and serialized) without the forest object.
    """

    def __init__(self, n_trees=10, max_depth=3, include_intercept=False, standardize=True,
                 random_state=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.include_intercept = include_intercept
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y=None):
        if y is None:
            raise ValueError("TreeLeafBasis needs a target to grow trees on")
        X = self._check_input(X)
        y = np.asarray(y, dtype=float).ravel()
        self._fit_scaling(X)
        forest = RandomForestRegressor(
            n_estimators=self.n_trees, max_depth=self.max_depth,
            min_samples_leaf=max(5, X.shape[0] // 50), random_state=self.random_state,
        ).fit(self._scaled(X), y)
        self.trees_ = []
        for est in forest.estimators_:
            t = est.tree_
            leaves = np.flatnonzero(t.children_left == -1)
            self.trees_.append({
                "left": t.children_left.tolist(),
                "right": t.children_right.tolist(),
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "leaves": leaves.tolist(),
            })
        self._index_leaves()
        return self

    def _index_leaves(self):
        self._arrays = []
        offset = 0
        for tr in self.trees_:
            arr = {k: np.asarray(v) for k, v in tr.items()}
            lookup = np.full(len(arr["left"]), -1)
            lookup[arr["leaves"]] = offset + np.arange(len(arr["leaves"]))
            arr["column"] = lookup
            offset += len(arr["leaves"])
            self._arrays.append(arr)
        self.n_leaves_ = offset
        self.n_features_out_ = offset + int(self.include_intercept)

    def apply(self, X):
        """Leaf node id reached by each row in each tree, shape ``(m, n_trees)``."""
        Xs = self._scaled(self._check_input(X))
        out = np.empty((Xs.shape[0], len(self._arrays)), dtype=int)
        rows = np.arange(Xs.shape[0])
        for j, arr in enumerate(self._arrays):
            node = np.zeros(Xs.shape[0], dtype=int)
            while True:
                internal = arr["left"][node] != -1
                if not internal.any():
                    break
                r = rows[internal]
                nd = node[internal]
                go_left = Xs[r, arr["feature"][nd]] <= arr["threshold"][nd]
                node[internal] = np.where(go_left, arr["left"][nd], arr["right"][nd])
            out[:, j] = node
        return out

    def transform(self, X):
        check_is_fitted(self, "trees_")
        nodes = self.apply(X)
        F = np.zeros((nodes.shape[0], self.n_leaves_))
        for j, arr in enumerate(self._arrays):
            F[np.arange(nodes.shape[0]), arr["column"][nodes[:, j]]] = 1.0
        return self._with_intercept(F)

    def to_dict(self) -> dict:
        return {
            "kind": "tree_leaf",
            "params": self.get_params(),
            "state": {**self._state(), "trees": self.trees_},
        }

    def _load(self, st):
        self._load_state(st)
        self.trees_ = st["trees"]
        self._index_leaves()


_CLASSES = {"polynomial": PolynomialBasis, "kernel_nystrom": NystromBasis, "tree_leaf": TreeLeafBasis}


def basis_from_dict(d: dict):
    """Rebuild a fitted basis from :meth:`to_dict` output."""
    obj = _CLASSES[d["kind"]](**d["params"])
    obj._load(d["state"])
    return obj


def fit_basis(spec: BasisSpec, inputs, targets=None, seed: int = 0):
    """Fit the transformer described by ``spec`` on ``inputs``."""
    if spec.kind == "tree_leaf" and targets is None:
        raise ValueError("tree_leaf basis requires targets")
    basis = spec.build(random_state=seed)
    basis.spec = spec
    return basis.fit(inputs, targets)


def evaluate(basis, inputs) -> np.ndarray:
    return basis.transform(inputs)
