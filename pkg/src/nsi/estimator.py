"""Scikit-learn style front end for the debiased scaled-index estimator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bridge import PHI_SPEC, W_SPEC, HyperParams
from .data import ColumnRoles, Dataset, assign_folds
from .gmm import pool_gmm, pool_per_coefficient, summarize_moments
from .exceptions import ConfigError
from .scores import crossfit_scores, scores_from_fits


def as_dataset(data, treatment=None, covariates=None) -> Dataset:
    """Wrap arrays as a :class:`Dataset`; datasets pass through unchanged.

    ``data`` is an ``(n, J)`` measurement matrix whose first column is the
    benchmark. Columns are named ``y1..yJ``, ``z``/``z1..``, ``x1..``.
    """
    if isinstance(data, Dataset):
        return data
    Y = np.asarray(data, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if treatment is None:
        raise ValueError("treatment is required when fitting on arrays")
    Z = np.asarray(treatment, dtype=float)
    Z = Z[:, None] if Z.ndim == 1 else Z
    X = np.empty((Y.shape[0], 0)) if covariates is None else np.asarray(covariates, dtype=float)
    X = X[:, None] if X.ndim == 1 else X
    ynames = [f"y{j + 1}" for j in range(Y.shape[1])]
    znames = ["z"] if Z.shape[1] == 1 else [f"z{t + 1}" for t in range(Z.shape[1])]
    xnames = [f"x{k + 1}" for k in range(X.shape[1])]
    cols = {**dict(zip(ynames, Y.T)), **dict(zip(znames, Z.T)), **dict(zip(xnames, X.T))}
    roles = ColumnRoles(benchmark=ynames[0], measurements=tuple(ynames[1:]),
                        treatments=tuple(znames), covariates=tuple(xnames))
    return Dataset(columns=cols, roles=roles)


class NSIEstimator(BaseEstimator):
    """Nonparametric scaled-index estimator of latent treatment effects.

    Each auxiliary measurement is mapped onto the benchmark scale by a
    minimax bridge, cross-fitted orthogonal scores are formed for every
    measurement, and the per-measurement moment means are pooled by GMM.

    Parameters
    ----------
    phi_basis, w_basis : BasisSpec
        Dictionaries for the bridge (over ``Y_j``) and the critic (over the
        instruments).
    mu, gamma_phi, gamma_q, gamma_xi, ridge_q : float or None
        Penalties; ``None`` selects the data-scaled default.
    penalty_rate : {"inverse_n", "inverse_sqrt_n"}
        Sample-size rate of the data-scaled default penalties.
    n_folds : int
        Cross-fitting folds.
    regressors : {"ht", "regression"} or list of str
        ``"ht"`` targets the single Horvitz-Thompson contrast of one
        treatment; ``"regression"`` targets all coefficients of the
        regression on ``(1, treatments, covariates)``.
    weighting : {"efficient", "identity"}
    pooling : {"joint", "per_coefficient"}
    random_state : int
    """

    def __init__(self, phi_basis=PHI_SPEC, w_basis=W_SPEC, mu=None, gamma_phi=None, gamma_q=None,
                 gamma_xi=None, ridge_q=None, penalty_rate="inverse_n", n_folds=5, regressors="ht", weighting="efficient",
                 pooling="joint", random_state=0):
        self.phi_basis = phi_basis
        self.w_basis = w_basis
        self.mu = mu
        self.gamma_phi = gamma_phi
        self.gamma_q = gamma_q
        self.gamma_xi = gamma_xi
        self.ridge_q = ridge_q
        self.penalty_rate = penalty_rate
        self.n_folds = n_folds
        self.regressors = regressors
        self.weighting = weighting
        self.pooling = pooling
        self.random_state = random_state

    @property
    def hyper(self) -> HyperParams:
        return HyperParams(mu=self.mu, gamma_phi=self.gamma_phi, gamma_q=self.gamma_q,
                           gamma_xi=self.gamma_xi, ridge_q=self.ridge_q, penalty_rate=self.penalty_rate)

    def fit(self, data, treatment=None, covariates=None):
        ds = as_dataset(data, treatment, covariates)
        folds = assign_folds(ds.n, self.n_folds, self.random_state)
        scores = crossfit_scores(ds, folds, self.phi_basis, self.w_basis, self.hyper,
                                 regressors=self.regressors, seed=self.random_state)
        return self._pool(scores, ds)

    def fit_from_fits(self, data, fits, treatment=None, covariates=None):
        """Score ``data`` with stored fold fits (see :func:`~nsi.scores.fits_to_dict`)
        instead of refitting the first stage. Folds come from ``n_folds`` and
        ``random_state``, which must match the run that produced ``fits``."""
        ds = as_dataset(data, treatment, covariates)
        folds = assign_folds(ds.n, self.n_folds, self.random_state)
        return self._pool(scores_from_fits(ds, folds, fits, regressors=self.regressors), ds)

    def _pool(self, scores, ds):
        if self.pooling not in ("joint", "per_coefficient"):
            raise ConfigError(f"pooling must be 'joint' or 'per_coefficient', got {self.pooling!r}")
        self.scores_ = scores
        self.summary_ = summarize_moments(self.scores_)
        pool = pool_gmm if self.pooling == "joint" else pool_per_coefficient
        self.estimate_ = pool(self.summary_, weighting=self.weighting)
        self.coef_ = self.estimate_.beta
        self.se_ = self.estimate_.se
        self.coef_names_ = self.estimate_.coef_names
        self.n_ = ds.n
        return self

    @property
    def tau_(self) -> float:
        """Estimate for the first treatment."""
        check_is_fitted(self, "estimate_")
        return float(self.coef_[self._treatment_index()])

    @property
    def tau_se_(self) -> float:
        check_is_fitted(self, "estimate_")
        return float(self.se_[self._treatment_index()])

    def _treatment_index(self) -> int:
        # "ht" has a single coefficient; regression forms put the intercept first
        return 0 if len(self.coef_names_) == 1 else 1

    def bridges(self):
        """Fitted per-fold bridges, ``{measurement: [BridgeFit per fold]}``."""
        check_is_fitted(self, "scores_")
        out = {}
        for f in self.scores_.fits:
            for m, d in f["measurements"].items():
                out.setdefault(m, []).append(d["bridge"])
        return out
