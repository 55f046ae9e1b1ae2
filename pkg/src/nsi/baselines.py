"""Index-based comparison estimators: PCA, ICW and the linear scaled index (WSI)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .exceptions import DataValidationError, DegenerateDataError, WeakInstrumentError
from .gmm import GmmEstimate
from .scores import compute_riesz_weights, ht_transform, resolve_regressors


@dataclass(frozen=True)
class IndexFit:
    kind: str
    weights: np.ndarray
    index_values: np.ndarray
    lambdas: np.ndarray | None = None


def _columns(Y):
    Y = np.asarray(Y, dtype=float)
    return Y[:, None] if Y.ndim == 1 else Y


def _leading_eigvec(S, tol=1e-10):
    """Leading eigenvector; ties are broken toward the lowest coordinate axis
    and the sign makes the first nonzero weight positive."""
    w, V = np.linalg.eigh(S)
    top = w[-1]
    U = V[:, w >= top - tol * max(abs(top), 1.0)]
    for k in range(S.shape[0]):
        v = U @ U[k]
        if np.linalg.norm(v) > tol:
            v = v / np.linalg.norm(v)
            break
    nz = np.flatnonzero(np.abs(v) > tol)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def pca_index(Y, standardize=True) -> IndexFit:
    """First principal component score of the measurement matrix.

    ``standardize=True`` works on the correlation matrix; ``False`` on the
    covariance matrix of the centered columns.
    """
    Y = _columns(Y)
    if Y.shape[1] < 2:
        raise DataValidationError("PCA index needs at least two measurements")
    sd = Y.std(axis=0)
    if np.any(sd == 0):
        raise DegenerateDataError("zero-variance measurement column")
    Yc = Y - Y.mean(axis=0)
    if standardize:
        Yc = Yc / sd
    S = Yc.T @ Yc / Y.shape[0]
    w = _leading_eigvec(S)
    return IndexFit(kind="pca", weights=w, index_values=Yc @ w)


def icw_weights(Sigma) -> np.ndarray:
    """``Sigma^{-1} 1 / (1' Sigma^{-1} 1)``; falls back to a small ridge when singular."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    ones = np.ones(Sigma.shape[0])
    try:
        if np.linalg.cond(Sigma) > 1e12:
            raise np.linalg.LinAlgError
        x = np.linalg.solve(Sigma, ones)
    except np.linalg.LinAlgError:
        warnings.warn("covariance is singular; using a ridge-regularized inverse", stacklevel=2)
        ridge = 1e-6 * max(np.trace(Sigma) / Sigma.shape[0], 1e-12)
        x = np.linalg.solve(Sigma + ridge * np.eye(Sigma.shape[0]), ones)
    return x / x.sum()


def icw_index(Y, z=None) -> IndexFit:
    """Inverse-covariance weighted index of standardized measurements.

    With ``z`` given, columns are standardized by the control-group mean and
    standard deviation; otherwise by the full sample.
    """
    Y = _columns(Y)
    ref = Y if z is None else Y[np.asarray(z) == 0]
    if ref.shape[0] < 2:
        raise DegenerateDataError("not enough reference rows to standardize")
    sd = ref.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise DegenerateDataError("zero-variance measurement column")
    S = (Y - ref.mean(axis=0)) / sd
    if S.shape[1] == 1:
        w = np.ones(1)
    else:
        w = icw_weights(np.cov(S, rowvar=False))
    return IndexFit(kind="icw", weights=w, index_values=S @ w)


def index_diff_in_means(index, z, pi=None) -> dict:
    """Horvitz-Thompson contrast of an index: ``tau = mean(s(Z) * index)`` with
    standard error ``sd(s(Z) * index) / sqrt(n)``."""
    index = np.asarray(index, dtype=float)
    z = np.asarray(z, dtype=float)
    n1 = int(z.sum())
    if n1 == 0 or n1 == z.size:
        raise DegenerateDataError("both treatment arms must be non-empty")
    pi = float(z.mean()) if pi is None else pi
    contrib = ht_transform(z, pi) * index
    return {"tau_hat": float(contrib.mean()), "se": float(contrib.std(ddof=1) / np.sqrt(z.size))}


def wsi_lambdas(ds: Dataset, instrument=None, tol=1e-6) -> np.ndarray:
    """Wald ratios ``Cov(Y_j, V) / Cov(Y_1, V)`` for every measurement.

    ``instrument`` is a column name, ``None`` (first treatment) or
    ``"other_measurement"`` (the next auxiliary measurement, cyclically; the
    first treatment when there is only one auxiliary measurement).
    """
    names = ds.measurement_names
    y1 = ds[names[0]]
    aux = names[1:]
    lambdas = [1.0]
    for i, m in enumerate(aux):
        if instrument == "other_measurement" and len(aux) > 1:
            v = ds[aux[(i + 1) % len(aux)]]
        elif instrument in (None, "other_measurement"):
            v = ds[ds.roles.treatments[0]]
        else:
            v = ds[instrument]
        c1 = np.cov(y1, v)[0, 1]
        if abs(c1) <= tol * np.std(y1) * np.std(v):
            raise WeakInstrumentError(f"instrument has (near) zero covariance with the benchmark "
                                      f"while scaling {m!r}")
        lambdas.append(np.cov(ds[m], v)[0, 1] / c1)
    return np.asarray(lambdas)


def wsi_estimate(ds: Dataset, instrument=None, regressors="ht"):
    """Linear scaled index: Wald-scaled measurements, inverse-variance pooled.

    Returns ``(GmmEstimate, IndexFit)``. The standard errors are plug-in
    standard errors of the final index contrast and do not account for the
    estimation of the scale factors.
    """
    lam = wsi_lambdas(ds, instrument)
    Yt = ds.matrix(list(ds.measurement_names)) / lam
    if Yt.shape[1] == 1:
        w = np.ones(1)
    else:
        w = icw_weights(np.cov(Yt, rowvar=False))
    index = Yt @ w
    fit = IndexFit(kind="wsi", weights=w, index_values=index, lambdas=lam)
    regs = resolve_regressors(ds, regressors)
    if regs == "ht":
        t = ds.roles.treatments[0]
        alpha = ht_transform(ds[t], ds.treatment_share(t))[:, None]
        names = (t,)
        if alpha[:, 0].min() >= 0 or alpha[:, 0].max() <= 0:
            raise DegenerateDataError("both treatment arms must be non-empty")
    else:
        rw = compute_riesz_weights(ds, ds, regs)
        alpha, names = rw.alpha, rw.names
    contrib = alpha * index[:, None]
    n = ds.n
    cov = np.atleast_2d(np.cov(contrib, rowvar=False)) / n
    est = GmmEstimate(beta=contrib.mean(axis=0), cov=cov, J_stat=None, df=0, weighting="plug-in",
                      per_measurement=contrib.mean(axis=0)[None, :], n=n, coef_names=names,
                      measurement_names=("index",))
    return est, fit


class PCAIndex(TransformerMixin, BaseEstimator):
    """First principal component index as a transformer."""

    def __init__(self, standardize=True):
        self.standardize = standardize

    def fit(self, Y, y=None):
        Y = _columns(Y)
        self.mean_ = Y.mean(axis=0)
        self.scale_ = Y.std(axis=0) if self.standardize else np.ones(Y.shape[1])
        self.weights_ = pca_index(Y, self.standardize).weights
        return self

    def transform(self, Y):
        check_is_fitted(self, "weights_")
        return ((_columns(Y) - self.mean_) / self.scale_) @ self.weights_


class ICWIndex(TransformerMixin, BaseEstimator):
    """Inverse-covariance weighted index; ``fit(Y, z)`` standardizes on controls."""

    def fit(self, Y, z=None):
        Y = _columns(Y)
        ref = Y if z is None else Y[np.asarray(z) == 0]
        self.mean_ = ref.mean(axis=0)
        self.scale_ = ref.std(axis=0, ddof=1)
        self.weights_ = icw_index(Y, z).weights
        return self

    def transform(self, Y):
        check_is_fitted(self, "weights_")
        return ((_columns(Y) - self.mean_) / self.scale_) @ self.weights_


class WSIEstimator(BaseEstimator):
    def __init__(self, instrument=None, regressors="ht"):
        self.instrument = instrument
        self.regressors = regressors

    def fit(self, ds: Dataset):
        self.estimate_, self.index_ = wsi_estimate(ds, self.instrument, self.regressors)
        self.coef_ = self.estimate_.beta
        self.se_ = self.estimate_.se
        self.lambdas_ = self.index_.lambdas
        return self
