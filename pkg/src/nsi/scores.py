"""Cross-fitted Neyman-orthogonal scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .bridge import PHI_SPEC, W_SPEC, BridgeFit, FirstStage, HyperParams, NuisanceFit, fit_stage_bridge
from .data import Dataset, FoldAssignment
from .exceptions import ConfigError, DataValidationError, NSIError, RankError

logger = logging.getLogger(__name__)


def ht_transform(z, pi: float) -> np.ndarray:
    """Horvitz-Thompson transform ``z / pi - (1 - z) / (1 - pi)``."""
    if not 0.0 < pi < 1.0:
        raise DataValidationError(f"treatment probability must lie in (0, 1), got {pi}")
    z = np.asarray(z, dtype=float)
    return z / pi - (1.0 - z) / (1.0 - pi)


@dataclass(frozen=True)
class RieszWeights:
    names: tuple[str, ...]
    M_hat: np.ndarray
    alpha: np.ndarray

    @property
    def d_R(self) -> int:
        return len(self.names)


def _first_dependent_columns(R, names, tol=1e-10):
    """Names of columns that lie in the span of the columns before them."""
    bad = []
    keep = []
    scale = np.linalg.norm(R, axis=0).max() or 1.0
    for k in range(R.shape[1]):
        cand = R[:, keep + [k]]
        if np.linalg.matrix_rank(cand, tol=tol * scale * np.sqrt(R.shape[0])) < len(keep) + 1:
            bad.append(names[k])
        else:
            keep.append(k)
    return bad


def _design(ds: Dataset, regressors: Sequence[str]) -> np.ndarray:
    return np.column_stack([np.ones(ds.n), ds.matrix(list(regressors))])


def compute_riesz_weights(train_rows: Dataset, eval_rows: Dataset, regressors: Sequence[str]) -> RieszWeights:
    """Riesz representers ``alpha_l(R) = e_l' M^{-1} R`` for the coefficients of
    the regression on ``R = (1, regressors...)``, with ``M`` from ``train_rows``."""
    names = ("intercept", *regressors)
    R_tr = _design(train_rows, regressors)
    M = R_tr.T @ R_tr / R_tr.shape[0]
    bad = _first_dependent_columns(R_tr, names)
    if bad:
        raise RankError(f"regressor Gram matrix is singular; collinear column(s): {bad}")
    alpha = np.linalg.solve(M, _design(eval_rows, regressors).T).T
    return RieszWeights(names=names, M_hat=M, alpha=alpha)


def ht_weights(train_rows: Dataset, eval_rows: Dataset, treatment: str) -> RieszWeights:
    """Single-functional weights ``s(Z)`` with ``pi`` from the design or the training rows."""
    pi = train_rows.treatment_share(treatment)
    alpha = ht_transform(eval_rows[treatment], pi)[:, None]
    return RieszWeights(names=(treatment,), M_hat=np.array([[pi]]), alpha=alpha)


def _weights(train, evalr, regressors):
    if regressors == "ht":
        ts = train.roles.treatments
        if len(ts) != 1:
            raise ConfigError("regressors='ht' needs exactly one treatment column")
        return ht_weights(train, evalr, ts[0])
    return compute_riesz_weights(train, evalr, regressors)


def resolve_regressors(ds: Dataset, regressors) -> str | tuple[str, ...]:
    """``'ht'``, ``'regression'`` (treatments then covariates) or an explicit column list."""
    if regressors == "ht":
        return "ht"
    if regressors in (None, "regression"):
        return (*ds.roles.treatments, *ds.roles.covariates)
    return tuple(regressors)


@dataclass
class ScoreMatrix:
    """Cross-fitted scores: ``scores[name]`` is ``(n, d_R)`` per measurement."""

    scores: dict
    coef_names: tuple[str, ...]
    folds: FoldAssignment
    pi: dict
    fits: list = field(default_factory=list, repr=False)
    variance_scores: dict | None = field(default=None, repr=False)

    @property
    def measurement_names(self) -> tuple[str, ...]:
        return tuple(self.scores)

    @property
    def n(self) -> int:
        return self.folds.fold_of.shape[0]

    @property
    def d_R(self) -> int:
        return len(self.coef_names)

    def stacked(self) -> np.ndarray:
        """``(n, J * d_R)`` matrix, measurement-major."""
        return np.column_stack([self.scores[m] for m in self.scores])

    def variance_stacked(self) -> np.ndarray:
        """Scores used for the covariance; equal to :meth:`stacked` unless the
        estimated-weight adjustment was applied."""
        src = self.variance_scores if self.variance_scores is not None else self.scores
        return np.column_stack([src[m] for m in self.scores])

    def column_labels(self) -> list[str]:
        return [f"psi_{m}_{c}" for m in self.scores for c in self.coef_names]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.stacked(), columns=self.column_labels())
        df.insert(0, "fold", self.folds.fold_of)
        df.insert(0, "unit", np.arange(self.n))
        return df

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def crossfit_scores(
    ds: Dataset,
    folds: FoldAssignment,
    phi_spec=PHI_SPEC,
    w_spec=W_SPEC,
    hyper: HyperParams = HyperParams(),
    regressors="ht",
    seed: int = 0,
    measurements: Sequence[str] | None = None,
    phi_specs: Mapping[str, object] | None = None,
    adjust_variance: bool = True,
) -> ScoreMatrix:
    """Held-out orthogonal scores for the benchmark and every auxiliary measurement.

    For a unit in fold ``k`` all nuisances (Riesz weights, bridge, debiasing
    nuisance and its projection) come from the other folds. The benchmark
    score is ``alpha * Y_1``; auxiliary measurements get
    ``alpha * phi(Y_j) + q(W) * (Y_1 - phi(Y_j))``.

    With ``adjust_variance`` the returned matrix also carries
    ``variance_scores = scores - alpha * (R' b_j)``, where ``b_j`` projects
    the held-out bridge values on the regressor design ``R``. This is the
    influence-function term for estimating the Riesz weights (the treated
    share or ``M``); without it the score covariance overstates the variance.
    It is skipped when ``alpha`` is known (design probability in HT mode).
    """
    regs = resolve_regressors(ds, regressors)
    names = tuple(measurements) if measurements is not None else ds.measurement_names
    bench = ds.roles.benchmark
    if names[0] != bench:
        raise ConfigError("the benchmark must be the first measurement scored")
    n = ds.n
    y1 = ds[bench]
    out = None
    coef_names = None
    pis = {}
    fits = []
    alpha_all = None
    phi_all = {bench: y1}
    for k in range(folds.K):
        tr_idx, te_idx = folds.train_index(k), folds.test_index(k)
        train, test = ds.take(tr_idx), ds.take(te_idx)
        w_tr = _weights(train, train, regs)
        w_te = _weights(train, test, regs)
        if out is None:
            coef_names = w_te.names
            out = {m: np.empty((n, w_te.d_R)) for m in names}
            alpha_all = np.empty((n, w_te.d_R))
            phi_all.update({m: np.empty(n) for m in names[1:]})
        alpha_all[te_idx] = w_te.alpha
        if regs == "ht":
            pis[k] = float(w_te.M_hat[0, 0])
        out[bench][te_idx] = w_te.alpha * y1[te_idx, None]
        fold_fits = {"fold": k, "riesz": w_te, "measurements": {}}
        for m in names[1:]:
            inst = ds.roles.instruments_for(m)
            spec = (phi_specs or {}).get(m, phi_spec)
            try:
                stage = FirstStage(train[m], train[bench], train.matrix(inst), spec, w_spec, seed + k)
                bfit = fit_stage_bridge(stage, hyper, m, inst)
                h = bfit.hyper
                delta = stage.xi_coef(w_tr.alpha, h)
                theta = stage.q_coef(delta, h.ridge_q)
                xi_obj = [stage.xi_objective(delta[:, l], w_tr.alpha[:, l], h) for l in range(w_tr.d_R)]
            except NSIError as exc:
                raise type(exc)(f"fold {k}, measurement {m!r}: {exc}") from exc
            phi_te = bfit.predict(test[m])
            q_te = stage.w_basis.transform(test.matrix(inst)) @ theta
            out[m][te_idx] = w_te.alpha * phi_te[:, None] + q_te * (test[bench] - phi_te)[:, None]
            phi_all[m][te_idx] = phi_te
            fold_fits["measurements"][m] = {
                "bridge": bfit,
                "nuisance": NuisanceFit(delta=delta, theta=theta, xi_objective=float(np.max(xi_obj))),
                "train_riesz": w_tr,
            }
        fits.append(fold_fits)
    for m, s in out.items():
        if not np.all(np.isfinite(s)):
            raise NSIError(f"non-finite scores for measurement {m!r}")
    variance_scores = _variance_scores(ds, regs, out, alpha_all, phi_all) if adjust_variance else None
    return ScoreMatrix(scores=out, coef_names=tuple(coef_names), folds=folds, pi=pis, fits=fits,
                       variance_scores=variance_scores)


def _variance_scores(ds, regs, out, alpha_all, phi_all):
    if regs == "ht" and ds.roles.treatments[0] in ds.pi:
        return None
    R = _design(ds, (ds.roles.treatments[0],) if regs == "ht" else regs)
    res = {}
    for m, s in out.items():
        b, *_ = np.linalg.lstsq(R, phi_all[m], rcond=None)
        res[m] = s - alpha_all * (R @ b)[:, None]
    return res


def scores_from_fits(ds: Dataset, folds: FoldAssignment, fits, regressors="ht",
                     adjust_variance: bool = True) -> ScoreMatrix:
    """Rebuild held-out scores from stored fold fits without refitting bridges.

    ``fits`` has the layout of :attr:`ScoreMatrix.fits` (or its serialized
    form from :func:`fits_to_dict`). Riesz weights are recomputed from the
    training rows of each fold.
    """
    regs = resolve_regressors(ds, regressors)
    fits = [_fold_from_dict(f) if _is_serialized(f) else f for f in fits]
    if len(fits) != folds.K:
        raise ConfigError(f"stored fits cover {len(fits)} folds, expected {folds.K}")
    bench = ds.roles.benchmark
    names = (bench, *fits[0]["measurements"])
    n = ds.n
    out = alpha_all = None
    phi_all = {bench: ds[bench]}
    pis = {}
    rebuilt = []
    for f in fits:
        k = f["fold"]
        tr_idx, te_idx = folds.train_index(k), folds.test_index(k)
        train, test = ds.take(tr_idx), ds.take(te_idx)
        w_te = _weights(train, test, regs)
        if out is None:
            out = {m: np.empty((n, w_te.d_R)) for m in names}
            alpha_all = np.empty((n, w_te.d_R))
            phi_all.update({m: np.empty(n) for m in names[1:]})
        alpha_all[te_idx] = w_te.alpha
        if regs == "ht":
            pis[k] = float(w_te.M_hat[0, 0])
        out[bench][te_idx] = w_te.alpha * test[bench][:, None]
        for m, d in f["measurements"].items():
            bfit, nuis = d["bridge"], d["nuisance"]
            phi_te = bfit.predict(test[m])
            theta = nuis.theta[:, None] if nuis.theta.ndim == 1 else nuis.theta
            q_te = bfit.w_basis.transform(test.matrix(list(bfit.instruments))) @ theta
            out[m][te_idx] = w_te.alpha * phi_te[:, None] + q_te * (test[bench] - phi_te)[:, None]
            phi_all[m][te_idx] = phi_te
        rebuilt.append({**f, "riesz": w_te})
    variance_scores = _variance_scores(ds, regs, out, alpha_all, phi_all) if adjust_variance else None
    return ScoreMatrix(scores=out, coef_names=w_te.names, folds=folds, pi=pis, fits=rebuilt,
                       variance_scores=variance_scores)


def fits_to_dict(fits) -> list:
    """JSON-ready description of stored fold fits (bridges and nuisances)."""
    return [
        {"fold": f["fold"],
         "measurements": {m: {"bridge": d["bridge"].to_dict(), "nuisance": d["nuisance"].to_dict()}
                          for m, d in f["measurements"].items()}}
        for f in fits
    ]


def _is_serialized(f) -> bool:
    return any(isinstance(d["bridge"], dict) for d in f["measurements"].values())


def _fold_from_dict(f) -> dict:
    return {"fold": int(f["fold"]),
            "measurements": {m: {"bridge": BridgeFit.from_dict(d["bridge"]),
                                 "nuisance": NuisanceFit.from_dict(d["nuisance"])}
                             for m, d in f["measurements"].items()}}


__all__ = [
    "RieszWeights", "ScoreMatrix", "compute_riesz_weights", "crossfit_scores", "fits_to_dict",
    "ht_transform", "ht_weights", "resolve_regressors", "scores_from_fits",
]
