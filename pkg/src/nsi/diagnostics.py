"""Identification and fit diagnostics.

Completeness of a continuous instrument is not testable from data; what is
checked here is the discrete analogue (full row rank of a contingency
table), a singular-value proxy for instrument strength and the empirical
orthogonality of the debiasing nuisance on held-out rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._linalg import pinv_sqrt_psd
from .exceptions import DataValidationError

logger = logging.getLogger(__name__)

WEAK_THRESHOLD = 0.05


def completeness_rank_check(joint_counts, rtol=1e-8) -> dict:
    """Rank check of a ``k x m`` table of latent-by-measurement counts.

    Rows are normalized to conditional distributions of the measurement
    category given the latent category. Completeness requires the rows to be
    linearly independent, i.e. rank ``k``, which needs ``m >= k``.
    """
    T = np.asarray(joint_counts, dtype=float)
    if T.ndim != 2 or T.size == 0:
        raise DataValidationError("contingency table must be a non-empty 2-d array")
    if np.any(~np.isfinite(T)) or np.any(T < 0):
        raise DataValidationError("counts must be finite and nonnegative")
    if np.any(T.sum(axis=1) <= 0) or np.any(T.sum(axis=0) <= 0):
        raise DataValidationError("every row and column of the table needs positive mass")
    P = T / T.sum(axis=1, keepdims=True)
    s = np.linalg.svd(P, compute_uv=False)
    rank = int(np.sum(s > rtol * s[0]))
    k = T.shape[0]
    return {"rank": rank, "required_rank": k, "pass": rank == k,
            "singular_values": s.tolist()}


def normalized_cross_moment(G_b, G_c, B) -> np.ndarray:
    """``G_c^{-1/2} B G_b^{-1/2}`` with pseudo-inverse square roots."""
    return pinv_sqrt_psd(G_c) @ np.asarray(B, dtype=float) @ pinv_sqrt_psd(G_b)


def strength_from_moments(G_b, G_c, B, rtol=1e-10) -> float:
    """Smallest canonical correlation between the two dictionaries.

    Only directions that survive the pseudo-inverse on both sides count, so
    duplicated columns in either dictionary leave the value unchanged.
    """
    Bt = normalized_cross_moment(G_b, G_c, B)
    rb = _rank(G_b, rtol)
    rc = _rank(G_c, rtol)
    s = np.linalg.svd(Bt, compute_uv=False)[:min(rb, rc)]
    return float(np.clip(s[-1], 0.0, 1.0)) if s.size else 0.0


def _rank(G, rtol):
    w = np.linalg.eigvalsh(0.5 * (G + G.T))
    return int(np.sum(w > rtol * w.max()))


def instrument_strength(fit, threshold=WEAK_THRESHOLD) -> float:
    """Smallest singular value of the whitened cross-moment of a fitted bridge.

    Values below ``threshold`` are logged as a weak-identification warning.
    """
    value = strength_from_moments(fit.G_b, fit.G_c, fit.B)
    if value < threshold:
        logger.warning("weak instruments for %s: strength %.3g below %.2g",
                       getattr(fit, "measurement", None) or "bridge", value, threshold)
    return value


def orthogonality_residual(ds_holdout, bridge, nuisance, riesz) -> float:
    """``max_k |E_holdout[(alpha(R) - q(W)) b_k(Y_j)]|`` over dictionary
    elements (and over coefficients when ``alpha`` has several columns).

    ``riesz`` is a :class:`~nsi.scores.RieszWeights` evaluated on the
    holdout rows or the raw ``(n,)``/``(n, L)`` weight array.
    """
    alpha = getattr(riesz, "alpha", riesz)
    alpha = np.asarray(alpha, dtype=float)
    alpha = alpha[:, None] if alpha.ndim == 1 else alpha
    m = bridge.measurement
    inst = bridge.instruments or ds_holdout.roles.instruments_for(m)
    b = bridge.phi_basis.transform(ds_holdout.matrix([m]))
    c = bridge.w_basis.transform(ds_holdout.matrix(list(inst)))
    theta = np.asarray(nuisance.theta, dtype=float)
    q = c @ (theta[:, None] if theta.ndim == 1 else theta)
    M = b.T @ (alpha - q) / b.shape[0]
    return float(np.max(np.abs(M)))


@dataclass
class DiagnosticsReport:
    """Per-measurement first-stage diagnostics, worst case over folds."""

    instrument_strength: dict = field(default_factory=dict)
    foc_residual: dict = field(default_factory=dict)
    orthogonality_residual: dict = field(default_factory=dict)
    xi_objective: dict = field(default_factory=dict)
    completeness: dict | None = None
    warnings: list = field(default_factory=list)
    threshold: float = WEAK_THRESHOLD

    def to_dict(self) -> dict:
        out = {
            "instrument_strength": self.instrument_strength,
            "weak_threshold": self.threshold,
            "foc_residual": self.foc_residual,
            "orthogonality_residual": self.orthogonality_residual,
            "xi_objective": self.xi_objective,
            "warnings": list(self.warnings),
        }
        if self.completeness is not None:
            out["completeness"] = self.completeness
        return out


def build_report(ds, scores, completeness_table=None, threshold=WEAK_THRESHOLD) -> DiagnosticsReport:
    """Diagnostics for the fold fits stored in a :class:`~nsi.scores.ScoreMatrix`.

    Strength is the minimum over folds; residuals and objectives are the
    maximum. Orthogonality is evaluated on each fold's held-out rows.
    """
    rep = DiagnosticsReport(threshold=threshold)
    for f in scores.fits:
        k = f["fold"]
        holdout = ds.take(scores.folds.test_index(k))
        for m, d in f["measurements"].items():
            bfit = d["bridge"]
            s = strength_from_moments(bfit.G_b, bfit.G_c, bfit.B)
            rep.instrument_strength[m] = min(s, rep.instrument_strength.get(m, np.inf))
            rep.foc_residual[m] = max(bfit.foc_residual(), rep.foc_residual.get(m, -np.inf))
            o = orthogonality_residual(holdout, bfit, d["nuisance"], f["riesz"])
            rep.orthogonality_residual[m] = max(o, rep.orthogonality_residual.get(m, -np.inf))
            rep.xi_objective[m] = max(d["nuisance"].xi_objective, rep.xi_objective.get(m, -np.inf))
    for m, s in rep.instrument_strength.items():
        if s < threshold:
            rep.warnings.append(f"weak instruments for {m}: strength {s:.3g} below {threshold}")
    for w in rep.warnings:
        logger.warning(w)
    if completeness_table is not None:
        rep.completeness = completeness_rank_check(completeness_table)
    return rep


__all__ = [
    "DiagnosticsReport", "WEAK_THRESHOLD", "build_report", "completeness_rank_check",
    "instrument_strength", "normalized_cross_moment", "orthogonality_residual",
    "strength_from_moments",
]
