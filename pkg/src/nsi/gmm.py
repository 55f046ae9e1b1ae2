"""Linear GMM pooling of per-measurement moment means."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._linalg import spd_solve
from .exceptions import ConfigError, DegenerateDataError, NumericalError

WEIGHTINGS = ("identity", "efficient")


@dataclass(frozen=True)
class MomentSummary:
    """Stacked moment means and their covariance (``1/n`` normalization)."""

    m_bar: np.ndarray
    Omega: np.ndarray
    n: int
    d_R: int = 1
    measurement_names: tuple[str, ...] = ()
    coef_names: tuple[str, ...] = ()

    @property
    def J(self) -> int:
        return self.m_bar.shape[0] // self.d_R


def summarize_moments(scores) -> MomentSummary:
    """Accepts a :class:`~nsi.scores.ScoreMatrix` or a plain ``(n, J*d_R)`` array.

    For a score matrix the covariance is taken from its variance scores.
    """
    V = None
    if hasattr(scores, "stacked"):
        S = scores.stacked()
        V = scores.variance_stacked()
        d_R, names, coefs = scores.d_R, scores.measurement_names, scores.coef_names
    else:
        S = np.asarray(scores, dtype=float)
        S = S[:, None] if S.ndim == 1 else S
        d_R, names, coefs = 1, tuple(f"m{j + 1}" for j in range(S.shape[1])), ("tau",)
    n = S.shape[0]
    if n < 2:
        raise DegenerateDataError("need at least 2 observations to estimate the score covariance")
    if not np.all(np.isfinite(S)):
        raise NumericalError("scores contain non-finite values")
    m_bar = S.mean(axis=0)
    V = S if V is None else V
    C = V - V.mean(axis=0)
    Omega = C.T @ C / n
    return MomentSummary(m_bar=m_bar, Omega=0.5 * (Omega + Omega.T), n=n, d_R=d_R,
                         measurement_names=tuple(names), coef_names=tuple(coefs))


@dataclass(frozen=True)
class GmmEstimate:
    beta: np.ndarray
    cov: np.ndarray
    J_stat: float | None
    df: int
    weighting: str
    per_measurement: np.ndarray
    n: int
    coef_names: tuple[str, ...] = ()
    measurement_names: tuple[str, ...] = ()
    L: np.ndarray | None = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def J_pvalue(self) -> float | None:
        if self.J_stat is None:
            return None
        if self.df == 0:
            return 1.0
        return float(stats.chi2.sf(self.J_stat, self.df))

    def coef_index(self, coefficient) -> int:
        if isinstance(coefficient, (int, np.integer)):
            return int(coefficient)
        try:
            return self.coef_names.index(coefficient)
        except ValueError:
            raise ConfigError(f"unknown coefficient {coefficient!r}; have {self.coef_names}") from None

    def p_values(self) -> np.ndarray:
        """Two-sided normal p-values for ``beta = 0``."""
        se = self.se
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, self.beta / se, np.inf)
        return 2.0 * stats.norm.sf(np.abs(z))

    def conf_int(self, level=0.95) -> np.ndarray:
        crit = stats.norm.ppf(0.5 + level / 2.0)
        return np.column_stack([self.beta - crit * self.se, self.beta + crit * self.se])

    def to_dict(self) -> dict:
        return {
            "coefficients": {
                c: {"estimate": float(b), "se": float(s), "p_value": float(p)}
                for c, b, s, p in zip(self.coef_names, self.beta, self.se, self.p_values())
            },
            "cov": self.cov.tolist(),
            "J_stat": None if self.J_stat is None else float(self.J_stat),
            "J_df": self.df,
            "J_p_value": self.J_pvalue,
            "weighting": self.weighting,
            "n": self.n,
            "per_measurement": {
                m: dict(zip(self.coef_names, map(float, row)))
                for m, row in zip(self.measurement_names, self.per_measurement)
            },
        }


def _check_weighting(weighting):
    if weighting not in WEIGHTINGS:
        raise ConfigError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")


def default_ridge(Omega) -> float:
    return 1e-8 * float(np.trace(Omega)) / Omega.shape[0]


def _weight_matrix(Omega, weighting, ridge):
    if weighting == "identity":
        return np.eye(Omega.shape[0])
    ridge = default_ridge(Omega) if ridge is None else ridge
    M = Omega + ridge * np.eye(Omega.shape[0])
    if ridge == 0:
        try:
            return np.linalg.inv(M)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("score covariance is singular; use a positive ridge") from exc
    return spd_solve(M, np.eye(M.shape[0]), what="score covariance")


def _aggregation(A, W):
    AtW = A.T @ W
    return np.linalg.solve(AtW @ A, AtW)


def pool_gmm(summary: MomentSummary, d_R: int | None = None, weighting="efficient", ridge=None) -> GmmEstimate:
    """Joint GMM for a common coefficient vector across measurements.

    ``beta = L m_bar`` with ``L = (A'WA)^{-1} A'W`` and ``A = 1_J kron I``;
    ``cov = L Omega L' / n``. The J statistic is reported for efficient
    weighting only.
    """
    _check_weighting(weighting)
    d_R = summary.d_R if d_R is None else d_R
    m_bar, Omega, n = summary.m_bar, summary.Omega, summary.n
    J = m_bar.shape[0] // d_R
    if J < 1 or J * d_R != m_bar.shape[0]:
        raise ConfigError(f"moment vector of length {m_bar.shape[0]} is not a multiple of d_R={d_R}")
    A = np.kron(np.ones((J, 1)), np.eye(d_R))
    if J == 1:
        L = np.eye(d_R)
        W = np.eye(d_R)
    else:
        W = _weight_matrix(Omega, weighting, ridge)
        L = _aggregation(A, W)
    beta = m_bar.copy() if J == 1 else L @ m_bar
    cov = L @ Omega @ L.T / n
    cov = 0.5 * (cov + cov.T)
    if J == 1:
        J_stat = 0.0
    elif weighting == "efficient":
        resid = m_bar - A @ beta
        J_stat = float(n * resid @ W @ resid)
    else:
        J_stat = None
    return GmmEstimate(
        beta=beta, cov=cov, J_stat=J_stat, df=(J - 1) * d_R, weighting=weighting,
        per_measurement=m_bar.reshape(J, d_R), n=n,
        coef_names=summary.coef_names or tuple(f"b{l}" for l in range(d_R)),
        measurement_names=summary.measurement_names or tuple(f"m{j + 1}" for j in range(J)),
        L=L,
    )


def pool_per_coefficient(summary: MomentSummary, d_R: int | None = None, weighting="efficient",
                         ridge=None) -> GmmEstimate:
    """Scalar GMM separately for each coefficient across the J measurements.

    The per-coefficient aggregation rows are assembled into one block-sparse
    ``L`` so that cross-coefficient covariances come from the full
    ``Omega``. ``J_stat`` is the sum of the per-coefficient statistics.
    """
    _check_weighting(weighting)
    d_R = summary.d_R if d_R is None else d_R
    m_bar, Omega, n = summary.m_bar, summary.Omega, summary.n
    J = m_bar.shape[0] // d_R
    L = np.zeros((d_R, J * d_R))
    beta = np.empty(d_R)
    J_total = 0.0
    ones = np.ones((J, 1))
    for l in range(d_R):
        idx = np.arange(J) * d_R + l
        if J == 1:
            row = np.ones(1)
        else:
            W = _weight_matrix(Omega[np.ix_(idx, idx)], weighting, ridge)
            row = _aggregation(ones, W)[0]
        L[l, idx] = row
        beta[l] = row @ m_bar[idx]
        if J > 1 and weighting == "efficient":
            resid = m_bar[idx] - beta[l]
            J_total += float(n * resid @ W @ resid)
    if J == 1:
        beta = m_bar.copy()
    cov = L @ Omega @ L.T / n
    return GmmEstimate(
        beta=beta, cov=0.5 * (cov + cov.T),
        J_stat=(J_total if (weighting == "efficient" or J == 1) else None),
        df=(J - 1) * d_R, weighting=weighting, per_measurement=m_bar.reshape(J, d_R), n=n,
        coef_names=summary.coef_names or tuple(f"b{l}" for l in range(d_R)),
        measurement_names=summary.measurement_names or tuple(f"m{j + 1}" for j in range(J)),
        L=L,
    )


def wald_statistic(tau_a, se_a, tau_b, se_b) -> dict:
    """Equality test for two independent estimates."""
    var = se_a ** 2 + se_b ** 2
    if var <= 0:
        raise DegenerateDataError("both estimates have zero variance; the Wald test is undefined")
    stat = (tau_a - tau_b) ** 2 / var
    return {"gap": float(tau_a - tau_b), "stat": float(stat), "df": 1,
            "p_value": float(stats.chi2.sf(stat, 1))}


def wald_equality_test(est_A: GmmEstimate, est_B: GmmEstimate, coefficient=0) -> dict:
    ia, ib = est_A.coef_index(coefficient), est_B.coef_index(coefficient)
    return wald_statistic(est_A.beta[ia], est_A.se[ia], est_B.beta[ib], est_B.se[ib])
