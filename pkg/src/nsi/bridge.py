"""Penalized minimax estimation of measurement bridges and debiasing nuisances.

For linear-in-basis classes ``phi(y) = b(y)' beta`` and ``q(w) = c(w)' gamma``
the penalized criterion

    E_n[(phi(Y_j) - Y_1) q(W) - q(W)^2 / 2 + mu phi(Y_j)^2]
        - gamma_q |gamma|^2 + gamma_phi |beta|^2

is concave-quadratic in ``gamma`` and convex-quadratic in ``beta``. The inner
maximizer is ``gamma = D (B beta - r)`` with ``D = (G_c + 2 gamma_q I)^{-1}``,
so the saddle point solves

    (B' D B + 2 mu G_b + 2 gamma_phi I) beta = B' D r

where ``G_b = E_n[b b']``, ``G_c = E_n[c c']``, ``B = E_n[c b']`` and
``r = E_n[c Y_1]``. The debiasing problem (same criterion with the linear
term ``-alpha(R) xi(Y_j)`` in place of the ``Y_1`` residual and no ``mu``
term) gives ``(B' D B + 2 gamma_xi I) delta = a`` with
``a = E_n[alpha(R) b(Y_j)]``. The projection of ``xi(Y_j)`` on ``c(W)`` is a
ridge regression.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._linalg import spd_solve
from .basis import BasisSpec, basis_from_dict, fit_basis
from .exceptions import ConfigError, InsufficientDataError, NumericalError

PHI_SPEC = BasisSpec(kind="polynomial", degree=3)
W_SPEC = BasisSpec(kind="polynomial", degree=2, interactions=True)


PENALTIES = ("mu", "gamma_phi", "gamma_q", "gamma_xi", "ridge_q")
PENALTY_RATES = {"inverse_n": lambda n: 1.0 / n, "inverse_sqrt_n": lambda n: 1.0 / np.sqrt(n)}


@dataclass(frozen=True)
class HyperParams:
    """Regularization weights. ``None`` entries are resolved from the data
    by :func:`resolve_hyper` at the rate ``penalty_rate`` (``"inverse_n"``
    or ``"inverse_sqrt_n"``)."""

    mu: float | None = None
    gamma_phi: float | None = None
    gamma_q: float | None = None
    gamma_xi: float | None = None
    ridge_q: float | None = None
    penalty_rate: str = "inverse_n"

    def __post_init__(self):
        if self.penalty_rate not in PENALTY_RATES:
            raise ConfigError(f"penalty_rate must be one of {tuple(PENALTY_RATES)}, got {self.penalty_rate!r}")
        for k in PENALTIES:
            v = getattr(self, k)
            if v is not None and v < 0:
                raise ConfigError(f"hyperparameter {k} must be >= 0, got {v}")
        if self.mu == 0 and self.gamma_phi == 0:
            raise ConfigError("at least one of mu and gamma_phi must be positive")
        if self.gamma_q == 0:
            raise ConfigError("gamma_q must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def resolve_hyper(hyper: HyperParams, n: int, G_b, G_c) -> HyperParams:
    """Fill unset penalties with the rate (``1/n`` by default) times the mean
    diagonal of the Gram matrix the penalty is compared against (``mu`` is
    dimensionless).

    The default ``1/n`` rate keeps the shrinkage bias of the bridge below
    the sampling error; ``n^{-1/2}`` over-regularizes cubic sieves at
    moderate n.
    """
    rate = PENALTY_RATES[hyper.penalty_rate](n)
    tb = float(np.trace(G_b)) / G_b.shape[0]
    tc = float(np.trace(G_c)) / G_c.shape[0]
    defaults = {"mu": rate, "gamma_phi": rate * tb, "gamma_q": rate * tc,
                "gamma_xi": rate * tb, "ridge_q": rate * tc}
    filled = {k: (defaults[k] if getattr(hyper, k) is None else getattr(hyper, k)) for k in PENALTIES}
    return HyperParams(**filled, penalty_rate=hyper.penalty_rate)


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _critic_solve(G_c, rhs, gamma_q):
    M = G_c + 2.0 * gamma_q * np.eye(G_c.shape[0])
    return spd_solve(M, rhs, what="critic Gram")


def bridge_closed_form(G_b, G_c, B, r, hyper: HyperParams) -> np.ndarray:
    """Saddle point ``(B'DB + 2 mu G_b + 2 gamma_phi I)^{-1} B'D r`` of the
    penalized bridge criterion, ``D = (G_c + 2 gamma_q I)^{-1}``."""
    sol = _critic_solve(G_c, np.column_stack([B, r]), hyper.gamma_q)
    DB, Dr = sol[:, :-1], sol[:, -1]
    p = G_b.shape[0]
    lhs = B.T @ DB + 2.0 * hyper.mu * G_b + 2.0 * hyper.gamma_phi * np.eye(p)
    return spd_solve(lhs, B.T @ Dr, what="bridge normal equations")


def xi_closed_form(G_c, B, a, hyper: HyperParams) -> np.ndarray:
    """Debiasing coefficients ``(B'DB + 2 gamma_xi I)^{-1} a``."""
    DB = _critic_solve(G_c, B, hyper.gamma_q)
    lhs = B.T @ DB + 2.0 * hyper.gamma_xi * np.eye(B.shape[1])
    return spd_solve(lhs, a, what="debiasing normal equations")


def q_closed_form(G_c, B, delta, ridge_q: float) -> np.ndarray:
    """Ridge projection ``(G_c + ridge_q I)^{-1} B delta`` of ``xi`` on the critic basis."""
    rhs = B @ delta
    if ridge_q == 0:
        try:
            return linalg.solve(G_c, rhs, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise NumericalError("critic Gram is singular; use ridge_q > 0") from exc
    return spd_solve(G_c + ridge_q * np.eye(G_c.shape[0]), rhs, what="q projection")


class FirstStage:
    """Bases and empirical moment matrices for one measurement on one sample.

    Everything the three closed-form solves need is computed once here, so
    the bridge, each debiasing nuisance and the projection can share it.
    """

    def __init__(self, y_j, y_1, W, phi_spec=PHI_SPEC, w_spec=W_SPEC, seed=0):
        y_j = _as_2d(y_j)
        W = _as_2d(W)
        y_1 = np.asarray(y_1, dtype=float).ravel()
        if np.any(np.all(W == 0, axis=0)):
            raise NumericalError("an instrument column is identically zero (degenerate critic)")
        self.phi_basis = fit_basis(phi_spec, y_j, targets=y_1, seed=seed)
        self.w_basis = fit_basis(w_spec, W, targets=y_1, seed=seed)
        self.b = self.phi_basis.transform(y_j)
        self.c = self.w_basis.transform(W)
        n = y_j.shape[0]
        p, q = self.b.shape[1], self.c.shape[1]
        if n < max(p, q):
            raise InsufficientDataError(f"{n} training rows for basis dimensions b={p}, c={q}")
        if np.any(np.all(self.c == 0, axis=0)):
            raise NumericalError("critic basis has an identically zero column (degenerate instrument)")
        self.n = n
        self.y_1 = y_1
        self.G_b = self.b.T @ self.b / n
        self.G_c = self.c.T @ self.c / n
        self.B = self.c.T @ self.b / n
        self.r = self.c.T @ y_1 / n
        if not np.any(np.abs(self.B) > 0):
            raise NumericalError("instrument features are uncorrelated with the bridge features")
        self._cache = {}

    def _DB(self, gamma_q):
        """``D B`` and ``D r`` for the critic penalty ``gamma_q``."""
        if gamma_q not in self._cache:
            M = self.G_c + 2.0 * gamma_q * np.eye(self.G_c.shape[0])
            sol = spd_solve(M, np.column_stack([self.B, self.r]), what="critic Gram")
            self._cache[gamma_q] = (sol[:, :-1], sol[:, -1])
        return self._cache[gamma_q]

    def bridge_coef(self, hyper: HyperParams):
        DB, Dr = self._DB(hyper.gamma_q)
        p = self.G_b.shape[0]
        lhs = self.B.T @ DB + 2.0 * hyper.mu * self.G_b + 2.0 * hyper.gamma_phi * np.eye(p)
        return spd_solve(lhs, self.B.T @ Dr, what="bridge normal equations")

    def xi_coef(self, riesz_values, hyper: HyperParams):
        """Debiasing nuisance coefficients; ``riesz_values`` may be ``(n,)`` or ``(n, L)``."""
        alpha = np.asarray(riesz_values, dtype=float)
        a = self.b.T @ alpha / self.n
        DB, _ = self._DB(hyper.gamma_q)
        p = self.G_b.shape[0]
        lhs = self.B.T @ DB + 2.0 * hyper.gamma_xi * np.eye(p)
        return spd_solve(lhs, a, what="debiasing normal equations")

    def xi_objective(self, delta, riesz_values, hyper: HyperParams) -> float:
        """Attained value of the debiasing criterion after the inner maximization."""
        DB, _ = self._DB(hyper.gamma_q)
        a = self.b.T @ np.asarray(riesz_values, dtype=float) / self.n
        quad = 0.5 * delta @ (self.B.T @ DB) @ delta
        return float(quad - a @ delta + hyper.gamma_xi * delta @ delta)

    def q_coef(self, delta, ridge_q: float):
        return q_closed_form(self.G_c, self.B, delta, ridge_q)


@dataclass(frozen=True)
class BridgeFit:
    """Fitted bridge ``phi(y) = b(y)' beta`` plus the moment matrices behind it."""

    phi_basis: object
    w_basis: object
    beta: np.ndarray
    hyper: HyperParams
    G_b: np.ndarray
    G_c: np.ndarray
    B: np.ndarray
    r: np.ndarray
    n_train: int
    measurement: str | None = None
    instruments: tuple[str, ...] = ()

    def predict(self, y) -> np.ndarray:
        return self.phi_basis.transform(_as_2d(y)) @ self.beta

    def critic(self) -> np.ndarray:
        """Maximizing critic coefficients at the fitted ``beta``."""
        M = self.G_c + 2.0 * self.hyper.gamma_q * np.eye(self.G_c.shape[0])
        return spd_solve(M, self.B @ self.beta - self.r, what="critic Gram")

    def foc_residual(self) -> float:
        """Relative norm of the saddle-point first-order condition."""
        M = self.G_c + 2.0 * self.hyper.gamma_q * np.eye(self.G_c.shape[0])
        DB = spd_solve(M, self.B, what="critic Gram")
        g = self.B.T @ (DB @ self.beta) - DB.T @ self.r
        g = g + 2.0 * self.hyper.mu * self.G_b @ self.beta + 2.0 * self.hyper.gamma_phi * self.beta
        scale = np.linalg.norm(DB.T @ self.r) or 1.0
        return float(np.linalg.norm(g) / scale)

    def to_dict(self) -> dict:
        return {
            "measurement": self.measurement,
            "instruments": list(self.instruments),
            "phi_basis": self.phi_basis.to_dict(),
            "w_basis": self.w_basis.to_dict(),
            "beta": self.beta.tolist(),
            "hyper": self.hyper.to_dict(),
            "n_train": self.n_train,
            "G_b": self.G_b.tolist(),
            "G_c": self.G_c.tolist(),
            "B": self.B.tolist(),
            "r": self.r.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "BridgeFit":
        arr = lambda k: np.asarray(d[k], dtype=float)  # noqa: E731
        return cls(
            phi_basis=basis_from_dict(d["phi_basis"]),
            w_basis=basis_from_dict(d["w_basis"]),
            beta=arr("beta"), hyper=HyperParams(**d["hyper"]),
            G_b=arr("G_b"), G_c=arr("G_c"), B=arr("B"), r=arr("r"),
            n_train=int(d["n_train"]), measurement=d.get("measurement"),
            instruments=tuple(d.get("instruments", ())),
        )


@dataclass(frozen=True)
class NuisanceFit:
    """Debiasing nuisance: ``xi(y) = b(y)' delta`` and ``q(w) = c(w)' theta``."""

    delta: np.ndarray
    theta: np.ndarray
    xi_objective: float = float("nan")

    def q(self, w_basis, W) -> np.ndarray:
        return w_basis.transform(_as_2d(W)) @ self.theta

    def xi(self, phi_basis, y) -> np.ndarray:
        return phi_basis.transform(_as_2d(y)) @ self.delta

    def to_dict(self) -> dict:
        return {"delta": self.delta.tolist(), "theta": self.theta.tolist(),
                "xi_objective": float(self.xi_objective)}

    @classmethod
    def from_dict(cls, d) -> "NuisanceFit":
        return cls(delta=np.asarray(d["delta"], dtype=float), theta=np.asarray(d["theta"], dtype=float),
                   xi_objective=float(d.get("xi_objective", float("nan"))))


def _stage_from_dataset(ds, j, phi_spec, w_spec, seed):
    name = ds.measurement_names[j] if isinstance(j, (int, np.integer)) else j
    if name == ds.roles.benchmark:
        raise ConfigError("the benchmark measurement has the identity bridge; nothing to fit")
    inst = ds.roles.instruments_for(name)
    stage = FirstStage(ds[name], ds[ds.roles.benchmark], ds.matrix(inst), phi_spec, w_spec, seed)
    return stage, name, inst


def fit_stage_bridge(stage: FirstStage, hyper: HyperParams, measurement=None, instruments=()) -> BridgeFit:
    hyper = resolve_hyper(hyper, stage.n, stage.G_b, stage.G_c)
    beta = stage.bridge_coef(hyper)
    return BridgeFit(stage.phi_basis, stage.w_basis, beta, hyper, stage.G_b, stage.G_c,
                     stage.B, stage.r, stage.n, measurement, tuple(instruments))


def fit_bridge_minimax(ds, j, phi_spec=PHI_SPEC, w_spec=W_SPEC, hyper=HyperParams(), seed=0) -> BridgeFit:
    """Fit the bridge for measurement ``j`` (index into ``ds.measurement_names`` or a name)."""
    stage, name, inst = _stage_from_dataset(ds, j, phi_spec, w_spec, seed)
    return fit_stage_bridge(stage, hyper, name, inst)


def fit_xi_minimax(ds, j, riesz_values, phi_spec=PHI_SPEC, w_spec=W_SPEC, hyper=HyperParams(), seed=0):
    """Coefficients ``delta`` of the debiasing nuisance for measurement ``j``."""
    riesz_values = np.asarray(riesz_values, dtype=float)
    if not np.all(np.isfinite(riesz_values)):
        raise NumericalError("Riesz weights must be finite")
    stage, _, _ = _stage_from_dataset(ds, j, phi_spec, w_spec, seed)
    hyper = resolve_hyper(hyper, stage.n, stage.G_b, stage.G_c)
    return stage.xi_coef(riesz_values, hyper)


def project_q(ds, j, xi, phi_basis, w_basis, ridge_q):
    """Ridge regression of ``xi(Y_j) = b(Y_j)' xi`` on ``c(W)``; returns ``theta``."""
    name = ds.measurement_names[j] if isinstance(j, (int, np.integer)) else j
    b = phi_basis.transform(_as_2d(ds[name]))
    c = w_basis.transform(ds.matrix(ds.roles.instruments_for(name)))
    n = b.shape[0]
    return q_closed_form(c.T @ c / n, c.T @ b / n, np.asarray(xi, dtype=float), ridge_q)


def apply_bridge(fit: BridgeFit, y_values) -> np.ndarray:
    return fit.predict(y_values)


class MinimaxBridge(RegressorMixin, BaseEstimator):
    """Estimator wrapper around the minimax bridge fit.

    ``fit(X, y, instruments)`` fits ``phi`` so that ``E[y - phi(X) | instruments] = 0``
    and ``predict(X)`` evaluates the fitted bridge.
    """

    def __init__(self, phi_basis=PHI_SPEC, w_basis=W_SPEC, mu=None, gamma_phi=None,
                 gamma_q=None, penalty_rate="inverse_n", random_state=0):
        self.phi_basis = phi_basis
        self.w_basis = w_basis
        self.mu = mu
        self.gamma_phi = gamma_phi
        self.gamma_q = gamma_q
        self.penalty_rate = penalty_rate
        self.random_state = random_state

    def fit(self, X, y, instruments):
        stage = FirstStage(X, y, instruments, self.phi_basis, self.w_basis, self.random_state)
        hyper = HyperParams(mu=self.mu, gamma_phi=self.gamma_phi, gamma_q=self.gamma_q,
                            penalty_rate=self.penalty_rate)
        self.fit_ = fit_stage_bridge(stage, hyper)
        self.coef_ = self.fit_.beta
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.predict(X)
