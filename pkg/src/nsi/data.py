"""Dataset container, column roles, CSV ingestion and fold assignment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .exceptions import (
    DataValidationError,
    DegenerateDataError,
    InsufficientDataError,
    RoleError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColumnRoles:
    """Assignment of dataset columns to estimation roles.

    ``instruments=None`` means the default instrument set: treatments,
    covariates and every auxiliary measurement other than the one being
    bridged. The benchmark is never used as an instrument.
    """

    benchmark: str
    measurements: tuple[str, ...] = ()
    treatments: tuple[str, ...] = ()
    covariates: tuple[str, ...] = ()
    instruments: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in ("measurements", "treatments", "covariates"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.instruments is not None:
            object.__setattr__(self, "instruments", tuple(self.instruments))
        self._check()

    def _check(self):
        groups = {
            "benchmark": (self.benchmark,),
            "measurements": self.measurements,
            "treatments": self.treatments,
            "covariates": self.covariates,
        }
        seen: dict[str, str] = {}
        for role, names in groups.items():
            for name in names:
                if name in seen:
                    raise RoleError(f"column {name!r} assigned to both {seen[name]} and {role}")
                seen[name] = role
        if self.instruments is not None:
            if self.benchmark in self.instruments:
                raise RoleError("the benchmark column cannot be an instrument")
            if self.measurements and not self.instruments:
                raise RoleError("instrument list is empty but measurements need bridging")
        elif self.measurements and not (self.treatments or self.covariates or len(self.measurements) > 1):
            raise RoleError("no instruments available: supply treatments, covariates or more measurements")

    @property
    def required_columns(self) -> tuple[str, ...]:
        cols = (self.benchmark, *self.measurements, *self.treatments, *self.covariates)
        extra = tuple(c for c in (self.instruments or ()) if c not in cols)
        return cols + extra

    def instruments_for(self, measurement: str) -> tuple[str, ...]:
        """Instrument columns used when bridging ``measurement``."""
        if self.instruments is None:
            pool = (*self.treatments, *self.covariates, *self.measurements)
        else:
            pool = self.instruments
        out = tuple(c for c in pool if c != measurement and c != self.benchmark)
        if not out:
            raise RoleError(f"no instruments left for measurement {measurement!r}")
        return out

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "measurements": list(self.measurements),
            "treatments": list(self.treatments),
            "covariates": list(self.covariates),
            "instruments": None if self.instruments is None else list(self.instruments),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnRoles":
        if "benchmark" not in d:
            raise RoleError("roles must name a benchmark column")
        inst = d.get("instruments")
        return cls(
            benchmark=d["benchmark"],
            measurements=tuple(d.get("measurements", ())),
            treatments=tuple(d.get("treatments", ())),
            covariates=tuple(d.get("covariates", ())),
            instruments=None if inst is None else tuple(inst),
        )


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable column store of ``n`` units with role metadata.

    ``pi`` optionally holds known design probabilities per treatment column;
    ``attrs`` carries free-form metadata (e.g. ``true_alte`` for synthetic data).
    """

    columns: Mapping[str, np.ndarray]
    roles: ColumnRoles
    n_dropped: int = 0
    pi: Mapping[str, float] = field(default_factory=dict)
    attrs: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        cols = {k: _readonly(v) for k, v in self.columns.items()}
        lengths = {len(v) for v in cols.values()}
        if len(lengths) != 1:
            raise DataValidationError(f"columns have unequal lengths {sorted(lengths)}")
        missing = [c for c in self.roles.required_columns if c not in cols]
        if missing:
            raise RoleError(f"role columns missing from data: {missing}")
        n = lengths.pop()
        if n < 2:
            raise DegenerateDataError(f"need at least 2 units, got {n}")
        for name, v in cols.items():
            if not np.all(np.isfinite(v)):
                raise DataValidationError(f"column {name!r} has non-finite values")
        for t in self.roles.treatments:
            if not np.all(np.isin(cols[t], (0.0, 1.0))):
                raise DataValidationError(f"treatment column {t!r} must be binary 0/1")
        for t, p in self.pi.items():
            if not 0.0 < p < 1.0:
                raise DataValidationError(f"design probability for {t!r} must lie in (0, 1)")
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values())))

    def __len__(self):
        return self.n

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.columns[c] for c in names])

    @property
    def measurement_names(self) -> tuple[str, ...]:
        """Benchmark first, then auxiliary measurements."""
        return (self.roles.benchmark, *self.roles.measurements)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            columns={k: v[idx] for k, v in self.columns.items()},
            roles=self.roles,
            n_dropped=self.n_dropped,
            pi=dict(self.pi),
            attrs=dict(self.attrs),
        )

    def treatment_share(self, t: str) -> float:
        """Design probability for ``t`` if configured, else the sample treated share."""
        if t in self.pi:
            return float(self.pi[t])
        return float(np.mean(self.columns[t]))


def load_csv(path, roles: ColumnRoles, pi: Mapping[str, float] | None = None) -> Dataset:
    """Read a header-first CSV and validate it against ``roles``.

    Rows with a missing value in any role column are dropped; the count is
    stored on ``Dataset.n_dropped``.
    """
    path = Path(path)
    if not path.exists():
        raise DataValidationError(f"no such file: {path}")
    frame = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    missing = [c for c in roles.required_columns if c not in frame.columns]
    if missing:
        raise RoleError(f"columns {missing} not found in {path.name}; header has {list(frame.columns)}")
    sub = frame[list(roles.required_columns)]
    try:
        sub = sub.apply(pd.to_numeric, errors="raise")
    except (ValueError, TypeError) as exc:
        raise DataValidationError(f"non-numeric value in a role column: {exc}") from exc
    keep = sub.notna().all(axis=1).to_numpy()
    dropped = int((~keep).sum())
    if dropped:
        logger.info("dropped %d rows with missing role values", dropped)
    sub = sub.loc[keep]
    if len(sub) < 2:
        raise DegenerateDataError(f"{len(sub)} usable rows after listwise deletion")
    return Dataset(
        columns={c: sub[c].to_numpy(dtype=float) for c in sub.columns},
        roles=roles,
        n_dropped=dropped,
        pi=dict(pi or {}),
    )


@dataclass(frozen=True)
class FoldAssignment:
    """``fold_of[i]`` is the 0-based fold of unit ``i``."""

    fold_of: np.ndarray
    K: int

    def test_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def train_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K)


def assign_folds(n: int, K: int, seed: int) -> FoldAssignment:
    """Random balanced partition of ``range(n)`` into ``K`` folds."""
    if K < 2:
        raise InsufficientDataError(f"need at least 2 folds, got K={K}")
    if n < 2 * K:
        raise InsufficientDataError(f"n={n} is too small for K={K} folds (need n >= 2K)")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=int)
    fold_of[perm] = np.arange(n) % K
    fold_of.setflags(write=False)
    return FoldAssignment(fold_of=fold_of, K=K)


def validate_roles(ds: Dataset) -> dict:
    """Per-role summary statistics with zero-variance warnings."""
    roles = ds.roles
    report = {"n": ds.n, "n_dropped": ds.n_dropped, "columns": {}, "pi": {}, "warnings": []}
    by_role = {
        "benchmark": (roles.benchmark,),
        "measurement": roles.measurements,
        "treatment": roles.treatments,
        "covariate": roles.covariates,
    }
    for role, names in by_role.items():
        for c in names:
            v = ds[c]
            var = float(np.var(v, ddof=1))
            report["columns"][c] = {"role": role, "mean": float(np.mean(v)), "variance": var}
            if var == 0.0:
                msg = f"column {c!r} ({role}) has zero variance"
                report["warnings"].append(msg)
                logger.warning(msg)
    for t in roles.treatments:
        report["pi"][t] = ds.treatment_share(t)
    return report
