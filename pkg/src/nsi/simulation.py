"""Two-study synthetic experiment and Monte Carlo harness.

Both studies share the latent model, the benchmark ``y1`` and the treatment;
they differ only in how the two auxiliary measurements are coded.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from joblib import Parallel, delayed

from .basis import BasisSpec
from .baselines import icw_index, index_diff_in_means, pca_index, wsi_estimate
from .data import ColumnRoles, Dataset
from .estimator import NSIEstimator
from .exceptions import ConfigError, NSIError
from .gmm import wald_statistic

logger = logging.getLogger(__name__)

# polynomial coefficients (c0, c1, c2, c3) of each measurement in eta
NONLINEAR_MAPS = {
    "A": {"y2": (0.0, 1.0, 0.3, 0.1), "y3": (0.0, 0.8, 0.0, 0.2)},
    "B": {"y2": (0.0, 1.5, 0.25, 0.0), "y3": (0.0, 1.0, 0.15, 0.05)},
}
LINEAR_MAPS = {
    "A": {"y2": (0.0, 2.0), "y3": (0.0, 0.5)},
    "B": {"y2": (0.0, 2.0), "y3": (0.0, 0.5)},
}


@dataclass(frozen=True)
class DgpSpec:
    n: int = 800
    sigma_u: float = 1.0
    noise_sd: tuple[float, ...] = (0.5, 0.5, 0.5)
    eta0_coeffs: tuple[float, float] = (0.9, 0.3)
    tau_coeffs: tuple[float, float] = (0.8, 0.3)
    pi: float = 0.5
    measurement_maps: Mapping[str, Mapping[str, tuple]] = field(default_factory=lambda: NONLINEAR_MAPS)
    seed: int = 0

    @property
    def true_alte(self) -> float:
        # E[x] = 0 for the standard normal covariate
        return float(self.tau_coeffs[0])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["measurement_maps"] = {v: {k: list(c) for k, c in m.items()} for v, m in self.measurement_maps.items()}
        d["noise_sd"] = list(self.noise_sd)
        return d

    @classmethod
    def from_dict(cls, d) -> "DgpSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown simulation options {sorted(unknown)}")
        if "measurement_maps" in d:
            maps = d["measurement_maps"]
            if maps == "linear":
                maps = LINEAR_MAPS
            elif maps == "nonlinear":
                maps = NONLINEAR_MAPS
            d["measurement_maps"] = {v: {k: tuple(c) for k, c in m.items()} for v, m in maps.items()}
        for k in ("noise_sd", "eta0_coeffs", "tau_coeffs"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def linear_spec(n=2000, seed=0, **kw) -> DgpSpec:
    """Linear measurement model with loadings (1, 2, 0.5)."""
    return DgpSpec(n=n, seed=seed, measurement_maps=LINEAR_MAPS, **kw)


def _rng(*key):
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def generate_study(spec: DgpSpec, variant="A", seed=None) -> Dataset:
    """Draw one study. ``x``, ``u``, ``z`` and the benchmark noise come from a
    stream shared by all variants, so studies drawn under one seed have
    identical ``x``, ``z`` and ``y1``."""
    seed = spec.seed if seed is None else seed
    if variant not in spec.measurement_maps:
        raise ConfigError(f"unknown study variant {variant!r}")
    n = spec.n
    shared = _rng(seed, 0)
    x = shared.standard_normal(n)
    u = spec.sigma_u * shared.standard_normal(n)
    z = (shared.random(n) < spec.pi).astype(float)
    e1 = spec.noise_sd[0] * shared.standard_normal(n)
    a1, a2 = spec.eta0_coeffs
    t0, t1 = spec.tau_coeffs
    eta = a1 * x + a2 * x ** 2 + u + (t0 + t1 * x) * z
    cols = {"y1": eta + e1}
    maps = spec.measurement_maps[variant]
    code = sorted(spec.measurement_maps).index(variant)
    noise = _rng(seed, 1, code)
    for j, (name, coeffs) in enumerate(maps.items(), start=1):
        sd = spec.noise_sd[j] if j < len(spec.noise_sd) else spec.noise_sd[-1]
        cols[name] = np.polynomial.polynomial.polyval(eta, coeffs) + sd * noise.standard_normal(n)
    cols["z"] = z
    cols["x"] = x
    roles = ColumnRoles(benchmark="y1", measurements=tuple(maps), treatments=("z",), covariates=("x",))
    return Dataset(columns=cols, roles=roles, pi={},
                   attrs={"true_alte": spec.true_alte, "variant": variant, "seed": seed})


# -- estimators --------------------------------------------------------------

def nsi_runner(**params) -> Callable:
    def run(ds: Dataset, seed: int):
        est = NSIEstimator(random_state=seed % (2 ** 31), **params).fit(ds)
        return est.tau_, est.tau_se_
    return run


def wsi_runner(instrument=None) -> Callable:
    def run(ds: Dataset, seed: int):
        est, _ = wsi_estimate(ds, instrument=instrument)
        return float(est.beta[0]), float(est.se[0])
    return run


def index_runner(kind) -> Callable:
    def run(ds: Dataset, seed: int):
        Y = ds.matrix(list(ds.measurement_names))
        z = ds[ds.roles.treatments[0]]
        fit = pca_index(Y) if kind == "pca" else icw_index(Y, z)
        r = index_diff_in_means(fit.index_values, z)
        return r["tau_hat"], r["se"]
    return run


# cubic sieves are unstable for the strongly curved maps at n = 800
SIMULATION_NSI_PARAMS = {"phi_basis": BasisSpec(kind="kernel_nystrom")}


def default_estimators(nsi_params=None, wsi_instrument=None) -> dict:
    return {
        "PCA": index_runner("pca"),
        "ICW": index_runner("icw"),
        "WSI": wsi_runner(wsi_instrument),
        "NSI": nsi_runner(**(SIMULATION_NSI_PARAMS if nsi_params is None else nsi_params)),
    }


# -- Monte Carlo -------------------------------------------------------------

@dataclass
class McResult:
    estimator: str
    records: list
    reps: int

    @property
    def ok(self) -> list:
        return [r for r in self.records if not r["failed"]]

    @property
    def failures(self) -> int:
        return sum(r["failed"] for r in self.records)

    @property
    def mean_gap(self) -> float:
        ok = self.ok
        return float(np.mean([abs(r["gap"]) for r in ok])) if ok else float("nan")

    @property
    def mean_signed_gap(self) -> float:
        ok = self.ok
        return float(np.mean([r["gap"] for r in ok])) if ok else float("nan")

    def rejection_rate(self, level=0.05) -> float:
        ok = self.ok
        return float(np.mean([r["wald_p"] < level for r in ok])) if ok else float("nan")

    def aggregates(self) -> dict:
        return {
            "mean_gap": self.mean_gap,
            "mean_signed_gap": self.mean_signed_gap,
            "rejection_rate": self.rejection_rate(),
            "failures": self.failures,
            "failure_rate": self.failures / self.reps,
            "reps": self.reps,
        }


def replication_seed(master_seed: int, r: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(r)]).generate_state(1)[0])


def _replicate(spec, estimators, r, master_seed, variants) -> dict:
    seed = replication_seed(master_seed, r)
    va, vb = variants
    ds_a = generate_study(spec, va, seed)
    ds_b = generate_study(spec, vb, seed)
    out = {}
    for name, fn in estimators.items():
        rec = {"rep": r, "seed": seed, "failed": False, "error": ""}
        try:
            ta, sa = fn(ds_a, seed)
            tb, sb = fn(ds_b, seed)
            w = wald_statistic(ta, sa, tb, sb)
            rec.update(tau_A=ta, se_A=sa, tau_B=tb, se_B=sb, gap=w["gap"],
                       wald_stat=w["stat"], wald_p=w["p_value"])
        except (NSIError, np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("replication %d, %s failed: %s", r, name, exc)
            rec.update(failed=True, error=str(exc))
        out[name] = rec
    return out


def run_monte_carlo(spec: DgpSpec, estimators: Mapping[str, Callable], reps: int, master_seed: int,
                    variants=("A", "B"), progress=None, n_jobs=1) -> dict:
    """Apply every estimator to both studies of each replication.

    Returns ``{name: McResult}``. An estimator that raises in a replication
    is recorded as failed and left out of the aggregates. Replication seeds
    depend only on ``(master_seed, r)``, so results do not depend on
    ``n_jobs``.
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    if not estimators:
        raise ConfigError("no estimators configured")
    if n_jobs == 1:
        recs = []
        for r in range(reps):
            recs.append(_replicate(spec, estimators, r, master_seed, variants))
            if progress:
                progress(r + 1, reps)
    else:
        recs = Parallel(n_jobs=n_jobs)(
            delayed(_replicate)(spec, estimators, r, master_seed, variants) for r in range(reps))
    results = {name: McResult(name, [], reps) for name in estimators}
    for rec in recs:
        for name in estimators:
            results[name].records.append(rec[name])
    return results


TABLE1_ORDER = ("PCA", "ICW", "WSI", "NSI")


def summarize_table1(results: Mapping[str, McResult]) -> dict:
    names = [k for k in TABLE1_ORDER if k in results] + [k for k in results if k not in TABLE1_ORDER]
    rows = []
    for k in names:
        agg = results[k].aggregates()
        rows.append({"estimator": k, "mean_gap": agg["mean_gap"], "rejection_rate": agg["rejection_rate"],
                     "mean_signed_gap": agg["mean_signed_gap"], "failures": agg["failures"]})
    return {"columns": ["mean_gap", "rejection_rate"], "rows": rows}


REPLICATION_FIELDS = ("rep", "estimator", "seed", "tau_A", "se_A", "tau_B", "se_B", "gap",
                      "wald_stat", "wald_p", "failed", "error")


def replications_csv(results: Mapping[str, McResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLICATION_FIELDS)
    for name, res in results.items():
        for rec in res.records:
            row = {**rec, "estimator": name}
            w.writerow([_fmt(row.get(f, "")) for f in REPLICATION_FIELDS])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return f"{v:.12g}"
    return v
