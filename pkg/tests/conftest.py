import numpy as np
import pytest

from nsi.data import ColumnRoles, Dataset

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_order):
            terminalreporter.write_line(line)


def _order(line):
    key = line.split()[1]
    return (0, int(key)) if key.isdigit() else (1, key)


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; printed in the terminal summary."""

    def record(criterion, ok, detail):
        line = f"CRITERION {criterion} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def make_dataset(n=400, seed=0, loadings=(1.0, 2.0, 0.5), noise=0.5, covariate=True, pi=None):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    z = (rng.random(n) < 0.5).astype(float)
    eta = 0.9 * x + rng.standard_normal(n) + 0.8 * z
    cols = {f"y{j + 1}": lam * eta + noise * rng.standard_normal(n) for j, lam in enumerate(loadings)}
    cols["z"] = z
    if covariate:
        cols["x"] = x
    roles = ColumnRoles(benchmark="y1", measurements=tuple(f"y{j + 1}" for j in range(1, len(loadings))),
                        treatments=("z",), covariates=("x",) if covariate else ())
    return Dataset(columns=cols, roles=roles, pi=pi or {})


@pytest.fixture
def linear_ds():
    return make_dataset()


def write_two_treatment_study(directory, n=600, seed=0, benchmark="y1"):
    """Linear three-measurement study with two randomized treatments; returns
    the config path. Loadings (1, 2, 0.5); effects 0.5 and 0.3."""
    import pandas as pd

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    arm = rng.integers(0, 3, n)
    t1, t2 = (arm == 1).astype(float), (arm == 2).astype(float)
    eta = 0.8 * x + rng.standard_normal(n) + 0.5 * t1 + 0.3 * t2
    df = pd.DataFrame({"y1": eta + 0.5 * rng.standard_normal(n),
                       "y2": 2 * eta + 0.5 * rng.standard_normal(n),
                       "y3": 0.5 * eta + 0.5 * rng.standard_normal(n),
                       "treat1": t1, "treat2": t2, "x": x})
    directory.mkdir(parents=True, exist_ok=True)
    df.to_csv(directory / "study.csv", index=False)
    cfg = directory / "estimate.toml"
    cfg.write_text(
        f'seed = 11\nfolds = 3\n\n[data]\npath = "study.csv"\n\n'
        f'[roles]\nbenchmark = "{benchmark}"\nmeasurements = ["y2", "y3"]\n'
        f'treatments = ["treat1", "treat2"]\ncovariates = ["x"]\n')
    return cfg
