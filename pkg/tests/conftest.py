import time

import numpy as np
import pytest

from adscreen.dataset import Column, Schema, Table


def make_table(columns, data, missing=None):
    """Build a Table from Column definitions and plain lists."""
    schema = Schema(tuple(columns))
    n = len(next(iter(data.values())))
    miss = {c.name: np.zeros(n, bool) for c in columns}
    for k, v in (missing or {}).items():
        miss[k] = np.asarray(v, bool)
    return Table(schema, {k: list(v) for k, v in data.items()}, miss, n)


def numeric_table(X, y, names=None):
    """Numeric predictors plus an HC/NonHC target."""
    X = np.asarray(X, float)
    names = names or [f"x{j}" for j in range(X.shape[1])]
    cols = [Column(n, "numeric") for n in names] + [Column("dx", "target", "Target", ("HC", "NonHC"))]
    data = {n: X[:, j] for j, n in enumerate(names)}
    data["dx"] = np.asarray(y, dtype=object)
    miss = {c.name: np.zeros(len(X), bool) for c in cols}
    return Table(Schema(tuple(cols)), data, miss, len(X))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------- acceptance report

ACCEPTANCE_TITLES = {
    1: "feature-group ordering on the default cohort",
    2: "mtry tuning equals brute-force sweep",
    3: "OOB error tracks held-out error",
    4: "MissForest beats mean fill",
    5: "SMOTE parity and parent segments",
    6: "Boruta recovers planted features",
    7: "tree splits match exhaustive oracle",
    8: "metric arithmetic is exact",
    9: "reproduce runs are byte-identical",
    10: "affine and monotone invariance, suite runtime",
}
SUITE_BUDGET_S = 600.0
_results = {}
_session = {}


def record(number, ok, detail):
    _results[number] = (bool(ok), detail)


def pytest_sessionstart(session):
    _session["start"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    elapsed = time.perf_counter() - _session.get("start", time.perf_counter())
    if 10 in _results:
        ok, detail = _results[10]
        _results[10] = (ok and elapsed < SUITE_BUDGET_S, f"{detail}; suite {elapsed:.0f}s < {SUITE_BUDGET_S:.0f}s")
    terminalreporter.section("acceptance criteria")
    for n, title in ACCEPTANCE_TITLES.items():
        ok, detail = _results.get(n, (False, "not run or errored"))
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
