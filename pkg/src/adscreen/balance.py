"""SMOTE oversampling of the minority class of a binary target."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import Table, design_matrix
from .errors import ConfigError, DegenerateClass, SchemaMismatch, TooFewMinority


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    ratio: float | None = None  # None: parity; else minority/majority after
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")
        if self.ratio is not None and not 0.0 < self.ratio <= 1.0:
            raise ConfigError("ratio must lie in (0, 1]")


def _standardize(M: np.ndarray) -> np.ndarray:
    mu = M.mean(axis=0)
    sd = M.std(axis=0)
    sd[sd == 0] = 1.0
    return (M - mu) / sd


def nearest_minority_neighbors(rows: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other rows, by Euclidean distance after z-scoring.

    Equal distances resolve to the lower row index.  ``k`` above ``n - 1``
    is clamped with a warning.
    """
    M = np.asarray(rows, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    n = M.shape[0]
    if n < 2:
        raise TooFewMinority(f"need at least 2 minority rows, got {n}")
    if k > n - 1:
        warnings.warn(f"k={k} exceeds {n - 1} available neighbours; clamped", RuntimeWarning, stacklevel=2)
        k = n - 1
    Z = _standardize(M)
    d2 = ((Z[:, None, :] - Z[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


@dataclass(frozen=True)
class _Plan:
    minority: str
    seed_rows: np.ndarray
    neighbor_rows: np.ndarray
    u: np.ndarray
    coin: np.ndarray
    numeric: list
    discrete: list


def _plan(train: Table, config: SmoteConfig) -> _Plan | None:
    target = train.schema.target
    levels = train.schema[target].levels
    if len(levels) != 2:
        raise SchemaMismatch("SMOTE needs a binary target")
    counts = train.class_counts()
    if min(counts.values()) == 0:
        raise DegenerateClass("one class is empty")
    minority = min(levels, key=lambda lv: (counts[lv], levels.index(lv)))
    majority = levels[1 - levels.index(minority)]
    goal = counts[majority] if config.ratio is None else int(round(config.ratio * counts[majority]))
    n_new = max(0, goal - counts[minority])
    if n_new == 0:
        return None

    predictors = train.schema.predictors()
    for p in predictors:
        if train.missing[p].any():
            raise SchemaMismatch(f"predictor {p!r} has masked cells; impute before SMOTE")
    numeric = [p for p in predictors if train.schema[p].kind == "numeric"]
    discrete = [p for p in predictors if train.schema[p].kind != "numeric"]
    members = np.flatnonzero(train[target] == minority)
    if numeric:
        Xnum, _ = design_matrix(train.take(members), numeric)
    else:
        Xnum = np.zeros((len(members), 1))
    nbrs = nearest_minority_neighbors(Xnum, config.k_neighbors)

    rng = np.random.default_rng(config.seed)
    seed_pos = rng.integers(0, len(members), size=n_new)
    nbr_pos = nbrs[seed_pos, rng.integers(0, nbrs.shape[1], size=n_new)]
    u = rng.random((n_new, len(numeric)))
    coin = rng.random((n_new, len(discrete))) < 0.5
    return _Plan(minority, members[seed_pos], members[nbr_pos], u, coin, numeric, discrete)


def smote_parents(train: Table, config: SmoteConfig = SmoteConfig()):
    """Parent row indices ``(seed, neighbour)`` of each synthetic row, in output order."""
    plan = _plan(train, config)
    if plan is None:
        return np.empty(0, np.intp), np.empty(0, np.intp)
    return plan.seed_rows, plan.neighbor_rows


def smote(train: Table, config: SmoteConfig = SmoteConfig()) -> Table:
    """Append synthetic minority rows after the original rows.

    Numeric predictors interpolate between a minority row and one of its
    neighbours with an independent uniform factor per feature; binary and
    categorical predictors copy either parent by a fair coin.  Columns that
    are not predictors (identifiers, dates) are masked in synthetic rows.
    """
    plan = _plan(train, config)
    if plan is None:
        return train
    a, b = plan.seed_rows, plan.neighbor_rows
    n_new = len(a)
    target = train.schema.target
    cols, miss = {}, {}
    for c in train.schema.columns:
        name = c.name
        miss[name] = np.zeros(n_new, bool)
        if name == target:
            cols[name] = np.full(n_new, plan.minority, dtype=object)
        elif name in plan.numeric:
            j = plan.numeric.index(name)
            xa, xb = train[name][a], train[name][b]
            v = xa + plan.u[:, j] * (xb - xa)
            # Rounding in xa + u*(xb - xa) can overshoot by an ulp.
            cols[name] = np.clip(v, np.minimum(xa, xb), np.maximum(xa, xb))
        elif name in plan.discrete:
            j = plan.discrete.index(name)
            cols[name] = np.where(plan.coin[:, j], train[name][a], train[name][b])
        else:
            cols[name] = train[name][a]
            miss[name] = np.ones(n_new, bool)
    return train.concat_rows(Table(train.schema, cols, miss, n_new))
