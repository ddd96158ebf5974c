"""MissForest imputation and the mean/mode warm start."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Table
from .errors import AllMissingColumn, ConfigError, NoEvalCells, SchemaMismatch
from .forest import ForestConfig, derive_seed, fit_forest_arrays

IMPUTABLE_KINDS = ("numeric", "binary", "categorical")
# Regression leaves stop at this many rows, the usual forest-regression default.
REGRESSION_NODE_SIZE = 5


@dataclass(frozen=True)
class ImputeConfig:
    ntree: int = 100
    max_iter: int = 10
    mtry: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.ntree < 1 or self.max_iter < 1:
            raise ConfigError("ntree and max_iter must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ConfigError("mtry must be >= 1")


@dataclass(frozen=True)
class ImputeResult:
    table: Table
    iterations_run: int
    diff_trace: tuple  # ((numeric_diff, categorical_diff), ...) per iteration


def _imputable(table: Table) -> list[str]:
    return [c.name for c in table.schema.columns if c.kind in IMPUTABLE_KINDS]


def _mode(values: np.ndarray) -> str:
    levels, counts = np.unique(values.astype(str), return_counts=True)
    # np.unique sorts, so the first maximum is the lexicographically smallest level.
    return str(levels[int(np.argmax(counts))])


def mean_mode_fill(table: Table) -> Table:
    """Fill masked numeric cells with the observed mean and discrete cells with the mode."""
    cols, miss = dict(table.columns), dict(table.missing)
    for name in _imputable(table):
        m = table.missing[name]
        if not m.any():
            continue
        if m.all():
            raise AllMissingColumn(name)
        v = table[name].copy()
        if table.schema[name].kind == "numeric":
            v[m] = v[~m].mean()
        else:
            v[m] = _mode(v[~m])
        cols[name] = v
        miss[name] = np.zeros(table.n_rows, bool)
    return Table(table.schema, cols, miss, table.n_rows)


def _encode(table: Table, names: list[str]):
    """Dense working matrix plus per-column level tables (None for numeric)."""
    X = np.empty((table.n_rows, len(names)))
    levels, n_levels = [], np.zeros(len(names), np.int64)
    for j, name in enumerate(names):
        c = table.schema[name]
        if c.kind == "numeric":
            X[:, j] = table[name]
            levels.append(None)
        else:
            lv = c.levels
            code = {s: k for k, s in enumerate(lv)}
            X[:, j] = [code[s] for s in table[name]]
            levels.append(lv)
            if c.kind == "categorical" and len(lv) > 2:
                n_levels[j] = len(lv)
    return X, levels, n_levels


def _diffs(new: np.ndarray, old: np.ndarray, masks, levels) -> tuple[float, float]:
    num = den = 0.0
    changed = total = 0
    for j, m in enumerate(masks):
        if not m.any():
            continue
        a, b = new[m, j], old[m, j]
        if levels[j] is None:
            num += float(np.sum((a - b) ** 2))
            den += float(np.sum(a ** 2))
        else:
            changed += int(np.sum(a != b))
            total += int(m.sum())
    if den > 0:
        nd = num / den
    else:
        nd = 0.0 if num == 0 else math.inf
    cd = changed / total if total else 0.0
    return nd, cd


def missforest(table: Table, config: ImputeConfig = ImputeConfig()) -> ImputeResult:
    """Iteratively re-impute each incomplete column with a random forest.

    Columns are visited by ascending missing count.  Each is predicted from
    the other imputable columns; the target column never serves as a
    predictor, so labels cannot leak into the completed features.  The loop
    ends after ``max_iter`` iterations or once neither the numeric nor the
    categorical difference shrinks, in which case the state before that
    last iteration is returned.
    """
    names = _imputable(table)
    if not any(table.missing[n].any() for n in names):
        return ImputeResult(table, 0, ())
    if len(names) < 2:
        raise SchemaMismatch("MissForest needs at least two imputable columns")

    warm = mean_mode_fill(table)
    X, levels, n_levels = _encode(warm, names)
    masks = [table.missing[n] for n in names]
    order = sorted((j for j in range(len(names)) if masks[j].any()), key=lambda j: (int(masks[j].sum()), j))
    p_other = len(names) - 1
    mtry = min(config.mtry, p_other) if config.mtry is not None else max(1, math.isqrt(p_other))

    trace = []
    best_old = (math.inf, math.inf)
    stopped_early = False
    for it in range(config.max_iter):
        old = X.copy()
        for j in order:
            obs, mis = ~masks[j], masks[j]
            others = [k for k in range(len(names)) if k != j]
            Xo = X[:, others]
            seed = derive_seed(config.seed, it, j)
            if levels[j] is None:
                fc = ForestConfig(ntree=config.ntree, min_node_size=REGRESSION_NODE_SIZE, seed=seed)
                f = fit_forest_arrays(Xo[obs], X[obs, j], fc, n_levels=n_levels[others], regression=True, mtry=mtry)
                X[mis, j] = f.predict_codes(Xo[mis])
            else:
                y = X[obs, j].astype(np.int64)
                if len(np.unique(y)) < 2:
                    X[mis, j] = y[0]
                    continue
                fc = ForestConfig(ntree=config.ntree, seed=seed)
                f = fit_forest_arrays(Xo[obs], y, fc, classes=tuple(levels[j]),
                                      n_levels=n_levels[others], mtry=mtry)
                X[mis, j] = f.predict_codes(Xo[mis])
        d = _diffs(X, old, masks, levels)
        trace.append(d)
        if it > 0 and not (d[0] < best_old[0] or d[1] < best_old[1]):
            stopped_early = True
            break
        best_old = d
    final = old if stopped_early else X

    cols, miss = dict(table.columns), dict(table.missing)
    for j, name in enumerate(names):
        if not masks[j].any():
            continue
        if levels[j] is None:
            v = table[name].copy()
            v[masks[j]] = final[masks[j], j]
        else:
            v = table[name].copy()
            for i in np.flatnonzero(masks[j]):
                v[i] = levels[j][int(final[i, j])]
        cols[name] = v
        miss[name] = np.zeros(table.n_rows, bool)
    return ImputeResult(Table(table.schema, cols, miss, table.n_rows), len(trace), tuple(trace))


def imputation_nrmse(completed: Table, truth: Table, original_mask: dict) -> float:
    """Pooled NRMSE over the hidden numeric cells.

    Root mean squared error over every hidden numeric cell, divided by the
    standard deviation of the true values at those same cells.
    """
    err, true_vals = [], []
    for c in truth.schema.columns:
        if c.kind != "numeric" or c.name not in original_mask:
            continue
        m = np.asarray(original_mask[c.name], bool)
        if not m.any():
            continue
        err.append(completed[c.name][m] - truth[c.name][m])
        true_vals.append(truth[c.name][m])
    if not err:
        raise NoEvalCells("no hidden numeric cells to score")
    e = np.concatenate(err)
    t = np.concatenate(true_vals)
    sd = float(np.std(t))
    if sd == 0:
        raise NoEvalCells("hidden numeric cells have zero variance")
    return float(np.sqrt(np.mean(e ** 2)) / sd)
