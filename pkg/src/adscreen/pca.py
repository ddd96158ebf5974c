"""Principal component analysis on standardized, one-hot encoded predictors."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dataset import Column, Schema, Table
from .errors import BadComponentCount, SchemaMismatch, TooFewRows
from .forest import ForestConfig, fit_forest, predict_table

EIG_CLAMP = 1e-10


def jacobi_eigh(A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with ``w`` descending and eigenvectors in the columns
    of ``V``.
    """
    A = np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    n = A.shape[0]
    V = np.eye(n)
    scale = max(float(np.abs(A).max()), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.triu(A, 1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # Rotate rows and columns p, q.
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def _orient(V: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        k = int(np.argmax(np.abs(V[:, j])))
        if V[k, j] < 0:
            V[:, j] = -V[:, j]
    return V


def encode_inputs(table: Table, features=None) -> tuple[np.ndarray, list[str]]:
    """Numeric matrix with binary columns as 0/1 and categoricals one-hot."""
    features = list(features) if features is not None else table.schema.predictors()
    cols, names = [], []
    for name in features:
        c = table.schema[name]
        v, m = table[name], table.missing[name]
        if m.any():
            raise SchemaMismatch(f"{name!r} has masked cells; PCA needs complete data")
        if c.kind == "numeric":
            cols.append(np.asarray(v, np.float64))
            names.append(name)
        elif c.kind == "binary":
            cols.append((v == c.levels[1]).astype(np.float64))
            names.append(name)
        elif c.kind == "categorical":
            for lvl in c.levels:
                cols.append((v == lvl).astype(np.float64))
                names.append(f"{name}={lvl}")
        else:
            raise SchemaMismatch(f"{name!r} ({c.kind}) is not a predictor")
    return np.column_stack(cols) if cols else np.empty((table.n_rows, 0)), names


@dataclass(frozen=True)
class PcaModel:
    features: tuple  # source predictors
    inputs: tuple  # encoded input names (one-hot expanded)
    means: np.ndarray
    scales: np.ndarray
    components: np.ndarray  # (n_inputs, n_components), columns orthonormal
    eigenvalues: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def standardize(self, table: Table) -> np.ndarray:
        X, names = encode_inputs(table, self.features)
        if tuple(names) != self.inputs:
            raise SchemaMismatch("table encodes to different inputs than the fitted model")
        return (X - self.means) / self.scales


def fit_pca(train: Table, features=None) -> PcaModel:
    """Z-score the encoded predictors and eigendecompose their covariance.

    Constant inputs keep a unit scale so they standardize to zero.
    """
    if train.n_rows < 2:
        raise TooFewRows("PCA needs at least two rows")
    features = list(features) if features is not None else train.schema.predictors()
    X, names = encode_inputs(train, features)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    # Population covariance, matching the population scale used above.
    cov = Z.T @ Z / len(Z)
    w, V = jacobi_eigh(cov)
    w[(w < 0) & (w >= -EIG_CLAMP)] = 0.0
    if np.any(w < 0):
        raise ArithmeticError("covariance has a clearly negative eigenvalue")
    return PcaModel(tuple(features), tuple(names), mu, sd, _orient(V), w)


def project_matrix(model: PcaModel, table: Table, k: int) -> np.ndarray:
    if not 1 <= k <= model.n_components:
        raise BadComponentCount(f"k={k} outside [1, {model.n_components}]")
    return model.standardize(table) @ model.components[:, :k]


def project(model: PcaModel, table: Table, k: int) -> Table:
    """Scores on the first k components as columns PC1..PCk.

    The target column, when present, is carried through unchanged.
    """
    S = project_matrix(model, table, k)
    cols = [Column(f"PC{j + 1}", "numeric") for j in range(k)]
    data = {f"PC{j + 1}": S[:, j] for j in range(k)}
    miss = {f"PC{j + 1}": np.zeros(table.n_rows, bool) for j in range(k)}
    t = next((c for c in table.schema.columns if c.kind == "target"), None)
    if t is not None:
        cols.append(t)
        data[t.name] = table[t.name]
        miss[t.name] = table.missing[t.name]
    return Table(Schema(tuple(cols)), data, miss, table.n_rows)


def reconstruct(model: PcaModel, scores: np.ndarray) -> np.ndarray:
    """Map component scores back to standardized inputs."""
    k = scores.shape[1]
    return scores @ model.components[:, :k].T


def explained_variance(model: PcaModel) -> np.ndarray:
    """Cumulative fraction of total variance, ending at exactly 1."""
    w = model.eigenvalues
    total = w.sum()
    if total <= 0:
        return np.ones(len(w))
    cum = np.cumsum(w) / total
    cum = np.maximum.accumulate(cum)
    cum[-1] = 1.0
    return cum


def accuracy_vs_components(train: Table, test: Table, ks, forest_config: ForestConfig, features=None) -> list:
    """Test accuracy of a forest trained on the first k scores, for each k."""
    model = fit_pca(train, features)
    out = []
    for k in ks:
        tr = project(model, train, k)
        te = project(model, test, k)
        forest = fit_forest(tr, forest_config)
        labels, _ = predict_table(forest, te)
        truth = te[te.schema.target]
        out.append((int(k), 100.0 * float(np.mean(labels == truth))))
    return out


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "test_accuracy"])
        for k, acc in curve:
            w.writerow([k, repr(float(acc))])


def write_variance_csv(model: PcaModel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "cumulative_fraction"])
        for k, f in enumerate(explained_variance(model), start=1):
            w.writerow([k, repr(float(f))])
