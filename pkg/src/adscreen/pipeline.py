"""End-to-end experiment runner and report emitter."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .balance import SmoteConfig, smote
from .dataset import (Schema, Table, apply_scaler, binarize_diagnosis, derive_age, drop_columns, fit_scaler,
                      load_csv, merge_on_key, sanitize, split_indices, write_csv)
from .errors import ConfigError, MissingStage, StageFailure
from .forest import ForestConfig, derive_seed, fit_forest, oob_error, predict_table, save_forest, tune_mtry
from .impute import ImputeConfig, missforest
from .metrics import evaluate, fmt2, write_report, write_roc_csv
from .pca import accuracy_vs_components, fit_pca, write_curve_csv, write_variance_csv
from .select import boruta, permutation_importance, write_boruta_csv, write_importance_csv
from .synthgen import BIRTH, EXAM, ID, CohortConfig, generate_cohort, write_truth_csv, write_weights_json

# Stage tags feed derive_seed so each stage draws from its own stream.
_SEED_TAGS = {"generate": 1, "impute": 2, "split": 3, "balance": 4, "tune": 5, "train": 6,
              "importance": 7, "boruta": 8, "pca": 9, "groups": 10}

TABLE3_GROUPS = (
    ("Medical history", ("MedicalHistory",)),
    ("Neuropsychology assessments", ("Neuropsych",)),
    ("Blood analyses & ApoE genotypes", ("Blood", "ApoE")),
)
MODEL_ROWS = ("untuned", "tuned", "selected")
SCALINGS = ("original", "scaled")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 42
    # Input: empty ``inputs`` means generate a synthetic cohort.
    inputs: tuple = ()
    schema: str | None = None
    join_key: tuple = ("RID",)
    birth_column: str = BIRTH
    exam_column: str = EXAM
    age_column: str = "AGE"
    drop: tuple = (ID, BIRTH, EXAM)
    n_subjects: int = 862
    missing_rate: float = 0.05
    class_balance: float = 320 / 862
    neuropsych_signal: float = 1.0
    nuisance_signal: float = 0.15
    train_fraction: float = 0.7
    split_first: bool = False
    scale: bool = False
    impute_ntree: int = 100
    impute_max_iter: int = 10
    smote_k: int = 5
    smote_ratio: float | None = None
    ntree: int = 500
    mtry_grid: tuple = tuple(range(1, 11))
    n_permutations: int = 50
    importance_loss: str = "accuracy"
    boruta_ntree: int = 500
    boruta_rounds: int = 20
    boruta_alpha: float = 0.05
    selection_drop: str = "rejected"  # "rejected" or "none"
    pca_ks: tuple = (1, 2, 3, 4, 5, 10, 15, 20, 25, 29)
    threads: int = 1

    def __post_init__(self):
        for name in ("inputs", "join_key", "drop", "mtry_grid", "pca_ks"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.selection_drop not in ("rejected", "none"):
            raise ConfigError("selection_drop must be 'rejected' or 'none'")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.ntree < 1 or self.boruta_ntree < 1 or self.impute_ntree < 1:
            raise ConfigError("tree counts must be >= 1")
        if self.inputs and not self.schema:
            raise ConfigError("inputs need a schema file")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, _SEED_TAGS[stage])

    def cohort_config(self) -> CohortConfig:
        return CohortConfig(self.n_subjects, self.stage_seed("generate"), self.missing_rate, self.class_balance,
                            self.neuropsych_signal, self.nuisance_signal)

    def stage_order(self) -> list[str]:
        head = ["ingest", "sanitize", "derive_age", "drop_columns", "binarize"]
        mid = ["split", "impute"] if self.split_first else ["impute", "split"]
        tail = (["scale"] if self.scale else []) + ["balance", "tune", "train", "evaluate", "importance",
                                                       "boruta", "pca"]
        return head + mid + tail


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _read_rows(path: Path) -> list[dict]:
    if not path.exists():
        raise MissingStage(f"{path.name} not found; run the pipeline first")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class _Run:
    config: PipelineConfig
    out: Path
    stages: list = field(default_factory=list)  # (name, [output files])
    notes: list = field(default_factory=list)

    def record(self, stage: str, *files: str) -> None:
        for name, outs in self.stages:
            if name == stage:
                outs.extend(f for f in files if f not in outs)
                return
        self.stages.append((stage, list(files)))


def _metric_row(name, scaling, rep):
    return [name, scaling, fmt2(rep.accuracy), fmt2(rep.precision), fmt2(rep.recall)]


def _fit_eval(train: Table, test: Table, cfg: ForestConfig, features, threads: int):
    forest = fit_forest(train, cfg, features, n_jobs=threads)
    labels, frac = predict_table(forest, test)
    pos = forest.positive
    rep = evaluate(labels, test[test.schema.target], frac[:, pos])
    return forest, rep


def impute_table(table: Table, cfg: PipelineConfig, tag: int) -> Table:
    ic = ImputeConfig(cfg.impute_ntree, cfg.impute_max_iter, None, derive_seed(cfg.stage_seed("impute"), tag))
    return missforest(table, ic).table


def run_pipeline(config: PipelineConfig, out) -> Path:
    """Run every stage in order, writing artifacts and a manifest under ``out``.

    A failing stage leaves earlier outputs in place, writes a ``FAILED``
    marker and raises :class:`StageFailure`.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("FAILED", "manifest.json"):
        (out / stale).unlink(missing_ok=True)
    config.save(out / "config.json")
    run = _Run(config, out)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _execute(run)
    except _StageError as exc:
        stage = exc.stage
        cause = exc.cause
        (out / "FAILED").write_text(f"stage={stage}\ncause={type(cause).__name__}: {cause}\n")
        _write_manifest(run, failed=stage)
        raise StageFailure(stage, cause) from cause
    _write_manifest(run)
    emit_reports(out)
    return out


class _StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(stage)
        self.stage = stage
        self.cause = cause


def _stage(name):
    def wrap(fn):
        def inner(*a, **k):
            try:
                return fn(*a, **k)
            except _StageError:
                raise
            except Exception as exc:  # noqa: BLE001 - every failure is reported per stage
                raise _StageError(name, exc) from exc
        return inner
    return wrap


def _execute(run: _Run) -> None:
    cfg, out = run.config, run.out
    raw = _stage("ingest")(_ingest)(run)
    clean, rep = _stage("sanitize")(sanitize)(raw)
    run.notes.append(f"sanitize replaced {rep.total} cells")
    run.record("sanitize")
    if cfg.birth_column in clean.schema and cfg.exam_column in clean.schema:
        clean = _stage("derive_age")(derive_age)(clean, cfg.birth_column, cfg.exam_column, cfg.age_column)
    run.record("derive_age")
    clean = _stage("drop_columns")(drop_columns)(clean, [c for c in cfg.drop if c in clean.schema])
    run.record("drop_columns")
    clean = _stage("binarize")(binarize_if_raw)(clean)
    write_csv(clean, out / "clean.csv")
    clean.schema.save(out / "clean_schema.json")
    run.record("binarize", "clean.csv", "clean_schema.json")

    if cfg.split_first:
        train, test = _stage("split")(_split)(run, clean)
        train = _stage("impute")(impute_table)(train, cfg, 0)
        test = _stage("impute")(impute_table)(test, cfg, 1)
        run.notes.append("order: split before impute (train and test imputed separately)")
        write_csv(train, out / "train.csv")
        write_csv(test, out / "test.csv")
        run.record("impute", "train.csv", "test.csv")
    else:
        imputed = _stage("impute")(impute_table)(clean, cfg, 0)
        write_csv(imputed, out / "imputed.csv")
        run.record("impute", "imputed.csv")
        run.notes.append("order: impute before split (test rows inform imputation)")
        train, test = _stage("split")(_split)(run, imputed)

    params = fit_scaler(train)
    variants = {"original": (train, test),
                "scaled": (apply_scaler(train, params), apply_scaler(test, params))}
    if cfg.scale:
        run.record("scale")
    primary = "scaled" if cfg.scale else "original"

    sc = SmoteConfig(cfg.smote_k, cfg.smote_ratio, cfg.stage_seed("balance"))
    balanced = {k: _stage("balance")(smote)(tr, sc) for k, (tr, _) in variants.items()}
    write_csv(balanced[primary], out / "train_balanced.csv")
    run.record("balance", "train_balanced.csv")

    _stage("tune")(_tune)(run, balanced[primary], variants[primary][1])
    best = int(_read_rows(out / "tune.csv")[0]["best_mtry"])

    base = ForestConfig(ntree=cfg.ntree, seed=cfg.stage_seed("train"))
    reports = {}
    for scaling in SCALINGS:
        tr, te = balanced[scaling], variants[scaling][1]
        _, reports[("untuned", scaling)] = _stage("train")(_fit_eval)(tr, te, base, None, cfg.threads)
        forest, reports[("tuned", scaling)] = _stage("train")(_fit_eval)(
            tr, te, replace(base, mtry=best), None, cfg.threads)
        if scaling == primary:
            tuned = forest

    tr, te = balanced[primary], variants[primary][1]
    save_forest(tuned, out / "forest.json")
    write_oob_curve(tuned, tr, out / "oob_curve.csv")
    run.record("train", "forest.json", "oob_curve.csv")
    rep = reports[("tuned", primary)]
    write_report(rep, out / "metrics.txt", {"model": "tuned", "scaling": primary, "mtry": best})
    write_roc_csv(rep.roc, out / "roc.csv")
    run.record("evaluate", "metrics.txt", "roc.csv")

    imp = _stage("importance")(permutation_importance)(
        tuned, te, cfg.n_permutations, cfg.stage_seed("importance"), cfg.importance_loss)
    write_importance_csv(imp, out / "importance.csv")
    run.record("importance", "importance.csv")

    bor = _stage("boruta")(boruta)(tr, cfg.boruta_ntree, cfg.boruta_rounds, cfg.boruta_alpha,
                                   cfg.stage_seed("boruta"), None, cfg.threads)
    write_boruta_csv(bor, out / "boruta.csv")
    run.record("boruta", "boruta.csv")
    drop = set(bor.with_decision("Rejected")) if cfg.selection_drop == "rejected" else set()
    selected = [f for f in tr.schema.predictors() if f not in drop]
    run.notes.append(f"selection drops {sorted(drop)}")

    sel_cfg = replace(base, mtry=min(best, len(selected)))
    for scaling in SCALINGS:
        _, reports[("selected", scaling)] = _stage("train")(_fit_eval)(
            balanced[scaling], variants[scaling][1], sel_cfg, selected, cfg.threads)
    rows = [_metric_row(m, s, reports[(m, s)]) for m in MODEL_ROWS for s in SCALINGS]
    write_rows(out / "models.csv", ["model", "scaling", "accuracy", "precision", "recall"], rows)

    group_rows = []
    tr, te = balanced[primary], variants[primary][1]
    for label, groups in TABLE3_GROUPS:
        feats = tr.schema.by_group(*groups)
        gcfg = ForestConfig(ntree=cfg.ntree, seed=derive_seed(cfg.stage_seed("groups"), len(group_rows)))
        _, rep = _stage("train")(_fit_eval)(tr, te, gcfg, feats, cfg.threads)
        group_rows.append([label, fmt2(rep.accuracy), fmt2(rep.precision), fmt2(rep.recall)])
    write_rows(out / "groups.csv", ["group", "accuracy", "precision", "recall"], group_rows)
    run.record("evaluate", "models.csv", "groups.csv")

    _stage("pca")(_pca)(run, tr, te)


def _ingest(run: _Run) -> Table:
    cfg, out = run.config, run.out
    if not cfg.inputs:
        raw, truth = generate_cohort(cfg.cohort_config())
        write_csv(raw, out / "cohort.csv")
        raw.schema.save(out / "cohort_schema.json")
        write_truth_csv(truth, out / "truth.csv")
        write_weights_json(truth, out / "weights.json")
        run.record("ingest", "cohort.csv", "cohort_schema.json", "truth.csv", "weights.json")
        return raw
    schema = Schema.load(cfg.schema)
    tables = []
    for path in cfg.inputs:
        cols = _csv_header(path)
        sub = Schema(tuple(c for c in schema.columns if c.name in cols))
        tables.append(load_csv(path, sub))
    if len(tables) == 1:
        raw = tables[0]
    else:
        raw, rep = merge_on_key(tables, list(cfg.join_key))
        run.notes.append(f"join kept {rep.rows_out} rows, dropped per file {list(rep.dropped)}")
    write_csv(raw, out / "cohort.csv")
    raw.schema.save(out / "cohort_schema.json")
    run.record("ingest", "cohort.csv", "cohort_schema.json")
    return raw


def _csv_header(path) -> list[str]:
    with open(path, newline="") as fh:
        return next(csv.reader(fh), [])


def binarize_if_raw(t: Table) -> Table:
    levels = set(t.schema[t.schema.target].levels)
    return t if levels == {"HC", "NonHC"} else binarize_diagnosis(t)


def _split(run: _Run, table: Table):
    cfg, out = run.config, run.out
    tr_idx, te_idx = split_indices(table, cfg.train_fraction, cfg.stage_seed("split"))
    write_rows(out / "split.csv", ["row", "part"],
                sorted([[int(i), "train"] for i in tr_idx] + [[int(i), "test"] for i in te_idx]))
    run.record("split", "split.csv")
    return table.take(tr_idx), table.take(te_idx)


def _tune(run: _Run, train: Table, test: Table) -> None:
    cfg, out = run.config, run.out
    p = len(train.schema.predictors())
    grid = [m for m in cfg.mtry_grid if 1 <= m <= p]
    base = ForestConfig(ntree=cfg.ntree, seed=cfg.stage_seed("tune"))
    best, errors = tune_mtry(train, base, grid, n_jobs=cfg.threads)
    rows = []
    for m in grid:
        # Test accuracy per mtry is recorded for plotting only; selection uses OOB error.
        f = fit_forest(train, replace(base, mtry=m, seed=derive_seed(base.seed, m)), n_jobs=cfg.threads)
        labels, _ = predict_table(f, test)
        acc = 100.0 * float(np.mean(labels == test[test.schema.target]))
        rows.append([m, repr(float(errors[m])), repr(acc), best])
    write_rows(out / "tune.csv", ["mtry", "oob_error", "test_accuracy", "best_mtry"], rows)
    run.record("tune", "tune.csv")


def write_oob_curve(forest, train: Table, path: Path) -> None:
    curve = oob_error(forest, train)
    classes = list(forest.classes)
    rows = []
    for t in range(len(curve.overall)):
        rows.append([t + 1, repr(float(curve.overall[t]))] + [repr(float(curve.per_class[c][t])) for c in classes])
    write_rows(path, ["ntree", "oob_error"] + [f"oob_error_{c}" for c in classes], rows)


def _pca(run: _Run, train: Table, test: Table) -> None:
    cfg, out = run.config, run.out
    model = fit_pca(train)
    write_variance_csv(model, out / "variance.csv")
    ks = sorted({k for k in cfg.pca_ks if 1 <= k <= model.n_components})
    fc = ForestConfig(ntree=cfg.ntree, seed=cfg.stage_seed("pca"))
    curve = accuracy_vs_components(train, test, ks, fc)
    write_curve_csv(curve, out / "pca_curve.csv")
    run.record("pca", "variance.csv", "pca_curve.csv")


def _write_manifest(run: _Run, failed: str | None = None) -> None:
    out = run.out
    stages = []
    for name, files in run.stages:
        stages.append({"stage": name,
                       "outputs": {f: _sha256(out / f) for f in files if (out / f).exists()}})
    doc = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": run.config.seed,
        "config": run.config.to_dict(),
        "planned_order": run.config.stage_order(),
        "stages": stages,
        "notes": run.notes,
        "status": "failed" if failed else "ok",
    }
    if failed:
        doc["failed_stage"] = failed
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------- reports


def emit_reports(run_dir) -> list[Path]:
    """Build the summary report CSVs from a finished run."""
    run_dir = Path(run_dir)
    models = _read_rows(run_dir / "models.csv")
    groups = _read_rows(run_dir / "groups.csv")
    for need in ("roc.csv", "importance.csv", "boruta.csv", "pca_curve.csv"):
        if not (run_dir / need).exists():
            raise MissingStage(f"{need} not found; run the pipeline first")
    header = ["model", "scaling", "accuracy", "precision", "recall"]
    order = {(m, s): i for i, (m, s) in enumerate((m, s) for m in MODEL_ROWS for s in SCALINGS)}
    models.sort(key=lambda r: order[(r["model"], r["scaling"])])
    t1 = run_dir / "table1_analog.csv"
    write_rows(t1, header, [[r[h] for h in header] for r in models])

    by = {(r["model"], r["scaling"]): r for r in models}
    t2_rows = []
    for m in MODEL_ROWS:
        row = [m]
        for k in ("accuracy", "precision", "recall"):
            a, b = by[(m, "original")][k], by[(m, "scaled")][k]
            row.append("NA" if "NA" in (a, b) else _signed(float(b) - float(a)))
        t2_rows.append(row)
    t2 = run_dir / "table2_analog.csv"
    write_rows(t2, ["model", "accuracy", "precision", "recall"], t2_rows)

    t3 = run_dir / "table3_analog.csv"
    write_rows(t3, ["group", "accuracy", "precision", "recall"],
                [[r["group"], r["accuracy"], r["precision"], r["recall"]] for r in groups])
    return [t1, t2, t3]


def _signed(d: float) -> str:
    d = round(d, 2)
    return "0.00" if d == 0 else f"{d:+.2f}"

