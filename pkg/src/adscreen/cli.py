"""Command-line entry point: one subcommand per pipeline stage plus ``reproduce``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .balance import SmoteConfig, smote
from .dataset import (Schema, apply_scaler, derive_age, drop_columns, fit_scaler, load_csv, sanitize,
                      split_stratified, write_csv)
from .errors import AdscreenError, ConfigError, DataError, StageFailure
from .forest import ForestConfig, fit_forest, load_forest, predict_table, save_forest, tune_mtry
from .metrics import evaluate, write_report, write_roc_csv
from .pca import accuracy_vs_components, fit_pca, write_curve_csv, write_variance_csv
from .pipeline import PipelineConfig, binarize_if_raw, impute_table, write_oob_curve, write_rows, run_pipeline
from .select import boruta, permutation_importance, write_boruta_csv, write_importance_csv
from .synthgen import analysis_table, generate_cohort, write_truth_csv, write_weights_json

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 2, 3, 4


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    if getattr(args, "split_first", False):
        over["split_first"] = True
    if args.scale:
        over["scale"] = True
    return replace(cfg, **over) if over else cfg


def _table(args, path_attr="data"):
    path = getattr(args, path_attr)
    if not path:
        raise ConfigError(f"--{path_attr} is required")
    if not args.schema:
        raise ConfigError("--schema is required")
    return load_csv(path, Schema.load(args.schema))


def _save_table(table, out: Path, name: str) -> None:
    write_csv(table, out / f"{name}.csv")
    table.schema.save(out / f"{name}_schema.json")


def cmd_generate(args, cfg, out):
    raw, truth = generate_cohort(cfg.cohort_config())
    _save_table(raw, out, "cohort")
    write_truth_csv(truth, out / "truth.csv")
    write_weights_json(truth, out / "weights.json")
    if args.analysis:
        _save_table(analysis_table(raw), out, "analysis")


def cmd_ingest(args, cfg, out):
    t, _ = sanitize(_table(args))
    if cfg.birth_column in t.schema and cfg.exam_column in t.schema:
        t = derive_age(t, cfg.birth_column, cfg.exam_column, cfg.age_column)
    t = drop_columns(t, [c for c in cfg.drop if c in t.schema])
    _save_table(binarize_if_raw(t), out, "clean")


def cmd_impute(args, cfg, out):
    _save_table(impute_table(_table(args), cfg, 0), out, "imputed")


def cmd_split(args, cfg, out):
    train, test = split_stratified(_table(args), cfg.train_fraction, cfg.stage_seed("split"))
    if cfg.scale:
        params = fit_scaler(train)
        train, test = apply_scaler(train, params), apply_scaler(test, params)
    _save_table(train, out, "train")
    _save_table(test, out, "test")


def cmd_balance(args, cfg, out):
    sc = SmoteConfig(cfg.smote_k, cfg.smote_ratio, cfg.stage_seed("balance"))
    _save_table(smote(_table(args), sc), out, "balanced")


def cmd_tune(args, cfg, out):
    train = _table(args)
    p = len(train.schema.predictors())
    grid = [m for m in cfg.mtry_grid if 1 <= m <= p]
    best, errors = tune_mtry(train, ForestConfig(ntree=cfg.ntree, seed=cfg.stage_seed("tune")), grid,
                             n_jobs=cfg.threads)
    write_rows(out / "tune.csv", ["mtry", "oob_error", "best_mtry"],
                [[m, repr(float(errors[m])), best] for m in grid])


def cmd_train(args, cfg, out):
    train = _table(args)
    fc = ForestConfig(ntree=cfg.ntree, mtry=args.mtry, seed=cfg.stage_seed("train"))
    forest = fit_forest(train, fc, n_jobs=cfg.threads)
    save_forest(forest, out / "forest.json")
    write_oob_curve(forest, train, out / "oob_curve.csv")


def _model(args):
    if not args.model:
        raise ConfigError("--model is required")
    return load_forest(args.model)


def cmd_evaluate(args, cfg, out):
    forest = _model(args)
    test = _table(args)
    labels, frac = predict_table(forest, test)
    rep = evaluate(labels, test[test.schema.target], frac[:, forest.positive])
    write_report(rep, out / "metrics.txt")
    write_roc_csv(rep.roc, out / "roc.csv")


def cmd_importance(args, cfg, out):
    imp = permutation_importance(_model(args), _table(args), cfg.n_permutations, cfg.stage_seed("importance"),
                                 cfg.importance_loss)
    write_importance_csv(imp, out / "importance.csv")


def cmd_boruta(args, cfg, out):
    rep = boruta(_table(args), cfg.boruta_ntree, cfg.boruta_rounds, cfg.boruta_alpha, cfg.stage_seed("boruta"),
                 None, cfg.threads)
    write_boruta_csv(rep, out / "boruta.csv")


def cmd_pca(args, cfg, out):
    train = _table(args)
    model = fit_pca(train)
    write_variance_csv(model, out / "variance.csv")
    if args.test:
        test = _table(args, "test")
        ks = sorted({k for k in cfg.pca_ks if 1 <= k <= model.n_components})
        curve = accuracy_vs_components(train, test, ks, ForestConfig(ntree=cfg.ntree, seed=cfg.stage_seed("pca")))
        write_curve_csv(curve, out / "pca_curve.csv")


def cmd_reproduce(args, cfg, out):
    run_pipeline(cfg, out)


COMMANDS = {
    "generate": (cmd_generate, "write a synthetic cohort, its ground truth and schema"),
    "ingest": (cmd_ingest, "sanitize, derive age, drop columns, binarize the diagnosis"),
    "impute": (cmd_impute, "fill masked cells with MissForest"),
    "split": (cmd_split, "stratified train/test split (optionally z-scored)"),
    "balance": (cmd_balance, "SMOTE the training table to class parity"),
    "tune": (cmd_tune, "grid-search mtry by OOB error"),
    "train": (cmd_train, "fit a forest and write it with its OOB curve"),
    "evaluate": (cmd_evaluate, "score a saved forest on a table"),
    "importance": (cmd_importance, "permutation importance of a saved forest"),
    "boruta": (cmd_boruta, "Boruta shadow-feature selection"),
    "pca": (cmd_pca, "explained variance and accuracy per component count"),
    "reproduce": (cmd_reproduce, "run the whole experiment and emit reports"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adscreen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, help="worker threads for forest fitting")
        p.add_argument("--scale", action="store_true", help="z-score numeric predictors using training statistics")
        if name == "reproduce":
            p.add_argument("--split-first", action="store_true",
                           help="split before imputing so test rows never inform imputation")
        else:
            p.add_argument("--data", help="input table CSV")
            p.add_argument("--schema", help="schema JSON for the input tables")
        if name in ("evaluate", "importance"):
            p.add_argument("--model", help="forest JSON written by `train`")
        if name == "train":
            p.add_argument("--mtry", type=int, help="features tried per split (default floor(sqrt(p)))")
        if name == "pca":
            p.add_argument("--test", help="held-out table CSV for the accuracy curve")
        if name == "generate":
            p.add_argument("--analysis", action="store_true", help="also write the model-ready table")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    fn = COMMANDS[args.command][0]
    try:
        cfg = _config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fn(args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AdscreenError, ValueError, OSError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
