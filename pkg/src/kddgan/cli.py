"""Command-line pipeline: ingest, eda, train [--augmented], anomaly, compare, all.

Every stage reads one YAML config (merged over the packaged defaults) and
writes content-named artifacts into the output directory. Stages only
communicate through those files, so each can be rerun on its own.

Exit codes: 0 success, 1 invalid config or data, 2 missing input.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import analysis, evaluation, gan, gbt, ingest, isoforest, preprocess, synthetic

logger = logging.getLogger("kddgan")

GBT_KEYS = ("n_rounds", "learning_rate", "max_depth", "min_child_weight", "reg_lambda", "gamma", "subsample")
GAN_KEYS = (
    "latent_dim", "generator_widths", "discriminator_widths", "epochs", "batch_size",
    "learning_rate", "beta1", "beta2", "leaky_slope", "bn_momentum", "bn_epsilon",
)


class MissingInput(Exception):
    """An input file or upstream artifact does not exist."""


class ConfigError(ValueError):
    pass


# -- config -----------------------------------------------------------------

def default_config() -> dict:
    text = resources.files("kddgan").joinpath("data/default-config.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        # free-form mappings are replaced wholesale
        if isinstance(value, dict) and isinstance(base[key], dict) and key not in ("space", "overrides"):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | os.PathLike, out: str | None = None, seed: int | None = None) -> dict:
    """Read a config file, merge it over the defaults and resolve paths."""
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"config file not found: {path}")
    try:
        user = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = _merge(default_config(), user)
    base = path.resolve().parent
    for key, value in cfg["paths"].items():
        if value is not None:
            cfg["paths"][key] = str(base / value)
    if out is not None:
        cfg["paths"]["out"] = str(Path(out).resolve())
    if seed is not None:
        cfg["seed"] = int(seed)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    ratios = cfg["split"]["ratios"]
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) <= 0:
        raise ConfigError(f"split.ratios must be three positive numbers summing to 1, got {ratios}")
    targets = cfg["augment"]["targets"]
    if targets != "default" and not isinstance(targets, dict):
        raise ConfigError("augment.targets must be 'default' or a mapping class -> count")
    if int(cfg["tune"]["budget"]) < 0:
        raise ConfigError("tune.budget must be >= 0")
    for key in ("schema", "label_map"):
        p = cfg["paths"][key]
        if p is not None and not Path(p).is_file():
            raise MissingInput(f"{key} file not found: {p}")


# -- artifact helpers -------------------------------------------------------

def _out(cfg: dict) -> Path:
    out = Path(cfg["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")
    logger.info("wrote %s", path)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _require(path: Path, producer: str) -> Path:
    if not path.is_file():
        raise MissingInput(f"missing artifact {path} (run `kddgan {producer}` first)")
    return path


def _schema(cfg):
    return ingest.load_schema(cfg["paths"]["schema"])


def _load_clean(cfg) -> ingest.TabularDataset:
    path = _require(_out(cfg) / "dataset-clean.txt", "ingest")
    return ingest.read_nslkdd(path, schema=_schema(cfg))


def _prepare(cfg):
    """Split the cleaned dataset, fit the encoder on the train rows and encode
    everything; writes encoder.json and split.json."""
    ds = _load_clean(cfg)
    _, class_ids = np.unique(ds.labels.astype(str), return_inverse=True)
    split = preprocess.stratified_split(class_ids, cfg["split"]["ratios"], seed=cfg["seed"])
    plan = preprocess.default_plan(ds.schema, onehot=cfg["encoder"]["onehot"])
    plan.update(cfg["encoder"]["overrides"] or {})
    encoder = preprocess.TabularEncoder(plan).fit(ds.take(split.train))
    fm = encoder.transform(ds)
    out = _out(cfg)
    _write(out / "encoder.json", encoder.to_json() + "\n")
    _write(out / "split.json", json.dumps(split.to_dict(), sort_keys=True) + "\n")
    return encoder, fm, split


def _gbt_params(cfg) -> dict:
    params = {k: cfg["gbt"][k] for k in GBT_KEYS}
    params["random_state"] = cfg["seed"]
    return params


def _gan_params(cfg) -> dict:
    params = {k: cfg["gan"][k] for k in GAN_KEYS}
    params["generator_widths"] = tuple(params["generator_widths"])
    params["discriminator_widths"] = tuple(params["discriminator_widths"])
    params["random_state"] = cfg["seed"]
    return params


def _importance_csv(model) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "feature", "mean_gain", "total_gain", "splits"])
    table = {model.feature_names_[j]: tc for j, tc in model.gain_by_feature_.items()}
    for rank, (name, mean) in enumerate(model.feature_importance(), 1):
        total, count = table[name]
        w.writerow([rank, name, repr(mean), repr(total), count])
    return buf.getvalue()


# -- subcommands ------------------------------------------------------------

def cmd_ingest(cfg) -> None:
    dataset = cfg["paths"]["dataset"]
    if dataset is None or not Path(dataset).is_file():
        raise MissingInput(f"dataset not found: {dataset}")
    schema = _schema(cfg)
    raw = ingest.read_nslkdd(dataset, schema=schema)
    cleaned, report = ingest.clean(raw, cfg["clean"]["sentinels"], cfg["clean"]["drop_missing"])
    mapping = ingest.load_label_map(cfg["paths"]["label_map"])
    mapped, dropped = ingest.map_labels(cleaned, mapping, keep=cfg["labels"]["keep"])
    if len(mapped) == 0:
        raise ValueError("no rows left after cleaning and label mapping")
    out = _out(cfg)
    _write(out / "dataset-clean.txt", ingest.to_nslkdd(mapped))
    _write(out / "class-distribution.csv", ingest.class_distribution(mapped).to_csv())
    _write(out / "class-distribution-raw.csv", ingest.class_distribution(cleaned).to_csv())
    _write(out / "ingest-report.json", _dump({
        "rows_in": report.rows_in,
        "rows_dropped_missing": report.rows_dropped,
        "cells_replaced": report.cells_replaced,
        "rows_dropped_by_label": dropped,
        "rows_out": len(mapped),
    }))


def _tuned_params(cfg, train_fm, val_fm) -> tuple[dict, gbt.TuneResult | None]:
    params = _gbt_params(cfg)
    budget = int(cfg["tune"]["budget"])
    if budget == 0:
        return params, None
    result = gbt.tune(train_fm, val_fm, budget, cfg["tune"]["space"], seed=cfg["seed"], base_params=params)
    return result.best_params, result


def cmd_train(cfg, augmented: bool = False) -> None:
    encoder, fm, split = _prepare(cfg)
    train_fm, val_fm, test_fm = fm.take(split.train), fm.take(split.val), fm.take(split.test)
    out = _out(cfg)
    tag = "augmented" if augmented else "baseline"
    params, tuned = _tuned_params(cfg, train_fm, val_fm)
    if tuned is not None:
        _write(out / "tune-trials.csv", tuned.trials_csv())
    fit_fm = train_fm
    if augmented:
        if cfg["augment"]["targets"] == "default":
            targets = gan.default_targets(train_fm, exclude=cfg["augment"]["exclude"])
        else:
            targets = {str(k): int(v) for k, v in cfg["augment"]["targets"].items()}
        result = gan.augment(train_fm, targets, **_gan_params(cfg))
        fit_fm = result.matrix
        counts = np.bincount(train_fm.class_ids, minlength=train_fm.n_classes)
        summary = {}
        for name, g in result.gans.items():
            _write(out / f"gan-trace-{name}.csv", g.trace_.to_csv())
            real = train_fm.of_class(train_fm.class_names.index(name)).values
            pairs = analysis.real_vs_synthetic_summary(real, result.synthetic[name], fm.feature_names, name)
            _write(out / f"synthetic-vs-real-{name}.csv", analysis.paired_csv(pairs))
            summary[name] = {
                "real": int(counts[train_fm.class_names.index(name)]),
                "synthetic": int(len(result.synthetic[name])),
                "target": int(targets[name]),
            }
        _write(out / "augmentation.json", _dump({"targets": targets, "classes": summary}))
    model = gbt.train(fit_fm, **params)
    pred = model.predict(test_fm.values)
    cm = evaluation.confusion(pred, test_fm.class_ids, fm.n_classes, fm.class_names)
    m = evaluation.metrics(cm)
    doc = m.to_dict(digits=4)
    doc["model"] = {
        "n_rounds": params["n_rounds"],
        "tune_budget": int(cfg["tune"]["budget"]),
        "params": params,
        "train_rows": len(fit_fm),
        "test_rows": len(test_fm),
    }
    _write(out / f"model-{tag}.json", model.to_json() + "\n")
    _write(out / f"feature-importance-{tag}.csv", _importance_csv(model))
    _write(out / f"metrics-{tag}.json", _dump(doc))
    _write(out / f"metrics-{tag}.txt", evaluation.format_table(m, f"Test partition, {tag}"))
    _write(out / f"confusion-{tag}.csv", cm.to_csv())
    logger.info("%s test accuracy %.6f", tag, m.accuracy)


def cmd_anomaly(cfg) -> None:
    _, fm, split = _prepare(cfg)
    train_fm = fm.take(split.train)
    psi = cfg["isoforest"]["max_samples"]
    psi = min(int(psi), len(train_fm)) if psi is not None else None
    forest = isoforest.IsoForest(cfg["isoforest"]["n_trees"], psi, random_state=cfg["seed"]).fit(train_fm.values)
    out = _out(cfg)
    _write(out / "model-isoforest.json", forest.to_json() + "\n")
    _write(out / "anomaly-ranking.csv", isoforest.ranking_csv(isoforest.class_anomaly_ranking(forest, fm)))


def _raw_units(encoder, fm) -> preprocess.FeatureMatrix:
    """Undo min-max scaling so summaries are in the original feature units."""
    values = fm.values.copy()
    for b in encoder.blocks_:
        if b.directive == "minmax":
            lo, hi = encoder.ranges_[b.source]
            values[:, b.start] = values[:, b.start] * (hi - lo) + lo
    return preprocess.FeatureMatrix(values, fm.feature_names, fm.class_ids, fm.class_names, fm.blocks)


def cmd_eda(cfg) -> None:
    encoder, fm, _ = _prepare(cfg)
    out = _out(cfg)
    raw = _raw_units(encoder, fm)
    features = cfg["eda"]["features"]
    if features is None:
        model_path = out / "model-baseline.json"
        if model_path.is_file():
            model = gbt.BoostedTreesClassifier.from_json(model_path.read_text(encoding="utf-8"))
            features = [name for name, _ in model.feature_importance(cfg["eda"]["top_k"])]
        else:
            features = list(fm.feature_names)
    summaries = analysis.feature_summaries(raw, features)
    _write(out / "feature-summaries.csv", analysis.summaries_csv(summaries))
    _write(out / "feature-summaries.json", _dump({
        f"{s.class_name}/{s.feature}": {
            "count": s.count, "mean": s.mean, "variance": s.variance, "min": s.min, "q1": s.q1,
            "median": s.median, "q3": s.q3, "max": s.max,
            "bin_edges": list(s.bin_edges), "hist": list(s.hist),
        }
        for s in summaries
    }))
    _write(out / "duration-by-class.csv", analysis.summaries_csv(analysis.feature_summaries(raw, ["duration"])))


def _load_metrics(path: Path) -> evaluation.ClassMetrics:
    return evaluation.ClassMetrics.from_dict(json.loads(_require(path, "train").read_text(encoding="utf-8")))


def cmd_compare(cfg) -> None:
    out = _out(cfg)
    before = _load_metrics(out / "metrics-baseline.json")
    after = _load_metrics(out / "metrics-augmented.json")
    report = evaluation.compare(before, after)
    _write(out / "comparison.json", _dump(report.to_dict()))
    _write(out / "comparison.txt", evaluation.format_comparison(report))


def cmd_all(cfg) -> None:
    cmd_ingest(cfg)
    cmd_train(cfg, augmented=False)
    cmd_train(cfg, augmented=True)
    cmd_anomaly(cfg)
    cmd_eda(cfg)
    cmd_compare(cfg)


def cmd_synth(args) -> None:
    text = synthetic.generate_records(scale=args.scale, seed=args.seed or 0)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    _write(Path(args.output), text)


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kddgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("ingest", "parse, clean and relabel the dataset"),
        ("eda", "per-class feature summaries"),
        ("train", "fit and evaluate the boosted-tree classifier"),
        ("anomaly", "isolation-forest class ranking"),
        ("compare", "before/after augmentation report"),
        ("all", "run every stage in order"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML pipeline config")
        p.add_argument("--out", help="output directory (overrides paths.out)")
        p.add_argument("--seed", type=int, help="seed for every stage (overrides config)")
        if name == "train":
            p.add_argument("--augmented", action="store_true", help="augment minority classes with GANs first")
    p = sub.add_parser("synth", help="write a synthetic NSL-KDD-format file")
    p.add_argument("output", help="destination file")
    p.add_argument("--scale", type=float, default=0.1, help="fraction of the KDDTrain+ class counts")
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "synth":
            cmd_synth(args)
            return 0
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        if args.command == "train":
            cmd_train(cfg, augmented=args.augmented)
        else:
            {"ingest": cmd_ingest, "eda": cmd_eda, "anomaly": cmd_anomaly,
             "compare": cmd_compare, "all": cmd_all}[args.command](cfg)
    except MissingInput as exc:
        print(f"kddgan: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"kddgan: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"kddgan: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
