"""``modabric`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command that writes a directory also writes ``resolved_config.json``
there; passing it back with ``--config`` reproduces the run.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .attr.model import INPUT_GROUPS, AttrModel
from .attr.trainer import build_task_datasets, evaluate, run_protocol
from .compute.rng import RngState
from .config import RunConfig, load_run_config, read_mapping
from .data.catalogue import CatalogueArrays, MetaVocab, encode_records, load_catalogue, load_taxonomy
from .data.interactions import InteractionSet, Windows, load_interactions, temporal_split
from .data.synthetic import SynthSpec, generate_synthetic, spec_to_dict, write_synthetic
from .errors import ModabricError, ValidationError
from .recsys.features import ItemFeatures, build_item_features, normalize_features
from .recsys.model import MODES, RecModel, resolve_mode
from .recsys.train import evaluate_ranking, train_rec

log = logging.getLogger("modabric")

TABLE_COLUMNS = ["attribute", "n_samples", "n_classes", "weighted_f1", "accuracy", "baseline_accuracy"]
ABLATION_COLUMNS = ["attribute", "drop", "n_samples", "weighted_f1", "accuracy", "baseline_accuracy"]
RANKING_COLUMNS = ["model", "precision_mean", "precision_std", "recall_mean", "recall_std", "n_customers", "runs"]
EVAL_MODELS = ("popularity", "cf_only", "content_only", "hybrid")
SHORT_MODE = {"cf_only": "cf", "content_only": "content", "hybrid": "hybrid", "popularity": "popularity"}


class UsageError(ModabricError):
    """Bad flags or missing inputs (exit code 2)."""


# -- shared helpers -------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _config(args) -> RunConfig:
    if args.config:
        _need_file(args.config, "config file")
    return load_run_config(args.config, args.set, args.seed)


def _catalogue(path):
    entries, rejects = load_catalogue(_need_file(path, "catalogue"))
    if rejects:
        print(f"catalogue: {len(rejects)} line(s) rejected", file=sys.stderr)
        for r in rejects:
            print(f"  {r.source}:{r.line}: {r.reason}", file=sys.stderr)
    if not entries:
        raise ValidationError("catalogue has no valid entries")
    return entries


def _vocab_for(cfg: RunConfig, entries) -> MetaVocab:
    return MetaVocab.build(entries, cfg.data.min_token_count)


def _split(args, cfg: RunConfig, entries) -> InteractionSet:
    log_, rejects = load_interactions(_need_file(args.interactions, "interactions file"),
                                      [e.product_id for e in entries])
    if rejects:
        print(f"interactions: {len(rejects)} row(s) rejected", file=sys.stderr)
    if args.windows:
        windows = Windows.from_iso(**read_mapping(_need_file(args.windows, "windows file")))
    else:
        windows = Windows.infer(log_, cfg.data.test_days, cfg.data.positive_days)
    return temporal_split(log_, windows)


def _features(args, entries, vocab, split) -> ItemFeatures:
    predictions = None
    if getattr(args, "predictions", None):
        predictions = {}
        with open(_need_file(args.predictions, "predictions file"), encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    predictions[row["product_id"]] = row["attributes"]
    return normalize_features(build_item_features(entries, vocab, split, predictions))


def _load_model_dir(directory) -> tuple[AttrModel, MetaVocab, RunConfig]:
    d = _need_file(directory, "model directory")
    for name in ("attr_model.bin", "attr_model.json", "meta_vocab.json", "resolved_config.json"):
        _need_file(d / name, "checkpoint file")
    model = AttrModel.load(d)
    vocab = MetaVocab.from_json(read_mapping(d / "meta_vocab.json"))
    cfg = load_run_config(d / "resolved_config.json")
    return model, vocab, cfg


# -- synthetic data -------------------------------------------------------


def cmd_synth_gen(args) -> int:
    raw = read_mapping(_need_file(args.spec, "spec file")) if args.spec else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = SynthSpec.from_dict(raw)
    data = generate_synthetic(spec)
    paths = write_synthetic(data, args.out)
    _write_json(Path(args.out) / "synth_spec.json", spec_to_dict(spec))
    print(f"wrote {len(data.catalogue)} products, {len(data.events)} events to {args.out}")
    for k in sorted(paths):
        log.info("%s: %s", k, paths[k])
    return 0


# -- attribute model ------------------------------------------------------


def cmd_attr_train(args) -> int:
    cfg = _config(args)
    entries = _catalogue(args.catalogue)
    taxonomy = load_taxonomy(_need_file(args.taxonomy, "taxonomy"))
    vocab = _vocab_for(cfg, entries)
    records = encode_records(entries, vocab, cfg.attr_model.max_seq_len)
    result = run_protocol(records, taxonomy, vocab.product_types, vocab.sizes(), cfg.attr_model,
                          cfg.train_plan(), drop=args.drop, eval_splits=("train", "test"))
    out = Path(args.out)
    result.model.save(out)
    _write_json(out / "meta_vocab.json", vocab.to_json())
    result.history.write_csv(out / "history.csv")
    cfg.snapshot(out)
    for name, m in result.metrics.items():
        print(f"{name}: test weighted F1 {m.weighted_f1:.4f}, accuracy {m.accuracy:.4f} "
              f"(baseline {m.baseline_accuracy:.4f})")
    return 0


def _table_rows(metrics) -> list[list]:
    return [[m.task, m.n_samples, m.n_classes, m.weighted_f1, m.accuracy, m.baseline_accuracy]
            for m in metrics.values()]


def cmd_attr_eval(args) -> int:
    model, vocab, cfg = _load_model_dir(args.model)
    entries = _catalogue(args.catalogue)
    taxonomy = load_taxonomy(_need_file(args.taxonomy, "taxonomy"))
    records = encode_records(entries, vocab, model.config.max_seq_len)
    plan = cfg.train_plan()
    datasets = build_task_datasets(records, taxonomy, vocab.product_types, plan.min_support,
                                   plan.split_fraction, plan.seed)
    for ds in datasets:
        if ds.task.name not in model.tasks:
            raise ValidationError(f"model has no head for task {ds.task.name!r}")
        if ds.task.label_vocab != model.tasks[ds.task.name].label_vocab:
            raise ValidationError(f"label set for task {ds.task.name!r} differs from the checkpoint's")
    metrics = evaluate(model, datasets, args.split)
    out = Path(args.out)
    _write_csv(out / "metrics.csv", TABLE_COLUMNS, _table_rows(metrics))
    for name, m in metrics.items():
        cm = m.confusion_matrix
        if args.normalise:
            counts = cm.counts.astype(np.float64)
            total = counts.sum(axis=1, keepdims=True)
            values = np.divide(counts, total, out=np.zeros_like(counts), where=total > 0)
        else:
            values = cm.counts
        _write_csv(out / f"confusion_{name}.csv", ["true\\predicted", *cm.label_vocab],
                   [[lab, *row] for lab, row in zip(cm.label_vocab, values.tolist())])
    with open(out / "metrics.csv", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return 0


def cmd_attr_predict(args) -> int:
    model, vocab, _ = _load_model_dir(args.model)
    entries = _catalogue(args.catalogue)
    records = encode_records(entries, vocab, model.config.max_seq_len)
    arrays = CatalogueArrays.from_records(records)
    preds: list[dict] = [{} for _ in records]
    for name, task in model.tasks.items():
        idx = np.array([i for i, r in enumerate(records) if task.applies_to(r.product_type_id)], dtype=np.int64)
        if args.missing_only:
            idx = np.array([i for i in idx if records[i].attribute_labels.get(name) is None], dtype=np.int64)
        if idx.size == 0:
            continue
        proba = model.predict_proba(arrays.take(idx), name)
        best = np.argmax(proba, axis=1)
        for i, k, p in zip(idx, best, proba):
            preds[i][name] = {"label": task.label_vocab[k], "probability": float(p[k])}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for rec, attrs in zip(records, preds):
            fh.write(json.dumps({"product_id": rec.product_id, "attributes": attrs}, sort_keys=True) + "\n")
    print(f"wrote predictions for {len(records)} products to {out}")
    return 0


def cmd_attr_ablate(args) -> int:
    cfg = _config(args)
    entries = _catalogue(args.catalogue)
    taxonomy = load_taxonomy(_need_file(args.taxonomy, "taxonomy"))
    vocab = _vocab_for(cfg, entries)
    records = encode_records(entries, vocab, cfg.attr_model.max_seq_len)
    rows = []
    for drop in (None, *INPUT_GROUPS):
        result = run_protocol(records, taxonomy, vocab.product_types, vocab.sizes(), cfg.attr_model,
                              cfg.train_plan(), drop=drop, eval_splits=("test",))
        for m in result.metrics.values():
            rows.append([m.task, drop or "none", m.n_samples, m.weighted_f1, m.accuracy, m.baseline_accuracy])
        print(f"drop={drop or 'none'}: mean weighted F1 "
              f"{np.mean([m.weighted_f1 for m in result.metrics.values()]):.4f}")
    order = {d: i for i, d in enumerate(("none", *INPUT_GROUPS))}
    rows.sort(key=lambda r: (r[0], order[r[1]]))
    out = Path(args.out)
    _write_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)
    cfg.snapshot(out)
    return 0


# -- recommender ----------------------------------------------------------


def cmd_rec_train(args) -> int:
    cfg = _config(args)
    mode = resolve_mode(args.mode)
    entries = _catalogue(args.catalogue)
    vocab = _vocab_for(cfg, entries)
    split = _split(args, cfg, entries)
    features = _features(args, entries, vocab, split)
    model, history = train_rec(split, features, cfg.rec_config(), mode)
    out = Path(args.out)
    model.save(out)
    features.save(out / "features")
    _write_json(out / "windows.json", split.windows.to_iso())
    _write_csv(out / "history.csv", ["epoch", "loss", "val_precision"],
               [[e + 1, loss, p] for e, (loss, p) in enumerate(zip(history.epoch_loss, history.val_precision))])
    cfg.snapshot(out)
    print(f"{mode}: {history.n_instances} training instances ({history.n_skipped} skipped), "
          f"best epoch {history.best_epoch}")
    return 0


def _summaries(rows, runs: int) -> list[list]:
    out = []
    for name in EVAL_MODELS:
        mine = [r for r in rows if r[0] == name]
        p = np.array([r[1] for r in mine])
        r = np.array([r[2] for r in mine])
        out.append([SHORT_MODE[name], p.mean(), p.std(), r.mean(), r.std(), mine[0][3], runs])
    return out


def cmd_rec_eval(args) -> int:
    cfg = _config(args)
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    ev = cfg.rec_eval
    candidates = args.candidates or ev.candidates
    exclude_seen = ev.exclude_seen and not args.include_seen
    entries = _catalogue(args.catalogue)
    vocab = _vocab_for(cfg, entries)
    split = _split(args, cfg, entries)
    features = _features(args, entries, vocab, split)
    cold = split.cold_items()
    subsets = {"all": None}
    if cold.size:
        subsets["cold_start"] = cold
    per_run: dict[str, list] = {s: [] for s in subsets}
    run_rows = []
    root = RngState(cfg.seed)
    for run in range(args.runs):
        seed = cfg.seed if args.runs == 1 else root.child_seed("run", run)
        models = {"popularity": None}
        for mode in MODES:
            models[mode], _ = train_rec(split, features, cfg.rec_config(seed), mode)
        for sname, subset in subsets.items():
            for name in EVAL_MODELS:
                s = evaluate_ranking(models[name], split, features, ev.k, candidates, exclude_seen,
                                     tuple(ev.relevant_kinds), subset, name)
                per_run[sname].append([name, s.precision, s.recall, s.n_customers])
                run_rows.append([run, seed, sname, SHORT_MODE[name], s.precision, s.recall, s.n_customers])
        log.info("run %d done", run)
    out = Path(args.out)
    _write_csv(out / "runs.csv", ["run", "seed", "subset", "model", "precision", "recall", "n_customers"], run_rows)
    for sname, rows in per_run.items():
        table = _summaries(rows, args.runs)
        _write_csv(out / f"ranking_{sname}.csv", RANKING_COLUMNS, table)
        print(f"[{sname}] prec@{ev.k} / recall@{ev.k} (mean +- std over {args.runs} run(s))")
        for row in table:
            print(f"  {row[0]:<11} {row[1]:.5f} +- {row[2]:.5f}   {row[3]:.5f} +- {row[4]:.5f}")
    cfg.snapshot(out)
    return 0


def _load_rec_dir(directory) -> tuple[RecModel, ItemFeatures]:
    d = _need_file(directory, "model directory")
    for name in ("rec_model.bin", "rec_model.json", "registry.json", "features.npy", "features.json"):
        _need_file(d / name, "checkpoint file")
    model = RecModel.load(d)
    features = ItemFeatures.load(d / "features")
    if features.product_ids != model.product_ids:
        raise ValidationError("feature rows and model registry disagree")
    return model, features


def cmd_rec_similar(args) -> int:
    model, features = _load_rec_dir(args.model)
    if args.n < 1:
        raise UsageError("-n must be positive")
    modes = [resolve_mode(m) for m in args.modes.split(",")] if args.modes else \
        (list(MODES) if model.mode == "hybrid" else [model.mode])
    index = {pid: i for i, pid in enumerate(model.product_ids)}
    items = [s.strip() for s in args.items.split(",") if s.strip()]
    unknown = [s for s in items if s not in index]
    if unknown:
        raise ValidationError(f"unknown product id(s): {', '.join(unknown)}")
    rows = []
    for pid in items:
        for mode in modes:
            for rank, hit in enumerate(model.similar_items(index[pid], features, mode, args.n), start=1):
                rows.append([pid, SHORT_MODE[mode], rank, hit.product_id, hit.score])
    header = ["seed_product_id", "mode", "rank", "product_id", "similarity"]
    if args.out:
        _write_csv(Path(args.out), header, rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return 0


def cmd_rec_recommend(args) -> int:
    model, features = _load_rec_dir(args.model)
    if args.n < 1:
        raise UsageError("-n must be positive")
    windows = Windows.from_iso(**read_mapping(_need_file(Path(args.model) / "windows.json", "windows file")))
    log_, _ = load_interactions(_need_file(args.interactions, "interactions file"), model.product_ids)
    history = log_.subset(log_.ts < windows.test_start)
    wanted = None
    if args.customers:
        wanted = {c.strip() for c in args.customers.split(",") if c.strip()}
    rows = []
    for c, pos in sorted(history.by_customer().items(), key=lambda kv: history.customer_ids[kv[0]]):
        cid = history.customer_ids[c]
        if wanted is not None and cid not in wanted:
            continue
        seen = np.unique(history.item[pos])
        recs = model.recommend(seen.tolist(), features, args.n, exclusions=seen.tolist())
        rows.extend([cid, rank, r.product_id, r.score] for rank, r in enumerate(recs, start=1))
    if wanted is not None:
        missing = sorted(wanted - {history.customer_ids[c] for c in history.by_customer()})
        if missing:
            log.warning("no training history for customer(s): %s", ", ".join(missing))
    _write_csv(Path(args.out), ["customer_id", "rank", "product_id", "score"], rows)
    print(f"wrote {len(rows)} recommendations to {args.out}")
    return 0


# -- argument parsing -----------------------------------------------------


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    if config:
        p.add_argument("--config", help="YAML or JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")


def _rec_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--catalogue", required=True)
    p.add_argument("--interactions", required=True)
    p.add_argument("--windows", help="JSON with train_start, positive_start, test_start, test_end")
    p.add_argument("--predictions", help="attr-predict JSONL used to fill missing attribute features")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modabric", description="Product attribute models and hybrid recommenders.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="write a seeded synthetic catalogue and interaction log")
    p.add_argument("--spec", help="YAML or JSON synthetic spec (defaults when omitted)")
    p.add_argument("--out", required=True)
    _common(p, config=False)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("attr-train", help="train the multi-task attribute model")
    p.add_argument("--catalogue", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--drop", choices=INPUT_GROUPS, help="zero one input group at the fusion layer")
    _common(p)
    p.set_defaults(func=cmd_attr_train)

    p = sub.add_parser("attr-eval", help="per-attribute metrics table and confusion matrices")
    p.add_argument("--model", required=True)
    p.add_argument("--catalogue", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--normalise", action="store_true", help="row-normalise confusion matrices")
    p.set_defaults(func=cmd_attr_eval)

    p = sub.add_parser("attr-predict", help="predict attribute labels for a catalogue")
    p.add_argument("--model", required=True)
    p.add_argument("--catalogue", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--missing-only", action="store_true", help="only predict labels the catalogue lacks")
    p.set_defaults(func=cmd_attr_predict)

    p = sub.add_parser("attr-ablate", help="retrain with each input group dropped in turn")
    p.add_argument("--catalogue", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_attr_ablate)

    p = sub.add_parser("rec-train", help="train a recommender with the WMRB loss")
    _rec_inputs(p)
    p.add_argument("--mode", required=True, help="hybrid, cf or content")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_rec_train)

    p = sub.add_parser("rec-eval", help="popularity, cf, content and hybrid over several seeds")
    _rec_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--candidates", choices=("live", "all"), help="items ranked at test time")
    p.add_argument("--include-seen", action="store_true", help="do not exclude already-interacted items")
    _common(p)
    p.set_defaults(func=cmd_rec_eval)

    p = sub.add_parser("rec-similar", help="nearest items by cosine similarity, per mode")
    p.add_argument("--model", required=True)
    p.add_argument("--items", required=True, help="comma-separated seed product ids")
    p.add_argument("-n", type=int, default=3)
    p.add_argument("--modes", help="comma-separated subset of hybrid,cf,content")
    p.add_argument("--out", help="also write the table to this CSV")
    p.set_defaults(func=cmd_rec_similar)

    p = sub.add_parser("rec-recommend", help="top-N recommendations per customer")
    p.add_argument("--model", required=True)
    p.add_argument("--interactions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--customers", help="comma-separated customer ids (default: all)")
    p.set_defaults(func=cmd_rec_recommend)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.verbose == 0:
        warnings.simplefilter("default")
    try:
        return args.func(args)
    except (UsageError, ValidationError) as exc:
        print(f"modabric: error: {exc}", file=sys.stderr)
        return 2
    except (ModabricError, ValueError, OSError, FloatingPointError) as exc:
        print(f"modabric: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
