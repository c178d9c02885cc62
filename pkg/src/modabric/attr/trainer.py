"""Per-attribute datasets, round-robin SGD training, evaluation and ablation."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from ..compute.params import sgd_step
from ..compute.rng import RngState
from ..data.catalogue import CatalogueArrays, ProductRecord, TaskDef
from ..data.vocab import Vocabulary
from ..errors import NonFiniteError, ValidationError
from ..metrics import ConfusionMatrix, accuracy, confusion, weighted_f1
from .model import AttrModel, AttrModelConfig, TaskSpec, build_attr_model, class_weights_from_counts

log = logging.getLogger(__name__)


class DroppedTaskWarning(UserWarning):
    """A task was left with fewer than two classes after support filtering."""


@dataclass
class TaskDataset:
    """One attribute's labelled samples, as positions into shared catalogue arrays."""
    task: TaskSpec
    arrays: CatalogueArrays
    index: np.ndarray
    labels: np.ndarray
    is_train: np.ndarray

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        if which not in ("train", "test"):
            raise ValueError(f"unknown split {which!r}")
        mask = self.is_train if which == "train" else ~self.is_train
        return self.index[mask], self.labels[mask]

    def class_counts(self, which: str | None = None) -> np.ndarray:
        labels = self.labels if which is None else self.split(which)[1]
        return np.bincount(labels, minlength=self.task.n_classes)


@dataclass
class TrainPlan:
    cycles: int = 1000
    eval_every: int = 100
    seed: int = 0
    learning_rate: float = 0.01
    batch_size: int = 64
    min_support: int = 500
    split_fraction: float = 0.9

    def __post_init__(self):
        if self.cycles < 1 or self.eval_every < 1 or self.batch_size < 1 or self.min_support < 1:
            raise ValidationError("cycles, eval_every, batch_size and min_support must be positive")
        if self.eval_every > self.cycles:
            raise ValidationError("eval_every must not exceed cycles")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not 0 < self.split_fraction < 1:
            raise ValidationError("split_fraction must be in (0, 1)")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainPlan":
        unknown = sorted(set(raw) - {f.name for f in fields(cls)})
        if unknown:
            raise ValidationError(f"unknown train-plan key(s): {', '.join(unknown)}")
        return cls(**raw)


def product_split(n_products: int, split_fraction: float, seed: int) -> np.ndarray:
    """Boolean train mask over products from a seeded shuffle."""
    perm = RngState(seed).stream("split").permutation(n_products)
    is_train = np.zeros(n_products, dtype=bool)
    is_train[perm[:int(round(split_fraction * n_products))]] = True
    return is_train


def build_task_datasets(catalogue: Sequence[ProductRecord], taxonomy: Sequence[TaskDef], type_vocab: Vocabulary,
                        min_support: int = 500, split_fraction: float = 0.9, seed: int = 0,
                        arrays: CatalogueArrays | None = None) -> list[TaskDataset]:
    """One dataset per taxonomy entry.

    Labels with fewer than ``min_support`` samples (over both splits) are
    removed from that task only. The train/test split is drawn per product,
    so a product is on the same side for every task.
    """
    if not taxonomy:
        raise ValidationError("taxonomy is empty")
    arrays = arrays if arrays is not None else CatalogueArrays.from_records(catalogue)
    is_train = product_split(len(catalogue), split_fraction, seed)
    out = []
    for td in taxonomy:
        types = frozenset(type_vocab.stoi[t] for t in td.applicable_product_types if t in type_vocab)
        support = td.min_support if td.min_support is not None else min_support
        idx, raw = [], []
        for i, rec in enumerate(catalogue):
            lab = rec.attribute_labels.get(td.name)
            if lab is not None and rec.product_type_id in types:
                idx.append(i)
                raw.append(lab)
        values, counts = np.unique(np.array(raw, dtype=object), return_counts=True) if raw else ([], [])
        keep = sorted(str(v) for v, c in zip(values, counts) if c >= support)
        if len(keep) < 2:
            msg = f"task {td.name!r} dropped: {len(keep)} label(s) reach min_support={support}"
            log.warning(msg)
            warnings.warn(msg, DroppedTaskWarning, stacklevel=2)
            continue
        lookup = {v: k for k, v in enumerate(keep)}
        sel = [j for j, lab in enumerate(raw) if lab in lookup]
        index = np.array([idx[j] for j in sel], dtype=np.int64)
        labels = np.array([lookup[raw[j]] for j in sel], dtype=np.int64)
        mask = is_train[index]
        counts = np.bincount(labels[mask], minlength=len(keep))
        task = TaskSpec(td.name, keep, types, class_weights_from_counts(counts))
        out.append(TaskDataset(task, arrays, index, labels, mask))
    return out


@dataclass
class TaskMetrics:
    task: str
    n_samples: int
    n_classes: int
    weighted_f1: float
    accuracy: float
    baseline_accuracy: float
    confusion_matrix: ConfusionMatrix
    predictions: np.ndarray = field(repr=False)


def evaluate(model: AttrModel, datasets: Sequence[TaskDataset], split: str = "test") -> dict[str, TaskMetrics]:
    out = {}
    for ds in datasets:
        idx, labels = ds.split(split)
        if idx.size == 0:
            raise ValidationError(f"task {ds.task.name!r} has an empty {split} split")
        pred = np.argmax(model.predict_proba(ds.arrays.take(idx), ds.task.name), axis=1)
        vocab = ds.task.label_vocab
        majority = np.bincount(labels, minlength=len(vocab)).max() / labels.size
        out[ds.task.name] = TaskMetrics(ds.task.name, int(labels.size), len(vocab), weighted_f1(labels, pred, vocab),
                                        accuracy(labels, pred), float(majority), confusion(labels, pred, vocab), pred)
    return out


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)
    steps: dict[str, int] = field(default_factory=dict)
    losses: dict[str, list[float]] = field(default_factory=dict)

    def mean_f1(self, cycle: int, split: str) -> float:
        vals = [r["weighted_f1"] for r in self.records if r["cycle"] == cycle and r["split"] == split]
        return float(np.mean(vals))

    def cycles(self) -> list[int]:
        return sorted({r["cycle"] for r in self.records})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cycle", "task", "split", "weighted_f1", "accuracy"])
            for r in self.records:
                w.writerow([r["cycle"], r["task"], r["split"], repr(r["weighted_f1"]), repr(r["accuracy"])])


def train(model: AttrModel, datasets: Sequence[TaskDataset], plan: TrainPlan,
          eval_splits: Sequence[str] = ("train", "test")) -> TrainHistory:
    """Round-robin SGD: each cycle visits every task once, in a fresh random order.

    Each visit draws ``batch_size`` training samples of that task uniformly
    with replacement and takes one plain SGD step. Metrics are snapshotted
    after cycle 1, every ``eval_every`` cycles, and after the last cycle.
    """
    if not datasets:
        raise ValidationError("no task datasets to train on")
    missing = [d.task.name for d in datasets if d.task.name not in model.tasks]
    if missing:
        raise ValidationError(f"model has no heads for {missing}")
    rng = RngState(plan.seed).stream("round-robin")
    history = TrainHistory(steps={d.task.name: 0 for d in datasets}, losses={d.task.name: [] for d in datasets})
    train_sets = [d.split("train") for d in datasets]
    for ds, (idx, _) in zip(datasets, train_sets):
        if idx.size == 0:
            raise ValidationError(f"task {ds.task.name!r} has no training samples")
    snapshots = {1, plan.cycles} | set(range(plan.eval_every, plan.cycles + 1, plan.eval_every))
    for cycle in range(1, plan.cycles + 1):
        for t in rng.permutation(len(datasets)):
            ds = datasets[t]
            idx, labels = train_sets[t]
            pick = rng.integers(0, idx.size, size=plan.batch_size)
            loss = model.loss_and_grad(ds.arrays.take(idx[pick]), ds.task.name, labels[pick])
            if not math.isfinite(loss):
                raise NonFiniteError(f"non-finite loss at cycle {cycle}, task {ds.task.name!r}")
            sgd_step(model.store, plan.learning_rate)
            history.steps[ds.task.name] += 1
            history.losses[ds.task.name].append(loss)
        if cycle in snapshots:
            for split in eval_splits:
                for name, m in evaluate(model, datasets, split).items():
                    history.records.append({"cycle": cycle, "task": name, "split": split,
                                            "weighted_f1": m.weighted_f1, "accuracy": m.accuracy})
            if eval_splits:
                log.info("cycle %d: mean %s weighted F1 %.4f", cycle, eval_splits[-1],
                         history.mean_f1(cycle, eval_splits[-1]))
    return history


@dataclass
class ProtocolResult:
    model: AttrModel
    datasets: list[TaskDataset]
    history: TrainHistory
    metrics: dict[str, TaskMetrics]


def run_protocol(records: Sequence[ProductRecord], taxonomy: Sequence[TaskDef], type_vocab: Vocabulary,
                 vocab_sizes: dict, config: AttrModelConfig, plan: TrainPlan, drop: str | None = None,
                 eval_splits: Sequence[str] = ("test",)) -> ProtocolResult:
    """Build datasets, train from scratch, evaluate on the test split."""
    arrays = CatalogueArrays.from_records(records)
    datasets = build_task_datasets(records, taxonomy, type_vocab, plan.min_support, plan.split_fraction,
                                   plan.seed, arrays=arrays)
    if not datasets:
        raise ValidationError("every task was dropped by min_support filtering")
    model = build_attr_model(config, [d.task for d in datasets], vocab_sizes, arrays.shots.shape[2],
                             seed=plan.seed, drop=drop)
    history = train(model, datasets, plan, eval_splits)
    return ProtocolResult(model, datasets, history, evaluate(model, datasets, "test"))


def ablate(records, taxonomy, type_vocab, vocab_sizes, config, plan, drop: str | None) -> dict[str, TaskMetrics]:
    """Train and evaluate with one input group zeroed at the fusion layer (``None`` = full model)."""
    from .model import INPUT_GROUPS
    if drop is not None and drop not in INPUT_GROUPS:
        raise ValidationError(f"unknown input group {drop!r}; expected one of {INPUT_GROUPS}")
    return run_protocol(records, taxonomy, type_vocab, vocab_sizes, config, plan, drop=drop).metrics
