"""Instance/negative sampling, WMRB training, and ranking evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..compute import kernels
from ..compute.params import sgd_step
from ..compute.rng import RngState
from ..data.interactions import KINDS, InteractionLog, InteractionSet
from ..errors import NonFiniteError, SamplingError, ValidationError
from ..metrics import mean_ranking_metrics, precision_recall_at_k
from .features import ItemFeatures
from .model import RecModel, RecTrainConfig, build_rec_model, popularity_ranking, resolve_mode

log = logging.getLogger(__name__)

SKIP = None


@dataclass
class CustomerTimeline:
    """One customer's training-window events in time order."""
    customer: int
    items: np.ndarray
    ts: np.ndarray


def timelines(log_: InteractionLog) -> dict[int, CustomerTimeline]:
    return {c: CustomerTimeline(c, log_.item[pos], log_.ts[pos]) for c, pos in log_.by_customer().items()}


def sample_training_instance(timeline: CustomerTimeline, positive_item: int, positive_ts: int,
                             n_inputs: int, rng: np.random.Generator):
    """(customer, inputs, positive) with inputs drawn without replacement from
    events strictly before the positive; SKIP when fewer than ``n_inputs`` exist."""
    before = timeline.items[timeline.ts < positive_ts]
    if before.size < n_inputs:
        return SKIP
    pick = rng.choice(before.size, size=n_inputs, replace=False)
    return timeline.customer, before[np.sort(pick)], int(positive_item)


def sample_negatives(pool: np.ndarray, interacted, z: int, rng: np.random.Generator, n_items: int | None = None):
    """``z`` distinct items drawn uniformly from ``pool`` minus ``interacted``."""
    interacted = np.unique(np.asarray(list(interacted), dtype=np.int64))
    pool = np.asarray(pool, dtype=np.int64)
    n_items = int(max(pool.max(initial=-1), interacted.max(initial=-1)) + 1) if n_items is None else n_items
    try:
        return kernels.sample_negatives_batch(pool, np.array([0, interacted.size]), interacted,
                                              rng.random((1, z)), n_items)[0]
    except ValueError as exc:
        raise SamplingError(f"{exc}; use a smaller z") from None


@dataclass
class TrainingInstances:
    customers: np.ndarray
    positives: np.ndarray
    positive_ts: np.ndarray

    def __len__(self) -> int:
        return int(self.positives.shape[0])


@dataclass
class RecHistory:
    epoch_loss: list[float] = field(default_factory=list)
    val_precision: list[float] = field(default_factory=list)
    best_epoch: int = 0
    n_instances: int = 0
    n_skipped: int = 0


def validation_customers(split: InteractionSet, fraction: float, seed: int) -> np.ndarray:
    customers = np.unique(split.train.customer)
    rng = RngState(seed).stream("validation")
    n_val = max(1, int(round(fraction * customers.size)))
    return np.sort(rng.permutation(customers)[:n_val])


def _val_eval(model, split, features, val_customers, k):
    hist = timelines(split.history)
    pos = timelines(split.positive)
    cand = split.train_items()
    users, rel = [], []
    for c in val_customers:
        c = int(c)
        if c in hist and c in pos:
            users.append(hist[c].items)
            rel.append(pos[c].items)
    if not users:
        return 0.0
    V = model.item_vectors(features, cand)
    results = []
    for items, relevant in zip(users, rel):
        vu = model.item_vectors(features, items).mean(axis=0)
        scores = V @ vu
        scores[np.isin(cand, items)] = -np.inf
        ranked = cand[np.argsort(-scores, kind="stable")[:k]]
        results.append(precision_recall_at_k(ranked.tolist(), relevant.tolist(), k))
    return mean_ranking_metrics(results)[0]


def train_rec(split: InteractionSet, features: ItemFeatures, config: RecTrainConfig,
              mode: str = "hybrid") -> tuple[RecModel, RecHistory]:
    """Mini-batch SGD on the WMRB loss; returns the best-validation checkpoint.

    Positives are the positive-window events of non-validation customers;
    each epoch redraws every instance's inputs and negatives.
    """
    mode = resolve_mode(mode)
    if features.n_items != split.n_items:
        raise ValidationError(f"features cover {features.n_items} items, registry has {split.n_items}")
    root = RngState(config.seed)
    model = build_rec_model(features.product_ids, features.dim, config.k, mode, root.child_seed("init"),
                            config.content_hidden)
    val = validation_customers(split, config.validation_fraction, config.seed)
    train_tl = timelines(split.train)
    is_val = np.isin(split.positive.customer, val)
    inst = TrainingInstances(split.positive.customer[~is_val], split.positive.item[~is_val],
                             split.positive.ts[~is_val])
    pool = split.negative_pool(config.negative_slack_days)
    interacted = {c: np.unique(tl.items) for c, tl in train_tl.items()}
    history = RecHistory()

    rng = root.stream("rec-train")
    best_state, best_val, since_best = model.store.state(), -1.0, 0
    for epoch in range(1, config.max_epochs + 1):
        rows = []
        for c, item, ts in zip(inst.customers, inst.positives, inst.positive_ts):
            drawn = sample_training_instance(train_tl[int(c)], item, ts, config.inputs_per_customer, rng)
            if drawn is not SKIP:
                rows.append(drawn)
        if epoch == 1:
            history.n_instances, history.n_skipped = len(rows), len(inst) - len(rows)
            if not rows:
                raise ValidationError("no trainable customers: every positive has fewer than "
                                      f"{config.inputs_per_customer} preceding interactions")
        order = rng.permutation(len(rows))
        losses = []
        for start in range(0, len(rows), config.batch_size):
            batch = [rows[j] for j in order[start:start + config.batch_size]]
            customers = [b[0] for b in batch]
            excl = [interacted[c] for c in customers]
            indptr = np.concatenate([[0], np.cumsum([e.size for e in excl])])
            try:
                negs = kernels.sample_negatives_batch(pool, indptr, np.concatenate(excl), rng.random((len(batch), config.z)),
                                                      split.n_items)
            except ValueError as exc:
                raise SamplingError(f"{exc}; use a smaller z") from None
            loss = model.wmrb_batch(np.stack([b[1] for b in batch]), np.array([b[2] for b in batch]), negs, features)
            if not math.isfinite(loss):
                raise NonFiniteError(f"non-finite WMRB loss in epoch {epoch}")
            sgd_step(model.store, config.learning_rate, config.clip_norm or None)
            losses.append(loss * len(batch))
        history.epoch_loss.append(float(sum(losses) / len(rows)))
        score = _val_eval(model, split, features, val, config.eval_k)
        history.val_precision.append(score)
        log.info("epoch %d: loss %.4f, validation prec@%d %.5f", epoch, history.epoch_loss[-1], config.eval_k, score)
        if score > best_val:
            best_val, best_state, since_best, history.best_epoch = score, model.store.state(), 0, epoch
        else:
            since_best += 1
            if config.patience and since_best >= config.patience:
                break
    model.store.load_state(best_state)
    return model, history


@dataclass
class RankingSummary:
    name: str
    precision: float
    recall: float
    n_customers: int


def _eval_customers(split: InteractionSet, relevant_kinds: Sequence[str], subset: np.ndarray | None):
    codes = [KINDS.index(k) for k in relevant_kinds]
    test = split.test
    mask = np.isin(test.kind, codes)
    if subset is not None:
        mask &= np.isin(test.item, subset)
    relevant: dict[int, set] = {}
    for c, i in zip(test.customer[mask], test.item[mask]):
        relevant.setdefault(int(c), set()).add(int(i))
    hist = {c: np.unique(tl.items) for c, tl in timelines(split.train).items()}
    return relevant, hist


def candidate_items(split: InteractionSet, candidates: str = "live", subset: np.ndarray | None = None) -> np.ndarray:
    if candidates == "live":
        cand = split.live_items()
    elif candidates == "all":
        cand = np.arange(split.n_items)
    else:
        raise ValidationError(f"unknown candidate set {candidates!r}; expected live or all")
    if subset is not None:
        cand = cand[np.isin(cand, subset)]
    return cand


def evaluate_ranking(model: RecModel | None, split: InteractionSet, features: ItemFeatures | None, k: int = 10,
                     candidates: str = "live", exclude_seen: bool = True,
                     relevant_kinds: Sequence[str] = ("purchase",), subset: np.ndarray | None = None,
                     name: str | None = None) -> RankingSummary:
    """Mean precision/recall@k over test customers with relevant items.

    ``model=None`` ranks by training popularity. Customers need a training
    history (cold users are excluded for every method alike) and at least
    one relevant test item.
    """
    relevant, hist = _eval_customers(split, relevant_kinds, subset)
    cand = candidate_items(split, candidates, subset)
    if model is None:
        order = popularity_ranking(split.train)
        rank_of = np.empty(split.n_items, dtype=np.int64)
        rank_of[order] = np.arange(split.n_items)
        base = cand[np.argsort(rank_of[cand], kind="stable")]
    else:
        V = model.item_vectors(features, cand)
    results = []
    for c in sorted(relevant):
        if c not in hist:
            continue
        seen = hist[c]
        if model is None:
            ranked = base[~np.isin(base, seen)] if exclude_seen else base
            ranked = ranked[:k]
        else:
            vu = model.item_vectors(features, seen).mean(axis=0)
            scores = V @ vu
            keep = ~np.isin(cand, seen) if exclude_seen else np.ones(cand.size, dtype=bool)
            sub, sc = cand[keep], scores[keep]
            ranked = sub[np.argsort(-sc, kind="stable")[:k]]
        results.append(precision_recall_at_k(ranked.tolist(), relevant[c], k))
    p, r, n = mean_ranking_metrics(results)
    label = name or ("popularity" if model is None else model.mode)
    return RankingSummary(label, p, r, n)
