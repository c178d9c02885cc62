"""Hybrid item vectors, averaged user vectors, the WMRB loss, and ranking.

An item vector is the sum of a collaborative embedding row and a content
projection of the item's features::

    v_i = cf[i] + content(f_i)        (hybrid)
    v_i = cf[i]                       (cf_only)
    v_i = content(f_i)                (content_only)

A customer is the mean of the vectors of the items they interacted with,
and the score is the dot product.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..compute import kernels, ops
from ..compute.checkpoint import load_params, save_params
from ..compute.params import EMBEDDING_INIT, ParameterStore, glorot_limit, uniform
from ..compute.rng import RngState
from ..errors import ColdUserError, DegenerateVectorError, SamplingError, ValidationError

MODES = ("hybrid", "cf_only", "content_only")
MODE_ALIASES = {"cf": "cf_only", "content": "content_only", "hybrid": "hybrid",
                "cf_only": "cf_only", "content_only": "content_only"}
WMRB_EPS = 1e-8


def resolve_mode(mode: str) -> str:
    try:
        return MODE_ALIASES[mode]
    except KeyError:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {sorted(MODE_ALIASES)}") from None


@dataclass
class RecTrainConfig:
    k: int = 200
    z: int = 100
    batch_size: int = 1024
    max_epochs: int = 100
    inputs_per_customer: int = 5
    validation_fraction: float = 0.10
    learning_rate: float = 0.05
    seed: int = 0
    patience: int = 0
    content_hidden: int = 0
    negative_slack_days: float = 31.0
    eval_k: int = 10
    clip_norm: float = 0.0

    def __post_init__(self):
        for name in ("k", "z", "batch_size", "max_epochs", "inputs_per_customer", "eval_k"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ValidationError("validation_fraction must be in (0, 1)")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.patience < 0 or self.content_hidden < 0 or self.clip_norm < 0:
            raise ValidationError("patience, content_hidden and clip_norm must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "RecTrainConfig":
        unknown = sorted(set(raw) - {f.name for f in fields(cls)})
        if unknown:
            raise ValidationError(f"unknown recommender key(s): {', '.join(unknown)}")
        return cls(**raw)


@dataclass(frozen=True)
class ScoredItem:
    index: int
    product_id: str
    score: float


class RecModel:
    """Collaborative table + content network over a fixed item registry.

    Parameters: ``rec/cf`` (n_items, k); ``rec/content/W``, ``rec/content/b``
    for the single dense map; with ``content_hidden`` > 0 a relu layer
    ``rec/content/W1``, ``rec/content/b1`` comes first.
    """

    def __init__(self, store: ParameterStore, product_ids: Sequence[str], k: int, n_features: int,
                 mode: str = "hybrid", content_hidden: int = 0):
        self.store = store
        self.product_ids = list(product_ids)
        self.k = int(k)
        self.n_features = int(n_features)
        self.mode = resolve_mode(mode)
        self.content_hidden = int(content_hidden)

    @property
    def n_items(self) -> int:
        return len(self.product_ids)

    @property
    def uses_cf(self) -> bool:
        return self.mode in ("hybrid", "cf_only")

    @property
    def uses_content(self) -> bool:
        return self.mode in ("hybrid", "content_only")

    def _mode(self, mode):
        return self.mode if mode is None else resolve_mode(mode)

    def _check_items(self, items: np.ndarray) -> None:
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise IndexError(f"item index out of range [0, {self.n_items})")

    # -- item / user vectors ---------------------------------------------

    def content_vectors(self, feats: np.ndarray, cache: dict | None = None) -> np.ndarray:
        s = self.store
        if self.content_hidden:
            h = ops.dense_forward(feats, s["rec/content/W1"], s["rec/content/b1"], "relu")
            out = ops.dense_forward(h, s["rec/content/W"], s["rec/content/b"])
            if cache is not None:
                cache["hidden"] = h
            return out
        return ops.dense_forward(feats, s["rec/content/W"], s["rec/content/b"])

    def item_vectors(self, features, items=None, mode: str | None = None, cache: dict | None = None) -> np.ndarray:
        """Vectors for ``items`` (all items when None) in the given mode."""
        mode = self._mode(mode)
        fm = features.matrix if hasattr(features, "matrix") else np.asarray(features)
        items = np.arange(self.n_items) if items is None else np.asarray(items, dtype=np.int64)
        self._check_items(items)
        out = np.zeros((items.size, self.k), dtype=self.store.dtype)
        if mode in ("hybrid", "cf_only"):
            out += self.store["rec/cf"][items]
        if mode in ("hybrid", "content_only"):
            out += self.content_vectors(fm[items], cache)
        return out

    def item_vector(self, item_index: int, features, mode: str | None = None) -> np.ndarray:
        return self.item_vectors(features, np.array([item_index]), mode)[0]

    def user_vector(self, interacted_items, features, mode: str | None = None) -> np.ndarray:
        items = np.asarray(list(interacted_items), dtype=np.int64)
        if items.size == 0:
            raise ColdUserError("customer has no interactions; fall back to popularity")
        return self.item_vectors(features, items, mode).mean(axis=0)

    def score(self, v_u, item_index: int, features, mode: str | None = None) -> float:
        return float(np.dot(v_u, self.item_vector(item_index, features, mode)))

    # -- WMRB ---------------------------------------------------------------

    def wmrb_batch(self, inputs, positives, negatives, features, accumulate: bool = True) -> float:
        """Mean WMRB loss over a batch; gradients go into the store when ``accumulate``.

        ``inputs`` (B, n_in) item indices averaged into the user vector,
        ``positives`` (B,), ``negatives`` (B, z).
        """
        inputs = np.asarray(inputs, dtype=np.int64)
        positives = np.asarray(positives, dtype=np.int64)
        negatives = np.asarray(negatives, dtype=np.int64)
        B = positives.shape[0]
        if inputs.ndim != 2 or inputs.shape[0] != B or negatives.ndim != 2 or negatives.shape[0] != B:
            raise ValidationError("inputs, positives and negatives disagree on batch size")
        if np.any(negatives == positives[:, None]):
            raise SamplingError("a positive item appears among its negatives")
        rows = np.unique(np.concatenate([inputs.ravel(), positives, negatives.ravel()]))
        self._check_items(rows)
        pos_in_rows = np.searchsorted(rows, positives)
        inp_in_rows = np.searchsorted(rows, inputs)
        neg_in_rows = np.searchsorted(rows, negatives)
        fm = features.matrix if hasattr(features, "matrix") else np.asarray(features)
        cache: dict = {}
        V = self.item_vectors(fm, rows, cache=cache)
        vu = V[inp_in_rows].mean(axis=1)                        # (B, k)
        vi = V[pos_in_rows]                                      # (B, k)
        vj = V[neg_in_rows]                                      # (B, z, k)
        s_pos = np.einsum("bk,bk->b", vu, vi)
        s_neg = np.einsum("bk,bzk->bz", vu, vj)
        margin = 1.0 - s_pos[:, None] + s_neg
        hinge = np.maximum(margin, 0.0)
        total = hinge.sum(axis=1) + WMRB_EPS
        loss = float(np.log(total).mean())
        if not accumulate:
            return loss
        # d loss / d s_neg = 1[margin > 0] / total / B ; d / d s_pos = -sum of those
        g_neg = (margin > 0) / total[:, None] / B
        g_pos = -g_neg.sum(axis=1)
        g_vu = g_pos[:, None] * vi + np.einsum("bz,bzk->bk", g_neg, vj)
        dV = np.zeros_like(V)
        kernels.scatter_add_rows(dV, pos_in_rows, g_pos[:, None] * vu)
        kernels.scatter_add_rows(dV, neg_in_rows.ravel(), (g_neg[:, :, None] * vu[:, None, :]).reshape(-1, self.k))
        n_in = inputs.shape[1]
        kernels.scatter_add_rows(dV, inp_in_rows.ravel(),
                                 np.repeat(g_vu / n_in, n_in, axis=0))
        self._backward_items(rows, fm[rows], dV, cache)
        return loss

    def _backward_items(self, rows, feats, dV, cache) -> None:
        s = self.store
        if self.uses_cf:
            s.accumulate_rows("rec/cf", rows, dV)
        if self.uses_content:
            if self.content_hidden:
                h = cache["hidden"]
                gh, gW, gb = ops.dense_backward(h, s["rec/content/W"], s["rec/content/b"], dV)
                s.accumulate("rec/content/W", gW)
                s.accumulate("rec/content/b", gb)
                _, gW1, gb1 = ops.dense_backward(feats, s["rec/content/W1"], s["rec/content/b1"], gh, "relu", out=h)
                s.accumulate("rec/content/W1", gW1)
                s.accumulate("rec/content/b1", gb1)
            else:
                s.accumulate("rec/content/W", feats.T @ dV)
                s.accumulate("rec/content/b", dV.sum(axis=0))

    def wmrb_loss(self, customer_inputs, positive_item: int, negatives, features):
        """Single-instance WMRB loss and gradients (name -> dense gradient array)."""
        self.store.zero_grad()
        loss = self.wmrb_batch(np.asarray(customer_inputs)[None], np.array([positive_item]),
                               np.asarray(negatives)[None], features)
        grads = {n: self.store.grads[n].copy() for n in self.store}
        self.store.zero_grad()
        return loss, grads

    # -- ranking ------------------------------------------------------------

    def recommend(self, history, features, n: int, exclusions: Iterable[int] = (),
                  candidates=None, popularity: np.ndarray | None = None,
                  mode: str | None = None) -> list[ScoredItem]:
        """Top-``n`` items by score, ties by ascending index.

        An empty history falls back to ``popularity`` (a ranking from
        :func:`popularity_ranking`) when given.
        """
        if n <= 0:
            raise ValidationError("N must be positive")
        cand = np.arange(self.n_items) if candidates is None else np.unique(np.asarray(candidates, dtype=np.int64))
        excl = np.fromiter(exclusions, dtype=np.int64)
        cand = cand[~np.isin(cand, excl)]
        history = list(history)
        if not history:
            if popularity is None:
                raise ColdUserError("empty history and no popularity fallback")
            ranked = [int(i) for i in popularity if i in set(cand.tolist())][:n]
            return [ScoredItem(i, self.product_ids[i], float("nan")) for i in ranked]
        vu = self.user_vector(history, features, mode)
        scores = self.item_vectors(features, cand, mode) @ vu
        order = np.argsort(-scores, kind="stable")[:n]
        return [ScoredItem(int(cand[j]), self.product_ids[cand[j]], float(scores[j])) for j in order]

    def similar_items(self, seed_item: int, features, mode: str | None = None, n: int = 3) -> list[ScoredItem]:
        """Top-``n`` items by cosine similarity to the seed, seed excluded."""
        if n <= 0:
            raise ValidationError("N must be positive")
        V = self.item_vectors(features, None, mode)
        self._check_items(np.array([seed_item]))
        v = V[seed_item]
        norm = np.linalg.norm(v)
        if norm == 0:
            raise DegenerateVectorError(f"item {seed_item} has a zero vector in mode {self._mode(mode)}")
        norms = np.linalg.norm(V, axis=1)
        cos = np.divide(V @ v, norms * norm, out=np.zeros(self.n_items), where=norms > 0)
        cos[seed_item] = -np.inf
        order = np.argsort(-cos, kind="stable")[:min(n, self.n_items - 1)]
        return [ScoredItem(int(i), self.product_ids[i], float(cos[i])) for i in order]

    # -- persistence -------------------------------------------------------

    def save(self, directory, stem: str = "rec_model") -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_params(d / f"{stem}.bin", self.store)
        with open(d / f"{stem}.json", "w", encoding="utf-8") as fh:
            json.dump({"mode": self.mode, "k": self.k, "n_features": self.n_features,
                       "content_hidden": self.content_hidden}, fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(d / "registry.json", "w", encoding="utf-8") as fh:
            json.dump({pid: i for i, pid in enumerate(self.product_ids)}, fh)
            fh.write("\n")

    @classmethod
    def load(cls, directory, stem: str = "rec_model") -> "RecModel":
        d = Path(directory)
        with open(d / f"{stem}.json", encoding="utf-8") as fh:
            meta = json.load(fh)
        with open(d / "registry.json", encoding="utf-8") as fh:
            registry = json.load(fh)
        ids = [None] * len(registry)
        for pid, i in registry.items():
            ids[i] = pid
        store = ParameterStore()
        for name, value in load_params(d / f"{stem}.bin").items():
            store.add(name, value)
        return cls(store, ids, meta["k"], meta["n_features"], meta["mode"], meta["content_hidden"])


def build_rec_model(product_ids: Sequence[str], n_features: int, k: int, mode: str = "hybrid",
                    seed: int = 0, content_hidden: int = 0) -> RecModel:
    """Fresh parameters: cf rows uniform +-0.05, dense weights scaled-uniform, biases zero.

    Every mode gets the full parameter set so checkpoints share a layout;
    modes that do not use a part never update it.
    """
    rng = RngState(seed).stream("rec-init")
    store = ParameterStore()
    store.add("rec/cf", uniform(rng, (len(product_ids), k), EMBEDDING_INIT))
    if content_hidden:
        store.add("rec/content/W1", uniform(rng, (n_features, content_hidden), glorot_limit(n_features, content_hidden)))
        store.add("rec/content/b1", np.zeros(content_hidden))
        store.add("rec/content/W", uniform(rng, (content_hidden, k), glorot_limit(content_hidden, k)))
    else:
        store.add("rec/content/W", uniform(rng, (n_features, k), glorot_limit(n_features, k)))
    store.add("rec/content/b", np.zeros(k))
    return RecModel(store, product_ids, k, n_features, mode, content_hidden)


def popularity_ranking(train_log) -> np.ndarray:
    """Item indices by descending training-interaction count, ties by index."""
    counts = train_log.item_counts()
    return np.argsort(-counts, kind="stable")


def config_dict(config: RecTrainConfig) -> dict:
    return asdict(config)
