"""Content feature matrices for items, organised in named blocks.

On disk a feature set is ``<stem>.npy`` (float64 matrix, one row per item
in registry order) plus ``<stem>.json``::

    {"product_ids": [...], "blocks": [["product_type", 0, 4], ["brand", 4, 34], ...]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data.catalogue import CatalogueEntry, MetaVocab
from ..data.interactions import InteractionSet
from ..data.vocab import split_tokens
from ..errors import NonFiniteError, ValidationError

MONTH = 30 * 86400


@dataclass
class ItemFeatures:
    matrix: np.ndarray
    product_ids: list[str]
    blocks: list[tuple[str, int, int]]

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.product_ids):
            raise ValidationError(f"feature matrix {self.matrix.shape} does not match {len(self.product_ids)} ids")
        if self.blocks and self.blocks[-1][2] != self.matrix.shape[1]:
            raise ValidationError("feature blocks do not cover the matrix")

    @property
    def n_items(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def block(self, name: str) -> np.ndarray:
        for n, a, b in self.blocks:
            if n == name:
                return self.matrix[:, a:b]
        raise KeyError(name)

    def save(self, stem) -> None:
        stem = Path(stem)
        np.save(stem.with_suffix(".npy"), self.matrix)
        with open(stem.with_suffix(".json"), "w", encoding="utf-8") as fh:
            json.dump({"product_ids": self.product_ids, "blocks": [list(b) for b in self.blocks]}, fh)
            fh.write("\n")

    @classmethod
    def load(cls, stem) -> "ItemFeatures":
        stem = Path(stem)
        with open(stem.with_suffix(".json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        return cls(np.load(stem.with_suffix(".npy")), meta["product_ids"], [tuple(b) for b in meta["blocks"]])


def normalize_features(raw: ItemFeatures | np.ndarray):
    """Unit-L2 every column, then every row; all-zero columns and rows stay zero."""
    m = raw.matrix if isinstance(raw, ItemFeatures) else np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("non-finite item features")
    col = np.linalg.norm(m, axis=0)
    m = np.divide(m, col, out=np.zeros_like(m), where=col > 0)
    row = np.linalg.norm(m, axis=1, keepdims=True)
    m = np.divide(m, row, out=np.zeros_like(m), where=row > 0)
    if isinstance(raw, ItemFeatures):
        return ItemFeatures(m, list(raw.product_ids), list(raw.blocks))
    return m


def _one_hot(ids: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((ids.size, size))
    out[np.arange(ids.size), ids] = 1.0
    return out


def build_item_features(entries: Sequence[CatalogueEntry], vocab: MetaVocab, split: InteractionSet | None = None,
                        predictions: dict[str, dict] | None = None,
                        include: Sequence[str] | None = None) -> ItemFeatures:
    """Raw (unnormalised) content features, one row per catalogue entry.

    Blocks: product_type, brand, division (one-hot); attributes (one-hot of
    known labels, or the predicted label's probability where the label is
    missing and ``predictions`` has it); text (binary bag of words); image
    (mean shot vector); popularity (log1p training count) and recency
    (1 / (1 + months since first training appearance), 1 for unseen items),
    the last two only when ``split`` is given.
    """
    n = len(entries)
    if n == 0:
        raise ValidationError("no catalogue entries")
    blocks: list[tuple[str, np.ndarray]] = []
    blocks.append(("product_type", _one_hot(np.array([vocab.product_types.id(e.product_type) for e in entries]),
                                            len(vocab.product_types))))
    blocks.append(("brand", _one_hot(np.array([vocab.brands.id(e.brand) for e in entries]), len(vocab.brands))))
    blocks.append(("division", _one_hot(np.array([vocab.divisions.id(e.division) for e in entries]),
                                        len(vocab.divisions))))

    values: dict[str, set[str]] = {}
    for e in entries:
        for name, lab in e.attributes.items():
            values.setdefault(name, set())
            if lab is not None:
                values[name].add(lab)
    if predictions:
        for attrs in predictions.values():
            for name, p in attrs.items():
                values.setdefault(name, set()).add(p["label"])
    columns = {(name, v): j for j, (name, v) in
               enumerate((name, v) for name in sorted(values) for v in sorted(values[name]))}
    attr = np.zeros((n, len(columns)))
    for i, e in enumerate(entries):
        predicted = (predictions or {}).get(e.product_id, {})
        for name in values:
            lab = e.attributes.get(name)
            if lab is not None:
                attr[i, columns[(name, lab)]] = 1.0
            elif name in predicted:
                attr[i, columns[(name, predicted[name]["label"])]] = float(predicted[name]["probability"])
    blocks.append(("attributes", attr))

    text = np.zeros((n, len(vocab.words)))
    for i, e in enumerate(entries):
        ids = [vocab.words.id(t) for t in split_tokens(e.text)]
        text[i, ids] = 1.0
    text[:, :len(vocab.words.specials)] = 0.0
    blocks.append(("text", text[:, len(vocab.words.specials):]))
    blocks.append(("image", np.stack([e.image_features.mean(axis=0) for e in entries])))

    if split is not None:
        train = split.train
        counts = train.item_counts().astype(np.float64)
        blocks.append(("popularity", np.log1p(counts)[:, None]))
        first = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(first, train.item, train.ts)
        ref = split.windows.test_start
        age = np.where(counts > 0, (ref - first) / MONTH, 0.0)
        blocks.append(("recency", (1.0 / (1.0 + age))[:, None]))

    if include is not None:
        unknown = set(include) - {b for b, _ in blocks}
        if unknown:
            raise ValidationError(f"unknown feature block(s) {sorted(unknown)}")
        blocks = [(b, m) for b, m in blocks if b in include]
    layout, start = [], 0
    for name, m in blocks:
        layout.append((name, start, start + m.shape[1]))
        start += m.shape[1]
    return ItemFeatures(np.concatenate([m for _, m in blocks], axis=1), [e.product_id for e in entries], layout)
