"""Multi-modal, multi-task attribute network with hard parameter sharing.

Three encoders feed one shared dense layer, and every attribute has its
own softmax head on top of it::

    tokens -> embed -> conv1d(relu) -> max over time -> dense(relu) ----+
    4 shots ++ product-type embedding -> dense(relu) -------------------+-> dense(relu) -> head_t
    product-type ++ brand ++ division embeddings -----------------------+

Parameters live in one :class:`~modabric.compute.ParameterStore` under
``shared/...`` and ``head/<task>/...``. A step on task ``t`` touches only
the shared parameters and ``head/<t>/``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..compute import ops
from ..compute.checkpoint import load_params, save_params
from ..compute.params import EMBEDDING_INIT, ParameterStore, glorot_limit, uniform
from ..compute.rng import RngState
from ..data.catalogue import N_SHOTS, Batch, ProductRecord
from ..errors import ApplicabilityError, ValidationError

INPUT_GROUPS = ("text", "images", "metadata")


@dataclass
class AttrModelConfig:
    word_embed_dim: int = 64
    conv_width: int = 3
    conv_filters: int = 128
    text_dense_units: int = 128
    meta_embed_dim: int = 16
    image_fusion_units: int = 128
    shared_dense_units: int = 256
    learning_rate: float = 0.01
    batch_size: int = 64
    max_seq_len: int = 64

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValidationError(f"{f.name} must be positive")
        if self.max_seq_len < self.conv_width:
            raise ValidationError("max_seq_len must be >= conv_width")

    @classmethod
    def from_dict(cls, raw: dict) -> "AttrModelConfig":
        unknown = sorted(set(raw) - {f.name for f in fields(cls)})
        if unknown:
            raise ValidationError(f"unknown attr-model key(s): {', '.join(unknown)}")
        return cls(**raw)


@dataclass
class TaskSpec:
    name: str
    label_vocab: list[str]
    applicable_product_types: frozenset[int]
    class_weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if len(self.label_vocab) < 2:
            raise ValidationError(f"task {self.name!r} needs at least 2 classes")
        if self.class_weights is None:
            self.class_weights = np.ones(len(self.label_vocab))
        self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
        if self.class_weights.shape != (len(self.label_vocab),) or np.any(self.class_weights <= 0):
            raise ValidationError(f"task {self.name!r}: class weights must be {len(self.label_vocab)} positive values")
        self.applicable_product_types = frozenset(int(x) for x in self.applicable_product_types)

    @property
    def n_classes(self) -> int:
        return len(self.label_vocab)

    def applies_to(self, product_type_id: int) -> bool:
        return int(product_type_id) in self.applicable_product_types

    def to_json(self) -> dict:
        return {"name": self.name, "label_vocab": list(self.label_vocab),
                "applicable_product_types": sorted(self.applicable_product_types),
                "class_weights": [float(w) for w in self.class_weights]}

    @classmethod
    def from_json(cls, obj) -> "TaskSpec":
        return cls(obj["name"], list(obj["label_vocab"]), frozenset(obj["applicable_product_types"]),
                   np.array(obj["class_weights"]))


def class_weights_from_counts(counts, lo: float = 0.1, hi: float = 10.0) -> np.ndarray:
    """Inverse-frequency weights ``N / (C * n_c)`` clipped to ``[lo, hi]``."""
    counts = np.asarray(counts, dtype=np.float64)
    n, c = counts.sum(), counts.size
    w = np.divide(n, c * counts, out=np.full(c, hi), where=counts > 0)
    return np.clip(w, lo, hi)


def expected_parameter_count(config: AttrModelConfig, task_classes: Sequence[int], vocab_sizes: dict,
                             image_dim: int, drop: str | None = None) -> int:
    c = config
    text = (vocab_sizes["words"] * c.word_embed_dim + c.conv_width * c.word_embed_dim * c.conv_filters
            + c.conv_filters + c.conv_filters * c.text_dense_units + c.text_dense_units)
    images = (vocab_sizes["product_types"] * c.meta_embed_dim
              + (N_SHOTS * image_dim + c.meta_embed_dim) * c.image_fusion_units + c.image_fusion_units)
    meta = (vocab_sizes["product_types"] + vocab_sizes["brands"] + vocab_sizes["divisions"]) * c.meta_embed_dim
    fused = c.text_dense_units + c.image_fusion_units + 3 * c.meta_embed_dim
    total = {"text": text, "images": images, "metadata": meta}
    shared = sum(v for k, v in total.items() if k != drop) + fused * c.shared_dense_units + c.shared_dense_units
    heads = sum(c.shared_dense_units * k + k for k in task_classes)
    return shared + heads


class AttrModel:
    """Parameters plus the forward/backward passes of the attribute network.

    ``drop`` names an input group that is absent: its encoder has no
    parameters and contributes zeros at the fusion layer.
    """

    def __init__(self, config: AttrModelConfig, tasks: Sequence[TaskSpec], vocab_sizes: dict,
                 image_dim: int, store: ParameterStore, drop: str | None = None):
        self.config = config
        self.tasks = {t.name: t for t in tasks}
        self.vocab_sizes = dict(vocab_sizes)
        self.image_dim = int(image_dim)
        self.store = store
        self.drop = drop

    # -- encoders ---------------------------------------------------------

    def _text(self, tokens, cache=None):
        s, c = self.store, self.config
        if self.drop == "text":
            return np.zeros((tokens.shape[0], c.text_dense_units), dtype=s.dtype)
        emb = ops.embedding_lookup(s["shared/text/embed"], tokens)
        conv = ops.conv1d_forward(emb, s["shared/text/conv_W"], s["shared/text/conv_b"])
        pooled, arg = ops.max_over_time(conv)
        out = ops.dense_forward(pooled, s["shared/text/dense_W"], s["shared/text/dense_b"], "relu")
        if cache is not None:
            cache["text"] = (tokens, emb, conv, pooled, arg, out)
        return out

    def _text_backward(self, cache, grad):
        s = self.store
        tokens, emb, conv, pooled, arg, out = cache["text"]
        gp, gW, gb = ops.dense_backward(pooled, s["shared/text/dense_W"], s["shared/text/dense_b"], grad,
                                        "relu", out=out)
        s.accumulate("shared/text/dense_W", gW)
        s.accumulate("shared/text/dense_b", gb)
        gconv = ops.max_over_time_backward(gp, arg, conv.shape[1])
        gemb, gF, gcb = ops.conv1d_backward(emb, s["shared/text/conv_W"], s["shared/text/conv_b"], gconv, out=conv)
        s.accumulate("shared/text/conv_W", gF)
        s.accumulate("shared/text/conv_b", gcb)
        s.accumulate_rows("shared/text/embed", tokens.reshape(-1), gemb.reshape(-1, gemb.shape[-1]))

    def _images(self, shots, ptype, cache=None):
        s, c = self.store, self.config
        if self.drop == "images":
            return np.zeros((shots.shape[0], c.image_fusion_units), dtype=s.dtype)
        if shots.ndim != 3 or shots.shape[1] != N_SHOTS:
            raise ValidationError(f"expected {N_SHOTS} shot vectors per product, got shape {shots.shape[1:]}")
        x = np.concatenate([shots.reshape(shots.shape[0], -1),
                            ops.embedding_lookup(s["shared/image/type_embed"], ptype)], axis=1)
        out = ops.dense_forward(x, s["shared/image/dense_W"], s["shared/image/dense_b"], "relu")
        if cache is not None:
            cache["images"] = (x, ptype, out)
        return out

    def _images_backward(self, cache, grad):
        s = self.store
        x, ptype, out = cache["images"]
        gx, gW, gb = ops.dense_backward(x, s["shared/image/dense_W"], s["shared/image/dense_b"], grad,
                                        "relu", out=out)
        s.accumulate("shared/image/dense_W", gW)
        s.accumulate("shared/image/dense_b", gb)
        s.accumulate_rows("shared/image/type_embed", ptype, gx[:, N_SHOTS * self.image_dim:])

    def _meta(self, ptype, brand, division, cache=None):
        s, c = self.store, self.config
        if self.drop == "metadata":
            return np.zeros((ptype.shape[0], 3 * c.meta_embed_dim), dtype=s.dtype)
        out = np.concatenate([ops.embedding_lookup(s["shared/meta/type_embed"], ptype),
                              ops.embedding_lookup(s["shared/meta/brand_embed"], brand),
                              ops.embedding_lookup(s["shared/meta/division_embed"], division)], axis=1)
        if cache is not None:
            cache["metadata"] = (ptype, brand, division)
        return out

    def _meta_backward(self, cache, grad):
        m = self.config.meta_embed_dim
        ptype, brand, division = cache["metadata"]
        self.store.accumulate_rows("shared/meta/type_embed", ptype, grad[:, :m])
        self.store.accumulate_rows("shared/meta/brand_embed", brand, grad[:, m:2 * m])
        self.store.accumulate_rows("shared/meta/division_embed", division, grad[:, 2 * m:])

    # -- full passes ------------------------------------------------------

    def forward(self, batch: Batch, cache: dict | None = None) -> np.ndarray:
        """Shared representation, shape (batch, shared_dense_units)."""
        s = self.store
        parts = [self._text(batch.tokens, cache), self._images(batch.shots, batch.product_type, cache),
                 self._meta(batch.product_type, batch.brand, batch.division, cache)]
        fused = np.concatenate(parts, axis=1)
        h = ops.dense_forward(fused, s["shared/fusion/W"], s["shared/fusion/b"], "relu")
        if cache is not None:
            cache["fusion"] = (fused, h)
        return h

    def logits(self, h: np.ndarray, task: str) -> np.ndarray:
        return ops.dense_forward(h, self.store[f"head/{task}/W"], self.store[f"head/{task}/b"])

    def backward(self, cache: dict, task: str, grad_logits: np.ndarray) -> None:
        """Accumulate gradients for one task's loss into the store."""
        s, c = self.store, self.config
        fused, h = cache["fusion"]
        gh, gW, gb = ops.dense_backward(h, s[f"head/{task}/W"], s[f"head/{task}/b"], grad_logits)
        s.accumulate(f"head/{task}/W", gW)
        s.accumulate(f"head/{task}/b", gb)
        gf, gW, gb = ops.dense_backward(fused, s["shared/fusion/W"], s["shared/fusion/b"], gh, "relu", out=h)
        s.accumulate("shared/fusion/W", gW)
        s.accumulate("shared/fusion/b", gb)
        a, b = c.text_dense_units, c.text_dense_units + c.image_fusion_units
        if self.drop != "text":
            self._text_backward(cache, gf[:, :a])
        if self.drop != "images":
            self._images_backward(cache, gf[:, a:b])
        if self.drop != "metadata":
            self._meta_backward(cache, gf[:, b:])

    def loss_and_grad(self, batch: Batch, task: str, labels) -> float:
        """Weighted cross-entropy on one task's batch; gradients go to the store."""
        cache: dict = {}
        h = self.forward(batch, cache)
        loss, g = ops.softmax_cross_entropy(self.logits(h, task), labels, self.tasks[task].class_weights)
        self.backward(cache, task, g)
        return loss

    # -- per-record API ---------------------------------------------------

    def encode_text(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        return self._text(tokens[None])[0] if tokens.ndim == 1 else self._text(tokens)

    def encode_images(self, shot_features, product_type_id: int) -> np.ndarray:
        shots = np.asarray(shot_features, dtype=self.store.dtype)
        if shots.ndim != 2 or shots.shape[0] != N_SHOTS:
            raise ValidationError(f"expected {N_SHOTS} shot vectors, got shape {shots.shape}")
        return self._images(shots[None], np.array([product_type_id]))[0]

    def encode_metadata(self, product_type_id: int, brand_id: int, division_id: int) -> np.ndarray:
        return self._meta(np.array([product_type_id]), np.array([brand_id]), np.array([division_id]))[0]

    def shared_representation(self, record: ProductRecord) -> np.ndarray:
        return self.forward(Batch.of(record))[0]

    def predict_proba(self, batch: Batch, task: str, chunk: int = 1024) -> np.ndarray:
        out = []
        for i in range(0, len(batch), chunk):
            sub = Batch(*(getattr(batch, f)[i:i + chunk] for f in ("tokens", "shots", "product_type", "brand", "division")))
            out.append(ops.softmax(self.logits(self.forward(sub), task)))
        return np.concatenate(out) if out else np.zeros((0, self.tasks[task].n_classes))

    def predict_attribute(self, record: ProductRecord, task: TaskSpec | str) -> np.ndarray:
        spec = self.tasks[task if isinstance(task, str) else task.name]
        if not spec.applies_to(record.product_type_id):
            raise ApplicabilityError(f"attribute {spec.name!r} does not apply to product type {record.product_type_id}")
        return self.predict_proba(Batch.of(record), spec.name)[0]

    def predict_all(self, record: ProductRecord, tasks: Sequence[TaskSpec] | None = None) -> dict[str, tuple[str, float]]:
        tasks = list(self.tasks.values()) if tasks is None else tasks
        applicable = [t for t in tasks if t.applies_to(record.product_type_id)]
        if not applicable:
            return {}
        h = self.forward(Batch.of(record))
        out = {}
        for t in applicable:
            p = ops.softmax(self.logits(h, t.name))[0]
            k = int(np.argmax(p))
            out[t.name] = (t.label_vocab[k], float(p[k]))
        return out

    # -- persistence ------------------------------------------------------

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_params(d / "attr_model.bin", self.store)
        meta = {"config": asdict(self.config), "tasks": [t.to_json() for t in self.tasks.values()],
                "vocab_sizes": self.vocab_sizes, "image_dim": self.image_dim, "drop": self.drop}
        with open(d / "attr_model.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory) -> "AttrModel":
        d = Path(directory)
        with open(d / "attr_model.json", encoding="utf-8") as fh:
            meta = json.load(fh)
        store = ParameterStore()
        for name, value in load_params(d / "attr_model.bin").items():
            store.add(name, value)
        return cls(AttrModelConfig(**meta["config"]), [TaskSpec.from_json(t) for t in meta["tasks"]],
                   meta["vocab_sizes"], meta["image_dim"], store, meta["drop"])


def build_attr_model(config: AttrModelConfig, tasks: Sequence[TaskSpec], vocab_sizes: dict,
                     image_dim: int = 512, seed: int = 0, drop: str | None = None,
                     dtype=np.float64) -> AttrModel:
    """Initialise a fresh network for ``tasks``.

    Dense and conv weights are uniform in +-sqrt(6 / (fan_in + fan_out)),
    embeddings uniform in +-0.05, biases zero.
    """
    if not tasks:
        raise ValidationError("at least one task is required")
    names = [t.name for t in tasks]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate task names in {names}")
    if drop is not None and drop not in INPUT_GROUPS:
        raise ValidationError(f"unknown input group {drop!r}; expected one of {INPUT_GROUPS}")
    c = config
    rng = RngState(seed).stream("attr-init")
    store = ParameterStore(dtype)

    def emb(name, rows, dim):
        store.add(name, uniform(rng, (rows, dim), EMBEDDING_INIT, dtype))

    def dense(prefix, n_in, n_out):
        store.add(f"{prefix}W", uniform(rng, (n_in, n_out), glorot_limit(n_in, n_out), dtype))
        store.add(f"{prefix}b", np.zeros(n_out))

    if drop != "text":
        emb("shared/text/embed", vocab_sizes["words"], c.word_embed_dim)
        fan_in, fan_out = c.conv_width * c.word_embed_dim, c.conv_width * c.conv_filters
        store.add("shared/text/conv_W", uniform(rng, (c.conv_width, c.word_embed_dim, c.conv_filters),
                                                glorot_limit(fan_in, fan_out), dtype))
        store.add("shared/text/conv_b", np.zeros(c.conv_filters))
        dense("shared/text/dense_", c.conv_filters, c.text_dense_units)
    if drop != "images":
        emb("shared/image/type_embed", vocab_sizes["product_types"], c.meta_embed_dim)
        dense("shared/image/dense_", N_SHOTS * image_dim + c.meta_embed_dim, c.image_fusion_units)
    if drop != "metadata":
        emb("shared/meta/type_embed", vocab_sizes["product_types"], c.meta_embed_dim)
        emb("shared/meta/brand_embed", vocab_sizes["brands"], c.meta_embed_dim)
        emb("shared/meta/division_embed", vocab_sizes["divisions"], c.meta_embed_dim)
    fused = c.text_dense_units + c.image_fusion_units + 3 * c.meta_embed_dim
    dense("shared/fusion/", fused, c.shared_dense_units)
    for t in tasks:
        dense(f"head/{t.name}/", c.shared_dense_units, t.n_classes)
    return AttrModel(config, tasks, vocab_sizes, image_dim, store, drop)
