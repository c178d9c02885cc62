"""Catalogue JSON-lines ingestion and encoding into model-ready records.

One product per line::

    {"product_id": "p1", "product_type": "dress", "brand": "b3", "division": "womens",
     "title": "...", "description": "...",
     "image_features": [[...], [...], [...], [...]],      # or
     "image_features_ref": "image_features.npy#17",
     "attributes": {"pattern": "floral", "neckline": null}}

``image_features_ref`` points at row ``17`` of a ``(n, 4, dim)`` ``.npy``
array, resolved relative to the catalogue file. A null attribute is ABSENT.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .vocab import Vocabulary, build_lookup, tokenize

log = logging.getLogger(__name__)

N_SHOTS = 4
ABSENT = None
_REQUIRED = ("product_id", "product_type", "brand", "division", "title", "description", "attributes")


@dataclass
class CatalogueEntry:
    product_id: str
    product_type: str
    brand: str
    division: str
    title: str
    description: str
    image_features: np.ndarray  # (4, dim)
    attributes: dict[str, str | None]

    @property
    def text(self) -> str:
        return f"{self.title} {self.description}"


@dataclass(frozen=True)
class Rejection:
    source: str
    line: int
    reason: str

    def __str__(self) -> str:
        return f"{self.source}:{self.line}: {self.reason}"


@dataclass
class ProductRecord:
    product_id: str
    product_type_id: int
    brand_id: int
    division_id: int
    text_tokens: np.ndarray
    image_shot_features: np.ndarray
    attribute_labels: dict[str, str | None] = field(default_factory=dict)

    def __post_init__(self):
        if self.image_shot_features.ndim != 2 or self.image_shot_features.shape[0] != N_SHOTS:
            raise ValidationError(
                f"{self.product_id}: expected {N_SHOTS} shot vectors, got shape {self.image_shot_features.shape}")


def _parse_line(obj, base: Path, npy_cache: dict) -> CatalogueEntry:
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    missing = [k for k in _REQUIRED if k not in obj]
    if missing:
        raise ValueError(f"missing fields {missing}")
    for k in _REQUIRED[:6]:
        if not isinstance(obj[k], str):
            raise ValueError(f"field {k!r} must be a string")
    attrs = obj["attributes"]
    if not isinstance(attrs, dict) or not all(v is None or isinstance(v, str) for v in attrs.values()):
        raise ValueError("attributes must map names to strings or null")
    if "image_features" in obj:
        feats = np.asarray(obj["image_features"], dtype=np.float64)
    elif "image_features_ref" in obj:
        ref = obj["image_features_ref"]
        fname, _, row = ref.partition("#")
        if fname not in npy_cache:
            npy_cache[fname] = np.load(base / fname, mmap_mode="r")
        arr = npy_cache[fname]
        feats = np.asarray(arr[int(row)], dtype=np.float64) if row else np.asarray(arr, dtype=np.float64)
    else:
        raise ValueError("needs image_features or image_features_ref")
    if feats.ndim != 2 or feats.shape[0] != N_SHOTS:
        raise ValueError(f"image features must be {N_SHOTS} vectors, got shape {feats.shape}")
    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite image features")
    return CatalogueEntry(obj["product_id"], obj["product_type"], obj["brand"], obj["division"],
                          obj["title"], obj["description"], feats, dict(attrs))


def load_catalogue(path) -> tuple[list[CatalogueEntry], list[Rejection]]:
    """Parse a catalogue file; bad lines become rejections rather than exceptions."""
    path = Path(path)
    entries: list[CatalogueEntry] = []
    rejects: list[Rejection] = []
    seen: set[str] = set()
    dim = None
    cache: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entry = _parse_line(json.loads(line), path.parent, cache)
                if entry.product_id in seen:
                    raise ValueError(f"duplicate product_id {entry.product_id!r}")
                if dim is None:
                    dim = entry.image_features.shape[1]
                elif entry.image_features.shape[1] != dim:
                    raise ValueError(f"shot dimension {entry.image_features.shape[1]} != catalogue dimension {dim}")
            except (ValueError, TypeError, IndexError, OSError) as exc:
                rejects.append(Rejection(str(path), lineno, str(exc)))
                continue
            seen.add(entry.product_id)
            entries.append(entry)
    for r in rejects:
        log.warning("rejected %s", r)
    return entries, rejects


@dataclass
class MetaVocab:
    words: Vocabulary
    product_types: Vocabulary
    brands: Vocabulary
    divisions: Vocabulary

    def sizes(self) -> dict[str, int]:
        return {"words": len(self.words), "product_types": len(self.product_types),
                "brands": len(self.brands), "divisions": len(self.divisions)}

    def to_json(self) -> dict:
        return {k: getattr(self, k).to_json() for k in ("words", "product_types", "brands", "divisions")}

    @classmethod
    def from_json(cls, obj) -> "MetaVocab":
        return cls(**{k: Vocabulary.from_json(v) for k, v in obj.items()})

    @classmethod
    def build(cls, entries, min_token_count: int = 1) -> "MetaVocab":
        from .vocab import build_vocab
        return cls(build_vocab((e.text for e in entries), min_token_count),
                   build_lookup(e.product_type for e in entries),
                   build_lookup(e.brand for e in entries),
                   build_lookup(e.division for e in entries))


def encode_records(entries, vocab: MetaVocab, max_seq_len: int) -> list[ProductRecord]:
    return [ProductRecord(e.product_id, vocab.product_types.id(e.product_type), vocab.brands.id(e.brand),
                          vocab.divisions.id(e.division), tokenize(e.text, vocab.words, max_seq_len),
                          e.image_features, dict(e.attributes))
            for e in entries]


@dataclass
class CatalogueArrays:
    """Column-stacked view of a record list for batched forward passes."""
    product_ids: list[str]
    tokens: np.ndarray  # (n, max_seq_len) int64
    shots: np.ndarray  # (n, 4, dim)
    product_type: np.ndarray
    brand: np.ndarray
    division: np.ndarray

    @classmethod
    def from_records(cls, records) -> "CatalogueArrays":
        if not records:
            raise ValidationError("empty catalogue")
        return cls([r.product_id for r in records],
                   np.stack([r.text_tokens for r in records]).astype(np.int64),
                   np.stack([r.image_shot_features for r in records]),
                   np.array([r.product_type_id for r in records], dtype=np.int64),
                   np.array([r.brand_id for r in records], dtype=np.int64),
                   np.array([r.division_id for r in records], dtype=np.int64))

    def __len__(self) -> int:
        return len(self.product_ids)

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.tokens[idx], self.shots[idx], self.product_type[idx], self.brand[idx], self.division[idx])


@dataclass
class Batch:
    tokens: np.ndarray
    shots: np.ndarray
    product_type: np.ndarray
    brand: np.ndarray
    division: np.ndarray

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @classmethod
    def of(cls, record: ProductRecord) -> "Batch":
        return cls(record.text_tokens[None], record.image_shot_features[None],
                   np.array([record.product_type_id]), np.array([record.brand_id]),
                   np.array([record.division_id]))


@dataclass(frozen=True)
class TaskDef:
    """One taxonomy entry: which product types an attribute applies to."""
    name: str
    applicable_product_types: tuple[str, ...]
    min_support: int | None = None


def load_taxonomy(path) -> list[TaskDef]:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
    if not isinstance(raw, list):
        raise ValidationError(f"{path}: taxonomy must be a JSON list")
    out, names = [], set()
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "name" not in item or "applicable_product_types" not in item:
            raise ValidationError(f"{path}: entry {i} needs name and applicable_product_types")
        extra = set(item) - {"name", "applicable_product_types", "min_support"}
        if extra:
            raise ValidationError(f"{path}: entry {i} has unknown keys {sorted(extra)}")
        if item["name"] in names:
            raise ValidationError(f"{path}: duplicate task {item['name']!r}")
        names.add(item["name"])
        out.append(TaskDef(item["name"], tuple(item["applicable_product_types"]), item.get("min_support")))
    return out


def save_taxonomy(path, taxonomy) -> None:
    rows = []
    for t in taxonomy:
        row = {"name": t.name, "applicable_product_types": list(t.applicable_product_types)}
        if t.min_support is not None:
            row["min_support"] = t.min_support
        rows.append(row)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
        fh.write("\n")
