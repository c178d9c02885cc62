"""Seeded synthetic catalogue + interaction generator for desk-scale runs.

Attribute labels are planted in the product inputs. Each task has a
*source* (``text``, ``image``, ``metadata`` or a ``+``-joined mix):

* text: the product text carries a keyword of the label's class,
* image: every shot vector is pulled towards a per-class centroid,
* metadata: each brand prefers one class, and the label follows the brand.

``signal_strength`` is the probability that a planted cue agrees with the
true label. Labels are then hidden at ``mask_rate`` among applicable
products.

Interactions come from latent tastes: each product has a latent vector
partly determined by its (unmasked) attributes, type and brand, so content
features carry collaborative signal; customers pick products with
probability proportional to ``popularity**popularity_skew *
exp(taste_strength * <p_u, q_i>)``. A cohort of ``cold_fraction`` products
launches at the start of the final month and only shows up in test.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..compute.rng import RngState
from ..errors import ValidationError
from .catalogue import CatalogueEntry, TaskDef, save_taxonomy
from .interactions import KINDS, Windows, parse_time, write_interactions

DAY = 86400
MONTH = 30 * DAY
ATTRIBUTE_NAMES = ["pattern", "neckline", "sleeve_length", "fit", "occasion", "length", "waist",
                   "heel_height", "toe_shape", "rise", "collar", "closure"]
TYPE_NAMES = ["dress", "top", "trousers", "shoes", "skirt", "jacket", "jumper", "shorts"]
SOURCES = {"text", "image", "metadata"}
_CONS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


@dataclass
class SynthSpec:
    seed: int = 0
    n_products: int = 1000
    n_customers: int = 1000
    n_tasks: int = 4
    classes_per_task: int | list[int] = 4
    task_sources: list[str] = field(default_factory=lambda: ["text", "text", "image", "metadata"])
    n_product_types: int = 4
    applicable_types_per_task: int = 3
    n_brands: int = 30
    n_divisions: int = 3
    image_dim: int = 512
    image_noise: float = 1.0
    image_noise_rank: int = 4
    shot_jitter: float = 0.1
    signal_strength: float = 0.9
    class_skew: float = 1.0
    mask_rate: float = 0.75
    n_filler_words: int = 300
    text_length: list[int] = field(default_factory=lambda: [8, 30])
    events_per_customer: float = 40.0
    cold_fraction: float = 0.1
    cold_boost: float = 3.0
    latent_dim: int = 8
    content_share: float = 0.7
    taste_strength: float = 6.0
    popularity_skew: float = 0.5
    months: int = 13
    positive_months: int = 1
    start: str = "2016-03-01T00:00:00Z"
    kind_probs: list[float] = field(default_factory=lambda: [0.4, 0.3, 0.3])
    inline_images: bool = False

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValidationError(f"unknown synthetic spec key(s): {', '.join(unknown)}")
        spec = cls(**raw)
        spec.validate()
        return spec

    def validate(self) -> None:
        for name in ("n_products", "n_customers", "n_tasks", "n_product_types", "n_brands",
                     "n_divisions", "image_dim", "n_filler_words", "latent_dim", "months", "image_noise_rank"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if not 1 <= self.positive_months <= self.months - 2:
            raise ValidationError("positive_months must leave at least one history and one test month")
        if self.n_tasks > len(ATTRIBUTE_NAMES):
            raise ValidationError(f"at most {len(ATTRIBUTE_NAMES)} tasks")
        if self.n_product_types > len(TYPE_NAMES):
            raise ValidationError(f"at most {len(TYPE_NAMES)} product types")
        if not 0 <= self.mask_rate < 1:
            raise ValidationError("mask_rate must be in [0, 1)")
        if not 0 <= self.cold_fraction < 1:
            raise ValidationError("cold_fraction must be in [0, 1)")
        for s in self.task_sources:
            if not set(s.split("+")) <= SOURCES:
                raise ValidationError(f"unknown task source {s!r}")
        if len(self.kind_probs) != 3 or abs(sum(self.kind_probs) - 1) > 1e-9:
            raise ValidationError("kind_probs must be three probabilities summing to 1")
        for c in self.n_classes():
            if c < 2:
                raise ValidationError("every task needs at least 2 classes")

    def n_classes(self) -> list[int]:
        c = self.classes_per_task
        if isinstance(c, int):
            return [c] * self.n_tasks
        if len(c) != self.n_tasks:
            raise ValidationError("classes_per_task list must have n_tasks entries")
        return list(c)

    def sources(self) -> list[set[str]]:
        return [set(self.task_sources[t % len(self.task_sources)].split("+")) for t in range(self.n_tasks)]

    def windows(self) -> Windows:
        t0 = parse_time(self.start)
        end = t0 + self.months * MONTH
        return Windows(t0, end - (1 + self.positive_months) * MONTH, end - MONTH, end)


def _pseudo_words(rng, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        k = int(rng.integers(2, 4))
        w = "".join(_CONS[rng.integers(len(_CONS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(k))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass
class SyntheticData:
    spec: SynthSpec
    catalogue: list[dict]
    image_features: np.ndarray  # (n_products, 4, dim) float32
    taxonomy: list[TaskDef]
    events: list[tuple[str, str, int, str]]
    cold_products: list[str]
    labels: dict[str, list[str | None]]  # unmasked labels (None where not applicable)
    product_latent: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    customer_taste: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    def entries(self) -> list[CatalogueEntry]:
        """The catalogue as loaded entries, without a round trip through disk."""
        return [CatalogueEntry(r["product_id"], r["product_type"], r["brand"], r["division"], r["title"],
                               r["description"], self.image_features[i].astype(np.float64), dict(r["attributes"]))
                for i, r in enumerate(self.catalogue)]


def generate_synthetic(spec: SynthSpec) -> SyntheticData:
    spec.validate()
    root = RngState(spec.seed)
    n, T = spec.n_products, spec.n_tasks
    n_cls = spec.n_classes()
    sources = spec.sources()

    # vocabularies
    r = root.stream("words")
    taken: set[str] = set()
    filler = _pseudo_words(r, spec.n_filler_words, taken)
    brands = [f"brand{b:03d}" for b in range(spec.n_brands)]
    divisions = [f"division{d}" for d in range(spec.n_divisions)]
    types = TYPE_NAMES[:spec.n_product_types]
    task_names = ATTRIBUTE_NAMES[:T]
    class_names = [_pseudo_words(r, c, taken) for c in n_cls]
    keywords = [[_pseudo_words(r, 3, taken) for _ in range(c)] for c in n_cls]

    # taxonomy: task 0 applies everywhere, others to a random subset of types
    r = root.stream("taxonomy")
    taxonomy = []
    applicable = np.zeros((T, spec.n_product_types), dtype=bool)
    for t in range(T):
        k = spec.n_product_types if t == 0 else min(spec.applicable_types_per_task, spec.n_product_types)
        chosen = np.sort(r.choice(spec.n_product_types, size=k, replace=False))
        applicable[t, chosen] = True
        taxonomy.append(TaskDef(task_names[t], tuple(types[i] for i in chosen)))

    # products: type, division, brand, labels
    r = root.stream("products")
    ptype = r.integers(0, spec.n_product_types, size=n)
    division = r.integers(0, spec.n_divisions, size=n)
    brand = r.integers(0, spec.n_brands, size=n)
    priors = []
    for c in n_cls:
        w = 1.0 / np.arange(1, c + 1) ** spec.class_skew
        priors.append(w / w.sum())
    labels = np.full((T, n), -1, dtype=np.int64)
    brand_pref = [r.choice(c, size=spec.n_brands, p=p) for c, p in zip(n_cls, priors)]
    s = spec.signal_strength
    for t in range(T):
        drawn = r.choice(n_cls[t], size=n, p=priors[t])
        if "metadata" in sources[t]:
            follow = r.random(n) < s
            drawn = np.where(follow, brand_pref[t][brand], drawn)
        labels[t] = np.where(applicable[t, ptype], drawn, -1)

    def cue(t, lab, rr):
        # class whose cue is planted: the true one w.p. s, else uniform
        noisy = rr.integers(0, n_cls[t], size=lab.shape)
        return np.where((rr.random(lab.shape) < s) | (lab < 0), lab, noisy)

    # images
    r = root.stream("images")
    dim = spec.image_dim
    type_centroids = r.normal(0, 1, size=(spec.n_product_types, dim))
    # product-level noise lives in a low-rank subspace; shots add small jitter
    basis = r.normal(0, 1, size=(spec.image_noise_rank, dim)) / np.sqrt(spec.image_noise_rank)
    product_noise = r.normal(0, spec.image_noise, size=(n, spec.image_noise_rank)) @ basis
    shots = (r.normal(0, spec.shot_jitter, size=(n, 4, dim)) + product_noise[:, None, :]
             + type_centroids[ptype][:, None, :] * 0.5)
    for t in range(T):
        if "image" not in sources[t]:
            continue
        cents = r.normal(0, 1, size=(n_cls[t], dim))
        planted = cue(t, labels[t], r)
        has = planted >= 0
        shots[has] += cents[planted[has]][:, None, :]
    shots = shots.astype(np.float32)

    # text
    r = root.stream("text")
    lo, hi = spec.text_length
    text_planted = [cue(t, labels[t], r) if "text" in sources[t] else None for t in range(T)]
    titles, descriptions = [], []
    for i in range(n):
        words = list(r.choice(filler, size=int(r.integers(lo, hi + 1))))
        cut = min(3, len(words))
        title, desc = words[:cut], words[cut:]
        for t in range(T):
            c = -1 if text_planted[t] is None else text_planted[t][i]
            if c < 0:
                continue
            # a class keyword in the title, and a (possibly different) one in the description
            title.insert(int(r.integers(0, len(title) + 1)), keywords[t][c][int(r.integers(3))])
            desc.insert(int(r.integers(0, len(desc) + 1)), keywords[t][c][int(r.integers(3))])
        titles.append(" ".join([brands[brand[i]].title()] + title + [types[ptype[i]]]))
        descriptions.append(" ".join(desc))

    # masking
    r = root.stream("mask")
    keep = r.random((T, n)) >= spec.mask_rate

    product_ids = [f"P{i:06d}" for i in range(n)]
    catalogue = []
    for i in range(n):
        attrs = {task_names[t]: (class_names[t][labels[t, i]] if labels[t, i] >= 0 and keep[t, i] else None)
                 for t in range(T)}
        row = {"product_id": product_ids[i], "product_type": types[ptype[i]], "brand": brands[brand[i]],
               "division": divisions[division[i]], "title": titles[i], "description": descriptions[i]}
        if spec.inline_images:
            row["image_features"] = [[round(float(v), 6) for v in shot] for shot in shots[i]]
        else:
            row["image_features_ref"] = f"image_features.npy#{i}"
        row["attributes"] = attrs
        catalogue.append(row)

    events, cold, q, taste = _interactions(spec, root, product_ids, ptype, brand, labels, n_cls)
    full_labels = {task_names[t]: [class_names[t][l] if l >= 0 else None for l in labels[t]] for t in range(T)}
    return SyntheticData(spec, catalogue, shots, taxonomy, events, cold, full_labels, q, taste)


def _interactions(spec, root, product_ids, ptype, brand, labels, n_cls):
    n, d = len(product_ids), spec.latent_dim
    r = root.stream("latent")
    type_emb = r.normal(0, 1, size=(spec.n_product_types, d))
    brand_emb = r.normal(0, 0.5, size=(spec.n_brands, d))
    content = type_emb[ptype] + brand_emb[brand]
    for t in range(labels.shape[0]):
        emb = r.normal(0, 1, size=(n_cls[t], d))
        has = labels[t] >= 0
        content[has] += emb[labels[t, has]]
    content /= np.linalg.norm(content, axis=1, keepdims=True) + 1e-12
    idio = r.normal(0, 1, size=(n, d))
    idio /= np.linalg.norm(idio, axis=1, keepdims=True)
    a = spec.content_share
    q = np.sqrt(a) * content + np.sqrt(1 - a) * idio

    r = root.stream("popularity")
    pop = 1.0 / (r.permutation(n) + 1.0) ** spec.popularity_skew
    n_cold = int(round(spec.cold_fraction * n))
    cold = np.zeros(n, dtype=bool)
    cold[r.choice(n, size=n_cold, replace=False)] = True

    r = root.stream("customers")
    taste = r.normal(0, 1, size=(spec.n_customers, d))
    t0 = parse_time(spec.start)
    test_start = t0 + (spec.months - 1) * MONTH
    end = t0 + spec.months * MONTH
    base = np.log(pop)
    boost = np.where(cold, np.log(spec.cold_boost), 0.0)
    events = []
    for u in range(spec.n_customers):
        m = 1 + int(r.poisson(max(spec.events_per_customer - 1, 0)))
        times = np.sort(r.integers(t0, end, size=m))
        logits = base + spec.taste_strength * (q @ taste[u])
        warm = np.where(cold, -np.inf, logits)
        p_warm = np.exp(warm - warm.max())
        p_warm /= p_warm.sum()
        live = logits + boost
        p_live = np.exp(live - live.max())
        p_live /= p_live.sum()
        in_test = times >= test_start
        items = np.empty(m, dtype=np.int64)
        k = int((~in_test).sum())
        items[:k] = r.choice(n, size=k, p=p_warm)
        items[k:] = r.choice(n, size=m - k, p=p_live)
        kinds = r.choice(3, size=m, p=spec.kind_probs)
        cid = f"C{u:06d}"
        events.extend((cid, product_ids[items[j]], int(times[j]), KINDS[kinds[j]]) for j in range(m))
    return events, [product_ids[i] for i in np.flatnonzero(cold)], q, taste


def write_synthetic(data: SyntheticData, out_dir) -> dict[str, Path]:
    """Write catalogue.jsonl, image_features.npy, interactions.csv, taxonomy.json, windows.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in (("catalogue", "catalogue.jsonl"), ("interactions", "interactions.csv"),
                                      ("taxonomy", "taxonomy.json"), ("windows", "windows.json"))}
    with open(paths["catalogue"], "w", encoding="utf-8") as fh:
        for row in data.catalogue:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
    if not data.spec.inline_images:
        paths["images"] = out / "image_features.npy"
        np.save(paths["images"], data.image_features)
    write_interactions(paths["interactions"], data.events)
    save_taxonomy(paths["taxonomy"], data.taxonomy)
    with open(paths["windows"], "w", encoding="utf-8") as fh:
        json.dump(data.spec.windows().to_iso(), fh, indent=1)
        fh.write("\n")
    return paths


def spec_to_dict(spec: SynthSpec) -> dict:
    return asdict(spec)
