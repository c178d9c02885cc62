"""Run configuration: one nested mapping, file + ``--set`` overrides, snapshots.

Layout (every section optional, unknown keys rejected)::

    seed: 0
    data:       {min_token_count, test_days, positive_days}
    attr_model: AttrModelConfig fields (its learning_rate/batch_size drive training)
    attr_plan:  {cycles, eval_every, min_support, split_fraction}
    rec:        RecTrainConfig fields except seed
    rec_eval:   {k, candidates, exclude_seen, relevant_kinds}

Sub-seeds are derived from ``seed`` with :class:`~modabric.compute.rng.RngState`
keys, so a single number fixes every random draw.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .attr.model import AttrModelConfig
from .attr.trainer import TrainPlan
from .data.interactions import KINDS
from .errors import ValidationError
from .recsys.model import RecTrainConfig

_PLAN_KEYS = ("cycles", "eval_every", "min_support", "split_fraction")


@dataclass
class DataConfig:
    min_token_count: int = 1
    test_days: int = 30
    positive_days: int = 30


@dataclass
class RankEvalConfig:
    k: int = 10
    candidates: str = "live"
    exclude_seen: bool = True
    relevant_kinds: list[str] = field(default_factory=lambda: ["purchase"])

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("rec_eval.k must be positive")
        if self.candidates not in ("live", "all"):
            raise ValidationError("rec_eval.candidates must be 'live' or 'all'")
        bad = [k for k in self.relevant_kinds if k not in KINDS]
        if bad or not self.relevant_kinds:
            raise ValidationError(f"rec_eval.relevant_kinds must be a non-empty subset of {KINDS}")


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    attr_model: AttrModelConfig = field(default_factory=AttrModelConfig)
    attr_plan: dict = field(default_factory=dict)
    rec: dict = field(default_factory=dict)
    rec_eval: RankEvalConfig = field(default_factory=RankEvalConfig)

    def train_plan(self) -> TrainPlan:
        return TrainPlan(seed=self.seed, learning_rate=self.attr_model.learning_rate,
                         batch_size=self.attr_model.batch_size, **self.attr_plan)

    def rec_config(self, seed: int | None = None) -> RecTrainConfig:
        return RecTrainConfig(seed=self.seed if seed is None else seed, **self.rec)

    def to_dict(self) -> dict:
        plan = self.train_plan()
        rec = asdict(self.rec_config())
        rec.pop("seed")
        return {"seed": self.seed, "data": asdict(self.data), "attr_model": asdict(self.attr_model),
                "attr_plan": {k: getattr(plan, k) for k in _PLAN_KEYS}, "rec": rec,
                "rec_eval": asdict(self.rec_eval)}

    def snapshot(self, directory) -> Path:
        path = Path(directory) / "resolved_config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path


def _check_keys(section: str, raw: dict, allowed) -> None:
    if not isinstance(raw, dict):
        raise ValidationError(f"config section {section!r} must be a mapping")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def from_dict(raw: dict) -> RunConfig:
    raw = raw or {}
    _check_keys("config", raw, [f.name for f in fields(RunConfig)])
    sections = {
        "data": [f.name for f in fields(DataConfig)],
        "attr_model": [f.name for f in fields(AttrModelConfig)],
        "attr_plan": _PLAN_KEYS,
        "rec": [f.name for f in fields(RecTrainConfig) if f.name != "seed"],
        "rec_eval": [f.name for f in fields(RankEvalConfig)],
    }
    for name, allowed in sections.items():
        _check_keys(name, raw.get(name, {}), allowed)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ValidationError("seed must be a non-negative integer")
    try:
        cfg = RunConfig(seed=seed, data=DataConfig(**raw.get("data", {})),
                        attr_model=AttrModelConfig(**raw.get("attr_model", {})),
                        attr_plan=dict(raw.get("attr_plan", {})), rec=dict(raw.get("rec", {})),
                        rec_eval=RankEvalConfig(**raw.get("rec_eval", {})))
        cfg.train_plan()
        cfg.rec_config()
    except TypeError as exc:
        raise ValidationError(str(exc)) from None
    return cfg


def read_mapping(path) -> dict:
    """Parse a YAML or JSON file into a dict (empty file -> {})."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path} must hold a mapping at the top level")
    return data


def apply_overrides(raw: dict, overrides) -> dict:
    """``section.key=value`` (or ``seed=value``) strings; values parsed as YAML scalars."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"override {item!r} is not KEY=VALUE")
        parsed = yaml.safe_load(value) if value else ""
        *path, leaf = key.split(".")
        node = out
        for part in path:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override {item!r} descends into a non-mapping")
        node[leaf] = parsed
    return out


def load_run_config(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    raw = read_mapping(path) if path else {}
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["seed"] = seed
    return from_dict(raw)
