"""Token vocabularies and tokenisation."""
from __future__ import annotations

import json
import re
from collections import Counter
from typing import Iterable

import numpy as np

PAD, UNK = 0, 1
_SPLIT = re.compile(r"[^0-9a-z]+")


def split_tokens(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumerics."""
    return [t for t in _SPLIT.split(text.lower()) if t]


class Vocabulary:
    """Dense token ids; ids below ``len(specials)`` are reserved.

    Word vocabularies use the default specials (``<pad>`` = 0, ``<unk>`` = 1).
    Metadata lookups (brands, product types) use a single ``<unk>`` special.
    """

    def __init__(self, tokens: Iterable[str] = (), specials=("<pad>", "<unk>")):
        self.specials = tuple(specials)
        self.itos: list[str] = list(self.specials)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)
        self.unk_id = self.stoi.get("<unk>", 0)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def to_json(self) -> dict:
        return {"specials": list(self.specials), "tokens": self.itos[len(self.specials):]}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(obj["tokens"], specials=tuple(obj["specials"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def build_vocab(texts: Iterable[str], min_token_count: int = 1) -> Vocabulary:
    """Vocabulary of tokens seen at least ``min_token_count`` times, in sorted order."""
    counts = Counter(tok for text in texts for tok in split_tokens(text))
    return Vocabulary(sorted(t for t, c in counts.items() if c >= min_token_count))


def build_lookup(values: Iterable[str]) -> Vocabulary:
    return Vocabulary(sorted(set(values)), specials=("<unk>",))


def tokenize(text: str, vocab: Vocabulary, max_seq_len: int) -> np.ndarray:
    """First ``max_seq_len`` token ids, right-padded with 0."""
    ids = [vocab.id(t) for t in split_tokens(text)[:max_seq_len]]
    out = np.zeros(max_seq_len, dtype=np.int64)
    out[:len(ids)] = ids
    return out
