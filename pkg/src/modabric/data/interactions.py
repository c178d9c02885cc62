"""Implicit-feedback event logs, their CSV format, and temporal splitting.

CSV header: ``customer_id,product_id,timestamp,kind`` with ISO-8601 UTC
timestamps and ``kind`` one of ``save``, ``bag``, ``purchase``. Every
window is half-open, ``[start, end)``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from ..errors import ValidationError
from .catalogue import Rejection

log = logging.getLogger(__name__)

KINDS = ("save", "bag", "purchase")
HEADER = ["customer_id", "product_id", "timestamp", "kind"]


def parse_time(text: str) -> int:
    """ISO-8601 to integer seconds since the epoch (UTC; naive means UTC)."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_time(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class InteractionLog:
    """Events as parallel arrays, in stable input order.

    ``item`` indexes the product registry; ``customer`` indexes
    ``customer_ids``.
    """
    customer: np.ndarray
    item: np.ndarray
    ts: np.ndarray
    kind: np.ndarray
    customer_ids: list[str]
    product_ids: list[str]

    def __len__(self) -> int:
        return int(self.item.shape[0])

    @property
    def n_items(self) -> int:
        return len(self.product_ids)

    def subset(self, mask) -> "InteractionLog":
        return InteractionLog(self.customer[mask], self.item[mask], self.ts[mask], self.kind[mask],
                              self.customer_ids, self.product_ids)

    def sorted(self) -> "InteractionLog":
        """Events ordered by (customer, timestamp), ties kept in input order."""
        order = np.lexsort((self.ts, self.customer))
        return self.subset(order)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.item, minlength=self.n_items)

    def by_customer(self) -> dict[int, np.ndarray]:
        """Customer -> event positions in time order."""
        order = np.lexsort((self.ts, self.customer))
        cust = self.customer[order]
        bounds = np.flatnonzero(np.diff(cust)) + 1
        starts = np.concatenate([[0], bounds]) if order.size else np.array([], dtype=np.int64)
        return {int(cust[s]): g for s, g in zip(starts, np.split(order, bounds))}


def load_interactions(path, product_ids) -> tuple[InteractionLog, list[Rejection]]:
    """Parse an interaction CSV against a product registry (list of ids)."""
    registry = {p: i for i, p in enumerate(product_ids)}
    cust_index: dict[str, int] = {}
    cols: tuple[list, list, list, list] = ([], [], [], [])
    rejects: list[Rejection] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEADER:
            raise ValidationError(f"{path}: header must be {','.join(HEADER)}, got {header}")
        for lineno, row in enumerate(reader, 2):
            try:
                if len(row) != 4:
                    raise ValueError(f"expected 4 columns, got {len(row)}")
                cid, pid, ts, kind = row
                if pid not in registry:
                    raise ValueError(f"unknown product {pid!r}")
                if kind not in KINDS:
                    raise ValueError(f"unknown kind {kind!r}")
                t = parse_time(ts)
            except ValueError as exc:
                rejects.append(Rejection(str(path), lineno, str(exc)))
                continue
            cols[0].append(cust_index.setdefault(cid, len(cust_index)))
            cols[1].append(registry[pid])
            cols[2].append(t)
            cols[3].append(KINDS.index(kind))
    for r in rejects:
        log.warning("rejected %s", r)
    events = InteractionLog(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.int64),
                            np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int8),
                            list(cust_index), list(product_ids))
    return events, rejects


def write_interactions(path, rows) -> None:
    """Write (customer_id, product_id, ts_seconds, kind) tuples."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for cid, pid, ts, kind in rows:
            w.writerow([cid, pid, format_time(ts), kind])


@dataclass(frozen=True)
class Windows:
    """Training window ``[train_start, test_start)`` whose suffix
    ``[positive_start, test_start)`` supplies positives; test is
    ``[test_start, test_end)``."""
    train_start: int
    positive_start: int
    test_start: int
    test_end: int

    def __post_init__(self):
        if not self.train_start <= self.positive_start < self.test_start < self.test_end:
            raise ValidationError(f"windows are not ordered: {self}")

    @classmethod
    def from_iso(cls, train_start, positive_start, test_start, test_end) -> "Windows":
        return cls(*(parse_time(x) for x in (train_start, positive_start, test_start, test_end)))

    def to_iso(self) -> dict[str, str]:
        return {k: format_time(getattr(self, k)) for k in ("train_start", "positive_start", "test_start", "test_end")}

    @classmethod
    def infer(cls, events: InteractionLog, test_days: int = 30, positive_days: int = 30) -> "Windows":
        """Last ``test_days`` (day-aligned) for test, the ``positive_days`` before for positives."""
        day = 86400
        end = (int(events.ts.max()) // day + 1) * day
        test_start = end - test_days * day
        return cls(int(events.ts.min()), test_start - positive_days * day, test_start, end)


@dataclass
class InteractionSet:
    """Events partitioned by a temporal split, with per-item availability."""
    history: InteractionLog
    positive: InteractionLog
    test: InteractionLog
    windows: Windows
    first_seen: np.ndarray  # -1 for items never seen
    last_seen: np.ndarray
    rejected: int = 0

    @property
    def n_items(self) -> int:
        return self.history.n_items

    @property
    def train(self) -> InteractionLog:
        """History and positive partitions together (the whole training window)."""
        h, p = self.history, self.positive
        return InteractionLog(np.concatenate([h.customer, p.customer]), np.concatenate([h.item, p.item]),
                              np.concatenate([h.ts, p.ts]), np.concatenate([h.kind, p.kind]),
                              h.customer_ids, h.product_ids)

    def train_items(self) -> np.ndarray:
        return np.flatnonzero(self.train.item_counts() > 0)

    def cold_items(self) -> np.ndarray:
        """Items with test events but no training events."""
        train = self.train.item_counts() > 0
        test = self.test.item_counts() > 0
        return np.flatnonzero(test & ~train)

    def live_items(self) -> np.ndarray:
        """Items on offer in the test window (any test event)."""
        return np.flatnonzero(self.test.item_counts() > 0)

    def negative_pool(self, slack_days: float = 31.0) -> np.ndarray:
        """Items available across the whole training window.

        Judged from training events only: an item qualifies when it first
        appears within ``slack_days`` of the training start and last appears
        within ``slack_days`` of the training end.
        """
        w = self.windows
        slack = int(slack_days * 86400)
        train = self.train
        n = self.n_items
        first = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        last = np.full(n, -1, dtype=np.int64)
        np.minimum.at(first, train.item, train.ts)
        np.maximum.at(last, train.item, train.ts)
        return np.flatnonzero((last >= 0) & (first < w.train_start + slack) & (last >= w.test_start - slack))


def temporal_split(events: InteractionLog, windows: Windows) -> InteractionSet:
    """Partition events into history / positive / test windows.

    Events outside ``[train_start, test_end)`` are counted as rejects.
    Availability (first/last appearance) is computed over the kept events.
    """
    ts = events.ts
    hist = (ts >= windows.train_start) & (ts < windows.positive_start)
    pos = (ts >= windows.positive_start) & (ts < windows.test_start)
    test = (ts >= windows.test_start) & (ts < windows.test_end)
    for name, mask in (("history", hist), ("positive", pos), ("test", test)):
        if not mask.any():
            raise ValidationError(f"{name} window is empty")
    kept = hist | pos | test
    first = np.full(events.n_items, -1, dtype=np.int64)
    last = np.full(events.n_items, -1, dtype=np.int64)
    if kept.any():
        items, t = events.item[kept], ts[kept]
        big = np.iinfo(np.int64).max
        lo = np.full(events.n_items, big, dtype=np.int64)
        np.minimum.at(lo, items, t)
        np.maximum.at(last, items, t)
        first = np.where(lo == big, -1, lo)
    return InteractionSet(events.subset(hist), events.subset(pos), events.subset(test), windows,
                          first, last, rejected=int((~kept).sum()))
