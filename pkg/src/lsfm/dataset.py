"""Transition datasets of (s, a, r, s_next) samples."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

CSV_HEADER = ("s", "a", "r", "s_next")


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    num_states: int
    num_actions: int
    seed: int | None = None

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.int64).ravel()
        a = np.asarray(self.a, dtype=np.int64).ravel()
        r = np.asarray(self.r, dtype=float).ravel()
        sn = np.asarray(self.s_next, dtype=np.int64).ravel()
        if not (s.size == a.size == r.size == sn.size):
            raise ValueError("dataset columns must have equal length")
        if s.size and (s.min() < 0 or s.max() >= self.num_states or sn.min() < 0
                       or sn.max() >= self.num_states):
            raise ValueError("state index out of range")
        if a.size and (a.min() < 0 or a.max() >= self.num_actions):
            raise ValueError("action index out of range")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        for name, arr in (("s", s), ("a", a), ("r", r), ("s_next", sn)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.s.size

    @classmethod
    def from_records(cls, records, num_states: int, num_actions: int, seed=None):
        rec = np.asarray(records, dtype=float).reshape(-1, 4)
        return cls(rec[:, 0].astype(np.int64), rec[:, 1].astype(np.int64), rec[:, 2],
                   rec[:, 3].astype(np.int64), num_states, num_actions, seed)

    def subset(self, idx) -> "TransitionDataset":
        idx = np.asarray(idx)
        return TransitionDataset(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx],
                                 self.num_states, self.num_actions, self.seed)

    def head(self, count: int) -> "TransitionDataset":
        return self.subset(np.arange(min(count, len(self))))

    def by_action(self, a: int) -> np.ndarray:
        return np.flatnonzero(self.a == a)

    def coverage_counts(self) -> np.ndarray:
        counts = np.zeros((self.num_states, self.num_actions), dtype=int)
        np.add.at(counts, (self.s, self.a), 1)
        return counts

    def covers(self, states=None) -> bool:
        counts = self.coverage_counts()
        if states is not None:
            counts = counts[np.asarray(states, dtype=int)]
        return bool(np.all(counts > 0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in zip(self.s.tolist(), self.a.tolist(), self.r.tolist(), self.s_next.tolist()):
            writer.writerow([row[0], row[1], repr(row[2]), row[3]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, num_states: int, num_actions: int) -> "TransitionDataset":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected dataset header {header}")
        rows = [[float(x) for x in row] for row in reader if row]
        return cls.from_records(rows, num_states, num_actions)
