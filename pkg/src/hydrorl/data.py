"""Transition records and their CSV form."""

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import InvalidInputError

TARGET = "target"
SOURCE = "source"
CSV_HEADER = ["s", "a", "r", "s_next", "done", "domain"]


class SampleBatch(NamedTuple):
    """Light-weight batch used inside training loops (no validation)."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    weight: np.ndarray = None

    def __len__(self):
        return self.s.shape[0]


@dataclass(eq=False)
class Dataset:
    """Column-oriented batch of ``(s, a, r, s', done, domain)`` transitions.

    ``done`` marks episode boundaries of the collecting process. Absorbing
    states are part of the MDP, so learners never cut bootstrapping on it.
    ``weight`` is used only by sample batches.
    """

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray = None
    domain: np.ndarray = None
    weight: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=int)
        n = self.s.shape[0]
        self.a = np.asarray(self.a, dtype=int)
        self.r = np.asarray(self.r, dtype=float)
        self.s_next = np.asarray(self.s_next, dtype=int)
        self.done = (np.zeros(n, dtype=bool) if self.done is None
                     else np.asarray(self.done, dtype=bool))
        if self.domain is None:
            self.domain = np.full(n, TARGET, dtype=object)
        elif isinstance(self.domain, str):
            self.domain = np.full(n, self.domain, dtype=object)
        else:
            self.domain = np.asarray(self.domain, dtype=object)
        self.weight = (np.ones(n) if self.weight is None
                       else np.asarray(self.weight, dtype=float))
        for name in ("a", "r", "s_next", "done", "domain", "weight"):
            if getattr(self, name).shape != (n,):
                raise InvalidInputError(f"column {name!r} has the wrong length")
        if np.any(self.weight < 0):
            raise InvalidInputError("weights must be non-negative")
        if not set(np.unique(self.domain)) <= {TARGET, SOURCE}:
            raise InvalidInputError("domain tags must be 'target' or 'source'")

    def __len__(self):
        return self.s.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx],
                       self.done[idx], self.domain[idx], self.weight[idx],
                       dict(self.meta))

    def batch(self, idx):
        """Unvalidated :class:`SampleBatch` view of the rows ``idx``."""
        return SampleBatch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx],
                           self.weight[idx])

    def check_bounds(self, n_states, n_actions):
        for col, hi in ((self.s, n_states), (self.s_next, n_states),
                        (self.a, n_actions)):
            if col.size and (col.min() < 0 or col.max() >= hi):
                raise InvalidInputError("state or action index out of range")

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0, int))

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        cols = {k: np.concatenate([getattr(p, k) for p in parts])
                for k in ("s", "a", "r", "s_next", "done", "domain", "weight")}
        return cls(**cols)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in zip(self.s, self.a, self.r, self.s_next, self.done, self.domain):
            s, a, r, sn, d, dom = row
            w.writerow([int(s), int(a), repr(float(r)), int(sn), int(d), dom])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != CSV_HEADER:
            raise InvalidInputError(f"dataset header must be {CSV_HEADER}, got {header}")
        rows = list(reader)
        if not rows:
            return cls.empty()
        s, a, r, sn, d, dom = zip(*rows)
        return cls(np.array(s, int), np.array(a, int), np.array(r, float),
                   np.array(sn, int), np.array(d, int).astype(bool),
                   np.array(dom, dtype=object))
