from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import LexBoostError


class RunError(LexBoostError):
    pass


def rank_order(doc_ids: Sequence[str], scores: np.ndarray) -> np.ndarray:
    """Indices sorting by score descending, then doc_id ascending."""
    if len(doc_ids) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.lexsort((np.asarray(doc_ids, dtype=str), -np.asarray(scores, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class Run:
    """One query's ranked list. Rank of entry i is i + 1."""

    query_id: str
    doc_ids: tuple[str, ...]
    scores: np.ndarray
    tag: str = "run"

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        if scores.shape != (len(self.doc_ids),):
            raise RunError("doc_ids and scores differ in length")
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise RunError(f"duplicate doc_id in run for query {self.query_id!r}")
        if len(scores) > 1 and np.any(scores[1:] > scores[:-1]):
            raise RunError(f"scores not non-increasing for query {self.query_id!r}")

    @classmethod
    def _trusted(cls, query_id: str, doc_ids: tuple[str, ...], scores: np.ndarray, tag: str) -> "Run":
        """Skip validation; for callers that already hold unique, sorted, float64 data."""
        run = object.__new__(cls)
        for name, value in (("query_id", query_id), ("doc_ids", doc_ids), ("scores", scores), ("tag", tag)):
            object.__setattr__(run, name, value)
        return run

    @classmethod
    def ranked(cls, query_id: str, doc_ids: Sequence[str], scores, tag: str = "run",
               cutoff: int | None = None) -> "Run":
        scores = np.asarray(scores, dtype=np.float64)
        order = rank_order(doc_ids, scores)
        if cutoff is not None:
            order = order[:cutoff]
        return cls(query_id, tuple(doc_ids[i] for i in order), scores[order], tag)

    def __len__(self) -> int:
        return len(self.doc_ids)

    def __iter__(self) -> Iterator[tuple[str, float, int]]:
        for i, (d, s) in enumerate(zip(self.doc_ids, self.scores)):
            yield d, float(s), i + 1

    def score_map(self) -> dict[str, float]:
        return dict(zip(self.doc_ids, self.scores.tolist()))

    def with_tag(self, tag: str) -> "Run":
        return Run(self.query_id, self.doc_ids, self.scores, tag)

    def same_as(self, other: "Run") -> bool:
        return (self.query_id == other.query_id and self.doc_ids == other.doc_ids
                and self.tag == other.tag and np.array_equal(self.scores, other.scores))
