"""First-stage lexical scorers: BM25, PL2, DPH and Dirichlet query likelihood.

All four share one vectorised scoring path, ``score_documents``. Both
``score_document`` and ``retrieve`` go through it, so a document scored on
its own and the same document scored inside a retrieval agree bit for bit.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import LexBoostError
from .runs import Run
from .text_index import DEFAULT_TOKENIZER, Index, Tokenizer

LOG2_E = math.log2(math.e)
TWO_PI = 2.0 * math.pi


class ScoringModelError(LexBoostError):
    pass


class ModelKind(str, Enum):
    BM25 = "bm25"
    PL2 = "pl2"
    DPH = "dph"
    QLD = "qld"


DEFAULT_PARAMS = {
    ModelKind.BM25: {"k1": 1.2, "b": 0.75},
    ModelKind.PL2: {"c": 1.0},
    ModelKind.DPH: {},
    ModelKind.QLD: {"mu": 1000.0},
}


@dataclass(frozen=True)
class ScoringModel:
    kind: ModelKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            kind = ModelKind(self.kind)
        except ValueError:
            raise ScoringModelError(f"unknown model kind: {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        merged = dict(DEFAULT_PARAMS[kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ScoringModelError(f"{kind.value} takes no parameter(s) {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)
        p = merged
        if kind is ModelKind.BM25 and not (p["k1"] > 0 and 0 <= p["b"] <= 1):
            raise ScoringModelError(f"bm25 needs k1 > 0 and 0 <= b <= 1, got {p}")
        if kind is ModelKind.PL2 and not p["c"] > 0:
            raise ScoringModelError(f"pl2 needs c > 0, got {p}")
        if kind is ModelKind.QLD and not p["mu"] > 0:
            raise ScoringModelError(f"qld needs mu > 0, got {p}")

    @classmethod
    def bm25(cls, k1: float = 1.2, b: float = 0.75) -> "ScoringModel":
        return cls(ModelKind.BM25, {"k1": k1, "b": b})

    @classmethod
    def pl2(cls, c: float = 1.0) -> "ScoringModel":
        return cls(ModelKind.PL2, {"c": c})

    @classmethod
    def dph(cls) -> "ScoringModel":
        return cls(ModelKind.DPH)

    @classmethod
    def qld(cls, mu: float = 1000.0) -> "ScoringModel":
        return cls(ModelKind.QLD, {"mu": mu})

    @property
    def name(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    terms: tuple[str, ...]

    @classmethod
    def parse(cls, query_id: str, text: str, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> "Query":
        return cls(query_id, text, tuple(tokenizer(text)))

    def term_counts(self) -> list[tuple[str, int]]:
        """Distinct terms with their query frequency, in first-occurrence order."""
        return list(Counter(self.terms).items())


def _tf_column(index: Index, ords: np.ndarray, term: str) -> np.ndarray:
    tfs = index.forward.term_freqs
    return np.fromiter((tfs[o].get(term, 0) for o in ords.tolist()), dtype=np.float64, count=len(ords))


def _bm25(tf, dl, stats, p):
    N, df, adl = stats["N"], stats["df"], stats["adl"]
    idf = math.log((N - df + 0.5) / (df + 0.5) + 1.0)
    k1, b = p["k1"], p["b"]
    return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / adl))


def _pl2(tf, dl, stats, p):
    lam = stats["F"] / stats["N"]
    out = np.zeros_like(tf)
    ok = tf > 0
    tf, dl = tf[ok], dl[ok]
    tfn = tf * np.log2(1.0 + p["c"] * stats["adl"] / dl)
    # tfn <= 0 cannot be scored (log of non-positive); such terms contribute nothing
    good = tfn > 0
    tfn = tfn[good]
    val = (1.0 / (tfn + 1.0)) * (
        tfn * np.log2(tfn / lam) + (lam - tfn) * LOG2_E + 0.5 * np.log2(TWO_PI * tfn)
    )
    sub = np.zeros(len(tf))
    sub[good] = val
    out[ok] = sub
    return out


def _dph(tf, dl, stats, p):
    N, F, adl = stats["N"], stats["F"], stats["adl"]
    out = np.zeros_like(tf)
    ok = tf > 0
    tf, dl = tf[ok], dl[ok]
    f = tf / dl
    good = f < 1.0
    tf, dl, f = tf[good], dl[good], f[good]
    norm = (1.0 - f) * (1.0 - f) / (tf + 1.0)
    val = norm * (tf * np.log2(tf * (adl / dl) * (N / F)) + 0.5 * np.log2(TWO_PI * tf * (1.0 - f)))
    sub = np.zeros(int(ok.sum()))
    sub[good] = val
    out[ok] = sub
    return out


def _qld(tf, dl, stats, p):
    p_c = stats["F"] / stats["total"]
    return np.log1p(tf / (p["mu"] * p_c))


_CONTRIB = {ModelKind.BM25: _bm25, ModelKind.PL2: _pl2, ModelKind.DPH: _dph, ModelKind.QLD: _qld}


def score_documents(query: Query, ordinals: Sequence[int] | np.ndarray, model: ScoringModel,
                    index: Index) -> np.ndarray:
    """Score each ordinal against the query; returns float64 array aligned to ``ordinals``."""
    inv = index.inverted
    ords = np.asarray(ordinals, dtype=np.int64)
    if len(ords) and (ords.min() < 0 or ords.max() >= inv.num_docs):
        raise ScoringModelError("document ordinal out of range")
    dl = inv.doc_lengths[ords].astype(np.float64)
    total = np.zeros(len(ords), dtype=np.float64)
    contrib = _CONTRIB[model.kind]
    base = {"N": inv.num_docs, "adl": inv.avg_doc_length, "total": inv.total_tokens}
    scored_occurrences = 0
    for term, qtf in query.term_counts():
        F = inv.collection_freq.get(term, 0)
        if F == 0:
            continue
        scored_occurrences += qtf
        tf = _tf_column(index, ords, term)
        stats = dict(base, df=inv.doc_freq[term], F=F)
        with np.errstate(divide="ignore", invalid="ignore"):
            total += qtf * contrib(tf, dl, stats, model.params)
    if model.kind is ModelKind.QLD and scored_occurrences:
        mu = model.params["mu"]
        total += scored_occurrences * np.log(mu / (dl + mu))
    return total


def score_document(query: Query, doc_ordinal: int, model: ScoringModel, index: Index) -> float:
    return float(score_documents(query, [doc_ordinal], model, index)[0])


def candidate_ordinals(query: Query, index: Index) -> np.ndarray:
    """Documents holding at least one query term present in the collection."""
    lists = [index.inverted.postings[t][0] for t, _ in query.term_counts() if t in index.inverted.postings]
    if not lists:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(lists))


def retrieve(query: Query, model: ScoringModel, index: Index, cutoff: int = 1000) -> Run:
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    cands = candidate_ordinals(query, index)
    scores = score_documents(query, cands, model, index)
    ids = index.inverted.doc_ids
    return Run.ranked(query.query_id, [ids[o] for o in cands.tolist()], scores, tag=model.name, cutoff=cutoff)


def load_queries(path, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> list[Query]:
    """Read `<query_id>\\t<text>` lines, preserving file order."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            qid, sep, text = line.partition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected <query_id>\\t<text>")
            out.append(Query.parse(qid, text, tokenizer))
    return out
