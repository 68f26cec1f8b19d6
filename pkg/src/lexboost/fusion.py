"""LexBoost neighbour-score fusion and the multi-stage pipelines built on it.

    new(d) = lam * score(d) + (1 - lam) / n * sum(score(d') for d' in top-n neighbours of d)

Neighbour scores are looked up in the first-stage run. A neighbour the run
did not retrieve is filled per ``missing_policy``: ``zero``, or
``exact_on_demand`` which scores it through the forward index.
"""
from __future__ import annotations

import operator
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .corpus_graph import CorpusGraph, EmbeddingMatrix
from .errors import LexBoostError
from .runs import Run
from .scorers import Query, ScoringModel, retrieve, score_documents
from .text_index import Index


class FusionError(LexBoostError):
    pass


class MissingPolicy(str, Enum):
    ZERO = "zero"
    EXACT_ON_DEMAND = "exact_on_demand"


@dataclass(frozen=True)
class FusionConfig:
    lam: float = 0.7
    n: int = 16
    missing_policy: MissingPolicy = MissingPolicy.ZERO

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise FusionError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.n < 1:
            raise FusionError(f"n must be >= 1, got {self.n}")
        try:
            object.__setattr__(self, "missing_policy", MissingPolicy(self.missing_policy))
        except ValueError:
            raise FusionError(f"unknown missing policy {self.missing_policy!r}") from None


@dataclass(frozen=True)
class ScorerContext:
    query: Query
    model: ScoringModel
    index: Index


@dataclass
class LookupCounter:
    """Instrumentation: neighbour score lookups and on-demand scorer calls."""

    lookups: int = 0
    scorer_calls: int = 0


def _position_buffer(graph: CorpusGraph) -> np.ndarray:
    """Per-thread, graph-sized array of -1s mapping ordinal -> run position.

    Callers set the run's entries, gather, then reset those entries, so each
    call costs O(|run| * n) rather than O(N).
    """
    local = graph.__dict__.get("_positions")
    if local is None:
        local = threading.local()
        object.__setattr__(graph, "_positions", local)
    buf = getattr(local, "buf", None)
    if buf is None:
        buf = local.buf = np.full(graph.num_docs, -1, dtype=np.int64)
    return buf


def lexboost_rescore(run: Run, graph: CorpusGraph, cfg: FusionConfig,
                     scorer_ctx: ScorerContext | None = None,
                     counter: LookupCounter | None = None) -> Run:
    if cfg.n > graph.k:
        raise FusionError(f"n={cfg.n} exceeds the graph's k={graph.k}")
    if cfg.missing_policy is MissingPolicy.EXACT_ON_DEMAND and scorer_ctx is None:
        raise FusionError("exact_on_demand needs a scorer context")
    try:
        looked_up = operator.itemgetter(*run.doc_ids)(graph.id_to_ordinal) if len(run) else ()
    except KeyError as e:
        raise FusionError(f"document {e.args[0]!r} is not in the graph's corpus") from None
    ords = np.array(looked_up if len(run) != 1 else (looked_up,), dtype=np.int64)
    if cfg.lam == 1.0:
        # the neighbour term has weight zero; return the input untouched so scores stay bit-identical
        return run
    if len(run) == 0:
        return run

    nbrs = graph.neighbor_ids[ords, :cfg.n]
    pos = _position_buffer(graph)
    pos[ords] = np.arange(len(ords))
    try:
        at = pos[nbrs]
    finally:
        pos[ords] = -1
    # position -1 (not in the run) reads the appended 0.0
    nbr_scores = np.concatenate((run.scores, [0.0]))[at]
    if counter is not None:
        counter.lookups += nbrs.size

    found = at >= 0
    if cfg.missing_policy is MissingPolicy.EXACT_ON_DEMAND and not found.all():
        missing = np.unique(nbrs[~found])
        ctx = scorer_ctx
        if ctx.index.inverted.doc_ids != graph.doc_ids:
            raise FusionError("scorer index and graph were built over different corpora")
        extra = score_documents(ctx.query, missing, ctx.model, ctx.index)
        if counter is not None:
            counter.scorer_calls += len(missing)
        nbr_scores[~found] = extra[np.searchsorted(missing, nbrs[~found])]

    fused = cfg.lam * run.scores + ((1.0 - cfg.lam) / cfg.n) * nbr_scores.sum(axis=1)
    # same order as Run.ranked (score desc, doc_id asc) with an integer tie-break key
    order = np.lexsort((graph.id_rank[ords], -fused))
    ids = run.doc_ids
    # doc ids are unique and the order is sorted by construction
    return Run._trusted(run.query_id, tuple([ids[i] for i in order.tolist()]), fused[order],
                        run.tag + ">>lexboost")


def cosine_scores(query_vector: np.ndarray, rows: np.ndarray) -> np.ndarray:
    q = np.asarray(query_vector, dtype=np.float64)
    qn = np.linalg.norm(q)
    rn = np.linalg.norm(rows, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = rows @ q / (rn * qn)
    return np.nan_to_num(out, nan=0.0)


def rerank_with_embeddings(run: Run, query_vector, emb: EmbeddingMatrix, top_k: int = 1000,
                           rank_gap: float = 1.0) -> Run:
    """Re-score the top ``top_k`` by cosine; the tail keeps its order below the block."""
    if top_k < 1:
        raise FusionError("top_k must be >= 1")
    query_vector = np.asarray(query_vector, dtype=np.float64).ravel()
    if query_vector.shape[0] != emb.dim:
        raise FusionError(f"query vector dim {query_vector.shape[0]} != embedding dim {emb.dim}")
    tag = run.tag + ">>rerank"
    if len(run) == 0:
        return run.with_tag(tag)
    head = run.doc_ids[:top_k]
    try:
        rows = np.vstack([emb.row(emb.id_to_ordinal[d]) for d in head])
    except KeyError as e:
        raise FusionError(f"no embedding for document {e.args[0]!r}") from None
    block = Run.ranked(run.query_id, head, cosine_scores(query_vector, rows), tag=tag)
    tail_ids = run.doc_ids[top_k:]
    if not tail_ids:
        return block
    floor = block.scores[-1]
    tail_scores = floor - rank_gap * np.arange(1, len(tail_ids) + 1, dtype=np.float64)
    return Run(run.query_id, block.doc_ids + tail_ids, np.concatenate([block.scores, tail_scores]), tag)


# -- pipelines --------------------------------------------------------------

PIPELINE_SHAPES = (
    ("lexical",),
    ("lexical", "lexboost"),
    ("lexical", "rerank"),
    ("lexical", "lexboost", "rerank"),
)


@dataclass
class Pipeline:
    """Stage chain from candidate generation to optional embedding re-rank."""

    model: ScoringModel
    index: Index
    stages: tuple[str, ...] = ("lexical",)
    cutoff: int = 1000
    graph: CorpusGraph | None = None
    fusion: FusionConfig = field(default_factory=FusionConfig)
    embeddings: EmbeddingMatrix | None = None
    rerank_depth: int = 1000

    def __post_init__(self):
        self.stages = tuple(self.stages)
        if self.stages not in PIPELINE_SHAPES:
            raise FusionError(f"unsupported stage list {self.stages}; expected one of {PIPELINE_SHAPES}")
        if "lexboost" in self.stages:
            if self.graph is None:
                raise FusionError("lexboost stage needs a corpus graph")
            if self.fusion.n > self.graph.k:
                raise FusionError(f"n={self.fusion.n} exceeds the graph's k={self.graph.k}")
        if "rerank" in self.stages and self.embeddings is None:
            raise FusionError("rerank stage needs document embeddings")

    def first_stage(self, query: Query) -> Run:
        return retrieve(query, self.model, self.index, self.cutoff)

    def finish(self, query: Query, first: Run, query_vector=None,
               fusion: FusionConfig | None = None, counter: LookupCounter | None = None) -> Run:
        """Apply every stage after retrieval to an existing first-stage run."""
        run = first
        if "lexboost" in self.stages:
            ctx = ScorerContext(query, self.model, self.index)
            run = lexboost_rescore(run, self.graph, fusion or self.fusion, ctx, counter)
        if "rerank" in self.stages:
            if query_vector is None:
                raise FusionError("rerank stage needs a query vector")
            run = rerank_with_embeddings(run, query_vector, self.embeddings, self.rerank_depth)
        return run

    def __call__(self, query: Query, query_vector=None) -> Run:
        return self.finish(query, self.first_stage(query), query_vector)


def pipeline(query: Query, stages: Sequence[str], **kwargs) -> Run:
    query_vector = kwargs.pop("query_vector", None)
    return Pipeline(stages=tuple(stages), **kwargs)(query, query_vector)
