"""Document embeddings and the exact k-nearest-neighbour corpus graph.

Graph file layout (little-endian)::

    magic b"LXBG", u32 version, u32 num_docs, u32 k, u32 stored_per_node
    doc id table     num_docs x (u32 len, utf-8 bytes)
    neighbours       num_docs x stored_per_node u32 ordinals
    similarities     num_docs x stored_per_node f64
    crc32            u32 over every preceding byte

Binary embedding layout::

    magic b"LXBE", u32 version, u32 num_rows, u32 dim
    id table         num_rows x (u32 len, utf-8 bytes)
    vectors          num_rows x dim f32, row-major
    crc32            u32
"""
from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import LexBoostError
from .scorers import Query
from .text_index import Index, _pack_str, _Reader

log = logging.getLogger(__name__)

GRAPH_MAGIC = b"LXBG"
GRAPH_VERSION = 1
EMB_MAGIC = b"LXBE"
EMB_VERSION = 1
DEFAULT_K = 16


class GraphError(LexBoostError):
    pass


class CorruptGraphError(GraphError):
    pass


class GraphVersionError(GraphError):
    pass


class CorpusTooSmallError(GraphError):
    pass


class EmbeddingError(LexBoostError):
    pass


class MissingEmbeddingError(EmbeddingError):
    pass


class DimensionMismatchError(EmbeddingError):
    pass


class ZeroVectorError(EmbeddingError):
    pass


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    doc_ids: tuple[str, ...]
    vectors: np.ndarray | sp.csr_matrix
    source: str = "ingested"  # or "tfidf_builtin"

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.doc_ids):
            raise DimensionMismatchError("row count differs from id count")
        norms = row_norms(self.vectors)
        zero = np.flatnonzero(norms == 0)
        if len(zero):
            raise ZeroVectorError(f"zero vector for id {self.doc_ids[zero[0]]!r}")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def id_to_ordinal(self) -> dict[str, int]:
        cached = self.__dict__.get("_id_to_ordinal")
        if cached is None:
            cached = {d: i for i, d in enumerate(self.doc_ids)}
            object.__setattr__(self, "_id_to_ordinal", cached)
        return cached

    def row(self, ordinal: int) -> np.ndarray:
        r = self.vectors[ordinal]
        return np.asarray(r.todense()).ravel() if sp.issparse(r) else np.asarray(r, dtype=np.float64)


def row_norms(x) -> np.ndarray:
    if sp.issparse(x):
        return np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    return np.linalg.norm(np.asarray(x, dtype=np.float64), axis=1)


def _normalize(x):
    n = row_norms(x)
    if sp.issparse(x):
        return sp.diags(1.0 / n) @ x
    return x / n[:, None]


# -- embeddings -------------------------------------------------------------

def embed_tfidf(index: Index) -> EmbeddingMatrix:
    """Sparse tf * ln(N/df) vectors, L2-normalised.

    A document whose every term occurs in all documents gets a uniform unit
    vector over its own terms instead of the zero vector.
    """
    inv, fwd = index
    vocab = {t: i for i, t in enumerate(inv.postings)}
    N = inv.num_docs
    idf = {t: math.log(N / df) for t, df in inv.doc_freq.items()}
    rows, cols, vals = [], [], []
    for ordinal, counts in enumerate(fwd.term_freqs):
        if not counts:
            raise ZeroVectorError(f"document {inv.doc_ids[ordinal]!r} has no terms")
        terms = sorted(counts, key=vocab.__getitem__)
        w = np.array([counts[t] * idf[t] for t in terms])
        if not np.any(w):
            w = np.ones(len(terms))
        w /= np.linalg.norm(w)
        rows.extend([ordinal] * len(terms))
        cols.extend(vocab[t] for t in terms)
        vals.extend(w.tolist())
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(N, len(vocab)), dtype=np.float64)
    return EmbeddingMatrix(inv.doc_ids, mat, source="tfidf_builtin")


def embed_query_tfidf(query: Query, index: Index) -> np.ndarray:
    """Query vector in the same space as `embed_tfidf`; unknown terms dropped."""
    inv = index.inverted
    vocab = {t: i for i, t in enumerate(inv.postings)}
    vec = np.zeros(len(vocab))
    for t, qtf in query.term_counts():
        if t in vocab:
            vec[vocab[t]] = qtf * math.log(inv.num_docs / inv.doc_freq[t])
    n = np.linalg.norm(vec)
    return vec / n if n > 0 else vec


def _read_jsonl_vectors(path: Path) -> dict[str, list[float]]:
    out = {}
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key, vec = str(rec["id"]), [float(v) for v in rec["vector"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise EmbeddingError(f"{path}:{lineno}: bad embedding record ({e})") from e
            if key in out:
                raise EmbeddingError(f"{path}:{lineno}: duplicate embedding for id {key!r}")
            out[key] = vec
    return out


def _read_binary_vectors(path: Path) -> dict[str, np.ndarray]:
    from .text_index import _check_envelope

    body = _check_envelope(path.read_bytes(), EMB_MAGIC, EMB_VERSION, "embeddings",
                           corrupt=EmbeddingError, mismatch=EmbeddingError)
    r = _Reader(body)
    try:
        r.take(8)
        n, dim = r.unpack("<II")
        ids = [r.string() for _ in range(n)]
        mat = np.frombuffer(r.take(4 * n * dim), dtype="<f4").reshape(n, dim).astype(np.float64)
    except LexBoostError as e:
        raise EmbeddingError(f"{path}: {e}") from e
    if len(set(ids)) != n:
        raise EmbeddingError(f"{path}: duplicate ids in id table")
    return dict(zip(ids, mat))


def read_vectors(path: str | Path) -> dict[str, np.ndarray | list[float]]:
    """Id -> vector mapping from JSON lines or the binary format (sniffed by magic)."""
    path = Path(path)
    with path.open("rb") as f:
        head = f.read(4)
    return _read_binary_vectors(path) if head == EMB_MAGIC else _read_jsonl_vectors(path)


def write_binary_embeddings(doc_ids: Sequence[str], vectors: np.ndarray, path: str | Path) -> None:
    vectors = np.asarray(vectors)
    parts = [EMB_MAGIC, struct.pack("<III", EMB_VERSION, vectors.shape[0], vectors.shape[1])]
    parts.extend(_pack_str(d) for d in doc_ids)
    parts.append(vectors.astype("<f4").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def ingest_embeddings(path: str | Path, doc_ids: Sequence[str]) -> EmbeddingMatrix:
    """Load vectors for ``doc_ids`` (a corpus or index id table) in ordinal order."""
    vectors = read_vectors(path)
    extra = len(set(vectors) - set(doc_ids))
    if extra:
        log.warning("%s: ignoring %d embeddings for ids outside the corpus", path, extra)
    rows = []
    dim = None
    for doc_id in doc_ids:
        if doc_id not in vectors:
            raise MissingEmbeddingError(f"missing embedding for id {doc_id!r}")
        v = np.asarray(vectors[doc_id], dtype=np.float64)
        if dim is None:
            dim = len(v)
        elif len(v) != dim:
            raise DimensionMismatchError(f"id {doc_id!r} has dim {len(v)}, expected {dim}")
        rows.append(v)
    return EmbeddingMatrix(tuple(doc_ids), np.vstack(rows) if rows else np.zeros((0, 0)), "ingested")


# -- graph ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CorpusGraph:
    """Directed k-NN graph. Row i of ``neighbor_ids``/``similarities`` is doc i's list."""

    k: int
    doc_ids: tuple[str, ...]
    neighbor_ids: np.ndarray  # (N, min(k, N-1)) int64
    similarities: np.ndarray  # same shape, float64, descending per row

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def stored(self) -> int:
        return self.neighbor_ids.shape[1]

    @property
    def id_to_ordinal(self) -> dict[str, int]:
        cached = self.__dict__.get("_id_to_ordinal")
        if cached is None:
            cached = {d: i for i, d in enumerate(self.doc_ids)}
            object.__setattr__(self, "_id_to_ordinal", cached)
        return cached

    @property
    def id_rank(self) -> np.ndarray:
        """Position of each ordinal's doc_id in lexicographic order (integer tie-break key)."""
        cached = self.__dict__.get("_id_rank")
        if cached is None:
            cached = np.empty(self.num_docs, dtype=np.int64)
            cached[np.argsort(np.asarray(self.doc_ids, dtype=str), kind="stable")] = np.arange(self.num_docs)
            object.__setattr__(self, "_id_rank", cached)
        return cached

    def same_as(self, other: "CorpusGraph") -> bool:
        return (self.k == other.k and self.doc_ids == other.doc_ids
                and np.array_equal(self.neighbor_ids, other.neighbor_ids)
                and np.array_equal(self.similarities, other.similarities))


def _top_k_rows(sims: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Per row: m largest values, ties by column ascending. Self already masked."""
    n_rows, n_cols = sims.shape
    ids = np.empty((n_rows, m), dtype=np.int64)
    vals = np.empty((n_rows, m), dtype=np.float64)
    cols = np.arange(n_cols)
    for r in range(n_rows):
        row = sims[r]
        if m < n_cols:
            # everything >= the m-th largest value, so boundary ties survive
            thresh = np.partition(row, n_cols - m)[n_cols - m]
            cand = np.flatnonzero(row >= thresh)
        else:
            cand = cols
        order = np.lexsort((cand, -row[cand]))[:m]
        ids[r] = cand[order]
        vals[r] = row[cand[order]]
    return ids, vals


def build_graph(emb: EmbeddingMatrix, k: int = DEFAULT_K, similarity: str = "cosine",
                block_size: int = 1024, workers: int = 1) -> CorpusGraph:
    """Exact brute-force k-NN over all document pairs, self excluded."""
    if k < 1:
        raise GraphError("k must be >= 1")
    N = len(emb.doc_ids)
    if N < 2:
        raise CorpusTooSmallError("corpus too small: need at least 2 documents")
    if similarity == "cosine":
        x = _normalize(emb.vectors)
    elif similarity == "dot":
        x = emb.vectors
    else:
        raise GraphError(f"unknown similarity {similarity!r}")
    xt = x.T.tocsc() if sp.issparse(x) else np.ascontiguousarray(x.T)
    m = min(k, N - 1)

    def block(start: int):
        stop = min(start + block_size, N)
        s = x[start:stop] @ xt
        s = np.asarray(s.todense()) if sp.issparse(s) else np.array(s, dtype=np.float64)
        s[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        return _top_k_rows(s, m)

    starts = range(0, N, block_size)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(block, starts))
    else:
        parts = [block(s) for s in starts]
    ids = np.vstack([p[0] for p in parts])
    vals = np.vstack([p[1] for p in parts])
    return CorpusGraph(k, tuple(emb.doc_ids), ids, vals)


def neighbors(graph: CorpusGraph, doc_ordinal: int, n: int) -> list[tuple[int, float]]:
    if n < 1:
        raise GraphError("n must be >= 1")
    if n > graph.k:
        raise GraphError(f"graph stores only k={graph.k} neighbors, asked for {n}")
    ids = graph.neighbor_ids[doc_ordinal, :n]
    sims = graph.similarities[doc_ordinal, :n]
    return list(zip(ids.tolist(), sims.tolist()))


def save_graph(graph: CorpusGraph, path: str | Path) -> None:
    N, m = graph.neighbor_ids.shape
    parts = [GRAPH_MAGIC, struct.pack("<IIII", GRAPH_VERSION, N, graph.k, m)]
    parts.extend(_pack_str(d) for d in graph.doc_ids)
    parts.append(graph.neighbor_ids.astype("<u4").tobytes())
    parts.append(graph.similarities.astype("<f8").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_graph_header(path: str | Path) -> tuple[int, int]:
    """(num_docs, k) from a graph file without reading the rest."""
    with Path(path).open("rb") as f:
        head = f.read(20)
    if len(head) < 20 or head[:4] != GRAPH_MAGIC:
        raise CorruptGraphError("corrupt graph: bad header")
    version, N, k, _ = struct.unpack("<IIII", head[4:])
    if version != GRAPH_VERSION:
        raise GraphVersionError(f"graph format version {version}, expected {GRAPH_VERSION}")
    return N, k


def load_graph(path: str | Path) -> CorpusGraph:
    from .text_index import CorruptIndexError, _check_envelope

    body = _check_envelope(Path(path).read_bytes(), GRAPH_MAGIC, GRAPH_VERSION, "graph",
                           corrupt=CorruptGraphError, mismatch=GraphVersionError)
    r = _Reader(body)
    try:
        r.take(8)
        N, k, m = r.unpack("<III")
        doc_ids = tuple(r.string() for _ in range(N))
        ids = r.array(N * m).reshape(N, m)
        sims = np.frombuffer(r.take(8 * N * m), dtype="<f8").astype(np.float64).reshape(N, m)
    except CorruptIndexError as e:
        raise CorruptGraphError(str(e).replace("index", "graph")) from e
    if r.pos != len(body) or (N and ids.size and ids.max() >= N):
        raise CorruptGraphError("corrupt graph: inconsistent sections")
    return CorpusGraph(k, doc_ids, ids, sims)
