"""Tokenization, corpus ingestion and the inverted/forward indexes.

On-disk index layout (all integers little-endian)::

    magic            4 bytes  b"LXBI"
    version          u32
    num_docs         u32
    vocab_size       u32
    total_tokens     u64
    num_stopwords    u32, then num_stopwords x (u32 len, utf-8 bytes)
    doc id table     num_docs x (u32 len, utf-8 bytes)
    doc lengths      num_docs x u32
    lexicon          vocab_size x (u32 len, utf-8 term, u32 df, u64 cf), terms sorted
    postings         per lexicon term: df x (u32 ordinal, u32 tf)
    forward index    per doc: u32 n_terms, then n_terms x (u32 term id, u32 tf)
    crc32            u32 over every preceding byte
"""
from __future__ import annotations

import json
import re
import struct
import zlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import LexBoostError

INDEX_MAGIC = b"LXBI"
INDEX_VERSION = 1

_SPLIT = re.compile(r"[^\W_]+")


class TextIndexError(LexBoostError):
    """Base class for index build and persistence errors."""


class EmptyCorpusError(TextIndexError):
    pass


class DuplicateDocIdError(TextIndexError):
    pass


class CorruptIndexError(TextIndexError):
    pass


class IndexVersionError(TextIndexError):
    pass


@dataclass(frozen=True)
class Tokenizer:
    """Lowercase, split on anything that is not a letter or digit.

    No stemming. Stopword removal happens only if a list is supplied.
    """

    stopwords: frozenset[str] = frozenset()

    def __call__(self, text: str) -> list[str]:
        tokens = _SPLIT.findall(text.lower())
        if self.stopwords:
            tokens = [t for t in tokens if t not in self.stopwords]
        return tokens


DEFAULT_TOKENIZER = Tokenizer()


def tokenize(text: str) -> list[str]:
    return DEFAULT_TOKENIZER(text)


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    id_to_ordinal: dict[str, int] = field(repr=False)

    @classmethod
    def from_documents(cls, documents: Iterable[Document]) -> "Corpus":
        docs = tuple(documents)
        id_to_ordinal: dict[str, int] = {}
        for i, doc in enumerate(docs):
            if doc.doc_id in id_to_ordinal:
                raise DuplicateDocIdError(f"duplicate id: {doc.doc_id!r}")
            id_to_ordinal[doc.doc_id] = i
        return cls(docs, id_to_ordinal)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> "Corpus":
        return cls.from_documents(Document(i, t) for i, t in pairs)

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def doc_ids(self) -> list[str]:
        return [d.doc_id for d in self.documents]


def load_corpus(path: str | Path) -> Corpus:
    """Read `<doc_id>\\t<text>` lines, or JSON lines with `id`/`contents`.

    The JSON-lines variant is picked by a `.jsonl` suffix or a leading `{`.
    """
    path = Path(path)
    docs = []
    with path.open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if path.suffix == ".jsonl" or line.lstrip().startswith("{"):
                try:
                    rec = json.loads(line)
                    docs.append(Document(str(rec["id"]), rec["contents"]))
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    raise ValueError(f"{path}:{lineno}: bad JSON record ({e})") from e
            else:
                doc_id, sep, text = line.partition("\t")
                if not sep:
                    raise ValueError(f"{path}:{lineno}: expected <doc_id>\\t<text>")
                docs.append(Document(doc_id, text))
    return Corpus.from_documents(docs)


@dataclass(frozen=True, eq=False)
class InvertedIndex:
    doc_ids: tuple[str, ...]
    postings: dict[str, tuple[np.ndarray, np.ndarray]]  # term -> (ordinals, tfs)
    doc_lengths: np.ndarray
    doc_freq: dict[str, int]
    collection_freq: dict[str, int]
    total_tokens: int
    tokenizer: Tokenizer = DEFAULT_TOKENIZER

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def avg_doc_length(self) -> float:
        return self.total_tokens / self.num_docs

    @property
    def vocab_size(self) -> int:
        return len(self.postings)

    @property
    def id_to_ordinal(self) -> dict[str, int]:
        cached = self.__dict__.get("_id_to_ordinal")
        if cached is None:
            cached = {d: i for i, d in enumerate(self.doc_ids)}
            object.__setattr__(self, "_id_to_ordinal", cached)
        return cached


@dataclass(frozen=True, eq=False)
class ForwardIndex:
    term_freqs: tuple[dict[str, int], ...]

    def tf(self, ordinal: int, term: str) -> int:
        return self.term_freqs[ordinal].get(term, 0)

    def __len__(self) -> int:
        return len(self.term_freqs)


class Index(NamedTuple):
    inverted: InvertedIndex
    forward: ForwardIndex

    def tokenize(self, text: str) -> list[str]:
        return self.inverted.tokenizer(text)


def build_index(corpus: Corpus, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> Index:
    if len(corpus) == 0:
        raise EmptyCorpusError("empty corpus")
    seen = set()
    for doc in corpus.documents:
        if doc.doc_id in seen:
            raise DuplicateDocIdError(f"duplicate id: {doc.doc_id!r}")
        seen.add(doc.doc_id)

    forward = []
    lengths = np.zeros(len(corpus), dtype=np.int64)
    plists: dict[str, tuple[list[int], list[int]]] = {}
    for ordinal, doc in enumerate(corpus.documents):
        tokens = tokenizer(doc.text)
        lengths[ordinal] = len(tokens)
        counts = dict(Counter(tokens))
        forward.append(counts)
        for term, tf in counts.items():
            ords, tfs = plists.setdefault(term, ([], []))
            ords.append(ordinal)
            tfs.append(tf)

    postings = {}
    df = {}
    cf = {}
    for term in sorted(plists):
        ords, tfs = plists[term]
        postings[term] = (np.asarray(ords, dtype=np.int64), np.asarray(tfs, dtype=np.int64))
        df[term] = len(ords)
        cf[term] = int(sum(tfs))
    inv = InvertedIndex(
        doc_ids=tuple(corpus.doc_ids),
        postings=postings,
        doc_lengths=lengths,
        doc_freq=df,
        collection_freq=cf,
        total_tokens=int(lengths.sum()),
        tokenizer=tokenizer,
    )
    return Index(inv, ForwardIndex(tuple(forward)))


# -- persistence ------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_index(index: Index, path: str | Path) -> None:
    inv, fwd = index
    terms = list(inv.postings)
    term_id = {t: i for i, t in enumerate(terms)}
    stop = sorted(inv.tokenizer.stopwords)

    parts = [INDEX_MAGIC, struct.pack("<IIIQ", INDEX_VERSION, inv.num_docs, len(terms), inv.total_tokens)]
    parts.append(struct.pack("<I", len(stop)))
    parts.extend(_pack_str(w) for w in stop)
    parts.extend(_pack_str(d) for d in inv.doc_ids)
    parts.append(inv.doc_lengths.astype("<u4").tobytes())
    for t in terms:
        parts.append(_pack_str(t) + struct.pack("<IQ", inv.doc_freq[t], inv.collection_freq[t]))
    for t in terms:
        ords, tfs = inv.postings[t]
        parts.append(np.column_stack([ords, tfs]).astype("<u4").tobytes())
    for counts in fwd.term_freqs:
        parts.append(struct.pack("<I", len(counts)))
        pairs = sorted((term_id[t], tf) for t, tf in counts.items())
        parts.append(np.asarray(pairs, dtype="<u4").reshape(-1, 2).tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptIndexError("corrupt index: truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorruptIndexError("corrupt index: bad string") from e

    def array(self, count: int, dtype: str = "<u4") -> np.ndarray:
        width = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * width), dtype=dtype).astype(np.int64)


def _check_envelope(data: bytes, magic: bytes, version: int, what: str,
                    corrupt=CorruptIndexError, mismatch=IndexVersionError) -> bytes:
    if len(data) < len(magic) + 8:
        raise corrupt(f"corrupt {what}: file too short")
    if data[:4] != magic:
        raise corrupt(f"corrupt {what}: bad magic")
    (found,) = struct.unpack_from("<I", data, 4)
    if found != version:
        raise mismatch(f"{what} format version {found}, expected {version}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise corrupt(f"corrupt {what}: checksum mismatch")
    return body


def load_index(path: str | Path) -> Index:
    body = _check_envelope(Path(path).read_bytes(), INDEX_MAGIC, INDEX_VERSION, "index")
    r = _Reader(body)
    r.take(8)
    n_docs, n_terms, total = r.unpack("<IIQ")
    (n_stop,) = r.unpack("<I")
    stop = frozenset(r.string() for _ in range(n_stop))
    doc_ids = tuple(r.string() for _ in range(n_docs))
    lengths = r.array(n_docs)
    terms, df, cf = [], {}, {}
    for _ in range(n_terms):
        t = r.string()
        df[t], cf[t] = r.unpack("<IQ")
        terms.append(t)
    postings = {}
    for t in terms:
        pairs = r.array(2 * df[t]).reshape(-1, 2)
        postings[t] = (pairs[:, 0].copy(), pairs[:, 1].copy())
    forward = []
    for _ in range(n_docs):
        (k,) = r.unpack("<I")
        pairs = r.array(2 * k).reshape(-1, 2)
        try:
            forward.append({terms[i]: int(tf) for i, tf in pairs})
        except IndexError as e:
            raise CorruptIndexError("corrupt index: bad term id") from e
    if r.pos != len(body):
        raise CorruptIndexError("corrupt index: trailing bytes")
    inv = InvertedIndex(doc_ids, postings, lengths, df, cf, int(total), Tokenizer(stop))
    return Index(inv, ForwardIndex(tuple(forward)))
