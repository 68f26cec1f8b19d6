"""Seeded topical corpus with held-out queries and graded judgments.

Topics own a general vocabulary and split into subtopics with their own,
partly leaking, word lists. Documents mix subtopic words, topic words,
shared background words and a slice of one other topic's vocabulary (the
overlap noise). A query takes words from one subtopic plus one topic word;
documents of that subtopic are relevant (graded by subtopic density), the
rest of the topic and a sample of other topics are judged non-relevant.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import Qrels, write_qrels
from .text_index import Corpus


@dataclass(frozen=True)
class SyntheticConfig:
    n_topics: int = 10
    docs_per_topic: int = 100
    n_queries: int = 20
    topic_vocab: int = 40
    n_subtopics: int = 4
    subtopic_vocab: int = 12
    subtopic_frac: tuple[float, float] = (0.03, 0.15)
    subtopic_leak: float = 0.3
    background_vocab: int = 300
    doc_len: tuple[int, int] = (30, 80)
    topical_frac: tuple[float, float] = (0.2, 0.5)
    noise_frac: float = 0.15
    query_len: int = 3
    judged_nonrelevant: int = 30
    seed: int = 13


FIXTURE_CONFIG = SyntheticConfig(n_topics=5, docs_per_topic=20, n_queries=10,
                                 judged_nonrelevant=10, seed=7)


@dataclass
class SyntheticCollection:
    corpus: Corpus
    queries: dict[str, str]
    qrels: Qrels
    doc_topic: dict[str, int]

    def write(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with (d / "corpus.tsv").open("w", encoding="utf-8") as f:
            for doc in self.corpus.documents:
                f.write(f"{doc.doc_id}\t{doc.text}\n")
        with (d / "queries.tsv").open("w", encoding="utf-8") as f:
            for qid, text in self.queries.items():
                f.write(f"{qid}\t{text}\n")
        write_qrels(self.qrels, d / "qrels.txt")


def _zipf_weights(n: int, s: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def generate(cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticCollection:
    rng = np.random.default_rng(cfg.seed)
    topic_words = [[f"t{t}w{j}" for j in range(cfg.topic_vocab)] for t in range(cfg.n_topics)]
    sub_words = [[[f"t{t}s{s}w{j}" for j in range(cfg.subtopic_vocab)] for s in range(cfg.n_subtopics)]
                 for t in range(cfg.n_topics)]
    background = [f"w{j}" for j in range(cfg.background_vocab)]
    topic_p = _zipf_weights(cfg.topic_vocab, 0.8)
    sub_p = _zipf_weights(cfg.subtopic_vocab, 0.5)
    back_p = _zipf_weights(cfg.background_vocab, 1.0)

    docs, doc_topic, doc_sub, purity = [], {}, {}, {}
    for t in range(cfg.n_topics):
        for i in range(cfg.docs_per_topic):
            doc_id = f"D{t:02d}{i:03d}"
            length = int(rng.integers(cfg.doc_len[0], cfg.doc_len[1] + 1))
            sub = int(rng.integers(cfg.n_subtopics))
            frac = float(rng.uniform(*cfg.subtopic_frac))
            n_sub = max(1, int(round(frac * length)))
            n_topic = max(1, int(round(rng.uniform(*cfg.topical_frac) * length)))
            n_noise = int(round(cfg.noise_frac * length))
            n_back = max(0, length - n_sub - n_topic - n_noise)
            other = int(rng.choice([o for o in range(cfg.n_topics) if o != t])) if cfg.n_topics > 1 else t
            n_leak = int(rng.binomial(n_sub, cfg.subtopic_leak)) if cfg.n_subtopics > 1 else 0
            sibling = int(rng.choice([s for s in range(cfg.n_subtopics) if s != sub])) if n_leak else sub
            tokens = (
                list(rng.choice(sub_words[t][sub], n_sub - n_leak, p=sub_p))
                + list(rng.choice(sub_words[t][sibling], n_leak, p=sub_p))
                + list(rng.choice(topic_words[t], n_topic, p=topic_p))
                + list(rng.choice(topic_words[other], n_noise, p=topic_p))
                + list(rng.choice(background, n_back, p=back_p))
            )
            rng.shuffle(tokens)
            docs.append((doc_id, " ".join(tokens)))
            doc_topic[doc_id] = t
            doc_sub[doc_id] = sub
            purity[doc_id] = frac

    lo, hi = cfg.subtopic_frac
    cut2, cut3 = lo + (hi - lo) / 3, lo + 2 * (hi - lo) / 3
    queries, qrels = {}, {}
    ids = [d for d, _ in docs]
    for q in range(cfg.n_queries):
        t = q % cfg.n_topics
        sub = (q // cfg.n_topics) % cfg.n_subtopics
        words = list(rng.choice(sub_words[t][sub], cfg.query_len - 1, replace=False))
        words.append(rng.choice(topic_words[t][3:]))
        qid = f"Q{q:02d}"
        queries[qid] = " ".join(words)
        judged = {}
        for d in ids:
            if doc_topic[d] == t and doc_sub[d] == sub:
                p = purity[d]
                judged[d] = 3 if p >= cut3 else 2 if p >= cut2 else 1
            elif doc_topic[d] == t:
                judged[d] = 0
        off = [d for d in ids if doc_topic[d] != t]
        for d in rng.choice(off, min(cfg.judged_nonrelevant, len(off)), replace=False):
            judged[str(d)] = 0
        qrels[qid] = judged
    return SyntheticCollection(Corpus.from_pairs(docs), queries, qrels, doc_topic)
