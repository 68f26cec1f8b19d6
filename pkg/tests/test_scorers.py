import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from lexboost.scorers import (
    ModelKind,
    Query,
    ScoringModel,
    ScoringModelError,
    retrieve,
    score_document,
    score_documents,
)
from lexboost.text_index import Corpus, build_index, tokenize

MODELS = [ScoringModel.bm25(), ScoringModel.pl2(), ScoringModel.dph(), ScoringModel.qld()]


def q(text, qid="q"):
    return Query.parse(qid, text)


def test_bm25_toy_value(toy_index):
    # idf = ln(8/3); tf=2, dl=3, adl=8/3; evaluated by hand before build
    assert score_document(q("a"), 0, ScoringModel.bm25(), toy_index) == pytest.approx(1.3028373, abs=1e-6)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_zero_overlap_scores_zero(toy_index, model):
    # "zzz" is absent from the collection, so even QLD scores nothing
    assert score_document(q("zzz"), 0, model, toy_index) == 0.0
    if model.kind is not ModelKind.QLD:
        assert score_document(q("c"), 0, model, toy_index) == 0.0


def test_qld_penalises_docs_without_query_terms(toy_index):
    mu = 1000.0
    expected = math.log(mu / (3 + mu))
    assert score_document(q("c"), 0, ScoringModel.qld(mu), toy_index) == pytest.approx(expected)


def test_bm25_monotone_in_tf():
    idx = build_index(Corpus.from_pairs([("one", "t x y"), ("two", "t t y"), ("other", "z z z")]))
    m = ScoringModel.bm25()
    assert score_document(q("t"), 1, m, idx) > score_document(q("t"), 0, m, idx)


def test_query_term_multiplicity_scales_score(toy_index):
    m = ScoringModel.bm25()
    assert score_document(q("a a"), 0, m, toy_index) == pytest.approx(2 * score_document(q("a"), 0, m, toy_index))


@pytest.mark.parametrize("kind, params", [
    ("bm25", {"k1": 0}), ("bm25", {"b": 1.5}), ("pl2", {"c": 0}), ("qld", {"mu": -1}), ("bm25", {"mu": 3}),
])
def test_invalid_params(kind, params):
    with pytest.raises(ScoringModelError):
        ScoringModel(kind, params)


def test_unknown_kind():
    with pytest.raises(ScoringModelError, match="unknown model"):
        ScoringModel("tfidf")


def test_retrieve_toy_ranking(toy_index):
    run = retrieve(q("c"), ScoringModel.bm25(), toy_index)
    assert run.doc_ids == ("d3", "d2")
    assert run.scores[0] > run.scores[1] > 0


def test_retrieve_cutoff_one(toy_index):
    run = retrieve(q("b c"), ScoringModel.bm25(), toy_index, cutoff=1)
    assert len(run) == 1


def test_retrieve_tie_broken_by_doc_id():
    idx = build_index(Corpus.from_pairs([("zeta", "same words"), ("alpha", "same words"), ("x", "other")]))
    run = retrieve(q("same"), ScoringModel.bm25(), idx)
    assert run.doc_ids == ("alpha", "zeta")
    assert run.scores[0] == run.scores[1]


def test_empty_query_gives_empty_run(toy_index):
    assert len(retrieve(q("!!!"), ScoringModel.bm25(), toy_index)) == 0


def _random_docs(rng, n_docs, vocab):
    words = [f"w{i}" for i in range(vocab)]
    return [[rng.choice(words) for _ in range(rng.randint(1, 20))] for _ in range(n_docs)]


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
@pytest.mark.parametrize("seed", range(4))
def test_retrieve_matches_brute_force(model, seed):
    rng = random.Random(seed)
    docs = _random_docs(rng, 40, 30)
    ids = [f"d{i:02d}" for i in range(len(docs))]
    idx = build_index(Corpus.from_pairs(zip(ids, (" ".join(d) for d in docs))))
    for _ in range(5):
        qterms = [f"w{rng.randrange(35)}" for _ in range(rng.randint(1, 4))]
        cutoff = rng.choice([3, 10, 1000])
        got = retrieve(Query("q", " ".join(qterms), tuple(qterms)), model, idx, cutoff)
        want = oracles.brute_force_ranking(qterms, ids, docs, model.name, cutoff)
        assert [d for d, _ in want] == list(got.doc_ids)
        np.testing.assert_allclose(got.scores, [s for _, s in want], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_retrieve_scores_identical_to_single_document_scoring(model):
    rng = random.Random(5)
    docs = _random_docs(rng, 60, 20)
    idx = build_index(Corpus.from_pairs((f"d{i}", " ".join(d)) for i, d in enumerate(docs)))
    query = q("w1 w2 w2 w7")
    run = retrieve(query, model, idx)
    for doc_id, score, _ in run:
        assert score_document(query, idx.inverted.id_to_ordinal[doc_id], model, idx) == score


@pytest.mark.parametrize("model", MODELS, ids=lambda m: m.name)
def test_scorers_are_deterministic(model):
    rng = random.Random(9)
    docs = _random_docs(rng, 30, 15)
    idx = build_index(Corpus.from_pairs((f"d{i}", " ".join(d)) for i, d in enumerate(docs)))
    a = score_documents(q("w1 w3"), np.arange(30), model, idx)
    b = score_documents(q("w1 w3"), np.arange(30), model, idx)
    assert a.tobytes() == b.tobytes()


@given(st.lists(st.integers(1, 30), min_size=2, max_size=30), st.integers(1, 10))
def test_bm25_nonnegative_and_saturating(tfs, qtf):
    docs = [" ".join(["t"] * tf + ["pad"] * 3) for tf in tfs]
    idx = build_index(Corpus.from_pairs((f"d{i}", d) for i, d in enumerate(docs)))
    inv = idx.inverted
    k1 = 1.2
    idf = math.log((inv.num_docs - inv.doc_freq["t"] + 0.5) / (inv.doc_freq["t"] + 0.5) + 1)
    scores = score_documents(Query("q", "", ("t",) * qtf), np.arange(len(docs)), ScoringModel.bm25(k1=k1), idx)
    assert np.all(scores >= 0)
    assert np.all(scores <= qtf * idf * (k1 + 1) + 1e-12)


def test_qld_normalised_and_log_ratio_forms_rank_alike():
    rng = random.Random(21)
    docs = _random_docs(rng, 50, 25)
    ids = [f"d{i:02d}" for i in range(50)]
    idx = build_index(Corpus.from_pairs(zip(ids, (" ".join(d) for d in docs))))
    for _ in range(10):
        qterms = [f"w{rng.randrange(25)}" for _ in range(3)]
        run = retrieve(Query("q", "", tuple(qterms)), ScoringModel.qld(), idx)
        by_ratio = sorted(
            (d for d, toks in zip(ids, docs) if set(qterms) & set(toks)),
            key=lambda d: (-round(oracles.qld_log_ratio(qterms, docs[ids.index(d)], docs), 9), d),
        )
        assert list(run.doc_ids) == by_ratio


def test_dph_skips_single_term_documents():
    # f = tf/dl = 1 for a one-word document: contribution skipped
    idx = build_index(Corpus.from_pairs([("a", "solo"), ("b", "solo other")]))
    assert score_document(q("solo"), 0, ScoringModel.dph(), idx) == 0.0
    assert score_document(q("solo"), 1, ScoringModel.dph(), idx) != 0.0


def test_pl2_and_dph_match_oracle_on_toy(toy_index):
    docs = [tokenize(t) for t in ["a b a", "b c", "c c c"]]
    for i in range(3):
        assert score_document(q("b c"), i, ScoringModel.pl2(), toy_index) == pytest.approx(
            oracles.pl2(["b", "c"], docs[i], docs), rel=1e-12)
        assert score_document(q("b c"), i, ScoringModel.dph(), toy_index) == pytest.approx(
            oracles.dph(["b", "c"], docs[i], docs), rel=1e-12, abs=1e-15)
