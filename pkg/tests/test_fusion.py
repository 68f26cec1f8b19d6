import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from lexboost.corpus_graph import CorpusGraph, EmbeddingMatrix, build_graph, embed_query_tfidf, embed_tfidf
from lexboost.fusion import (
    FusionConfig,
    FusionError,
    LookupCounter,
    MissingPolicy,
    Pipeline,
    ScorerContext,
    lexboost_rescore,
    pipeline,
    rerank_with_embeddings,
)
from lexboost.runs import Run
from lexboost.scorers import Query, ScoringModel, retrieve, score_document
from lexboost.text_index import Corpus, build_index


def star_graph(n_docs, neighbour_lists, k=None):
    """Hand-built graph: neighbour_lists[i] is doc i's ordered neighbour ordinals."""
    k = k or len(neighbour_lists[0])
    ids = tuple(f"d{i}" for i in range(n_docs))
    nb = np.array(neighbour_lists, dtype=np.int64)
    sims = np.tile(np.linspace(1, 0.5, nb.shape[1]), (n_docs, 1))
    return CorpusGraph(k, ids, nb, sims)


def test_fusion_worked_example():
    # doc 0 scores 10, its four neighbours 5, 0, 3, 2
    g = star_graph(5, [[1, 2, 3, 4], [0, 2, 3, 4], [0, 1, 3, 4], [0, 1, 2, 4], [0, 1, 2, 3]])
    run = Run.ranked("q", ["d0", "d1", "d2", "d3", "d4"], [10, 5, 0, 3, 2])
    out = lexboost_rescore(run, g, FusionConfig(0.7, 4))
    assert out.score_map()["d0"] == pytest.approx(7.75)


def test_lambda_zero_is_neighbour_mean():
    g = star_graph(3, [[1, 2], [0, 2], [0, 1]])
    run = Run.ranked("q", ["d0", "d1", "d2"], [100, 4, 6])
    assert lexboost_rescore(run, g, FusionConfig(0.0, 2)).score_map()["d0"] == pytest.approx(5.0)


def test_lambda_one_returns_input_untouched():
    g = star_graph(3, [[1, 2], [0, 2], [0, 1]])
    run = Run.ranked("q", ["d0", "d1", "d2"], [0.1 + 0.2, 1 / 3, 0.0], tag="bm25")
    out = lexboost_rescore(run, g, FusionConfig(1.0, 2))
    assert out.same_as(run)
    assert out.scores.tobytes() == run.scores.tobytes()


def test_missing_neighbour_zero_fill_and_doc_set():
    g = star_graph(4, [[3, 1], [0, 3], [0, 1], [0, 1]])
    run = Run.ranked("q", ["d0", "d1", "d2"], [3.0, 2.0, 1.0])
    out = lexboost_rescore(run, g, FusionConfig(0.5, 2))
    assert set(out.doc_ids) == {"d0", "d1", "d2"}
    assert out.score_map()["d0"] == pytest.approx(0.5 * 3 + 0.25 * (0 + 2))


def test_errors():
    g = star_graph(3, [[1, 2], [0, 2], [0, 1]])
    run = Run.ranked("q", ["d0", "zz"], [2.0, 1.0])
    with pytest.raises(FusionError, match="not in the graph"):
        lexboost_rescore(run, g, FusionConfig(0.5, 2))
    with pytest.raises(FusionError, match="exceeds"):
        lexboost_rescore(Run.ranked("q", ["d0"], [1.0]), g, FusionConfig(0.5, 3))
    with pytest.raises(FusionError, match="scorer context"):
        lexboost_rescore(Run.ranked("q", ["d0"], [1.0]), g, FusionConfig(0.5, 2, "exact_on_demand"))
    with pytest.raises(FusionError):
        FusionConfig(1.5, 2)
    with pytest.raises(FusionError):
        FusionConfig(0.5, 0)


def test_ties_after_fusion_sorted_by_doc_id():
    g = star_graph(3, [[1], [2], [0]])
    run = Run.ranked("q", ["d0", "d1", "d2"], [1.0, 1.0, 1.0])
    out = lexboost_rescore(run, g, FusionConfig(0.5, 1))
    assert out.doc_ids == ("d0", "d1", "d2")


def _random_instance(rng):
    n_docs = rng.randint(3, 40)
    k = rng.randint(1, min(16, n_docs - 1))
    lists = [rng.sample([j for j in range(n_docs) if j != i], k) for i in range(n_docs)]
    g = star_graph(n_docs, lists, k)
    m = rng.randint(1, n_docs)
    ids = rng.sample(list(g.doc_ids), m)
    scores = [rng.uniform(-5, 20) for _ in ids]
    return g, Run.ranked("q", ids, scores), rng.uniform(0, 1), rng.randint(1, k)


@pytest.mark.parametrize("seed", range(30))
def test_matches_naive_oracle(seed):
    rng = random.Random(seed)
    g, run, lam, n = _random_instance(rng)
    out = lexboost_rescore(run, g, FusionConfig(lam, n))
    nbrs = {g.doc_ids[i]: [g.doc_ids[j] for j in g.neighbor_ids[i]] for i in range(g.num_docs)}
    want = oracles.lexboost(run.score_map(), nbrs, lam, n)
    Run(out.query_id, out.doc_ids, out.scores, out.tag)  # output passes full validation
    got = out.score_map()
    assert sorted(got) == sorted(want)
    for d in want:
        assert got[d] == pytest.approx(want[d], abs=1e-12)


@given(st.integers(0, 10_000), st.floats(0, 1))
def test_bounded_by_own_and_neighbour_mean(seed, lam):
    rng = random.Random(seed)
    g, run, _, n = _random_instance(rng)
    out = lexboost_rescore(run, g, FusionConfig(lam, n)).score_map()
    own = run.score_map()
    for d, s in out.items():
        nb = [g.doc_ids[j] for j in g.neighbor_ids[g.id_to_ordinal[d]][:n]]
        mean = sum(own.get(x, 0.0) for x in nb) / n
        lo, hi = min(own[d], mean), max(own[d], mean)
        assert lo - 1e-9 <= s <= hi + 1e-9


@given(st.integers(0, 10_000))
def test_affine_in_lambda(seed):
    rng = random.Random(seed)
    g, run, _, n = _random_instance(rng)
    at = {lam: lexboost_rescore(run, g, FusionConfig(lam, n)).score_map() for lam in (0.0, 0.5, 1.0)}
    for d in at[0.5]:
        assert at[0.5][d] == pytest.approx((at[0.0][d] + at[1.0][d]) / 2, abs=1e-9)


def test_concurrent_rescoring_matches_serial():
    from concurrent.futures import ThreadPoolExecutor

    rng = random.Random(12)
    lists = [rng.sample([j for j in range(50) if j != i], 8) for i in range(50)]
    g = star_graph(50, lists, 8)
    runs = [Run.ranked(f"q{i}", rng.sample(list(g.doc_ids), 30), [rng.random() for _ in range(30)])
            for i in range(40)]
    cfg = FusionConfig(0.4, 8)
    serial = [lexboost_rescore(r, g, cfg) for r in runs]
    with ThreadPoolExecutor(4) as pool:
        threaded = list(pool.map(lambda r: lexboost_rescore(r, g, cfg), runs))
    assert all(a.same_as(b) for a, b in zip(serial, threaded))


def test_lookup_counter_zero_policy():
    rng = random.Random(4)
    g, run, lam, n = _random_instance(rng)
    c = LookupCounter()
    lexboost_rescore(run, g, FusionConfig(0.6, n), counter=c)
    assert c.lookups == len(run) * n
    assert c.scorer_calls == 0


# -- missing policy with a real index ---------------------------------------

@pytest.fixture
def small_world():
    docs = [("a", "apple banana"), ("b", "apple cherry cherry"), ("c", "banana cherry"),
            ("d", "apple apple apple"), ("e", "date elder")]
    idx = build_index(Corpus.from_pairs(docs))
    g = build_graph(embed_tfidf(idx), k=2)
    return idx, g


def test_exact_on_demand_differs_by_analytic_delta(small_world):
    idx, g = small_world
    model = ScoringModel.bm25()
    query = Query.parse("q", "apple cherry")
    run = retrieve(query, model, idx, cutoff=2)
    lam, n = 0.6, 2
    ctx = ScorerContext(query, model, idx)
    zero = lexboost_rescore(run, g, FusionConfig(lam, n, "zero"), ctx).score_map()
    c = LookupCounter()
    exact = lexboost_rescore(run, g, FusionConfig(lam, n, "exact_on_demand"), ctx, c).score_map()
    in_run = set(run.doc_ids)
    assert c.scorer_calls > 0
    for d in run.doc_ids:
        nb = g.neighbor_ids[g.id_to_ordinal[d], :n].tolist()
        delta = sum(score_document(query, j, model, idx) for j in nb if g.doc_ids[j] not in in_run)
        assert exact[d] - zero[d] == pytest.approx((1 - lam) / n * delta, abs=1e-12)


def test_exact_on_demand_qld_uses_true_absent_score(small_world):
    idx, g = small_world
    model = ScoringModel.qld()
    query = Query.parse("q", "date")
    run = retrieve(query, model, idx)
    assert run.doc_ids == ("e",)
    out = lexboost_rescore(run, g, FusionConfig(0.5, 2, "exact_on_demand"), ScorerContext(query, model, idx))
    nb = g.neighbor_ids[4, :2].tolist()
    want = 0.5 * run.scores[0] + 0.25 * sum(score_document(query, j, model, idx) for j in nb)
    assert out.scores[0] == pytest.approx(want, abs=1e-12)


# -- rerank -----------------------------------------------------------------

def _emb(ids, rows):
    return EmbeddingMatrix(tuple(ids), np.asarray(rows, dtype=np.float64))


def test_rerank_full_permutation_by_cosine():
    e = _emb(["x", "y", "z"], [[1, 0], [1, 1], [0, 1]])
    run = Run.ranked("q", ["x", "y", "z"], [3, 2, 1])
    out = rerank_with_embeddings(run, [0.2, 1.0], e, top_k=10)
    # cos to (0.2, 1): z 0.981, y 0.832, x 0.196
    assert out.doc_ids == ("z", "y", "x")
    np.testing.assert_allclose(out.scores, [1 / math.sqrt(1.04), 1.2 / math.sqrt(2 * 1.04), 0.2 / math.sqrt(1.04)])


def test_rerank_tail_keeps_order_below_block():
    e = _emb(["a", "b", "c", "d"], [[1, 0], [0, 1], [1, 1], [1, -1]])
    run = Run.ranked("q", ["a", "b", "c", "d"], [4, 3, 2, 1])
    out = rerank_with_embeddings(run, [0, 1], e, top_k=2)
    assert out.doc_ids == ("b", "a", "c", "d")
    assert out.scores[2] < out.scores[1] and out.scores[3] < out.scores[2]


def test_rerank_dimension_mismatch():
    e = _emb(["a"], [[1, 0]])
    with pytest.raises(FusionError, match="dim"):
        rerank_with_embeddings(Run.ranked("q", ["a"], [1]), [1, 0, 0], e)


# -- pipelines --------------------------------------------------------------

def test_pipeline_shapes(small_world):
    idx, g = small_world
    m = ScoringModel.bm25()
    query = Query.parse("q", "apple cherry")
    assert pipeline(query, ["lexical"], model=m, index=idx).same_as(retrieve(query, m, idx))
    lam1 = pipeline(query, ["lexical", "lexboost"], model=m, index=idx, graph=g, fusion=FusionConfig(1.0, 2))
    assert lam1.same_as(retrieve(query, m, idx))
    with pytest.raises(FusionError):
        Pipeline(m, idx, ("lexboost",))


def test_three_stage_pipeline_matches_manual_composition(small_world):
    idx, g = small_world
    m = ScoringModel.bm25()
    emb = embed_tfidf(idx)
    query = Query.parse("q", "apple cherry")
    qv = embed_query_tfidf(query, idx)
    cfg = FusionConfig(0.7, 2)
    got = pipeline(query, ["lexical", "lexboost", "rerank"], model=m, index=idx, graph=g, fusion=cfg,
                   embeddings=emb, query_vector=qv, rerank_depth=2)
    manual = rerank_with_embeddings(lexboost_rescore(retrieve(query, m, idx), g, cfg), qv, emb, 2)
    assert got.same_as(manual)
    assert got.tag == "bm25>>lexboost>>rerank"
