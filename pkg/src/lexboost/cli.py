"""Command-line entry point: index -> graph -> run -> eval -> sweep.

Every option can also come from an environment variable named
``LEXBOOST_<OPTION>`` (upper case, dashes as underscores, e.g.
``LEXBOOST_LAMBDA=0.7``). Command-line flags win over the environment,
which wins over built-in defaults.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus_graph as cg
from . import evaluation as ev
from . import fusion as fu
from . import scorers as sc
from . import synthetic
from . import text_index as ti
from .errors import LexBoostError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
BUILTIN_TFIDF = "builtin-tfidf"

log = logging.getLogger("lexboost")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env(name: str, default=None):
    return os.environ.get("LEXBOOST_" + name.upper(), default)


def _add(p: argparse.ArgumentParser, flag: str, **kw):
    # named after the flag, not the dest: --lambda reads LEXBOOST_LAMBDA
    kw["default"] = _env(flag.lstrip("-").replace("-", "_"), kw.get("default"))
    if kw.get("required") and kw["default"] is not None:
        kw["required"] = False
    p.add_argument(flag, **kw)


def _float_list(text: str) -> list[float]:
    """`0:1:0.05` (inclusive range) or a comma list."""
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        count = int(round((hi - lo) / step))
        return [round(lo + i * step, 10) for i in range(count + 1)]
    return [float(x) for x in text.split(",") if x]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _model_args(p):
    _add(p, "--model", choices=[k.value for k in sc.ModelKind], default="bm25")
    _add(p, "--k1", type=float, default=1.2, help="BM25 k1")
    _add(p, "--b", type=float, default=0.75, help="BM25 b")
    _add(p, "--c", type=float, default=1.0, help="PL2 c")
    _add(p, "--mu", type=float, default=1000.0, help="QLD Dirichlet mu")
    _add(p, "--cutoff", type=int, default=1000, help="first-stage depth")


def _fusion_args(p, with_lambda=True):
    _add(p, "--graph", help="corpus graph file")
    if with_lambda:
        _add(p, "--lambda", dest="lam", type=float, default=0.7, help="weight on a document's own score")
        _add(p, "--n", type=int, default=16, help="neighbours used per document")
    _add(p, "--missing", choices=[m.value for m in fu.MissingPolicy], default="zero",
         help="score for neighbours outside the first-stage run")
    _add(p, "--stages", help="comma list: lexical[,lexboost][,rerank]; default lexical,lexboost with --graph")
    _add(p, "--doc-embeddings", help=f"document vectors for rerank, or {BUILTIN_TFIDF}")
    _add(p, "--query-embeddings", help=f"query vectors (JSON lines id/vector) for rerank, or {BUILTIN_TFIDF}")
    _add(p, "--rerank-depth", type=int, default=1000)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lexboost", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="build and save the inverted + forward index")
    _add(p, "--corpus", required=True, help="TSV <doc_id>\\t<text> or JSON lines id/contents")
    _add(p, "--out", required=True)
    _add(p, "--stopwords", help="optional file with one stopword per line")

    p = sub.add_parser("graph", help="corpus graph operations")
    gsub = p.add_subparsers(dest="graph_command", required=True, parser_class=_Parser)
    g = gsub.add_parser("build", help="exact k-NN corpus graph")
    _add(g, "--index", required=True)
    _add(g, "--embeddings", default=BUILTIN_TFIDF, help=f"JSON lines / binary vectors, or {BUILTIN_TFIDF}")
    _add(g, "--k", type=int, default=cg.DEFAULT_K)
    _add(g, "--similarity", choices=["cosine", "dot"], default="cosine")
    _add(g, "--workers", type=int, default=1)
    _add(g, "--out", required=True)

    p = sub.add_parser("run", help="retrieve, optionally boost and rerank, write a TREC run")
    _add(p, "--index", required=True)
    _add(p, "--queries", required=True, help="TSV <query_id>\\t<text>")
    _add(p, "--out", required=True)
    _add(p, "--tag", help="run tag; default is the stage chain")
    _model_args(p)
    _fusion_args(p)

    p = sub.add_parser("eval", help="evaluate a TREC run against qrels")
    _add(p, "--run", required=True)
    _add(p, "--qrels", required=True)
    _add(p, "--metrics", default=",".join(ev.DEFAULT_METRICS))
    _add(p, "--rel-threshold", type=int, default=1, help="binarisation threshold for MAP")
    _add(p, "--gain", choices=["linear", "exponential"], default="linear")
    _add(p, "--baseline", help="second run; adds paired t-test p-values against it")
    _add(p, "--per-query", action="store_true")
    _add(p, "--json", help="also write the report as JSON here")

    p = sub.add_parser("sweep", help="λ × n grid, CSV output")
    _add(p, "--index", required=True)
    _add(p, "--queries", required=True)
    _add(p, "--qrels", required=True)
    _add(p, "--out", required=True)
    _add(p, "--lambdas", type=_float_list, default="0:1:0.05")
    _add(p, "--ns", type=_int_list, default="2,4,8,16")
    _add(p, "--metrics", default=",".join(ev.DEFAULT_METRICS))
    _add(p, "--rel-threshold", type=int, default=1)
    _add(p, "--gain", choices=["linear", "exponential"], default="linear")
    _model_args(p)
    _fusion_args(p, with_lambda=False)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus, queries and qrels")
    _add(p, "--out", required=True, help="output directory")
    _add(p, "--seed", type=int, default=13)
    _add(p, "--fixture", action="store_true", help="small 100-document variant")
    _add(p, "--topics", type=int)
    _add(p, "--docs-per-topic", type=int)
    _add(p, "--num-queries", type=int)
    return parser


# -- commands ---------------------------------------------------------------

def cmd_index(args) -> int:
    corpus = ti.load_corpus(args.corpus)
    stop = frozenset()
    if args.stopwords:
        stop = frozenset(w.strip().lower() for w in Path(args.stopwords).read_text().split() if w.strip())
    index = ti.build_index(corpus, ti.Tokenizer(stop))
    ti.save_index(index, args.out)
    inv = index.inverted
    print(f"N={inv.num_docs} vocabulary={inv.vocab_size} avgdl={inv.avg_doc_length:.4f}")
    return EXIT_OK


def cmd_graph(args) -> int:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    index = ti.load_index(args.index)
    if args.embeddings == BUILTIN_TFIDF:
        emb = cg.embed_tfidf(index)
    else:
        emb = cg.ingest_embeddings(args.embeddings, index.inverted.doc_ids)
    graph = cg.build_graph(emb, args.k, args.similarity, workers=args.workers)
    cg.save_graph(graph, args.out)
    print(f"graph: N={graph.num_docs} k={graph.k} stored={graph.stored} source={emb.source}")
    return EXIT_OK


def _stages(args) -> tuple[str, ...]:
    if args.stages:
        stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
    else:
        stages = ("lexical", "lexboost") if args.graph else ("lexical",)
        if args.doc_embeddings:
            stages += ("rerank",)
    if stages not in fu.PIPELINE_SHAPES:
        raise UsageError(f"--stages must be one of {[','.join(s) for s in fu.PIPELINE_SHAPES]}")
    return stages


def _model(args) -> sc.ScoringModel:
    params = {"bm25": {"k1": args.k1, "b": args.b}, "pl2": {"c": args.c}, "dph": {}, "qld": {"mu": args.mu}}
    try:
        return sc.ScoringModel(args.model, params[args.model])
    except sc.ScoringModelError as e:
        raise UsageError(str(e)) from None


def _check_fusion_flags(args, stages, ns) -> None:
    """Validate flag combinations before loading anything large."""
    if args.cutoff < 1:
        raise UsageError("--cutoff must be >= 1")
    if "lexboost" in stages:
        if not args.graph:
            raise UsageError("the lexboost stage needs --graph")
        _, k = cg.read_graph_header(args.graph)
        bad = [n for n in ns if n < 1 or n > k]
        if bad:
            raise UsageError(f"--n {bad[0]} is invalid for a graph storing k={k} neighbours")
    if "rerank" in stages:
        if not args.doc_embeddings or not args.query_embeddings:
            raise UsageError("the rerank stage needs --doc-embeddings and --query-embeddings")
        if args.rerank_depth < 1:
            raise UsageError("--rerank-depth must be >= 1")


def _build_pipeline(args, stages, index, fusion) -> tuple[fu.Pipeline, dict | None]:
    graph = cg.load_graph(args.graph) if "lexboost" in stages else None
    emb = qvecs = None
    if "rerank" in stages:
        if args.doc_embeddings == BUILTIN_TFIDF:
            emb = cg.embed_tfidf(index)
        else:
            emb = cg.ingest_embeddings(args.doc_embeddings, index.inverted.doc_ids)
        if args.query_embeddings != BUILTIN_TFIDF:
            qvecs = cg.read_vectors(args.query_embeddings)
    pipe = fu.Pipeline(_model(args), index, stages, args.cutoff, graph, fusion, emb, args.rerank_depth)
    return pipe, qvecs


def _query_vector(pipe: fu.Pipeline, qvecs, query: sc.Query):
    if "rerank" not in pipe.stages:
        return None
    if qvecs is None:
        return cg.embed_query_tfidf(query, pipe.index)
    if query.query_id not in qvecs:
        raise cg.MissingEmbeddingError(f"missing query embedding for {query.query_id!r}")
    return np.asarray(qvecs[query.query_id], dtype=np.float64)


def cmd_run(args) -> int:
    stages = _stages(args)
    if not 0.0 <= args.lam <= 1.0:
        raise UsageError("--lambda must lie in [0, 1]")
    _check_fusion_flags(args, stages, [args.n])
    index = ti.load_index(args.index)
    queries = sc.load_queries(args.queries, index.inverted.tokenizer)
    fusion = fu.FusionConfig(args.lam, args.n, args.missing)
    pipe, qvecs = _build_pipeline(args, stages, index, fusion)
    runs = []
    for q in queries:
        run = pipe(q, _query_vector(pipe, qvecs, q))
        runs.append(run.with_tag(args.tag) if args.tag else run)
    ev.write_run(runs, args.out)
    print(f"wrote {len(runs)} queries to {args.out} (stages={','.join(stages)})")
    return EXIT_OK


def _report_dict(report: ev.MetricReport) -> dict:
    return {"tag": report.tag, "aggregate": report.aggregate, "per_query": report.per_query,
            "excluded": report.excluded, "metadata": report.metadata}


def cmd_eval(args) -> int:
    metrics = [m for m in args.metrics.split(",") if m]
    for m in metrics:
        try:
            ev.parse_metric(m)
        except ev.EvaluationError as e:
            raise UsageError(str(e)) from None
    qrels = ev.load_qrels(args.qrels)
    runs = ev.load_run(args.run)
    report = ev.evaluate(runs, qrels, metrics, args.rel_threshold, args.gain)
    out = _report_dict(report)
    print(report.format())
    if args.per_query:
        for name, values in report.per_query.items():
            for qid, v in values.items():
                print(f"{name:<16} {qid:<6} {v:.4f}")
    if args.baseline:
        base = ev.evaluate(ev.load_run(args.baseline), qrels, metrics, args.rel_threshold, args.gain)
        out["p_vs_baseline"] = {}
        for name in report.aggregate:
            qids = sorted(set(report.per_query[name]) & set(base.per_query[name]))
            t, p = ev.paired_t_test([report.per_query[name][q] for q in qids],
                                    [base.per_query[name][q] for q in qids])
            out["p_vs_baseline"][name] = p
            print(f"{name:<16} vs baseline {base.aggregate[name]:.4f}: t={t:.4f} p={p:.4g}")
    if args.json:
        Path(args.json).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.stages:
        stages = _stages(args)
    else:
        stages = ("lexical", "lexboost") + (("rerank",) if args.doc_embeddings else ())
    if "lexboost" not in stages:
        raise UsageError("a sweep needs the lexboost stage")
    if not args.lambdas or not args.ns:
        raise UsageError("--lambdas and --ns must be non-empty")
    if any(not 0.0 <= lam <= 1.0 for lam in args.lambdas):
        raise UsageError("every --lambdas value must lie in [0, 1]")
    metrics = [m for m in args.metrics.split(",") if m]
    for m in metrics:
        try:
            ev.parse_metric(m)
        except ev.EvaluationError as e:
            raise UsageError(str(e)) from None
    _check_fusion_flags(args, stages, args.ns)
    index = ti.load_index(args.index)
    queries = sc.load_queries(args.queries, index.inverted.tokenizer)
    qrels = ev.load_qrels(args.qrels)
    pipe, qvecs = _build_pipeline(args, stages, index, fu.FusionConfig(1.0, max(args.ns), args.missing))
    first = {q.query_id: pipe.first_stage(q) for q in queries}
    qvec = {q.query_id: _query_vector(pipe, qvecs, q) for q in queries}

    def pipeline_fn(lam: float, n: int):
        cfg = fu.FusionConfig(lam, n, args.missing)
        return {q.query_id: pipe.finish(q, first[q.query_id], qvec[q.query_id], cfg) for q in queries}

    rows = ev.sweep(pipeline_fn, qrels, args.lambdas, args.ns, metrics, args.rel_threshold, args.gain)
    ev.write_sweep_csv(rows, args.out)
    for n in args.ns:
        for m in metrics:
            best = ev.best_lambda(rows, m, n)
            print(f"n={n:<3} {m:<14} best lambda={best:g}")
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from dataclasses import replace

    cfg = synthetic.FIXTURE_CONFIG if args.fixture else synthetic.SyntheticConfig()
    overrides = {"seed": args.seed}
    if args.topics:
        overrides["n_topics"] = args.topics
    if args.docs_per_topic:
        overrides["docs_per_topic"] = args.docs_per_topic
    if args.num_queries:
        overrides["n_queries"] = args.num_queries
    col = synthetic.generate(replace(cfg, **overrides))
    col.write(args.out)
    print(f"wrote {len(col.corpus)} documents, {len(col.queries)} queries to {args.out}")
    return EXIT_OK


COMMANDS = {"index": cmd_index, "graph": cmd_graph, "run": cmd_run, "eval": cmd_eval,
            "sweep": cmd_sweep, "synth": cmd_synth}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"lexboost {args.command}: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"lexboost {args.command}: no such file: {e.filename}", file=sys.stderr)
        return EXIT_DATA
    except (LexBoostError, ValueError, OSError) as e:
        print(f"lexboost {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"lexboost {args.command}: internal error: {e!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
