"""TREC qrels/run I/O, effectiveness metrics, paired t-test and λ×n sweeps."""
from __future__ import annotations

import csv
import math
import re
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import LexBoostError
from .runs import Run

Qrels = dict[str, dict[str, int]]  # query_id -> doc_id -> grade

DEFAULT_METRICS = ("map", "ndcg@10", "ndcg@100", "ndcg@1000", "recall2@1000")


class EvaluationError(LexBoostError):
    pass


class QrelsFormatError(EvaluationError):
    pass


class RunFormatError(EvaluationError):
    pass


# -- file formats -----------------------------------------------------------

def load_qrels(path: str | Path) -> Qrels:
    qrels: Qrels = defaultdict(dict)
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise QrelsFormatError(f"{path}:{lineno}: expected 'qid 0 docid rel'")
            qid, _, docid, rel = parts
            try:
                grade = int(rel)
            except ValueError:
                raise QrelsFormatError(f"{path}:{lineno}: relevance {rel!r} is not an integer") from None
            if grade < 0:
                raise QrelsFormatError(f"{path}:{lineno}: negative relevance grade {grade}")
            if docid in qrels[qid]:
                warnings.warn(f"{path}:{lineno}: duplicate judgment ({qid}, {docid}); last one wins")
            qrels[qid][docid] = grade
    if not qrels:
        warnings.warn(f"{path}: no judgments found")
    return dict(qrels)


def write_qrels(qrels: Mapping[str, Mapping[str, int]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for qid in sorted(qrels):
            for docid in sorted(qrels[qid]):
                f.write(f"{qid} 0 {docid} {qrels[qid][docid]}\n")


def format_run_lines(run: Run) -> Iterable[str]:
    for doc_id, score, rank in run:
        yield f"{run.query_id} Q0 {doc_id} {rank} {score:.6f} {run.tag}\n"


def write_run(runs: Run | Iterable[Run], path: str | Path) -> None:
    """Write runs in TREC format, one query after another in the given order."""
    if isinstance(runs, Run):
        runs = [runs]
    with Path(path).open("w", encoding="utf-8") as f:
        for run in runs:
            f.writelines(format_run_lines(run))


def load_run(path: str | Path) -> dict[str, Run]:
    rows: dict[str, list[tuple[str, float]]] = {}
    tags: dict[str, str] = {}
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise RunFormatError(f"{path}:{lineno}: expected 'qid Q0 docid rank score tag'")
            qid, _, docid, rank, score, tag = parts
            try:
                rank_i, score_f = int(rank), float(score)
            except ValueError:
                raise RunFormatError(f"{path}:{lineno}: bad rank or score") from None
            entries = rows.setdefault(qid, [])
            if rank_i != len(entries) + 1:
                raise RunFormatError(f"{path}:{lineno}: rank {rank_i} for {qid}, expected {len(entries) + 1}")
            entries.append((docid, score_f))
            tags[qid] = tag
    out = {}
    for qid, entries in rows.items():
        try:
            out[qid] = Run(qid, tuple(d for d, _ in entries), np.array([s for _, s in entries]), tags[qid])
        except LexBoostError as e:
            raise RunFormatError(f"{path}: {e}") from e
    return out


# -- metrics ----------------------------------------------------------------

def _judged(qrels: Mapping[str, Mapping[str, int]], query_id: str) -> Mapping[str, int]:
    return qrels.get(query_id, {})


def average_precision(run: Run, qrels: Qrels, rel_threshold: int = 1) -> float:
    judged = _judged(qrels, run.query_id)
    R = sum(1 for g in judged.values() if g >= rel_threshold)
    if R == 0:
        return 0.0
    hits = 0
    total = 0.0
    for i, doc_id in enumerate(run.doc_ids, 1):
        if judged.get(doc_id, 0) >= rel_threshold:
            hits += 1
            total += hits / i
    return total / R


def _gain(grade: float, gain: str) -> float:
    return 2.0 ** grade - 1.0 if gain == "exponential" else float(grade)


def ndcg_at(run: Run, qrels: Qrels, k: int, gain: str = "linear") -> float:
    if k < 1:
        raise EvaluationError("k must be >= 1")
    judged = _judged(qrels, run.query_id)
    dcg = sum(_gain(judged.get(d, 0), gain) / math.log2(i + 1)
              for i, d in enumerate(run.doc_ids[:k], 1))
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)[:k]
    idcg = sum(_gain(g, gain) / math.log2(i + 1) for i, g in enumerate(ideal, 1))
    return dcg / idcg if idcg > 0 else 0.0


def recall_at(run: Run, qrels: Qrels, k: int, rel_threshold: int = 2) -> float:
    if k < 1:
        raise EvaluationError("k must be >= 1")
    judged = _judged(qrels, run.query_id)
    relevant = {d for d, g in judged.items() if g >= rel_threshold}
    if not relevant:
        return 0.0
    return len(relevant.intersection(run.doc_ids[:k])) / len(relevant)


@dataclass(frozen=True)
class Metric:
    """A parsed metric name: ``map``, ``ndcg@K`` or ``recall[T]@K``."""

    name: str
    kind: str
    k: int | None = None
    threshold: int = 1

    def value(self, run: Run, qrels: Qrels, gain: str = "linear") -> float:
        if self.kind == "map":
            return average_precision(run, qrels, self.threshold)
        if self.kind == "ndcg":
            return ndcg_at(run, qrels, self.k, gain)
        return recall_at(run, qrels, self.k, self.threshold)

    def evaluable(self, query_id: str, qrels: Qrels) -> bool:
        """False when the query's denominator is zero and it leaves the mean."""
        judged = _judged(qrels, query_id)
        if self.kind == "ndcg":
            return any(g > 0 for g in judged.values())
        return any(g >= self.threshold for g in judged.values())


_METRIC_RE = re.compile(r"^(map|ndcg|recall(\d*))(?:@(\d+))?$")


def parse_metric(name: str, rel_threshold: int = 1) -> Metric:
    m = _METRIC_RE.match(name.strip().lower())
    if not m:
        raise EvaluationError(f"unknown metric {name!r}")
    head, recall_t, k = m.group(1), m.group(2), m.group(3)
    if head == "map":
        if k is not None:
            raise EvaluationError("map takes no cutoff")
        return Metric(name, "map", None, rel_threshold)
    if k is None:
        raise EvaluationError(f"metric {name!r} needs a cutoff, e.g. {head}@1000")
    if head == "ndcg":
        return Metric(name, "ndcg", int(k))
    return Metric(name, "recall", int(k), int(recall_t) if recall_t else rel_threshold)


@dataclass
class MetricReport:
    tag: str
    per_query: dict[str, dict[str, float]]  # metric -> query_id -> value
    aggregate: dict[str, float]
    excluded: dict[str, list[str]]  # metric -> query ids dropped from the mean
    metadata: dict = field(default_factory=dict)

    def format(self) -> str:
        lines = []
        for name, value in self.aggregate.items():
            n = len(self.per_query[name])
            dropped = len(self.excluded[name])
            lines.append(f"{name:<16} all  {value:.4f}  (queries={n}, excluded={dropped})")
        return "\n".join(lines)


def evaluate(runs: Mapping[str, Run], qrels: Qrels, metrics: Sequence[str] = DEFAULT_METRICS,
             rel_threshold: int = 1, gain: str = "linear") -> MetricReport:
    """Per-query and mean values over queries present in ``runs``."""
    parsed = [parse_metric(m, rel_threshold) for m in metrics]
    per_query: dict[str, dict[str, float]] = {}
    excluded: dict[str, list[str]] = {}
    aggregate = {}
    for metric in parsed:
        values, dropped = {}, []
        for qid in sorted(runs):
            if metric.evaluable(qid, qrels):
                values[qid] = metric.value(runs[qid], qrels, gain)
            else:
                dropped.append(qid)
        per_query[metric.name] = values
        excluded[metric.name] = dropped
        aggregate[metric.name] = math.fsum(values.values()) / len(values) if values else 0.0
    tags = {r.tag for r in runs.values()}
    return MetricReport(
        tag=tags.pop() if len(tags) == 1 else ",".join(sorted(tags)),
        per_query=per_query,
        aggregate=aggregate,
        excluded=excluded,
        metadata={"rel_threshold": rel_threshold, "gain": gain, "num_runs": len(runs)},
    )


# -- significance -----------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t-test of a against b: returns (t, p)."""
    if len(a) != len(b):
        raise EvaluationError(f"paired samples differ in length ({len(a)} vs {len(b)})")
    m = len(a)
    if m < 2:
        raise EvaluationError("paired t-test needs at least 2 pairs")
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(m))
    return t, student_t_two_sided_p(t, m - 1)


# -- sweeps -----------------------------------------------------------------

DEFAULT_LAMBDAS = tuple(round(i * 0.05, 2) for i in range(21))
DEFAULT_NS = (2, 4, 8, 16)
SWEEP_HEADER = ("lambda", "n", "metric", "value", "p_vs_baseline")


@dataclass(frozen=True)
class SweepRow:
    lam: float
    n: int
    metric: str
    value: float
    p_vs_baseline: float


def sweep(pipeline_fn: Callable[[float, int], Mapping[str, Run]], qrels: Qrels,
          lambda_grid: Sequence[float] = DEFAULT_LAMBDAS, n_values: Sequence[int] = DEFAULT_NS,
          metrics: Sequence[str] = DEFAULT_METRICS, rel_threshold: int = 1,
          gain: str = "linear") -> list[SweepRow]:
    """Evaluate ``pipeline_fn(lam, n)`` on every grid cell.

    The λ = 1 output of the same pipeline is the baseline for each n; p is a
    paired t-test on per-query values against it.
    """
    if not lambda_grid or not n_values:
        raise EvaluationError("sweep grids must be non-empty")
    rows = []
    for n in n_values:
        base = evaluate(pipeline_fn(1.0, n), qrels, metrics, rel_threshold, gain)
        for lam in lambda_grid:
            report = base if lam == 1.0 else evaluate(pipeline_fn(lam, n), qrels, metrics, rel_threshold, gain)
            for name in report.aggregate:
                qids = sorted(set(base.per_query[name]) & set(report.per_query[name]))
                if len(qids) >= 2:
                    _, p = paired_t_test([report.per_query[name][q] for q in qids],
                                         [base.per_query[name][q] for q in qids])
                else:
                    p = float("nan")
                rows.append(SweepRow(lam, n, name, report.aggregate[name], p))
    return rows


def write_sweep_csv(rows: Iterable[SweepRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([f"{r.lam:g}", r.n, r.metric, repr(r.value), repr(r.p_vs_baseline)])


def read_sweep_csv(path: str | Path) -> list[SweepRow]:
    with Path(path).open(encoding="utf-8") as f:
        reader = csv.DictReader(f)
        return [SweepRow(float(r["lambda"]), int(r["n"]), r["metric"], float(r["value"]),
                         float(r["p_vs_baseline"])) for r in reader]


def best_lambda(rows: Iterable[SweepRow], metric: str, n: int) -> float:
    """λ maximising ``metric`` at ``n``, e.g. on a validation query set; ties go to the larger λ."""
    cells = [(r.value, r.lam) for r in rows if r.metric == metric and r.n == n]
    if not cells:
        raise EvaluationError(f"no sweep rows for metric={metric!r}, n={n}")
    return max(cells)[1]
