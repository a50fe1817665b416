"""Ranking metrics: AP / MAP, MT@k, normalized MT@k and R-precision.

All metrics read only the boolean relevance of each ranked position plus
the number of relevant items that exist for the query.
"""

from __future__ import annotations

import csv
import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .errors import UndefinedMetric
from .retrieval import CLASSES, SAMPLES, distance_matrix, rank_row


@dataclass(frozen=True)
class RelevanceJudgment:
    relevant: np.ndarray  # bool per ranked position
    total_relevant: int
    query_id: str = ""

    def __post_init__(self):
        rel = np.asarray(self.relevant, dtype=bool)
        if rel.ndim != 1:
            raise ValueError("relevance must be one-dimensional")
        if rel.sum() > self.total_relevant:
            raise ValueError("more relevant items in the list than exist")
        object.__setattr__(self, "relevant", rel)


def judge(ranked_ids: Sequence[str], query_work: str, work_of, total_relevant: int,
          query_id: str = "") -> RelevanceJudgment:
    """Mark each ranked id relevant when it maps to ``query_work``.

    ``work_of`` maps ids to work ids; pass ``None`` when the ranked ids are
    work ids already (classes mode).
    """
    if work_of is None:
        rel = [r == query_work for r in ranked_ids]
    else:
        rel = [work_of[r] == query_work for r in ranked_ids]
    return RelevanceJudgment(np.array(rel, dtype=bool), total_relevant, query_id)


def _mean(values) -> float:
    # correctly rounded, so the result does not depend on summation order
    return math.fsum(values) / len(values)


def average_precision(j: RelevanceJudgment) -> float:
    if j.total_relevant < 1:
        raise UndefinedMetric("average precision needs at least one relevant item")
    # exact rational sum, rounded once
    ranks = (np.flatnonzero(j.relevant) + 1).tolist()
    total = sum(Fraction(h, r) for h, r in enumerate(ranks, start=1))
    return float(total / j.total_relevant)


def mean_average_precision(judgments: Iterable[RelevanceJudgment]) -> float:
    aps = [average_precision(j) for j in judgments if j.total_relevant >= 1]
    if not aps:
        raise UndefinedMetric("no query with a relevant item")
    return _mean(aps)


def mt_at_k(j: RelevanceJudgment, k: int = 10) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(j.relevant[:k].sum())


def mean_mt_at_k(judgments: Iterable[RelevanceJudgment], k: int = 10) -> float:
    vals = [mt_at_k(j, k) for j in judgments if j.total_relevant >= 1]
    if not vals:
        raise UndefinedMetric("no query with a relevant item")
    return _mean(vals)


def normalized_mt_at_k(j: RelevanceJudgment, k: int = 10, mode: str = SAMPLES) -> float:
    """MT@k over the most that query could score: min(k, relevant items).

    In classes mode exactly one work is correct.
    """
    total = 1 if mode == CLASSES else j.total_relevant
    if total < 1:
        raise UndefinedMetric("normalized MT@k needs at least one relevant item")
    return mt_at_k(j, k) / min(k, total)


def mean_normalized_mt_at_k(judgments: Iterable[RelevanceJudgment], k: int = 10,
                            mode: str = SAMPLES) -> float:
    vals = [normalized_mt_at_k(j, k, mode) for j in judgments if j.total_relevant >= 1]
    if not vals:
        raise UndefinedMetric("no query with a relevant item")
    return _mean(vals)


def r_precision(candidates: Sequence[str], ground_truth) -> float:
    truth = set(ground_truth)
    if not truth:
        raise UndefinedMetric("R-precision needs a non-empty ground truth")
    n = len(truth)
    return len(truth.intersection(list(candidates)[:n])) / n


@dataclass
class LookupReport:
    mode: str
    map: float
    mt10: float
    mt10_norm: float
    n_queries: int
    n_undefined: int
    per_query: List[tuple]  # (track_id, ap, mt@10, mt@10_norm)


def summarize(judgments: Sequence[RelevanceJudgment], mode: str, k: int = 10) -> LookupReport:
    defined = [j for j in judgments if j.total_relevant >= 1]
    per_query = [
        (j.query_id, average_precision(j), mt_at_k(j, k), normalized_mt_at_k(j, k, mode))
        for j in defined
    ]
    return LookupReport(
        mode=mode,
        map=mean_average_precision(defined),
        mt10=mean_mt_at_k(defined, k),
        mt10_norm=mean_normalized_mt_at_k(defined, k, mode),
        n_queries=len(defined),
        n_undefined=len(judgments) - len(defined),
        per_query=per_query,
    )


def write_report(reports: Sequence[LookupReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "mode", "value", "n_queries"])
        for r in reports:
            for name, value in (("MAP", r.map), ("MT@10", r.mt10), ("MT@10*", r.mt10_norm)):
                w.writerow([name, r.mode, repr(value), r.n_queries])
            w.writerow(["undefined_queries", r.mode, r.n_undefined, r.n_queries])


def write_per_query(report: LookupReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["track_id", "ap", "mt@10", "mt@10_norm"])
        for tid, ap, mt, mtn in report.per_query:
            w.writerow([tid, repr(ap), mt, repr(mtn)])


def evaluate_lookup(store, query_ids: Sequence[str], mode: str = SAMPLES, k: int = 10,
                    queries: Optional[np.ndarray] = None) -> LookupReport:
    """Score every query track against the store in one scoring mode.

    Queries are store tracks (their own embeddings unless ``queries`` is
    given). Samples mode discards the self pair, so a query's relevant set
    is the rest of its work; classes mode has one relevant work.
    """
    rows = [store.row_of[q] for q in query_ids]
    Q = store.embeddings[rows] if queries is None else queries
    D = distance_matrix(Q, store, mode, exclude_self=(mode == SAMPLES), query_track_ids=list(query_ids))
    work_of = dict(zip(store.track_ids, store.work_ids))
    sizes = np.bincount(store.members)
    judgments = []
    for i, q in enumerate(query_ids):
        ranked = rank_row(D[i], store, mode)
        w = work_of[q]
        if mode == SAMPLES:
            j = judge(ranked.ids, w, work_of, int(sizes[store.members[rows[i]]]) - 1, q)
        else:
            j = judge(ranked.ids, w, None, 1, q)
        judgments.append(j)
    return summarize(judgments, mode, k)
