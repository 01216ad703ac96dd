"""Query-by-example scoring with subsequence DTW, ranking and retrieval metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Set, Tuple

from .core import as_frames
from .softdtw import subsequence_dtw

__all__ = [
    "QbeResult",
    "QbeReport",
    "score_pair",
    "rank_results",
    "average_precision",
    "rank_queries",
    "write_results_tsv",
    "read_labels_tsv",
]


@dataclass(frozen=True)
class QbeResult:
    query_id: str
    doc_id: str
    score: float  # higher is better; 0 is a perfect match
    start: int
    end: int  # exclusive


@dataclass
class QbeReport:
    results: List[QbeResult]
    rankings: Dict[str, List[QbeResult]]
    average_precision: Dict[str, float] = field(default_factory=dict)
    precision_at_1: float = float("nan")
    mean_average_precision: float = float("nan")

    def metrics(self) -> dict:
        return {
            "n_queries": len(self.rankings),
            "n_labelled_queries": len(self.average_precision),
            "precision_at_1": self.precision_at_1 if self.average_precision else None,
            "map": self.mean_average_precision if self.average_precision else None,
        }


def score_pair(query, doc, query_id: str = "", doc_id: str = "") -> QbeResult:
    """Negated, query-length-normalized subsequence DTW cost."""
    match = subsequence_dtw(query, doc)
    return QbeResult(query_id, doc_id, 0.0 - match.value, match.start, match.end)


def rank_results(results: Iterable[QbeResult]) -> Dict[str, List[QbeResult]]:
    """Per query, results by score descending, ties broken by doc_id ascending."""
    by_query: Dict[str, List[QbeResult]] = {}
    for r in results:
        by_query.setdefault(r.query_id, []).append(r)
    return {q: sorted(rs, key=lambda r: (-r.score, r.doc_id)) for q, rs in sorted(by_query.items())}


def average_precision(ranked_doc_ids: List[str], relevant: Set[str]) -> float:
    if not relevant:
        raise ValueError("average precision needs at least one relevant document")
    hits, total = 0, 0.0
    for rank, doc in enumerate(ranked_doc_ids, start=1):
        if doc in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def rank_queries(queries: Mapping[str, object], docs: Mapping[str, object],
                 labels: Iterable[Tuple[str, str]] = ()) -> QbeReport:
    """Score every query against every document and rank.

    ``labels`` are (query_id, doc_id) relevance pairs. Queries without any
    relevant document are ranked but left out of the metrics.
    """
    if not queries:
        raise ValueError("no queries")
    if not docs:
        raise ValueError("no documents")
    q_frames = {q: as_frames(v) for q, v in queries.items()}
    d_frames = {d: as_frames(v) for d, v in docs.items()}
    dims = {f.shape[1] for f in q_frames.values()} | {f.shape[1] for f in d_frames.values()}
    if len(dims) != 1:
        raise ValueError(f"queries and documents disagree on feature dimension: {sorted(dims)}")

    results = [score_pair(q_frames[q], d_frames[d], q, d) for q in sorted(q_frames) for d in sorted(d_frames)]
    rankings = rank_results(results)
    relevant: Dict[str, Set[str]] = {}
    for q, d in labels:
        relevant.setdefault(q, set()).add(d)
    report = QbeReport(results, rankings)
    labelled = [q for q in rankings if relevant.get(q)]
    if labelled:
        for q in labelled:
            report.average_precision[q] = average_precision([r.doc_id for r in rankings[q]], relevant[q])
        report.precision_at_1 = sum(rankings[q][0].doc_id in relevant[q] for q in labelled) / len(labelled)
        report.mean_average_precision = sum(report.average_precision.values()) / len(labelled)
    return report


def write_results_tsv(path, rankings: Mapping[str, List[QbeResult]]) -> None:
    """Columns: query_id, doc_id, score (6 decimals), start, end."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["query_id", "doc_id", "score", "start", "end"])
        for q in sorted(rankings):
            for r in rankings[q]:
                # +0.0 folds -0.0 so a rounded-away residual never prints as "-0.000000"
                w.writerow([r.query_id, r.doc_id, f"{round(r.score, 6) + 0.0:.6f}", r.start, r.end])


def read_labels_tsv(path) -> List[Tuple[str, str]]:
    """Two tab-separated columns, query_id and doc_id; ``#`` lines are comments."""
    pairs = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated columns, got {len(parts)}")
            if parts == ["query_id", "doc_id"]:
                continue
            pairs.append((parts[0], parts[1]))
    return pairs
