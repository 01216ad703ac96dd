"""
Query-by-example search with subsequence DTW
============================================

Queries are cut out of documents and lightly corrupted.
Each query is matched against every document with a free start and end.
"""

import numpy as np

from score_ft.frontend import log_mel
from score_ft.qbe import rank_queries
from score_ft.synth import make_corpus

rng = np.random.default_rng(5)
docs = {f"doc{k:02d}": log_mel(w).frames for k, w in enumerate(make_corpus(20, seed=5))}

queries, labels = {}, []
for k, src in enumerate(["doc03", "doc07", "doc11", "doc18"]):
    frames = docs[src]
    start = int(rng.integers(0, frames.shape[0] - 40))
    queries[f"q{k}"] = frames[start:start + 40] + rng.normal(scale=0.05, size=(40, frames.shape[1]))
    labels.append((f"q{k}", src))
    print(f"q{k}: frames {start}..{start + 40} of {src}")

report = rank_queries(queries, docs, labels)
for q, ranked in report.rankings.items():
    top = ranked[0]
    print(f"{q}: best {top.doc_id} score {top.score:.4f} span {top.start}..{top.end}, "
          f"runner-up {ranked[1].doc_id} {ranked[1].score:.4f}")
print(report.metrics())
