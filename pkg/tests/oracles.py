"""Independent reference implementations used to pin expected values.

These are deliberately written from the defining formulas, with none of the
package's data structures or shortcuts: plain dict/loop arithmetic only.
Tests compare package outputs against these within tight tolerances.
"""

from __future__ import annotations

import math


def bm25_reference(docs: dict[str, list[str]], query: list[str],
                   k1: float = 1.2, b: float = 0.75) -> dict[str, float]:
    """Okapi BM25 with the non-negative idf variant.

    idf(t)  = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(d)= sum over query-token occurrences of
              idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))
    Documents with zero overlap simply do not appear in the result.
    """
    n_docs = len(docs)
    if n_docs == 0:
        return {}
    avgdl = sum(len(tokens) for tokens in docs.values()) / n_docs
    df: dict[str, int] = {}
    for tokens in docs.values():
        for token in set(tokens):
            df[token] = df.get(token, 0) + 1
    scores: dict[str, float] = {}
    for doc_id, tokens in docs.items():
        total = 0.0
        length = len(tokens)
        for token in query:  # every occurrence counts, duplicates add up
            tf = tokens.count(token)
            if tf == 0:
                continue
            idf = math.log(1.0 + (n_docs - df[token] + 0.5) / (df[token] + 0.5))
            denom = tf + k1 * (1.0 - b + b * (length / avgdl if avgdl > 0 else 0.0))
            total += idf * tf * (k1 + 1.0) / denom
        if total != 0.0:
            scores[doc_id] = total
    return scores


def rrf_reference(rankings: list[list[str]], k: float = 60.0) -> dict[str, float]:
    """Reciprocal rank fusion: sum of 1 / (k + rank) with 1-based ranks.

    An id absent from a ranking contributes nothing for that ranking.
    """
    fused: dict[str, float] = {}
    for ranking in rankings:
        for position, doc_id in enumerate(ranking, start=1):
            fused[doc_id] = fused.get(doc_id, 0.0) + 1.0 / (k + position)
    return fused


def softmax_reference(values: list[float]) -> list[float]:
    """Plain exp-normalize, no stabilization tricks (inputs are in [0, 1])."""
    exps = [math.exp(v) for v in values]
    total = sum(exps)
    return [e / total for e in exps]
