"""Retrieval metrics shared by the diffusion and fusion pipelines.

Conventions differ per metric and are preserved: mean average precision
and CMC exclude the query from its own gallery; the N-S and Bull's eye
scores count the query's self-match.
"""

from __future__ import annotations

import warnings

import numpy as np


def _as_rankings(ranked_lists):
    return [np.asarray(r, dtype=int) for r in ranked_lists]


def ns_score(ranked_lists, labels, queries=None):
    """Mean number of same-class items in the top 4 (self-match counts)."""
    labels = np.asarray(labels)
    ranked = _as_rankings(ranked_lists)
    queries = range(len(ranked)) if queries is None else queries
    scores = []
    for q, order in zip(queries, ranked):
        top = order[:4]
        scores.append(int(np.sum(labels[top] == labels[q])))
    return float(np.mean(scores))


def average_precision(order, labels, query):
    """AP for one query with the query removed from its own gallery."""
    labels = np.asarray(labels)
    order = np.asarray(order, dtype=int)
    gallery = order[order != query]
    rel = labels[gallery] == labels[query]
    n_rel = int(rel.sum())
    if n_rel == 0:
        return None
    hits = np.nonzero(rel)[0]
    precisions = [(k + 1) / (pos + 1) for k, pos in enumerate(hits)]
    return float(np.mean(precisions))


def mean_average_precision(ranked_lists, labels, queries=None):
    labels = np.asarray(labels)
    ranked = _as_rankings(ranked_lists)
    queries = list(range(len(ranked))) if queries is None else list(queries)
    aps = []
    for q, order in zip(queries, ranked):
        ap = average_precision(order, labels, q)
        if ap is None:
            warnings.warn(f"query {q} has no relevant gallery items; skipped")
            continue
        aps.append(ap)
    if not aps:
        return 0.0
    return float(np.mean(aps))


def cmc(ranked_lists, labels, ranks=(1, 5), queries=None):
    """Fraction of queries with a relevant item within each rank cutoff."""
    labels = np.asarray(labels)
    ranked = _as_rankings(ranked_lists)
    queries = list(range(len(ranked))) if queries is None else list(queries)
    first_hits = []
    for q, order in zip(queries, ranked):
        gallery = order[order != q]
        rel = np.nonzero(labels[gallery] == labels[q])[0]
        first_hits.append(rel[0] + 1 if rel.size else np.inf)
    first_hits = np.asarray(first_hits, dtype=float)
    return {int(r): float(np.mean(first_hits <= r)) for r in ranks}
