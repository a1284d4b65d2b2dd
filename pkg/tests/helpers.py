"""Shared test utilities: independent metric oracles and planted data
builders.  Oracles are written as plain loops, deliberately unlike the
library implementations, so both sides of every comparison are derived
separately."""

import numpy as np

from cdskit.segmentation import CosegInstance, SegmentationInstance


# ---------------------------------------------------------------------------
# metric oracles (loop-based, query handling spelled out per metric)
# ---------------------------------------------------------------------------

def ap_oracle(order, labels, query):
    """Average precision with the query dropped from its own gallery."""
    gallery = [g for g in order if g != query]
    hits = 0
    precisions = []
    for rank_pos, g in enumerate(gallery, start=1):
        if labels[g] == labels[query]:
            hits += 1
            precisions.append(hits / rank_pos)
    if not precisions:
        return None
    return sum(precisions) / len(precisions)


def map_oracle(ranked_lists, labels, queries=None):
    queries = range(len(ranked_lists)) if queries is None else queries
    aps = []
    for q, order in zip(queries, ranked_lists):
        ap = ap_oracle(order, labels, q)
        if ap is not None:
            aps.append(ap)
    return sum(aps) / len(aps) if aps else 0.0


def cmc_oracle(ranked_lists, labels, ranks, queries=None):
    queries = list(range(len(ranked_lists))) if queries is None else list(queries)
    out = {}
    for r in ranks:
        good = 0
        for q, order in zip(queries, ranked_lists):
            gallery = [g for g in order if g != q]
            if any(labels[g] == labels[q] for g in gallery[:r]):
                good += 1
        out[r] = good / len(queries)
    return out


def ns_oracle(ranked_lists, labels, queries=None):
    queries = range(len(ranked_lists)) if queries is None else queries
    scores = []
    for q, order in zip(queries, ranked_lists):
        scores.append(sum(1 for g in order[:4] if labels[g] == labels[q]))
    return sum(scores) / len(scores)


def bullseye_oracle(order, labels, query, R):
    """Top-R class recall with the query counted inside its class."""
    cls = [i for i in range(len(labels)) if labels[i] == labels[query]]
    hit = sum(1 for g in order[:R] if labels[g] == labels[query])
    return hit / len(cls)


def seg_metric_oracle(mask, gt, beta_sq=0.3, weights=None):
    """Set-overlap metrics by direct counting."""
    mask, gt = set(mask), set(gt)

    def w(ids):
        if weights is None:
            return float(len(ids))
        return float(sum(weights[i] for i in ids))

    inter = w(mask & gt)
    union = w(mask | gt)
    jaccard = inter / union if union else 1.0
    dsc = 2 * inter / (w(gt) + w(mask)) if (w(gt) + w(mask)) else 1.0
    precision = inter / w(mask) if mask else (1.0 if not gt else 0.0)
    recall = inter / w(gt) if gt else (1.0 if not mask else 0.0)
    denom = beta_sq * precision + recall
    f = (1 + beta_sq) * precision * recall / denom if denom else 0.0
    return jaccard, dsc, f


# ---------------------------------------------------------------------------
# planted data builders
# ---------------------------------------------------------------------------

def random_ranking(n, seed):
    rng = np.random.default_rng(seed)
    return rng.permutation(n)


def make_seg_instance(n_per=8, blobs=2, dim=3, spread=0.1, sep=5.0, seed=0):
    """Blob-structured superpixel features; blob 0 is the foreground."""
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for b in range(blobs):
        center = np.zeros(dim)
        center[b % dim] = sep * (b + 1)
        feats.append(center + spread * rng.normal(size=(n_per, dim)))
        labels.extend([b] * n_per)
    feats = np.vstack(feats)
    labels = np.asarray(labels)
    gt = labels == 0
    return SegmentationInstance(features=feats, ground_truth=gt), labels


def _chain_adjacency(n):
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    return adj


def make_coseg_instance(obj_center, bg_center, n_obj=6, n_bg=6, spread=0.05,
                        seed=0):
    """One synthetic image: a planted object plus a background blob."""
    rng = np.random.default_rng(seed)
    n = n_obj + n_bg
    colors = np.vstack([
        obj_center + spread * rng.normal(size=(n_obj, 3)),
        bg_center + spread * rng.normal(size=(n_bg, 3)),
    ])
    sift = np.vstack([
        np.full((n_obj, 4), 1.0) + spread * rng.normal(size=(n_obj, 4)),
        np.full((n_bg, 4), -1.0) + spread * rng.normal(size=(n_bg, 4)),
    ])
    hog = np.vstack([
        np.full((n_obj, 4), 2.0) + spread * rng.normal(size=(n_obj, 4)),
        np.full((n_bg, 4), -2.0) + spread * rng.normal(size=(n_bg, 4)),
    ])
    objectness = np.concatenate([np.full(n_obj, 0.9), np.full(n_bg, 0.1)])
    return CosegInstance(colors=colors, sift=sift, hog=hog,
                         adjacency=_chain_adjacency(n), objectness=objectness)


def make_coseg_pair(seed=0, n_obj=6, n_bg=6):
    """Two images sharing an object but with different backgrounds."""
    obj = np.array([0.5, 0.5, 0.5])
    im1 = make_coseg_instance(obj, np.array([5.0, 0.0, 0.0]),
                              n_obj=n_obj, n_bg=n_bg, seed=seed)
    im2 = make_coseg_instance(obj, np.array([0.0, 5.0, 0.0]),
                              n_obj=n_obj, n_bg=n_bg, seed=seed + 1)
    object_ids = set(range(n_obj))
    return im1, im2, object_ids
