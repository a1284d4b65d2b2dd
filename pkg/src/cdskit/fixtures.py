"""Deterministic fixtures: the 8-node reference graph and planted
synthetic datasets used by tests, the CLI and the acceptance suite."""

from __future__ import annotations

import numpy as np

from cdskit.core_graph import build_gaussian_affinity, build_self_tuning_affinity

# Unweighted 8-node graph (0-based) whose maximal cliques are
# {0,1}, {1,2}, {3,4}, {4,5,7} and {4,6,7}.
G8_EDGES = (
    (0, 1), (1, 2), (3, 4), (4, 5), (4, 6), (4, 7), (5, 7), (6, 7),
)


def g8_affinity():
    A = np.zeros((8, 8))
    for i, j in G8_EDGES:
        A[i, j] = A[j, i] = 1.0
    return A


# Constraint set -> expected supports (any one of them is a valid output),
# everything 0-based.
G8_SCENARIOS = (
    (frozenset(), ({4, 5, 7}, {4, 6, 7})),
    (frozenset({1}), ({0, 1, 2},)),
    (frozenset({4}), ({3, 4, 5, 6, 7},)),
    (frozenset({3, 4}), ({3, 4},)),
    (frozenset({4, 7}), ({4, 5, 6, 7},)),
    (frozenset({0, 3}), ({0, 1}, {3, 4})),
    (frozenset({1, 4, 7}), ({0, 1, 2}, {4, 5, 6, 7})),
)


def planted_blobs(n_per=10, blobs=3, dim=4, spread=0.15, sep=4.0, seed=0):
    """Well-separated Gaussian blobs; returns (features, labels)."""
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for b in range(blobs):
        center = rng.normal(scale=sep, size=dim)
        feats.append(center + spread * rng.normal(size=(n_per, dim)))
        labels.extend([b] * n_per)
    return np.vstack(feats), np.asarray(labels)


def planted_blob_affinity(n_per=10, blobs=3, dim=4, spread=0.15, sep=4.0,
                          seed=0, k=7):
    feats, labels = planted_blobs(n_per, blobs, dim, spread, sep, seed)
    k = min(k, feats.shape[0] - 1)
    return build_self_tuning_affinity(feats, k=k), labels


def random_affinity(n, seed=0):
    """Symmetric U[0,1] weights, zero diagonal."""
    rng = np.random.default_rng(seed)
    A = rng.uniform(size=(n, n))
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 0.0)
    return A


def random_binary_graph(n, p=0.5, seed=0):
    rng = np.random.default_rng(seed)
    A = (rng.uniform(size=(n, n)) < p).astype(float)
    A = np.triu(A, 1)
    return A + A.T


def planted_channels(n_per=10, blobs=3, level=0.6, cross=1e-7, jitter=1e-3,
                     seed=0):
    """A class-pure similarity channel and a shuffled (uninformative) one.

    The pure channel gives each class its own tight similarity level
    (level**k for class k) with a deep gap down to all cross-class
    similarities.  The shuffled channel reuses exactly the same edge
    weights, permuted uniformly over the off-diagonal positions, which
    keeps the value distribution while destroying the class structure:
    a row then mixes values from every level, so consecutive-ratio
    neighbour selection stops at the first level gap instead of
    collecting a whole class.
    """
    n = n_per * blobs
    labels = np.repeat(np.arange(blobs), n_per)
    rng = np.random.default_rng(seed)
    A = cross * (1.0 + 0.5 * rng.uniform(-1, 1, size=(n, n)))
    for k in range(blobs):
        block = slice(k * n_per, (k + 1) * n_per)
        A[block, block] = level ** k * (
            1.0 + jitter * rng.uniform(-1, 1, size=(n_per, n_per)))
    A = np.triu(A, 1)
    A = A + A.T
    iu = np.triu_indices(n, 1)
    vals = A[iu].copy()
    rng = np.random.default_rng(seed + 1)
    rng.shuffle(vals)
    B = np.zeros_like(A)
    B[iu] = vals
    B = B + B.T
    return A, B, labels
