"""Differentiable constrained-clustering block at desk scale.

Each mini-batch item serves once as the constraint of a regularized
simplex program; a fixed-depth unrolled replicator map turns the batch
affinity into a row-stochastic membership matrix Y. Y is fused with
externally supplied verification scores into similarity and
dissimilarity maps that can be compared against a block-diagonal target.
The unrolled map is smooth in the affinity, which a forward-accumulation
Jacobian checked against central finite differences confirms.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from cdskit import solver
from cdskit.core_graph import InputError
from cdskit.diffusion import worker_count


@dataclass(frozen=True)
class FusionParams:
    beta: float = 0.9
    delta: float = 0.3
    unroll: int = 20

    def __post_init__(self):
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.unroll < 0:
            raise ValueError("unroll depth must be nonnegative")


@dataclass
class MiniBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2:
            raise InputError("features must be a 2-D table")
        if self.labels.shape != (self.features.shape[0],):
            raise InputError("labels length mismatch")

    @property
    def size(self):
        return self.features.shape[0]


def modified_affinity(A, probe, alpha):
    """B = A - alpha on every diagonal entry except the probe's."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if not 0 <= probe < n:
        raise InputError(f"probe {probe} out of range")
    B = A.copy()
    mask = np.ones(n, dtype=bool)
    mask[probe] = False
    B[mask, mask] -= alpha
    return B


def probe_alpha(A, probe, margin=1e-4):
    return (1.0 + margin) * solver.alpha_bound(A, [probe])


# shift floor: keeps the update well conditioned when the affinity is
# (near) zero and alpha vanishes with it
SHIFT_FLOOR = 0.1


def unrolled_replicator(B, alpha, steps):
    """Fixed-depth replicator iterate from the uniform start.

    The shift c_t = alpha * max(x_t) is the smallest value that provably
    keeps every numerator nonnegative (the only negative entries of B sit
    on the diagonal, bounded by -alpha), so the dynamics concentrate much
    faster than under the worst-case constant shift.  The map is a plain
    composition of smooth updates (no convergence test), so its Jacobian
    with respect to B is well defined.
    """
    n = B.shape[0]
    x = np.full(n, 1.0 / n)
    for _ in range(steps):
        c = max(alpha * x.max(), SHIFT_FLOOR)
        num = c + B @ x
        den = c + x @ B @ x
        x = x * num / den
    return x


def batch_cds(A, batch=None, params=FusionParams(), margin=1e-4):
    """Membership matrix Y: row i solves the program constrained at i."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if batch is not None and batch.size != n:
        raise InputError("batch size does not match affinity")

    def one(i):
        alpha = probe_alpha(A, i, margin)
        B = modified_affinity(A, i, alpha)
        return unrolled_replicator(B, alpha, params.unroll)

    workers = worker_count()
    if workers == 1:
        rows = [one(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(n)))
    return np.vstack(rows)


def fuse(Y, s_scores, d_scores, params=FusionParams()):
    """Similarity / dissimilarity fusion with verification scores.

    F_s = (beta Y) * ((1-beta) S'), F_d = (beta (delta - Y)) * ((1-beta) D'),
    both elementwise.
    """
    Y = np.asarray(Y, dtype=float)
    s_scores = np.asarray(s_scores, dtype=float)
    d_scores = np.asarray(d_scores, dtype=float)
    if s_scores.shape != Y.shape or d_scores.shape != Y.shape:
        raise InputError("score matrix shape mismatch")
    f_s = (params.beta * Y) * ((1.0 - params.beta) * s_scores)
    f_d = (params.beta * (params.delta - Y)) * ((1.0 - params.beta) * d_scores)
    return f_s, f_d


def target_matrix(labels):
    """G_t[i, j] = 1 iff items i and j share an identity."""
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(float)


def cross_entropy_loss(f_s, f_d, target, eps=1e-12):
    """Binary cross-entropy over the paired (F_d, F_s) logits.

    Per entry, the two fused scores are softmax-normalized into a
    same-identity probability which is scored against the binary target.
    """
    f_s = np.asarray(f_s, dtype=float)
    f_d = np.asarray(f_d, dtype=float)
    t = np.asarray(target, dtype=float)
    m = np.maximum(f_s, f_d)
    es, ed = np.exp(f_s - m), np.exp(f_d - m)
    p_same = es / (es + ed)
    p_same = np.clip(p_same, eps, 1.0 - eps)
    return float(-np.mean(t * np.log(p_same) + (1 - t) * np.log(1 - p_same)))


def _unrolled_with_jacobian(B, alpha, steps):
    """Forward-accumulation Jacobian dx/dB alongside the iterate.

    J has shape (n, n, n): J[i, a, b] = d x_i / d B_ab, with alpha held
    constant.  The shift c = max(alpha * max(x), SHIFT_FLOOR) depends on
    the iterate, so its derivative (alpha * J at the argmax row, zero
    when the floor is active) enters both numerator and denominator.
    """
    n = B.shape[0]
    x = np.full(n, 1.0 / n)
    J = np.zeros((n, n, n))
    for _ in range(steps):
        Bx = B @ x
        m = int(np.argmax(x))
        c = alpha * x[m]
        if c > SHIFT_FLOOR:
            dc = alpha * J[m]
        else:
            c = SHIFT_FLOOR
            dc = np.zeros((n, n))
        num = c + Bx
        quad = x @ Bx
        den = c + quad
        # dBx[i,a,b] = delta_ia x_b + sum_j B_ij J[j,a,b]
        dBx = np.einsum("ij,jab->iab", B, J)
        idx = np.arange(n)
        dBx[idx, idx, :] += x[None, :]
        # dquad[a,b] = x_a x_b + 2 sum_i Bx_i J[i,a,b]  (B symmetric)
        dquad = np.outer(x, x) + 2.0 * np.einsum("i,iab->ab", Bx, J)
        dnum = dBx + dc[None, :, :]
        dden = dquad + dc
        dx = (J * (num / den)[:, None, None]
              + (x / den)[:, None, None] * dnum
              - (x * num / den ** 2)[:, None, None] * dden[None, :, :])
        x = x * num / den
        J = dx
    return x, J


def grad_check(A, probe, steps=10, h=1e-5, margin=1e-4):
    """Max relative error of the analytic Jacobian vs central differences.

    alpha is evaluated once on the unperturbed A and held fixed while A
    is perturbed, so the differentiated map matches the analytic one
    exactly.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n > 8:
        raise InputError("gradient check is limited to n <= 8")
    alpha = probe_alpha(A, probe, margin)

    def forward(mat):
        return unrolled_replicator(modified_affinity(mat, probe, alpha),
                                   alpha, steps)

    _, J = _unrolled_with_jacobian(modified_affinity(A, probe, alpha),
                                   alpha, steps)
    if not np.all(np.isfinite(J)):
        raise ArithmeticError("non-finite analytic gradients")
    worst = 0.0
    for a in range(n):
        for b in range(n):
            Ap, Am = A.copy(), A.copy()
            Ap[a, b] += h
            Am[a, b] -= h
            g = (forward(Ap) - forward(Am)) / (2.0 * h)
            if not np.all(np.isfinite(g)):
                raise ArithmeticError("non-finite finite-difference gradients")
            denom = np.maximum(np.abs(g), 1e-8)
            worst = max(worst, float(np.max(np.abs(J[:, a, b] - g) / denom)))
    return worst


def constraint_expansion(A, probe, k_nn, params=solver.SolverParams()):
    """Two-stage ranking with an automatically promoted second seed.

    Stage 1 extracts a CDS on the probe's k-NN subgraph; the strongest
    non-probe member becomes a second constraint for a full-graph CDS
    whose membership vector gives the final ranking. A singleton stage-1
    cluster falls back to the raw similarity order.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if not 0 <= probe < n:
        raise InputError(f"probe {probe} out of range")
    if k_nn >= n:
        raise InputError("k_nn must be smaller than the batch")
    order = np.argsort(-A[probe], kind="stable")
    order = order[order != probe][:k_nn]
    nodes = np.concatenate(([probe], order))
    sub = A[np.ix_(nodes, nodes)]
    res = solver.extract_cds(sub, [0], params)
    members = [int(i) for i in res.support if i != 0]
    if not members:
        ranking = np.argsort(-A[probe], kind="stable")
        return ranking, A[probe][ranking]
    picked = int(nodes[max(members, key=lambda i: res.x[i])])
    final = solver.extract_cds(A, [probe, picked], params)
    ranking = np.argsort(-final.x, kind="stable")
    return ranking, final.x[ranking]


def planted_batch(k=16, omega=4, dim=8, noise=0.1, seed=0):
    """Synthetic identity batch: k identities, omega images each."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(k, dim))
    feats = np.repeat(centers, omega, axis=0)
    feats = feats + noise * rng.normal(size=feats.shape)
    labels = np.repeat(np.arange(k), omega)
    return MiniBatch(features=feats, labels=labels)
