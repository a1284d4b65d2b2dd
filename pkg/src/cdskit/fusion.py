"""Query-adaptive fusion of multiple similarity channels.

Each channel contributes a ranked neighbour set (incremental selection by
consecutive-score ratio), a constrained-dominant-set cluster around the
query with outliers dropped by a dynamic threshold, and an entropy-based
positive-impact weight.  A naive voting scheme over neighbour/cluster
sets and a weighted geometric mean of the channel similarities produce
the fused ranking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cdskit import solver
from cdskit.core_graph import minmax_normalize_columns
from cdskit.diffusion import rank


@dataclass(frozen=True)
class FusionConfig:
    npc: float = 0.9                 # consecutive-ratio admission threshold
    lambda_scale: float = 1.0        # dynamic-threshold scaling
    penalty: float = 0.7             # final-similarity mixing weight
    eta: float | None = None         # vote normalizers; None = max count
    theta: float | None = None
    iota: float = 1.0
    solver_params: solver.SolverParams = solver.SolverParams()

    def __post_init__(self):
        if not 0 < self.npc <= 1:
            raise ValueError("npc must lie in (0, 1]")
        if not 0 <= self.penalty <= 1:
            raise ValueError("penalty must lie in [0, 1]")


def incremental_nn_select(ids, scores, npc):
    """Walk a descending ranked list, admitting while the ratio of two
    consecutive scores stays above npc; return the admitted prefix."""
    ids = list(ids)
    scores = np.asarray(scores, dtype=float)
    if len(ids) == 0:
        return []
    kept = [ids[0]]
    for i in range(1, len(ids)):
        prev, cur = scores[i - 1], scores[i]
        if prev <= 0:
            ratio = 1.0 if cur == prev else 0.0
        else:
            ratio = cur / prev
        if ratio <= npc:
            break
        kept.append(ids[i])
    return kept


def query_cds(affinity, query, params=solver.SolverParams()):
    """Constrained cluster around the query on the NN graph."""
    return solver.extract_cds(affinity, [query], params)


def dynamic_threshold(x, lambda_scale=1.0):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty membership vector")
    return lambda_scale * (1.0 - x.max() + x.min()) / x.size


def detect_outliers(members, scores, zeta, query):
    """Drop members with membership below zeta; the query always stays."""
    kept = [m for m, s in zip(members, scores) if s >= zeta or m == query]
    if query not in kept:
        kept.insert(0, query)
    return kept


def normalized_entropy(p):
    """Shannon entropy of a stochastic vector over log(len); singleton -> 0."""
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    if p.size <= 1:
        return 0.0
    h = -float(np.sum(p * np.log(p)))
    return h / np.log(p.size)


def membership_entropy(x):
    """Normalized entropy of exp(x) renormalized to a distribution."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty cluster")
    e = np.exp(x - x.max())
    return normalized_entropy(e / e.sum())


def compute_piw(entropies, sizes):
    """Positive-impact weights: theta_i = (1 - H_i) + size share; sum 1."""
    entropies = np.asarray(entropies, dtype=float)
    sizes = np.asarray(sizes, dtype=float)
    if entropies.size == 0:
        raise ValueError("need at least one channel")
    total = sizes.sum()
    card = sizes / total if total > 0 else np.zeros_like(sizes)
    theta = (1.0 - entropies) + card
    theta = np.clip(theta, 0.0, None)
    s = theta.sum()
    if s <= 0:
        return np.full(len(theta), 1.0 / len(theta))
    return theta / s


def vote(nn_sets, cds_sets, gallery_ids, eta=None, theta=None, iota=1.0):
    """Counts over the (z-1)-wise NN intersections, the CDS multiset union
    and the intersection of all those intersections, per gallery id."""
    z = len(nn_sets)
    nn_sets = [set(s) for s in nn_sets]
    cds_sets = [set(s) for s in cds_sets]
    votes = {g: (0.0, 0.0, 0.0) for g in gallery_ids}
    if z < 2:
        return votes
    phis = []
    for left_out in range(z):
        inter = None
        for j, s in enumerate(nn_sets):
            if j == left_out:
                continue
            inter = set(s) if inter is None else inter & s
        phis.append(inter)
    kappa = set.intersection(*phis) if phis else set()
    eta = float(eta) if eta is not None else float(len(phis))
    theta = float(theta) if theta is not None else float(z)
    for g in gallery_ids:
        c1 = sum(1 for p in phis if g in p)
        c2 = sum(1 for s in cds_sets if g in s)
        c3 = 1 if g in kappa else 0
        votes[g] = (c1 / eta, c2 / theta, c3 / iota)
    return votes


def final_similarity(sims, piw, votes, penalty):
    """lambda-weighted geometric mean of channel scores plus vote sum."""
    sims = np.asarray(sims, dtype=float)   # (channels, gallery)
    piw = np.asarray(piw, dtype=float)
    ns = np.ones(sims.shape[1])
    for s, w in zip(sims, piw):
        ns *= np.power(np.clip(s, 0.0, None), w)
    vote_sum = np.asarray([sum(v) for v in votes], dtype=float)
    return penalty * ns + (1.0 - penalty) * vote_sum


@dataclass
class ChannelDiagnostics:
    name: str
    nn_ids: list
    cds_ids: list
    entropy: float
    piw: float = 0.0


@dataclass
class RetrievalResult:
    query: int
    order: np.ndarray
    scores: np.ndarray
    piw: np.ndarray
    channels: list = field(default_factory=list)


def retrieve(query, channels, config=FusionConfig(), names=None):
    """Full fusion pipeline over full similarity matrices (one per channel).

    Channels are column min-max normalized, neighbours selected
    incrementally, a CDS extracted per channel on the complete subgraph
    over NN plus query, entropy/cardinality weights computed, votes cast
    and the fused score ranked (query kept in its own list).
    """
    mats = [minmax_normalize_columns(np.asarray(c, dtype=float)) for c in channels]
    if not mats:
        raise ValueError("need at least one channel")
    n = mats[0].shape[0]
    names = names or [f"channel{i}" for i in range(len(mats))]
    diags = []
    entropies, sizes = [], []
    for name, A in zip(names, mats):
        order, scores = rank(A, query)
        order = [int(g) for g in order if g != query]
        scores = A[query][order]
        nn_ids = incremental_nn_select(order, scores, config.npc)
        nodes = np.array([query] + nn_ids, dtype=int)
        sub = A[np.ix_(nodes, nodes)].copy()
        np.fill_diagonal(sub, 0.0)
        res = query_cds(sub, 0, config.solver_params)
        members = [int(nodes[i]) for i in res.support]
        member_scores = [float(res.x[i]) for i in res.support]
        zeta = dynamic_threshold(res.x[res.support], config.lambda_scale)
        cds_ids = detect_outliers(members, member_scores, zeta, query)
        kept_scores = res.x[[int(np.nonzero(nodes == m)[0][0]) for m in cds_ids]]
        entropies.append(membership_entropy(kept_scores))
        sizes.append(len(cds_ids))
        diags.append(ChannelDiagnostics(name, nn_ids, cds_ids, entropies[-1]))
    piw = compute_piw(entropies, sizes)
    for d, w in zip(diags, piw):
        d.piw = float(w)
    gallery = list(range(n))
    vote_map = vote([d.nn_ids for d in diags], [d.cds_ids for d in diags],
                    gallery, config.eta, config.theta, config.iota)
    sims = np.stack([A[query] for A in mats])
    fused = final_similarity(sims, piw, [vote_map[g] for g in gallery],
                             config.penalty)
    fused[query] = max(fused.max(), 1.0) + 1.0  # self-match leads its own list
    order = np.argsort(-fused, kind="stable")
    return RetrievalResult(query=query, order=order, scores=fused[order],
                           piw=piw, channels=diags)
