"""Dominant-set and constrained dominant-set extraction.

The solver maximizes x'Wx over the standard simplex with discrete
replicator dynamics.  Constrained extraction regularizes the affinity as
W = A - alpha*I_hat(S), with alpha just above the largest eigenvalue of
the principal submatrix on the complement of the seed set, which forces
every local solution's support to intersect the seeds.

Small-instance combinatorial oracles (recursive node weights, dominant-set
verification, exhaustive maximal cliques) live here too; they back the
test suite rather than the production path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np

MAX_ORACLE_SIZE = 15
MAX_CLIQUE_SIZE = 20


class SolverError(ValueError):
    pass


class NonSymmetricError(SolverError):
    """Replicator monotonicity needs W = W'; refuse anything else."""


@dataclass(frozen=True)
class SolverParams:
    alpha: float | None = None          # None = auto spectral bound
    margin: float = 1e-4                # relative excess over the bound
    shift: float | None = None          # replicator constant C; None = alpha
    max_iters: int = 10000
    tol: float = 1e-10                  # inf-norm stationarity
    support_cutoff: float = 1e-6        # relative to max(x)
    multi_start: int = 0                # extra perturbed-barycenter starts
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise SolverError("margin must be positive")
        if self.tol <= 0:
            raise SolverError("tol must be positive")


@dataclass
class ClusterResult:
    x: np.ndarray
    support: np.ndarray
    payoff: float
    kkt_residual: float
    iterations: int
    converged: bool
    payoff_trace: np.ndarray = field(repr=False, default=None)

    def support_set(self):
        return frozenset(int(i) for i in self.support)


@dataclass
class PeelOffResult:
    clusters: list
    union_support: np.ndarray

    def support_sets(self):
        return [c.support_set() for c in self.clusters]


# ---------------------------------------------------------------------------
# recursive weights and the dominant-set definition (oracle scale)
# ---------------------------------------------------------------------------

def phi(A, S, i, j):
    """Relative similarity of j to i with respect to i's neighbours in S."""
    S = list(S)
    if i not in S:
        raise SolverError(f"phi requires i in S, got i={i}")
    if j in S:
        raise SolverError(f"phi requires j outside S, got j={j}")
    A = np.asarray(A, dtype=float)
    return float(A[i, j] - A[i, S].sum() / len(S))


def _weights(A, S, cache):
    """All w_S(i) for i in S, memoized over frozensets."""
    key = frozenset(S)
    if key in cache:
        return cache[key]
    members = sorted(key)
    if len(members) == 1:
        out = {members[0]: 1.0}
    else:
        out = {}
        for i in members:
            rest = key - {i}
            w_rest = _weights(A, rest, cache)
            out[i] = sum(phi(A, rest, j, i) * w_rest[j] for j in rest)
    cache[key] = out
    return out


def node_weight(A, S, i, cache=None):
    """w_S(i) by the recursive definition; exponential, so |S| <= 15."""
    S = frozenset(S)
    if i not in S:
        raise SolverError(f"node_weight requires i in S")
    if len(S) > MAX_ORACLE_SIZE:
        raise SolverError(f"node_weight limited to |S| <= {MAX_ORACLE_SIZE}")
    if cache is None:
        cache = {}
    return _weights(np.asarray(A, dtype=float), S, cache)[i]


def total_weight(A, S, cache=None):
    if cache is None:
        cache = {}
    w = _weights(np.asarray(A, dtype=float), frozenset(S), cache)
    return sum(w.values())


def is_dominant_set(A, S):
    """Internal coherence on every subset, external incoherence outside."""
    A = np.asarray(A, dtype=float)
    S = frozenset(int(i) for i in S)
    if not S:
        raise SolverError("S must be nonempty")
    if len(S) > MAX_ORACLE_SIZE:
        raise SolverError(f"is_dominant_set limited to |S| <= {MAX_ORACLE_SIZE}")
    cache = {}
    members = sorted(S)
    # W(T) > 0 for every nonempty subset, enumerated smallest-first so the
    # memo cache fills bottom-up
    stack = [frozenset([m]) for m in members]
    seen = set(stack)
    while stack:
        T = stack.pop()
        if total_weight(A, T, cache) <= 0:
            return False
        for m in members:
            if m not in T:
                nxt = T | {m}
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
    w = _weights(A, S, cache)
    if any(w[i] <= 0 for i in S):
        return False
    # External incoherence: no outside node may be positively attracted.
    # Payoff-neutral nodes (weight exactly zero, e.g. an isolated vertex
    # or a vertex tied between maximal cliques) do not disqualify the set.
    tol = 1e-12 * max(1.0, float(np.abs(A).max()))
    outside = [j for j in range(A.shape[0]) if j not in S]
    for j in outside:
        wj = sum(phi(A, S, i, j) * w[i] for i in S)  # w_{S+j}(j)
        if wj > tol:
            return False
    return True


def weighted_characteristic_vector(A, S):
    """x_i = w_S(i)/W(S) on S, zero elsewhere; S must be a dominant set."""
    A = np.asarray(A, dtype=float)
    if not is_dominant_set(A, S):
        raise SolverError(f"S={sorted(S)} is not a dominant set")
    cache = {}
    w = _weights(A, frozenset(S), cache)
    x = np.zeros(A.shape[0])
    tot = sum(w.values())
    for i, wi in w.items():
        x[i] = wi / tot
    return x


def brute_force_maximal_cliques(A):
    """All maximal cliques of a binary affinity by exhaustive enumeration."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n > MAX_CLIQUE_SIZE:
        raise SolverError(f"clique oracle limited to n <= {MAX_CLIQUE_SIZE}")
    vals = np.unique(A)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise SolverError("clique oracle requires a binary affinity")
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(zip(*np.nonzero(np.triu(A, 1))))
    return sorted(frozenset(c) for c in nx.find_cliques(g))


# ---------------------------------------------------------------------------
# spectral bound
# ---------------------------------------------------------------------------

def power_iteration_lmax(M, tol=1e-10, max_iters=10000):
    """Largest eigenvalue of a symmetric nonnegative matrix.

    Power iteration from a positive start; Perron-Frobenius makes the
    dominant eigenvalue the largest one for nonnegative symmetric M.
    """
    n = M.shape[0]
    if n == 0:
        return 0.0
    v = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    for _ in range(max_iters):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v_new = w / norm
        lam_new = float(v_new @ (M @ v_new))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1.0):
            return lam_new
        v, lam = v_new, lam_new
    return lam


def alpha_bound(A, S):
    """lambda_max of the principal submatrix on V \\ S (zero if S = V)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    rest = np.array(sorted(set(range(n)) - set(int(i) for i in S)), dtype=int)
    if rest.size == 0:
        return 0.0
    sub = A[np.ix_(rest, rest)]
    if rest.size <= 64:
        return float(np.linalg.eigvalsh(sub)[-1])
    return power_iteration_lmax(sub)


# ---------------------------------------------------------------------------
# replicator dynamics
# ---------------------------------------------------------------------------

def barycenter(n):
    return np.full(n, 1.0 / n)


def support_of(x, cutoff):
    x = np.asarray(x)
    m = x.max()
    if m <= 0:
        return np.array([], dtype=int)
    return np.nonzero(x > cutoff * m)[0]


def kkt_residual(W, x, support_cutoff=1e-6):
    """Max violation of the simplex-QP first-order conditions at x."""
    W = np.asarray(W, dtype=float)
    x = np.asarray(x, dtype=float)
    wx = W @ x
    lam = float(x @ wx)
    sup = support_of(x, support_cutoff)
    mask = np.zeros(len(x), dtype=bool)
    mask[sup] = True
    res = 0.0
    if mask.any():
        res = float(np.abs(wx[mask] - lam).max())
    if (~mask).any():
        res = max(res, float(np.clip(wx[~mask] - lam, 0.0, None).max()))
    return res


def _check_symmetric(W):
    scale = np.abs(W).max() if W.size else 0.0
    if np.abs(W - W.T).max() > 1e-9 * max(scale, 1.0):
        raise NonSymmetricError("replicator dynamics require a symmetric payoff matrix")


def _iterate(W, x, c, params, can_raise):
    """One replicator trajectory; returns (x, trace, iterations, converged,
    need_raise)."""
    xt = x.copy()
    wx = W @ xt
    trace = [float(xt @ wx)]
    it = 0
    for it in range(1, params.max_iters + 1):
        numer = c + wx
        if numer.min() < 0.0:
            if can_raise:
                return xt, trace, it, False, True
            numer = np.clip(numer, 0.0, None)
        denom = c + trace[-1]
        if denom <= 0.0:
            return xt, trace, it, False, can_raise
        x_new = xt * numer / denom
        s = x_new.sum()
        if s <= 0.0:
            return xt, trace, it, False, can_raise
        x_new /= s
        delta = np.abs(x_new - xt).max()
        xt = x_new
        wx = W @ xt
        trace.append(float(xt @ wx))
        if delta < params.tol:
            return xt, trace, it, True, False
    return xt, trace, it, False, False


def _polish_stationary(W, x, params):
    """Exact fixed point near a stalled iterate, found active-set style.

    Solves (Wx)_i = lambda on the current support, dropping the most
    negative coordinate and resolving while the solution leaves the
    simplex.  Returns the certified stationary point (global KKT residual
    at machine precision) or None.
    """
    n = len(x)
    sup = list(support_of(x, params.support_cutoff))
    for _ in range(max(len(sup), 1)):
        if not sup:
            return None
        k = len(sup)
        M = np.zeros((k + 1, k + 1))
        M[:k, :k] = W[np.ix_(sup, sup)]
        M[:k, k] = -1.0
        M[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        try:
            sol = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            return None
        xs, lam = sol[:k], sol[k]
        if xs.min() < -1e-9:
            sup.pop(int(np.argmin(xs)))
            continue
        full = np.zeros(n)
        full[sup] = np.clip(xs, 0.0, None)
        full /= full.sum()
        if kkt_residual(W, full, params.support_cutoff) <= 1e-8 * max(1.0, abs(lam)):
            return full
        return None
    return None


def run_replicator(W, params=SolverParams(), start=None, shift_floor=None):
    """Iterate x_i <- x_i (C + (Wx)_i) / (C + x'Wx) to stationarity.

    If the shift C leaves a negative numerator the run is restarted once
    with C raised to shift_floor (the alpha used to build W).

    When the iteration budget runs out without stationarity the iterate is
    polished to the exact fixed point on its support (degenerate instances
    with payoff-neutral boundary nodes otherwise decay at a power-law rate
    and never cross the stationarity tolerance); if no certified fixed
    point emerges, strictly payoff-deficient support nodes are dropped and
    the dynamics restart on the remaining face.  The reported payoff trace
    covers the final trajectory, the one the monotonicity guarantee
    applies to.
    """
    W = np.asarray(W, dtype=float)
    _check_symmetric(W)
    n = W.shape[0]
    x = barycenter(n) if start is None else np.asarray(start, dtype=float).copy()
    if x.shape != (n,) or np.any(x < 0) or abs(x.sum() - 1.0) > 1e-9:
        raise SolverError("start vector must lie on the standard simplex")

    c = params.shift
    if c is None:
        c = shift_floor if shift_floor is not None else 0.0
    c = max(float(c), 1e-12)

    raised_once = False
    total_iters = 0
    escapes = 0
    xt, trace, converged = x, [float(x @ W @ x)], False
    for _phase in range(2 * (n + 1)):
        can_raise = (not raised_once and shift_floor is not None
                     and c < shift_floor)
        xt, trace, it, converged, need_raise = _iterate(W, x, c, params,
                                                        can_raise)
        total_iters += it
        if need_raise:
            if not can_raise:
                raise SolverError("replicator iteration degenerated")
            c = max(float(shift_floor), 1e-12)
            raised_once = True
            continue
        if converged:
            # coordinates that decayed to (near-)zero cannot regrow even
            # when their payoff strictly beats the average; escape such
            # non-KKT stationary points by reinjecting a little mass on
            # the most profitable coordinate and iterating again
            wx = W @ xt
            lam = float(xt @ wx)
            excess = np.clip(wx - lam, 0.0, None)
            excess[support_of(xt, params.support_cutoff)] = 0.0
            j = int(np.argmax(excess))
            if excess[j] > 1e-9 * max(1.0, abs(lam)) and escapes < n:
                escapes += 1
                x = (1.0 - 1e-3) * xt
                x[j] += 1e-3
                converged = False
                continue
            break
        polished = _polish_stationary(W, xt, params)
        if polished is not None:
            payoff = float(polished @ W @ polished)
            if payoff >= trace[-1] - 1e-12:
                xt = polished
                trace.append(payoff)
                converged = True
                break
        # no certified fixed point: drop strictly payoff-deficient support
        # nodes and retry on the remaining face
        wx = W @ xt
        lam = float(xt @ wx)
        deficient = (xt > 0) & (wx < lam - 1e-9 * max(1.0, abs(lam)))
        if not deficient.any() or deficient.all():
            break
        x = xt.copy()
        x[deficient] = 0.0
        x /= x.sum()
    payoff = trace[-1]
    sup = support_of(xt, params.support_cutoff)
    return ClusterResult(
        x=xt,
        support=sup,
        payoff=payoff,
        kkt_residual=kkt_residual(W, xt, params.support_cutoff),
        iterations=total_iters,
        converged=converged,
        payoff_trace=np.asarray(trace),
    )


def regularized_matrix(A, S, alpha):
    """W = A - alpha * I_hat(S): -alpha on the diagonal outside S."""
    A = np.asarray(A, dtype=float)
    W = A.copy()
    mask = np.ones(A.shape[0], dtype=bool)
    mask[list(S)] = False
    W[mask, mask] -= alpha
    return W


def _resolve_alpha(A, S, params):
    if params.alpha is not None:
        return float(params.alpha)
    if not S:
        return 0.0
    return (1.0 + params.margin) * alpha_bound(A, S)


def _perturbed_starts(n, count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        x = barycenter(n) + rng.uniform(-1e-3, 1e-3, size=n)
        x = np.clip(x, 1e-12, None)
        yield x / x.sum()


def _refine_strict(W, res, params, shift_floor):
    """Resolve payoff-flat ridges of stationary points to their endpoints.

    Dominant sets are strict local maximizers of the payoff; a degenerate
    graph can hold a continuum of stationary points whose interior
    supports are not dominant sets.  Removing the weakest support member
    is accepted only when the face solution keeps the payoff equal within
    1e-9 (any real payoff change means the point was not ridge-interior).
    """
    current = res
    while current.converged and len(current.support) > 1:
        weakest = min(current.support, key=lambda i: current.x[i])
        x = current.x.copy()
        x[weakest] = 0.0
        x /= x.sum()
        trial = run_replicator(W, params, start=x, shift_floor=shift_floor)
        if (trial.converged
                and abs(trial.payoff - current.payoff) <= 1e-9
                and len(trial.support) < len(current.support)):
            current = trial
        else:
            break
    return current


def _solve(W, params, start, alpha, refine):
    res = run_replicator(W, params, start=start, shift_floor=alpha)
    if refine:
        res = _refine_strict(W, res, params, alpha)
    return res


def extract_cds(A, S, params=SolverParams()):
    """Constrained dominant set seeded by S; unconstrained when S is empty.

    With multi_start > 0 the barycenter is joined by seeded perturbed
    starts and the highest-payoff converged solution wins (the exact
    barycenter can sit on a saddle between symmetric solutions).
    """
    S = sorted(set(int(i) for i in S))
    alpha = _resolve_alpha(A, S, params)
    W = regularized_matrix(A, S, alpha)
    refine = not S
    results = [_solve(W, params, None, alpha, refine)]
    for start in _perturbed_starts(W.shape[0], params.multi_start, params.seed):
        results.append(_solve(W, params, start, alpha, refine))
    return max(results, key=lambda r: (r.converged, r.payoff))


def enumerate_solutions(A, S, params=SolverParams(), starts=16, seed=None):
    """Distinct supports reached from many perturbed starts (multi-start)."""
    S = sorted(set(int(i) for i in S))
    alpha = _resolve_alpha(A, S, params)
    W = regularized_matrix(A, S, alpha)
    seed = params.seed if seed is None else seed
    found = {}
    for start in _perturbed_starts(W.shape[0], starts, seed):
        res = _solve(W, params, start, alpha, refine=not S)
        key = res.support_set()
        if key not in found or res.payoff > found[key].payoff:
            found[key] = res
    return list(found.values())


def peel_off_extract(A, S, params=SolverParams()):
    """Extract constrained clusters, removing each support, until every
    seed has been assigned.  Zero-degree seeds become singleton clusters."""
    A = np.asarray(A, dtype=float)
    remaining_S = sorted(set(int(i) for i in S))
    if not remaining_S:
        raise SolverError("peel_off_extract needs a nonempty constraint set")
    alive = list(range(A.shape[0]))
    clusters = []
    assigned = []
    while remaining_S:
        seed_local = [alive.index(s) for s in remaining_S]
        sub = A[np.ix_(alive, alive)]
        isolated = [s for s, sl in zip(remaining_S, seed_local) if sub[sl].sum() == 0.0]
        if isolated:
            v = isolated[0]
            x = np.zeros(A.shape[0])
            x[v] = 1.0
            clusters.append(ClusterResult(
                x=x, support=np.array([v]), payoff=0.0, kkt_residual=0.0,
                iterations=0, converged=True, payoff_trace=np.zeros(1)))
            assigned.append(v)
            alive.remove(v)
            remaining_S.remove(v)
            continue
        res = extract_cds(sub, seed_local, params)
        sup_global = np.array(sorted(alive[i] for i in res.support), dtype=int)
        x = np.zeros(A.shape[0])
        x[[alive[i] for i in range(len(alive))]] = 0.0
        for local, val in enumerate(res.x):
            x[alive[local]] = val
        clusters.append(replace(res, x=x, support=sup_global))
        assigned.extend(int(i) for i in sup_global)
        sup_set = set(int(i) for i in sup_global)
        alive = [v for v in alive if v not in sup_set]
        remaining_S = [s for s in remaining_S if s not in sup_set]
    return PeelOffResult(clusters=clusters, union_support=np.array(sorted(set(assigned)), dtype=int))
