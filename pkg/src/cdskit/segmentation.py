"""Seeded segmentation and co-segmentation over superpixel graphs.

Inputs are precomputed: superpixel features, a boolean adjacency, an
optional objectness vector and pixel counts.  Foreground extraction is
the union of peel-off constrained clusters seeded by the annotation
(taken directly for scribbles, complemented for bounding boxes), with an
error-tolerant variant that discards clusters contaminated by background
scribbles.  Co-segmentation assembles a joint block affinity from color,
SIFT, HoG and objectness channels and intersects two constrained runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import shortest_path

from cdskit import solver
from cdskit.core_graph import (
    InputError,
    build_self_tuning_affinity,
    minmax_normalize_columns,
    pairwise_sq_dists,
)

SCRIBBLE_FG = "scribble_fg"
SCRIBBLE_FG_BG = "scribble_fg_bg"
BOUNDING_BOX = "bounding_box"
MODES = (SCRIBBLE_FG, SCRIBBLE_FG_BG, BOUNDING_BOX)


@dataclass
class SegmentationInstance:
    features: np.ndarray                 # n x d superpixel descriptors
    adjacency: np.ndarray | None = None  # boolean n x n, symmetric
    pixel_counts: np.ndarray | None = None
    ground_truth: np.ndarray | None = None  # boolean fg mask per superpixel

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise InputError("features must be a 2-D table")
        n = self.features.shape[0]
        if self.adjacency is not None:
            adj = np.asarray(self.adjacency, dtype=bool)
            if adj.shape != (n, n):
                raise InputError("adjacency shape mismatch")
            if not np.array_equal(adj, adj.T):
                raise InputError("adjacency must be symmetric")
            self.adjacency = adj
        if self.pixel_counts is not None:
            self.pixel_counts = np.asarray(self.pixel_counts, dtype=float)
            if self.pixel_counts.shape != (n,):
                raise InputError("pixel_counts shape mismatch")
        if self.ground_truth is not None:
            self.ground_truth = np.asarray(self.ground_truth, dtype=bool)
            if self.ground_truth.shape != (n,):
                raise InputError("ground_truth shape mismatch")

    @property
    def size(self):
        return self.features.shape[0]


@dataclass
class Annotation:
    mode: str
    ids: list
    labels: dict = field(default_factory=dict)  # id -> "fg"/"bg", fg_bg mode

    def __post_init__(self):
        if self.mode not in MODES:
            raise InputError(f"unknown annotation mode {self.mode}")
        if len(self.ids) == 0:
            raise InputError("annotation must constrain at least one superpixel")

    def check(self, n):
        for i in self.ids:
            if not 0 <= i < n:
                raise InputError(f"constraint id {i} out of range for n={n}")

    def fg_ids(self):
        if self.mode == SCRIBBLE_FG_BG:
            return [i for i in self.ids if self.labels.get(i, "fg") == "fg"]
        return list(self.ids)

    def bg_ids(self):
        if self.mode == SCRIBBLE_FG_BG:
            return [i for i in self.ids if self.labels.get(i) == "bg"]
        return []


def build_affinity(instance, k=7):
    """Default within-image affinity: self-tuning kernel on features."""
    n = instance.size
    if n == 1:
        return np.zeros((1, 1))
    k = min(k, n - 1)
    return build_self_tuning_affinity(instance.features, k=k)


def uds(affinity, constraints, params=solver.SolverParams()):
    """Union of peel-off-extracted constrained clusters covering the seeds."""
    res = solver.peel_off_extract(affinity, constraints, params)
    return res


def segment(instance, annotation, params=solver.SolverParams(), affinity=None):
    """Foreground superpixel set for one annotated image.

    Scribble modes return the union of extracted clusters; bounding-box
    mode treats the box-boundary ids as background seeds and returns the
    complement of their union.
    """
    annotation.check(instance.size)
    A = build_affinity(instance) if affinity is None else np.asarray(affinity)
    if annotation.mode == SCRIBBLE_FG_BG:
        return error_tolerant_segment(instance, annotation.fg_ids(),
                                      annotation.bg_ids(), params, affinity=A)
    peel = uds(A, annotation.ids, params)
    mask = set(int(i) for i in peel.union_support)
    if annotation.mode == BOUNDING_BOX:
        return set(range(instance.size)) - mask
    return mask


def error_tolerant_segment(instance, fg_scribbles, bg_scribbles,
                           params=solver.SolverParams(), affinity=None):
    """Like segment() but drops any cluster holding a background scribble."""
    if not fg_scribbles or not bg_scribbles:
        raise InputError("both scribble sets must be nonempty")
    ann = Annotation(SCRIBBLE_FG, list(fg_scribbles))
    ann.check(instance.size)
    for i in bg_scribbles:
        if not 0 <= i < instance.size:
            raise InputError(f"constraint id {i} out of range")
    A = build_affinity(instance) if affinity is None else np.asarray(affinity)
    peel = uds(A, list(fg_scribbles), params)
    bg = set(int(i) for i in bg_scribbles)
    mask = set()
    survivors = 0
    for sup in peel.support_sets():
        if sup & bg:
            continue
        survivors += 1
        mask |= sup
    if survivors == 0:
        warnings.warn("every extracted cluster touched a background scribble; "
                      "returning an empty mask")
    return mask


def geodesic_adjacency_similarity(adjacency, colors):
    """Edge similarity from geodesic color distance.

    Adjacent superpixels get e = max(D) - D(p,q) + min(D) where D are the
    finite geodesic distances over the color-difference-weighted adjacency
    graph; non-adjacent (or disconnected) pairs get 0.
    """
    adj = np.asarray(adjacency, dtype=bool)
    n = adj.shape[0]
    colors = np.asarray(colors, dtype=float)
    d = np.sqrt(pairwise_sq_dists(colors))
    # dense csgraph input treats (near-)zero entries as missing edges; keep
    # identical-color adjacent pairs connected with a negligible weight
    floor = 1e-6 * max(1.0, d.max())
    weights = np.where(adj, np.maximum(d, floor), np.inf)
    np.fill_diagonal(weights, 0.0)
    geo = shortest_path(weights, method="D", directed=False)
    finite = geo[np.isfinite(geo) & (geo > 0)]
    if finite.size == 0:
        # no informative distances; fall back to uniform adjacency weights
        e = np.where(adj, 1.0, 0.0).astype(float)
        np.fill_diagonal(e, 0.0)
        return e
    gmax, gmin = finite.max(), finite.min()
    e = np.zeros((n, n))
    pair_ok = adj & np.isfinite(geo)
    e[pair_ok] = gmax - geo[pair_ok] + gmin
    np.fill_diagonal(e, 0.0)
    return 0.5 * (e + e.T)


def objectness_affinity(p_f):
    """A_m(i, j) = P_f(i) * P_f(j), zero diagonal."""
    p = np.asarray(p_f, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise InputError("objectness values must lie in [0, 1]")
    a = np.outer(p, p)
    np.fill_diagonal(a, 0.0)
    return a


def coseg_payoff(a_c, a_s, a_h, a_m):
    """Combined payoff M = 1/2 A_m + 1/6 (A_c + A_s + A_h)."""
    mats = [np.asarray(m, dtype=float) for m in (a_c, a_s, a_h, a_m)]
    shape = mats[0].shape
    for m in mats[1:]:
        if m.shape != shape:
            raise InputError("channel shape mismatch")
    a_c, a_s, a_h, a_m = mats
    return 0.5 * a_m + (a_c + a_s + a_h) / 6.0


@dataclass
class CosegInstance:
    colors: np.ndarray     # per-superpixel mean color
    sift: np.ndarray       # per-superpixel mean SIFT-like descriptor
    hog: np.ndarray        # per-superpixel HoG-like descriptor
    adjacency: np.ndarray  # boolean within-image adjacency
    objectness: np.ndarray

    def __post_init__(self):
        self.colors = np.atleast_2d(np.asarray(self.colors, dtype=float))
        self.sift = np.atleast_2d(np.asarray(self.sift, dtype=float))
        self.hog = np.atleast_2d(np.asarray(self.hog, dtype=float))
        self.adjacency = np.asarray(self.adjacency, dtype=bool)
        self.objectness = np.asarray(self.objectness, dtype=float)
        n = self.colors.shape[0]
        for name, arr in (("sift", self.sift), ("hog", self.hog)):
            if arr.shape[0] != n:
                raise InputError(f"{name} row count mismatch")
        if self.adjacency.shape != (n, n):
            raise InputError("adjacency shape mismatch")
        if self.objectness.shape != (n,):
            raise InputError("objectness shape mismatch")
        if np.any(self.objectness < 0) or np.any(self.objectness > 1):
            raise InputError("objectness values must lie in [0, 1]")

    @property
    def size(self):
        return self.colors.shape[0]


def _feature_channel(f_all, sigma=None):
    """Gaussian affinity over stacked per-image features, minmax scaled."""
    d2 = pairwise_sq_dists(f_all)
    if sigma is None:
        pos = d2[d2 > 0]
        sigma2 = np.median(pos) if pos.size else 1.0
    else:
        sigma2 = sigma * sigma
    a = np.exp(-d2 / (2.0 * max(sigma2, 1e-12)))
    np.fill_diagonal(a, 0.0)
    return minmax_normalize_columns(a)


def joint_payoff(instances):
    """Joint-graph payoff over all images' superpixels.

    Feature channels span the whole joint graph; the geodesic term only
    connects within-image adjacent superpixels (there is no cross-image
    adjacency), mirroring the within/between split of the block affinity.
    """
    sizes = [im.size for im in instances]
    total = sum(sizes)
    colors = np.vstack([im.colors for im in instances])
    sift = np.vstack([im.sift for im in instances])
    hog = np.vstack([im.hog for im in instances])
    p_f = np.concatenate([im.objectness for im in instances])
    a_c = _feature_channel(colors)
    a_f = 0.5 * (_feature_channel(sift) + _feature_channel(hog))
    a_s = np.zeros((total, total))
    lo = 0
    for im in instances:
        hi = lo + im.size
        a_s[lo:hi, lo:hi] = geodesic_adjacency_similarity(im.adjacency,
                                                          im.colors)
        lo = hi
    a_s = minmax_normalize_columns(a_s)
    a_m = objectness_affinity(p_f)
    M = coseg_payoff(a_c, a_s, a_f, a_m)
    np.fill_diagonal(M, 0.0)
    return 0.5 * (M + M.T)


def coseg_unsupervised(pair, params=solver.SolverParams()):
    """Two-image co-segmentation without user input.

    Runs CDS twice on the joint graph, once constrained by each image's
    nodes, and intersects the two supports; the intersection restricted
    to each image is that image's mask.
    """
    if len(pair) != 2:
        raise InputError("co-segmentation expects exactly two images")
    n1, n2 = pair[0].size, pair[1].size
    M = joint_payoff(pair)
    res1 = solver.extract_cds(M, list(range(n1)), params)         # O2 seeds
    res2 = solver.extract_cds(M, list(range(n1, n1 + n2)), params)
    common = set(int(i) for i in res1.support) & set(int(i) for i in res2.support)
    if not common:
        warnings.warn("co-segmentation intersection is empty")
    mask1 = set(i for i in common if i < n1)
    mask2 = set(i - n1 for i in common if i >= n1)
    return mask1, mask2


def coseg_interactive(images, scribbles, params=solver.SolverParams()):
    """Scribble-driven co-segmentation extended to unscribbled images.

    scribbles maps image index -> (fg ids, bg ids), both image-local.
    Stage 1 refines fg/bg sets on the scribbled images; stage 2 carries
    them onto the joint graph, with fg-bg affinities zeroed, and runs
    CDS twice, intersecting the supports for the final per-image masks.
    """
    if not scribbles:
        raise InputError("need at least one scribbled image")
    offsets = np.cumsum([0] + [im.size for im in images])
    fg_global, bg_global = set(), set()
    for idx, (fg, bg) in scribbles.items():
        fg, bg = set(fg), set(bg)
        clash = fg & bg
        if clash:
            warnings.warn(f"conflicting labels on superpixels {sorted(clash)}; dropped")
            fg -= clash
            bg -= clash
        fg_global |= {int(offsets[idx]) + i for i in fg}
        bg_global |= {int(offsets[idx]) + i for i in bg}
    if not fg_global:
        raise InputError("no usable foreground scribbles")
    M = joint_payoff(images)
    # stage 1: refine the scribbled sets by two constrained runs
    fg_run = solver.extract_cds(M, sorted(fg_global), params)
    fg_set = set(int(i) for i in fg_run.support) | fg_global
    if bg_global:
        bg_run = solver.extract_cds(M, sorted(bg_global), params)
        bg_set = (set(int(i) for i in bg_run.support) | bg_global) - fg_global
        fg_set -= bg_global
        overlap = fg_set & bg_set
        fg_set -= overlap - fg_global
        bg_set -= overlap - bg_global
    else:
        bg_set = set()
    # stage 2: decouple the derived sets and re-run on the edited graph
    M2 = M.copy()
    if fg_set and bg_set:
        fg_ix = np.array(sorted(fg_set))
        bg_ix = np.array(sorted(bg_set))
        M2[np.ix_(fg_ix, bg_ix)] = 0.0
        M2[np.ix_(bg_ix, fg_ix)] = 0.0
    final = solver.extract_cds(M2, sorted(fg_set), params)
    keep = set(int(i) for i in final.support)
    if bg_set:
        keep -= bg_set
    keep |= fg_global
    masks = []
    for idx in range(len(images)):
        lo, hi = int(offsets[idx]), int(offsets[idx + 1])
        masks.append({i - lo for i in keep if lo <= i < hi})
    return masks


def segmentation_metrics(mask, ground_truth, pixel_counts=None,
                         region=None, beta_sq=0.3):
    """Overlap metrics between a predicted and a reference superpixel set.

    Weighted by pixel counts when supplied, else by superpixel count.
    The error rate is measured inside `region` (defaults to everything).
    """
    gt = set(int(i) for i in ground_truth)
    o = set(int(i) for i in mask)
    universe = gt | o
    if region is None:
        ids = sorted(universe | gt)
    else:
        ids = sorted(set(int(i) for i in region))

    def weight(ixs):
        if pixel_counts is None:
            return float(len(ixs))
        return float(sum(pixel_counts[i] for i in ixs))

    inter = weight(gt & o)
    union = weight(gt | o)
    w_gt, w_o = weight(gt), weight(o)
    jaccard = inter / union if union > 0 else 1.0
    dsc = 2 * inter / (w_gt + w_o) if (w_gt + w_o) > 0 else 1.0
    precision = inter / w_o if w_o > 0 else (1.0 if w_gt == 0 else 0.0)
    if w_gt > 0:
        recall = inter / w_gt
    else:
        recall = 1.0 if w_o == 0 else 0.0
    denom = beta_sq * precision + recall
    if denom > 0:
        f_measure = (1 + beta_sq) * precision * recall / denom
    else:
        f_measure = 0.0
    wrong = [i for i in ids if (i in o) != (i in gt)]
    total = weight(ids)
    error_rate = weight(wrong) / total if total > 0 else 0.0
    return {
        "error_rate": error_rate,
        "jaccard": jaccard,
        "dsc": dsc,
        "precision": precision,
        "recall": recall,
        "f_measure": f_measure,
    }
