"""Figure rendering for CLI reports.

Every renderer writes a PNG next to the delimited/JSON output and
returns the path. matplotlib runs on the Agg backend so the CLI never
needs a display.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def render_membership(x, support, out_dir, name="membership.png"):
    """Bar chart of the simplex vector with the support highlighted."""
    x = np.asarray(x, dtype=float)
    sup = set(int(i) for i in support)
    colors = ["tab:orange" if i in sup else "tab:gray" for i in range(len(x))]
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.bar(range(len(x)), x, color=colors)
    ax.set_xlabel("node")
    ax.set_ylabel("membership")
    ax.set_title("cluster membership (support highlighted)")
    return _finish(fig, out_dir, name)


def render_payoff_trace(trace, out_dir, name="payoff_trace.png"):
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(trace)
    ax.set_xlabel("iteration")
    ax.set_ylabel("payoff")
    ax.set_title("replicator payoff trace")
    return _finish(fig, out_dir, name)


def render_affinity(A, out_dir, name="affinity.png", title="affinity"):
    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(np.asarray(A, dtype=float), cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.8)
    ax.set_title(title)
    return _finish(fig, out_dir, name)


def render_mask(mask, n, out_dir, name="mask.png"):
    """Strip plot of foreground / background superpixel assignments."""
    vals = np.zeros(n)
    for i in mask:
        vals[int(i)] = 1.0
    fig, ax = plt.subplots(figsize=(6, 1.5))
    ax.imshow(vals[None, :], cmap="Greys", aspect="auto", vmin=0, vmax=1)
    ax.set_yticks([])
    ax.set_xlabel("superpixel")
    ax.set_title("foreground mask")
    return _finish(fig, out_dir, name)


def render_ranking(scores, out_dir, name="ranking.png"):
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(np.asarray(scores, dtype=float), marker=".", linestyle="-")
    ax.set_xlabel("rank")
    ax.set_ylabel("score")
    ax.set_title("ranked scores")
    return _finish(fig, out_dir, name)


def render_cmc(cmc_values, out_dir, name="cmc.png"):
    ranks = sorted(cmc_values)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(ranks, [cmc_values[r] for r in ranks], marker="o")
    ax.set_xlabel("rank")
    ax.set_ylabel("match rate")
    ax.set_ylim(0, 1.05)
    ax.set_title("CMC")
    return _finish(fig, out_dir, name)
