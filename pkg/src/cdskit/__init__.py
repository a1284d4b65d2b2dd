"""Graph clustering with dominant sets and constrained dominant sets.

The package is organised around a simplex quadratic-program solver driven by
replicator dynamics (``cdskit.solver``) and the pipelines built on top of it:
diffusion-based retrieval re-ranking (``cdskit.diffusion``), entropy-weighted
multi-feature fusion (``cdskit.fusion``), seeded segmentation and
co-segmentation (``cdskit.segmentation``) and a toy-scale differentiable
constrained-clustering block (``cdskit.dcds``).
"""

from cdskit.solver import SolverParams, ClusterResult, extract_cds, run_replicator

__all__ = [
    "SolverParams",
    "ClusterResult",
    "extract_cds",
    "run_replicator",
]

__version__ = "0.1.0"
