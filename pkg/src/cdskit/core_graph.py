"""Affinity-matrix construction, validation and matrix file I/O.

All constructors take plain numpy arrays and return dense symmetric
nonnegative matrices with an exactly-zero diagonal, which is what the
simplex solver expects.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SIGMA_FLOOR = 1e-12


class InputError(ValueError):
    """Invalid matrix / feature input."""


def _check_features(features):
    f = np.asarray(features, dtype=float)
    if f.ndim != 2 or f.shape[0] < 1:
        raise InputError(f"feature table must be 2-D with at least one row, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise InputError("feature table contains non-finite values")
    return f


def pairwise_sq_dists(features):
    """Squared Euclidean distances between all rows; clipped at zero."""
    f = np.asarray(features, dtype=float)
    sq = np.sum(f * f, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (f @ f.T)
    np.clip(d2, 0.0, None, out=d2)
    # exact symmetry regardless of rounding
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    return d2


def build_gaussian_affinity(features, sigma):
    """a_ij = exp(-||f_i - f_j||^2 / (2 sigma^2)), zero diagonal."""
    if sigma <= 0:
        raise InputError("sigma must be positive")
    f = _check_features(features)
    d2 = pairwise_sq_dists(f)
    a = np.exp(-d2 / (2.0 * sigma * sigma))
    np.fill_diagonal(a, 0.0)
    return a


def build_self_tuning_affinity(features, k=7):
    """Self-tuning kernel a_ij = exp(-||f_i-f_j||^2 / (sigma_i sigma_j)).

    sigma_i is the mean distance of row i to its k nearest neighbours
    (self excluded), floored at SIGMA_FLOOR to survive duplicate points.
    """
    f = _check_features(features)
    n = f.shape[0]
    if k < 1 or k >= n:
        raise InputError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    d2 = pairwise_sq_dists(f)
    d = np.sqrt(d2)
    sigmas = np.empty(n)
    for i in range(n):
        row = np.delete(d[i], i)
        row.sort()
        sigmas[i] = max(row[:k].mean(), SIGMA_FLOOR)
    a = np.exp(-d2 / np.outer(sigmas, sigmas))
    np.fill_diagonal(a, 0.0)
    return a


def distance_to_similarity(dist, sigma):
    """a_ij = exp(-d_ij / (2 sigma^2)); the exponent takes the raw distance."""
    if sigma <= 0:
        raise InputError("sigma must be positive")
    d = np.asarray(dist, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InputError(f"distance matrix must be square, got shape {d.shape}")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise InputError("distance matrix must be nonnegative and finite")
    a = np.exp(-d / (2.0 * sigma * sigma))
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    return a


def minmax_normalize_columns(matrix, symmetrize=True):
    """Per-column min-max normalization; constant columns map to zero.

    Column-wise normalization of a symmetric matrix breaks symmetry, so by
    default the result is re-symmetrized by averaging with its transpose
    (the solver's monotonicity guarantee needs W = W').
    """
    a = np.asarray(matrix, dtype=float)
    lo = a.min(axis=0)
    hi = a.max(axis=0)
    span = hi - lo
    out = np.zeros_like(a)
    ok = span > 0
    out[:, ok] = (a[:, ok] - lo[ok]) / span[ok]
    if symmetrize:
        out = 0.5 * (out + out.T)
    return out


@dataclass
class AffinityReport:
    """Diagnostics from validate_affinity; empty() means a clean matrix."""

    symmetry_defect: float = 0.0
    negative_entries: list = field(default_factory=list)
    nonzero_diagonal: list = field(default_factory=list)
    nonfinite: list = field(default_factory=list)

    def empty(self):
        return (
            self.symmetry_defect == 0.0
            and not self.negative_entries
            and not self.nonzero_diagonal
            and not self.nonfinite
        )


def validate_affinity(matrix):
    """Report symmetry defects, negatives, diagonal violations and NaN/Inf."""
    a = np.asarray(matrix, dtype=float)
    rep = AffinityReport()
    bad = ~np.isfinite(a)
    if bad.any():
        rep.nonfinite = [tuple(ix) for ix in np.argwhere(bad)]
        return rep
    scale = np.abs(a).max() if a.size else 0.0
    defect = np.abs(a - a.T).max() if a.size else 0.0
    if defect > 1e-12 * max(scale, 1.0):
        rep.symmetry_defect = float(defect)
    rep.negative_entries = [tuple(ix) for ix in np.argwhere(a < 0)]
    diag = np.diagonal(a)
    rep.nonzero_diagonal = [int(i) for i in np.nonzero(diag != 0.0)[0]]
    return rep


def require_affinity(matrix):
    """Raise InputError unless the matrix passes validate_affinity."""
    rep = validate_affinity(matrix)
    if not rep.empty():
        raise InputError(f"invalid affinity matrix: {rep}")
    return np.asarray(matrix, dtype=float)


# ---------------------------------------------------------------------------
# matrix file formats: delimited text and raw binary
# ---------------------------------------------------------------------------

def read_matrix_text(path):
    """Delimited text: first line 'n d' (or 'n n'), then n whitespace rows."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise InputError(f"{path}: header must hold two dimensions")
        try:
            n, d = int(header[0]), int(header[1])
        except ValueError as exc:
            raise InputError(f"{path}: non-integer header") from exc
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != d:
                raise InputError(f"{path}:{lineno}: expected {d} columns, got {len(vals)}")
            try:
                rows.append([float(v) for v in vals])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: non-numeric value") from exc
    if len(rows) != n:
        raise InputError(f"{path}: expected {n} rows, got {len(rows)}")
    return np.array(rows, dtype=float).reshape(n, d)


def write_matrix_text(path, matrix):
    a = np.asarray(matrix, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{a.shape[0]} {a.shape[1]}\n")
        for row in a:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_matrix_binary(path):
    """Raw binary: two little-endian uint64 dims, then row-major float64."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise InputError(f"{path}: truncated binary header")
        n, d = struct.unpack("<QQ", head)
        payload = fh.read()
    expected = n * d * 8
    if len(payload) != expected:
        raise InputError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(n, d).copy()


def write_matrix_binary(path, matrix):
    a = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", a.shape[0], a.shape[1]))
        fh.write(a.tobytes())


def read_matrix(path):
    """Dispatch on extension: '.bin' binary, anything else delimited text."""
    if str(path).endswith(".bin"):
        return read_matrix_binary(path)
    return read_matrix_text(path)
