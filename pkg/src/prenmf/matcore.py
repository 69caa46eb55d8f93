"""Core matrix utilities: column pullback, sparsity metric, duplicate detection.

Matrices are plain 2-d float ndarrays; columns are the objects of interest
throughout (data points live in columns, factorizations combine columns).
"""

import numpy as np
from dataclasses import dataclass, field

__all__ = [
    "AllColumnsZero",
    "Pullback",
    "as_matrix",
    "pullback",
    "sparsity",
    "detect_duplicates",
]


class AllColumnsZero(ValueError):
    """Every column of the input was dropped as (numerically) zero."""


def as_matrix(a, name="matrix"):
    """Validate and convert input to a 2-d float64 array.

    Rejects empty matrices and non-finite entries.
    """
    m = np.asarray(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return m


@dataclass(frozen=True)
class Pullback:
    """Column-stochastic normalization of the non-dropped columns of a matrix.

    theta: column-stochastic matrix over the kept columns.
    d:     positive scale factors, one per kept column (inverse l1 norms).
    kept:  original indices of the non-dropped columns, in order.
    """

    theta: np.ndarray
    d: np.ndarray
    kept: tuple = field(default_factory=tuple)


def pullback(X, drop_tol=1e-12):
    """Normalize columns of X to sum to one, dropping (near-)zero columns.

    A column is dropped when its l1 norm is at most ``drop_tol`` times the
    largest column l1 norm.  Raises AllColumnsZero when nothing survives.
    """
    X = as_matrix(X, "X")
    l1 = np.abs(X).sum(axis=0)
    cutoff = drop_tol * l1.max()
    kept = np.flatnonzero(l1 > cutoff)
    if kept.size == 0:
        raise AllColumnsZero("all columns have (numerically) zero l1 norm")
    # Normalize by the signed column sum so theta columns sum to exactly one
    # even when the source carries small negative entries.
    sums = X[:, kept].sum(axis=0)
    if np.any(sums <= 0):
        # Fall back to l1 norms for columns whose signed sum is non-positive
        # (can only happen far outside the nonnegative regime).
        bad = sums <= 0
        sums = np.where(bad, l1[kept], sums)
    d = 1.0 / sums
    theta = X[:, kept] * d
    return Pullback(theta=theta, d=d, kept=tuple(int(k) for k in kept))


def sparsity(U, zero_tol=1e-8):
    """Fraction of entries of U counted as zero.

    An entry counts as zero when its value is at most ``zero_tol * max|U|``;
    negative entries therefore always count as zeros.  Returns a value
    in [0, 1].
    """
    U = as_matrix(U, "U")
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    cutoff = zero_tol * np.abs(U).max()
    return float(np.count_nonzero(U <= cutoff)) / U.size


def detect_duplicates(M, tol=1e-8):
    """Find column pairs of M that are nonnegative multiples of each other.

    Returns a list of (i, j, alpha) with i > j and ``M[:, i] ~= alpha * M[:, j]``.
    The scale alpha is the least-squares fit (robust to zero entries, where
    entrywise ratios are undefined); a pair is reported when the relative fit
    residual is at most tol.  Columns that are themselves numerically zero
    are skipped: they are handled upstream by the pullback drop rule and
    would otherwise pair with every column.
    """
    M = as_matrix(M, "M")
    n = M.shape[1]
    norms = np.linalg.norm(M, axis=0)
    zero_cut = 1e-12 * (norms.max() if norms.max() > 0 else 1.0)
    pairs = []
    for i in range(1, n):
        if norms[i] <= zero_cut:
            continue
        for j in range(i):
            if norms[j] <= zero_cut:
                continue
            alpha = float(M[:, i] @ M[:, j]) / float(norms[j] ** 2)
            if alpha < 0:
                alpha = 0.0
            resid = np.linalg.norm(M[:, i] - alpha * M[:, j])
            if resid <= tol * norms[i]:
                pairs.append((i, j, alpha))
    return pairs
