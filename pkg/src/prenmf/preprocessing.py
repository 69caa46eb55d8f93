"""Assembly of the column preprocessing operators.

Solving the per-column constrained least squares problems yields a
nonnegative matrix B* with zero diagonal; the preprocessed matrix is
M(I - B*).  The interpolated operator M(I - alpha B*) trades sparsity
against conservatism: alpha = 0 leaves M unchanged, alpha = 1 applies the
full subtraction.  I - B* is inverse-positive exactly when the spectral
radius of B* stays below one, which this module verifies at runtime.
"""

import numpy as np
from dataclasses import dataclass

from .matcore import as_matrix
from . import cllsolve
from . import npp3

__all__ = [
    "NonConvergence",
    "RankMismatch",
    "PreprocessResult",
    "apply_alpha",
    "spectral_radius",
    "rescale_columns",
    "find_alpha_bar",
    "preprocess",
]


class NonConvergence(RuntimeError):
    """Power iteration hit its cap; message carries the best bracket."""


class RankMismatch(ValueError):
    """An operation restricted to numerical rank 3 got something else."""


@dataclass(frozen=True)
class PreprocessResult:
    """Full record of one preprocessing run.

    P_alpha_M = M - alpha * (M @ B_star) and rho is the spectral radius of
    B_star; rescale holds the positive diagonal applied to the columns of
    P_alpha_M when column rescaling was requested (None otherwise).
    """

    B_star: np.ndarray
    epsilon: float
    alpha: float
    P_alpha_M: np.ndarray
    rho: float
    column_kkt: np.ndarray
    rescale: np.ndarray | None = None


def apply_alpha(M, B_star, alpha):
    """Interpolated preprocessing M(I - alpha B*) = M - alpha M B*."""
    M = as_matrix(M, "M")
    B_star = as_matrix(B_star, "B_star")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        return M.copy()
    return M - alpha * (M @ B_star)


def spectral_radius(B, tol=1e-10, max_iter=10000):
    """Spectral radius of a nonnegative matrix by shifted power iteration.

    The shift mu = 1e-3 * max column sum makes reducible and periodic
    matrices converge (rho(B) = rho(B + mu I) - mu for B >= 0); the all-ones
    start vector has mass on every irreducible block.  When the iteration
    stalls (near-periodic matrices with a tiny spectral gap, e.g. from
    duplicated columns) it is restarted with larger shifts, which widen the
    gap between the dominant root and the rest of the spectral circle.  The
    result is cross-checked against the column-sum upper bound.
    """
    B = as_matrix(B, "B")
    n, n2 = B.shape
    if n != n2:
        raise ValueError("B must be square")
    if B.min() < 0:
        raise ValueError("spectral radius routine requires B >= 0")
    colsum = B.sum(axis=0)
    hi = float(colsum.max())
    if hi == 0.0:
        return 0.0
    lam_prev = np.inf
    for shift in (1e-3, 0.1, 0.5):
        mu = shift * hi
        x = np.ones(n)
        lam_prev = np.inf
        for _ in range(max_iter):
            y = B @ x + mu * x
            ny = np.linalg.norm(y)
            if ny == 0.0:
                return 0.0
            x = y / ny
            lam = float(x @ (B @ x + mu * x))
            if abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
                rho = lam - mu
                return float(min(max(rho, 0.0), hi))
            lam_prev = lam
    raise NonConvergence(
        f"power iteration did not converge; rho in [{max(lam_prev - mu, 0.0):.6g}, {hi:.6g}]")


def rescale_columns(P_M, M):
    """Rescale columns of the preprocessed matrix back to the source norms.

    Returns (rescaled, diag) with diag[i] = ||M[:, i]|| / ||P_M[:, i]||;
    (numerically) zero columns of P_M pass through unscaled with diag 1.
    NMF objectives weigh columns by their norm, so without this step
    heavily-shrunk columns would lose all influence on the factorization.
    """
    P_M = as_matrix(P_M, "P_M")
    M = as_matrix(M, "M")
    if P_M.shape != M.shape:
        raise ValueError("P_M and M must have the same shape")
    norms_p = np.linalg.norm(P_M, axis=0)
    norms_m = np.linalg.norm(M, axis=0)
    diag = np.ones(M.shape[1])
    nonzero = norms_p > 1e-9 * np.maximum(norms_m, 1e-300)
    diag[nonzero] = norms_m[nonzero] / norms_p[nonzero]
    return P_M * diag, diag


def find_alpha_bar(M, B_star=None, tol_alpha=1e-4, max_bisect=40, refine=False):
    """Largest alpha in [0, 1] keeping the interpolated instance rank-3 exact.

    Decided geometrically: alpha is admissible when a 3-vertex polygon still
    nests between the normalized columns of M(I - alpha B*) and the simplex
    slice.  Returns 1.0 when alpha = 1 is admissible, otherwise bisects and
    returns the feasible lower end of the final bracket (ties at the
    boundary count as feasible, so the result is a valid lower bound).

    ``refine`` polishes the bracket with regula falsi on the wrap slack (the
    slack is close to affine in alpha near the critical value), which pins
    alpha accurately enough that solution enumeration at the returned value
    sees isolated solutions.
    """
    M = as_matrix(M, "M")
    r = npp3.numerical_rank(M)
    if r != 3:
        raise RankMismatch(f"numerical rank is {r}, need exactly 3")
    if B_star is None:
        B_star, _ = cllsolve.preprocess_matrix(M)

    def slack(alpha):
        P = apply_alpha(M, B_star, alpha)
        npp = npp3.build_npp(P)
        return npp3.max_wrap_slack(npp, 3)[0]

    tol_feas = npp3.GEOM_TOL
    if slack(1.0) >= -tol_feas:
        return 1.0
    g0 = slack(0.0)
    if g0 < -tol_feas:
        raise RankMismatch("no 3-vertex nested polygon exists even at alpha = 0 "
                           "(nonnegative rank exceeds 3)")
    lo, g_lo = 0.0, g0
    hi, g_hi = 1.0, None
    for _ in range(max_bisect):
        if hi - lo <= tol_alpha:
            break
        mid = 0.5 * (lo + hi)
        g_mid = slack(mid)
        if g_mid >= -tol_feas:
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid
    if refine and g_hi is not None:
        # Secant through the two latest feasible evaluations (the slack is
        # piecewise affine in alpha, exactly affine near the critical
        # value); overshoots fall back to one bisection step.
        prev_p, prev_v = 0.0, g0
        bisect_next = False
        for _ in range(14):
            if g_lo <= 3e-7:
                break
            if not bisect_next and prev_v > g_lo and prev_p < lo:
                est = lo + g_lo * (lo - prev_p) / (prev_v - g_lo)
            else:
                est = 0.5 * (lo + hi)
            if not lo < est < hi:
                est = 0.5 * (lo + hi)
            g_est = slack(est)
            if g_est >= -tol_feas:
                prev_p, prev_v = lo, g_lo
                lo, g_lo = est, g_est
                bisect_next = False
            else:
                hi, g_hi = est, g_est
                bisect_next = True
    return lo


def preprocess(M, epsilon=0.0, alpha=1.0, rescale=False, workers=1,
               feas_tol=cllsolve.FEAS_TOL, kkt_tol=cllsolve.KKT_TOL):
    """Run the full preprocessing and collect the verification record."""
    M = as_matrix(M, "M")
    B_star, sols = cllsolve.preprocess_matrix(
        M, epsilon=epsilon, feas_tol=feas_tol, kkt_tol=kkt_tol, workers=workers)
    P = apply_alpha(M, B_star, alpha)
    rho = spectral_radius(B_star)
    diag = None
    if rescale:
        P, diag = rescale_columns(P, M)
    return PreprocessResult(
        B_star=B_star, epsilon=float(epsilon), alpha=float(alpha),
        P_alpha_M=P, rho=rho,
        column_kkt=np.array([s.kkt_residual for s in sols]),
        rescale=diag)
