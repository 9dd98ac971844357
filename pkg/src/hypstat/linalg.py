"""Perron data of nonnegative matrices by shifted power iteration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PerronData:
    eigenvalue: float
    right: np.ndarray
    left: np.ndarray
    residual: float
    iterations: int


def _shifted_power(M, transpose: bool, tol: float, max_iter: int):
    n = M.shape[0]
    op = M.T if transpose else M
    v = np.ones(n)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = op @ v + v
        norm = np.abs(w).max()
        if norm == 0.0:
            return 0.0, v, 0.0, it
        w /= norm
        # Perron value of M is the Perron value of M + I minus one
        Mw = op @ w
        num = float(w @ Mw)
        den = float(w @ w)
        lam = num / den
        if lam > 0:
            residual = float(np.abs(Mw - lam * w).max() / lam)
            if residual <= tol:
                return lam, w, residual, it
        v = w
    residual = float(np.abs(op @ v - lam * v).max() / lam) if lam > 0 else np.inf
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} steps (residual {residual:.3e})"
    )


def _row_sum_scale(M) -> float:
    rows = np.asarray(abs(M).sum(axis=1)).ravel()
    hi = rows.max()
    lo = rows[rows > 0].min() if hi > 0 else 0.0
    return float(np.sqrt(lo * hi)) if hi > 0 else 1.0


def perron(M, tol: float = 1e-13, max_iter: int = 200_000) -> PerronData:
    """Perron value and vectors of a nonnegative irreducible matrix.

    ``M`` is first divided by a row-sum estimate ``c`` of its Perron value
    (min and max row sums bracket it), then the iteration runs on
    ``M/c + I`` from the all-ones vector; the shift removes the rotating
    peripheral eigenvalues of periodic matrices and the scaling keeps the
    shift from dominating when the Perron value is small.  The final value
    is the two-sided Rayleigh quotient ``<l, M r>/<l, r>``.  Vectors are
    positive with ``sum(right) = 1`` and ``<left, right> = 1``.
    """
    if sp.issparse(M):
        M = sp.csr_matrix(M, dtype=float)
    else:
        M = np.asarray(M, dtype=float)
    if M.shape[0] == 0:
        raise ValueError("empty matrix")
    c = _row_sum_scale(M)
    Ms = M / c
    lam, r, res_r, it_r = _shifted_power(Ms, False, tol, max_iter)
    if lam <= 0:
        raise ValueError("matrix has Perron value 0 (no cycles)")
    _, l, res_l, it_l = _shifted_power(Ms, True, tol, max_iter)
    lam = float(l @ (Ms @ r)) / float(l @ r)
    r = r / r.sum()
    l = l / float(l @ r)
    return PerronData(c * lam, r, l, max(res_r, res_l), it_r + it_l)


def spectral_radius(M, tol: float = 1e-13) -> float:
    """Perron value, or 0 for matrices without cycles."""
    M = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    if M.size == 0 or not M.any():
        return 0.0
    # nilpotent matrices have no cycles
    P = (M > 0).astype(float)
    n = P.shape[0]
    Q = np.linalg.matrix_power(P, n) if n <= 64 else None
    if Q is not None and not Q.any():
        return 0.0
    return perron(M, tol=tol).eigenvalue
