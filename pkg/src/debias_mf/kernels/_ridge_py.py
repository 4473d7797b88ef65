"""NumPy implementation of the row-wise weighted ridge solve.

Reference semantics for the Cython kernel; selected automatically when the
compiled extension is unavailable.
"""

import numpy as np

from ..errors import NumericalError


def solve_rows(indptr, indices, ratings, weights, factors, lam, side=None):
    """Solve, independently for every row r,

        (sum_k w_k x_k x_k^T + lam I) out[r] = sum_k w_k ratings_k x_k + side[r]

    where k runs over the CSR slice ``indptr[r]:indptr[r+1]``, and
    ``x_k = factors[indices[k]]``.  ``side`` defaults to zero.
    """
    nrows = len(indptr) - 1
    d = factors.shape[1]
    out = np.empty((nrows, d))
    eye = lam * np.eye(d)
    for r in range(nrows):
        lo, hi = indptr[r], indptr[r + 1]
        rhs = side[r].astype(np.float64, copy=True) if side is not None else np.zeros(d)
        if lo == hi:
            if lam <= 0.0:
                raise NumericalError(
                    f"row {r}: singular normal equations; use a positive "
                    f"regularization weight")
            out[r] = rhs / lam
            continue
        x = factors[indices[lo:hi]]
        w = weights[lo:hi]
        a = (x * w[:, None]).T @ x + eye
        rhs += x.T @ (w * ratings[lo:hi])
        try:
            out[r] = np.linalg.solve(a, rhs)
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"row {r}: singular normal equations; use a positive "
                f"regularization weight")
    return out
