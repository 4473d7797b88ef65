# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Cython implementation of the row-wise weighted ridge solve.

Same contract as ``_ridge_py.solve_rows``: per CSR row, accumulate the
weighted normal equations with BLAS rank-1 updates and solve the SPD system
with LAPACK.  This is the hot kernel of alternating-update training.
"""

from libc.string cimport memset

import numpy as np

from scipy.linalg.cython_blas cimport dsyr, daxpy
from scipy.linalg.cython_lapack cimport dposv

from ..errors import NumericalError


def solve_rows(indptr, indices, ratings, weights, factors, double lam, side=None):
    cdef long[::1] indptr_v = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef long[::1] indices_v = np.ascontiguousarray(indices, dtype=np.int64)
    cdef double[::1] ratings_v = np.ascontiguousarray(ratings, dtype=np.float64)
    cdef double[::1] weights_v = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[:, ::1] factors_v = np.ascontiguousarray(factors, dtype=np.float64)

    cdef Py_ssize_t nrows = indptr_v.shape[0] - 1
    cdef int d = <int> factors_v.shape[1]
    out_arr = np.empty((nrows, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] side_v
    cdef bint has_side = side is not None
    if has_side:
        side_v = np.ascontiguousarray(side, dtype=np.float64)
    else:
        side_v = np.zeros((1, d), dtype=np.float64)

    a_arr = np.zeros((d, d), dtype=np.float64)
    cdef double[:, ::1] a = a_arr

    cdef Py_ssize_t r, k, lo, hi
    cdef long j
    cdef int one = 1, info = 0, nrhs = 1
    cdef double w, alpha
    cdef Py_ssize_t bad_row = -1
    cdef char uplo = b'L'

    with nogil:
        for r in range(nrows):
            lo = indptr_v[r]
            hi = indptr_v[r + 1]
            memset(&a[0, 0], 0, d * d * sizeof(double))
            if has_side:
                for k in range(d):
                    out[r, k] = side_v[r, k]
            else:
                memset(&out[r, 0], 0, d * sizeof(double))
            for k in range(lo, hi):
                j = indices_v[k]
                w = weights_v[k]
                # A += w x x^T (lower triangle in Fortran view)
                dsyr(&uplo, &d, &w, &factors_v[j, 0], &one, &a[0, 0], &d)
                alpha = w * ratings_v[k]
                daxpy(&d, &alpha, &factors_v[j, 0], &one, &out[r, 0], &one)
            for k in range(d):
                a[k, k] += lam
            dposv(&uplo, &d, &nrhs, &a[0, 0], &d, &out[r, 0], &d, &info)
            if info != 0:
                bad_row = r
                break

    if bad_row >= 0:
        raise NumericalError(
            f"row {bad_row}: singular normal equations; use a positive "
            f"regularization weight")
    return out_arr
