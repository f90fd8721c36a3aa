# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for power iteration and Gram-Schmidt.

Both routines call BLAS through scipy's Cython bindings so the per-iteration
cost carries no interpreter overhead. They must stay numerically equivalent
to ``spectrallab._fallback``.
"""
import numpy as np

from libc.math cimport fabs, sqrt
from scipy.linalg.cython_blas cimport ddot, dgemv, dnrm2, dscal, dsymv

NAME = "compiled"


def gram_power_iteration(double[:, ::1] gram, start, double tol, int max_iters):
    """Largest eigenvalue of a symmetric PSD matrix.

    Returns ``(eigenvalue, iterations, converged)``. Stops once the Rayleigh
    quotient changes by a relative amount below ``tol``.
    """
    cdef int n = gram.shape[0]
    cdef int inc = 1
    cdef int it = 0
    cdef int i
    cdef char uplo = b"U"
    cdef double one = 1.0, zero = 0.0
    cdef double lam = 0.0, prev = 0.0, nrm, scale
    cdef double[::1] v = np.array(start, dtype=np.float64, copy=True)
    cdef double[::1] w = np.empty(n, dtype=np.float64)
    cdef bint converged = False

    nrm = dnrm2(&n, &v[0], &inc)
    if nrm == 0.0:
        raise ValueError("start vector must be nonzero")
    scale = 1.0 / nrm
    dscal(&n, &scale, &v[0], &inc)

    while it < max_iters:
        it += 1
        dsymv(&uplo, &n, &one, &gram[0, 0], &n, &v[0], &inc, &zero, &w[0], &inc)
        prev = lam
        lam = ddot(&n, &v[0], &inc, &w[0], &inc)
        nrm = dnrm2(&n, &w[0], &inc)
        if nrm == 0.0:
            return 0.0, it, True
        if it > 1 and fabs(lam - prev) <= tol * fabs(lam):
            converged = True
            break
        scale = 1.0 / nrm
        for i in range(n):
            v[i] = w[i] * scale
    return lam, it, converged


def orthonormalize_rows(double[:, ::1] a):
    """Orthonormalize the rows of ``a`` in place (classical Gram-Schmidt, two passes).

    Requires rows <= cols and full row rank.
    """
    cdef int k = a.shape[0]
    cdef int n = a.shape[1]
    cdef int inc = 1
    cdef int i, p
    cdef char trans = b"T"
    cdef char notrans = b"N"
    cdef double one = 1.0, zero = 0.0, minus = -1.0, nrm, scale
    cdef double[::1] coef = np.empty(max(k, 1), dtype=np.float64)

    for i in range(k):
        if i > 0:
            for p in range(2):
                # coef = Q[:i] @ a_i ; a_i -= Q[:i].T @ coef  (column-major view of row-major block)
                dgemv(&trans, &n, &i, &one, &a[0, 0], &n, &a[i, 0], &inc, &zero, &coef[0], &inc)
                dgemv(&notrans, &n, &i, &minus, &a[0, 0], &n, &coef[0], &inc, &one, &a[i, 0], &inc)
        nrm = dnrm2(&n, &a[i, 0], &inc)
        if nrm == 0.0:
            raise ValueError("rows are linearly dependent")
        scale = 1.0 / nrm
        dscal(&n, &scale, &a[i, 0], &inc)
    return np.asarray(a)
