"""Numpy implementations of the compiled kernels in ``_kernels.pyx``.

Selected at import when the extension is unavailable, or on request via
``SPECTRALLAB_PURE_PYTHON=1``.
"""
import numpy as np

NAME = "python"


def gram_power_iteration(gram, start, tol, max_iters):
    v = np.array(start, dtype=np.float64, copy=True)
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        raise ValueError("start vector must be nonzero")
    v /= nrm
    lam = 0.0
    it = 0
    while it < max_iters:
        it += 1
        w = gram @ v
        prev = lam
        lam = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0, it, True
        if it > 1 and abs(lam - prev) <= tol * abs(lam):
            return lam, it, True
        v = w / nrm
    return lam, it, False


def orthonormalize_rows(a):
    k = a.shape[0]
    for i in range(k):
        if i > 0:
            q = a[:i]
            for _ in range(2):
                a[i] -= q.T @ (q @ a[i])
        nrm = np.linalg.norm(a[i])
        if nrm == 0.0:
            raise ValueError("rows are linearly dependent")
        a[i] /= nrm
    return a
