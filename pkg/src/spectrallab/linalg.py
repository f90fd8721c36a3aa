"""Norms, ranks and alignment for dense float64 vectors and matrices.

Vectors are 1-D ``numpy.ndarray``; matrices are 2-D arrays of shape
``(fan_out, fan_in)``. Plain numpy arithmetic (``+``, ``-``, scalar ``*``)
is used for add/sub/scale; the helpers here only add shape checking where
mistakes are easy to make.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._backend import kernels

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 1000
DEFAULT_START_SEED = 0


class ShapeMismatchError(ValueError):
    pass


class ZeroMatrixError(ValueError):
    pass


class NonConvergenceWarning(RuntimeWarning):
    """Power iteration hit ``max_iters`` before reaching ``tol``; the estimate is still returned."""


class Density(str, Enum):
    DENSE = "dense"
    SPARSE = "sparse"


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ShapeMismatchError(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


def as_matrix(m) -> np.ndarray:
    """Coerce to a finite 2-D float64 array; 1-D input becomes a column."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeMismatchError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


def l2_norm(v) -> float:
    return float(np.linalg.norm(as_vector(v)))


def rms_norm(v) -> float:
    v = as_vector(v)
    return l2_norm(v) / math.sqrt(v.size)


def frobenius_norm(m) -> float:
    return float(np.linalg.norm(as_matrix(m)))


@dataclass(frozen=True)
class PowerIterationResult:
    value: float
    iterations: int
    converged: bool


def power_iteration(m, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                    seed: int = DEFAULT_START_SEED) -> PowerIterationResult:
    """Estimate the top singular value of ``m``.

    Iterates on the Gram matrix of the shorter side (``m.T @ m`` or
    ``m @ m.T``) from a Gaussian start vector drawn with ``seed``, stopping
    when the Rayleigh quotient changes by a relative amount below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    m = as_matrix(m)
    rows, cols = m.shape
    gram = m.T @ m if cols <= rows else m @ m.T
    gram = np.ascontiguousarray(gram)
    if not gram.any():
        return PowerIterationResult(0.0, 0, True)
    start = np.random.default_rng(seed).standard_normal(gram.shape[0])
    lam, iters, converged = kernels.gram_power_iteration(gram, start, float(tol), int(max_iters))
    return PowerIterationResult(math.sqrt(max(lam, 0.0)), int(iters), bool(converged))


def spectral_norm(m, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                  seed: int = DEFAULT_START_SEED) -> float:
    """Largest singular value; warns with :class:`NonConvergenceWarning` if not converged."""
    res = power_iteration(m, tol=tol, max_iters=max_iters, seed=seed)
    if not res.converged:
        warnings.warn(
            f"power iteration stopped after {res.iterations} iterations without reaching tol={tol}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return res.value


def stable_rank(m, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> float:
    """``||M||_F^2 / ||M||_*^2``, between 1 and ``min(rows, cols)``."""
    m = as_matrix(m)
    fro2 = float(np.sum(m * m))
    if fro2 == 0.0:
        raise ZeroMatrixError("stable rank of an all-zero matrix is undefined")
    return fro2 / spectral_norm(m, tol=tol, max_iters=max_iters) ** 2


def alignment(p, q, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> float:
    """``||PQ||_* / (||P||_* ||Q||_*)``.

    A 1-D ``q`` is treated as a column vector.
    """
    p = as_matrix(p)
    q = as_matrix(q)
    if p.shape[1] != q.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {p.shape} by {q.shape}")
    sp = spectral_norm(p, tol=tol, max_iters=max_iters)
    sq = spectral_norm(q, tol=tol, max_iters=max_iters)
    if sp == 0.0 or sq == 0.0:
        raise ZeroMatrixError("alignment needs nonzero operands")
    return spectral_norm(p @ q, tol=tol, max_iters=max_iters) / (sp * sq)


def natural_spectral_norm(m, in_density: Density = Density.DENSE,
                          out_density: Density = Density.DENSE,
                          tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> float:
    """Operator norm induced by the natural (RMS or plain l2) norms on each side.

    Dense spaces use the RMS norm, sparse spaces the plain l2 norm, so for a
    dense-to-dense ``m x n`` matrix this is ``sqrt(n / m) * ||M||_*``.
    """
    m = as_matrix(m)
    rows, cols = m.shape
    s = spectral_norm(m, tol=tol, max_iters=max_iters)
    if s == 0.0:
        raise ZeroMatrixError("natural spectral norm of an all-zero matrix")
    in_factor = math.sqrt(cols) if Density(in_density) is Density.DENSE else 1.0
    out_factor = 1.0 / math.sqrt(rows) if Density(out_density) is Density.DENSE else 1.0
    return s * in_factor * out_factor


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_gaussian(rows: int, cols: int, sigma: float = 1.0, seed=0) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return sigma * _rng(seed).standard_normal((rows, cols))


def sample_semi_orthogonal(rows: int, cols: int, seed=0) -> np.ndarray:
    """Random matrix with all singular values equal to one.

    Orthonormalizes a Gaussian sample along the shorter dimension, so
    ``B @ B.T = I`` for wide and ``B.T @ B = I`` for tall shapes.
    """
    g = _rng(seed).standard_normal((rows, cols))
    if rows <= cols:
        return kernels.orthonormalize_rows(np.ascontiguousarray(g))
    return np.ascontiguousarray(kernels.orthonormalize_rows(np.ascontiguousarray(g.T)).T)


def matvec(m, v) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeMismatchError(f"cannot apply {m.shape} to {v.shape}")
    return m @ v


def outer(u, v) -> np.ndarray:
    return np.outer(as_vector(u), as_vector(v))
