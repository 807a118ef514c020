"""Deterministic linear algebra on subspaces of R^d.

A k-dimensional subspace is carried around either as a d x k matrix with
orthonormal columns (a *basis*, plain ``numpy.ndarray``) or as its d x d
orthogonal projector wrapped in :class:`ProjectionMatrix`.  Nothing in this
module draws random numbers.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from dpsubspace.errors import (
    AllZeroInput,
    DegenerateSpectrumWarning,
    DimensionMismatch,
    RankMismatch,
    ZeroPoint,
)

DEFAULT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    """Orthogonal projector onto a subspace, with its rank."""

    matrix: np.ndarray
    rank: int

    @property
    def d(self):
        return self.matrix.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.matrix.astype(dtype)
        return self.matrix


def as_data_matrix(X):
    """Validate and return ``X`` as a finite 2-D float array (d rows, n columns)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"data matrix must be 2-D with d, n >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data matrix has non-finite entries")
    return X


def _as_columns(vectors):
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        return np.asarray(vectors, dtype=float)
    cols = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if not cols:
        raise ValueError("at least one vector is required")
    return np.column_stack(cols)


def orthonormalize(vectors, tol=DEFAULT_TOL):
    """Orthonormal basis for the span of ``vectors``.

    Vectors are processed in order with two passes of Gram-Schmidt; a vector
    is dropped when its residual against the columns accepted so far is at
    most ``tol`` times its own norm, which is the same relative test that
    :func:`contains` applies.

    Args:
      vectors: a sequence of d-vectors, or a d x n array whose columns are
        the vectors.
      tol: relative residual tolerance, > 0.

    Returns:
      d x r array with orthonormal columns, r the numerical rank.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    V = _as_columns(vectors)
    if V.shape[1] == 0:
        raise ValueError("at least one vector is required")
    basis = []
    any_nonzero = False
    for j in range(V.shape[1]):
        v = V[:, j]
        norm = np.linalg.norm(v)
        if norm <= tol:
            continue
        any_nonzero = True
        w = v.copy()
        if basis:
            B = np.column_stack(basis)
            for _ in range(2):
                w -= B @ (B.T @ w)
        r = np.linalg.norm(w)
        if r <= tol * norm:
            continue
        basis.append(w / r)
    if not any_nonzero:
        raise AllZeroInput("every input vector has norm <= tol")
    return np.column_stack(basis)


def projector_of(basis):
    """Return the projector U U^T for an orthonormal basis U."""
    U = np.asarray(basis, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    P = U @ U.T
    # exact symmetry; the product is symmetric only up to rounding
    P = 0.5 * (P + P.T)
    return ProjectionMatrix(P, U.shape[1])


def top_k_subspace(M, k):
    """Top-k left singular subspace of ``M`` as a d x k orthonormal basis.

    The basis itself is determined only up to rotation within the span.
    Emits :class:`DegenerateSpectrumWarning` when ``s_k - s_{k+1}`` is below
    ``1e-12 * s_1`` because the span is then not unique.
    """
    M = np.asarray(M, dtype=float)
    d, n = M.shape
    if not 1 <= k <= min(d, n):
        raise ValueError(f"need 1 <= k <= min(d, n) = {min(d, n)}, got k={k}")
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    s_next = s[k] if k < s.size else 0.0
    if s[k - 1] - s_next <= 1e-12 * s[0]:
        warnings.warn(
            f"s_{k}={s[k - 1]:.3e} and s_{k + 1}={s_next:.3e} are numerically tied",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
    return U[:, :k].copy()


def operator_norm(M):
    """Largest singular value of ``M`` (0 for an empty or zero matrix)."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def singular_values(M):
    """All singular values of ``M`` in decreasing order."""
    return np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)


def sin_theta_distance(U, V):
    """Sine of the largest principal angle between span(U) and span(V).

    Equals ``sqrt(1 - sigma_min(U^T V)^2)``; it is evaluated as
    ``||(I - U U^T) V||`` so that nearly identical spans come out near 0
    instead of near sqrt(machine epsilon).
    """
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if V.ndim == 1:
        V = V[:, None]
    if U.shape[0] != V.shape[0]:
        raise DimensionMismatch(f"ambient dimensions differ: {U.shape[0]} vs {V.shape[0]}")
    if U.shape[1] != V.shape[1]:
        raise RankMismatch(f"ranks differ: {U.shape[1]} vs {V.shape[1]}")
    residual = V - U @ (U.T @ V)
    return float(min(1.0, operator_norm(residual)))


def projector_distance(P, Q):
    """Operator norm of P - Q."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise DimensionMismatch(f"projector shapes differ: {P.shape} vs {Q.shape}")
    return operator_norm(P - Q)


def contains(s, x, tol=DEFAULT_TOL):
    """True iff ``||x - P_s x|| <= tol * ||x||`` for the span of basis ``s``."""
    x = np.asarray(x, dtype=float).ravel()
    norm = np.linalg.norm(x)
    if norm == 0:
        raise ZeroPoint("membership of the zero vector is undefined here")
    U = np.asarray(s, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    r = x - U @ (U.T @ x)
    return bool(np.linalg.norm(r) <= tol * norm)


def membership(s, X, tol=DEFAULT_TOL):
    """Vectorised :func:`contains` over the columns of ``X``.

    Zero columns are reported as non-members instead of raising.
    """
    U = np.asarray(s, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    res = np.linalg.norm(X - U @ (U.T @ X), axis=0)
    return (norms > 0) & (res <= tol * norms)


def is_orthonormal(U, tol=1e-10):
    U = np.asarray(U, dtype=float)
    return bool(np.max(np.abs(U.T @ U - np.eye(U.shape[1]))) <= tol)
