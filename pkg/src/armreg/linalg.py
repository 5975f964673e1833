"""Dense linear-algebra kernel: SVD, functional calculus and SPD roots.

Operators are plain 2-D ``numpy`` float arrays.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NotPositiveDefiniteError, NumericalError

# relative threshold below which singular values count as zero
RANK_TOL = 1e-14


@dataclass(frozen=True)
class SpectralDecomposition:
    """Thin SVD ``A = U diag(s) V^T`` with non-increasing ``s``."""

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    @property
    def gram_eigenvalues(self):
        """Eigenvalues ``s_j**2`` of ``A^T A`` on the right singular basis."""
        return self.singular_values**2

    @property
    def rank_mask(self):
        s = self.singular_values
        if s.size == 0 or s[0] == 0.0:
            return np.zeros_like(s, dtype=bool)
        return s > RANK_TOL * s[0]

    def reconstruct(self):
        U, s, V = self.left_vectors, self.singular_values, self.right_vectors
        return (U * s) @ V.T


def as_operator(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise ValueError(f"expected a non-empty 2-D operator, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("operator has non-finite entries")
    return A


def svd(A):
    """Thin singular value decomposition of a dense operator."""
    A = as_operator(A)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge for a {A.shape} operator: {exc}") from exc
    return SpectralDecomposition(s, U, Vt.T)


def gram_function(D, f):
    """Evaluate ``f(A^T A) = V diag(f(s_j^2)) V^T``.

    ``f`` must accept a numpy array. Non-finite values raise
    :class:`DomainError`.
    """
    lam = D.gram_eigenvalues
    with np.errstate(all="ignore"):
        vals = np.asarray(f(lam), dtype=float)
    if vals.shape != lam.shape:
        vals = np.broadcast_to(vals, lam.shape)
    if not np.all(np.isfinite(vals)):
        bad = lam[~np.isfinite(vals)]
        raise DomainError(f"function is not finite at eigenvalue(s) {bad[:5]}")
    V = D.right_vectors
    out = (V * vals) @ V.T
    return 0.5 * (out + out.T)


def _spd_eigh(S):
    S = as_operator(S)
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got {S.shape}")
    if not np.allclose(S, S.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise NotPositiveDefiniteError("matrix is not symmetric")
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    if w[0] <= 1e-14:
        raise NotPositiveDefiniteError(f"smallest eigenvalue {w[0]:.3e} is not positive")
    return w, Q


def spd_root_inverse(S):
    """Return ``S^{-1/2}`` for symmetric positive definite ``S``."""
    w, Q = _spd_eigh(S)
    out = (Q / np.sqrt(w)) @ Q.T
    return 0.5 * (out + out.T)


def spd_sqrt(S):
    """Return the SPD square root ``S^{1/2}``."""
    w, Q = _spd_eigh(S)
    out = (Q * np.sqrt(w)) @ Q.T
    return 0.5 * (out + out.T)


def is_identity(S, tol=0.0):
    S = np.asarray(S)
    return S.shape[0] == S.shape[1] and np.max(np.abs(S - np.eye(S.shape[0]))) <= tol
