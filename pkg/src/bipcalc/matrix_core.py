"""Dense complex linear algebra and the spectral-decomposition oracle.

Every matrix handled here is a plain ``numpy.ndarray`` of dtype complex128.
LAPACK (through numpy/scipy) does the heavy lifting; the wrappers add the
validation, tolerances and error types the rest of the package relies on.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import IllConditionedEigenbasis, NoConvergence, NonHermitian, Singular

EIGBASIS_COND_MAX = 1e8


def as_matrix(A) -> np.ndarray:
    """Coerce to a finite square complex128 array, or raise ``ValueError``."""
    M = np.asarray(A, dtype=np.complex128)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


@dataclass(frozen=True)
class HermitianEig:
    values: np.ndarray   # real, ascending
    vectors: np.ndarray  # orthonormal columns

    def apply(self, f: Callable) -> np.ndarray:
        fv = np.asarray(f(self.values.astype(np.complex128)), dtype=np.complex128)
        return (self.vectors * fv) @ self.vectors.conj().T


def op_norm_2(A) -> float:
    """Spectral norm (largest singular value) from the full SVD."""
    M = np.asarray(A, dtype=np.complex128)
    if M.ndim == 1:
        return float(np.linalg.norm(M))
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def is_hermitian(A, rtol: float = 1e-12) -> bool:
    M = np.asarray(A, dtype=np.complex128)
    scale = max(op_norm_2(M), np.finfo(float).tiny)
    return op_norm_2(M - M.conj().T) <= rtol * scale


def hermitian_eig(A) -> HermitianEig:
    """Eigendecomposition of a Hermitian matrix.

    Parameters
    ----------
    A : array_like
        Square matrix, Hermitian to within ``1e-12 * ||A||_2``.

    Returns
    -------
    HermitianEig
        Ascending real eigenvalues and orthonormal eigenvectors.
    """
    M = as_matrix(A)
    if not is_hermitian(M):
        raise NonHermitian("matrix is not Hermitian within 1e-12*||A||")
    H = 0.5 * (M + M.conj().T)
    try:
        w, V = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return HermitianEig(np.asarray(w, dtype=float), V)


def solve_linear(M, b) -> np.ndarray:
    """Solve ``M x = b`` by pivoted LU.

    ``b`` may be a vector or a matrix of right-hand sides. Raises ``Singular``
    when the smallest LU pivot falls below ``1e-14 * ||M||_2``.
    """
    A = as_matrix(M)
    rhs = np.asarray(b, dtype=np.complex128)
    if rhs.shape[0] != A.shape[0]:
        raise ValueError("right-hand side does not match matrix dimension")
    nrm = op_norm_2(A)
    with warnings.catch_warnings():
        # exact zero pivots are reported through Singular below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    if nrm == 0.0 or np.min(np.abs(np.diag(lu))) < 1e-14 * nrm:
        raise Singular("pivot below 1e-14*||M||")
    return sla.lu_solve((lu, piv), rhs, check_finite=False)


def inv(M) -> np.ndarray:
    A = as_matrix(M)
    return solve_linear(A, np.eye(A.shape[0], dtype=np.complex128))


def spectral_apply(A, f: Callable, hermitian: bool | None = None) -> np.ndarray:
    """Brute-force functional calculus ``V f(Lambda) V^{-1}``.

    The Hermitian path goes through :func:`hermitian_eig`. Other matrices use
    a general eigensolver and are rejected when the eigenvector basis has
    condition number above 1e8.
    """
    M = as_matrix(A)
    if hermitian is None:
        hermitian = is_hermitian(M)
    if hermitian:
        return hermitian_eig(M).apply(f)
    w, V = np.linalg.eig(M)
    if np.linalg.cond(V) > EIGBASIS_COND_MAX:
        raise IllConditionedEigenbasis("eigenvector condition number exceeds 1e8")
    fv = np.asarray(f(w.astype(np.complex128)), dtype=np.complex128)
    return solve_linear(V.T, (V * fv).T).T


def eigvals(A) -> np.ndarray:
    M = as_matrix(A)
    if is_hermitian(M):
        return hermitian_eig(M).values.astype(np.complex128)
    return np.linalg.eigvals(M)


def random_hermitian_negdef(rng: np.random.Generator, dim: int,
                            spread: tuple[float, float] = (0.5, 50.0)) -> np.ndarray:
    """Random Hermitian negative-definite matrix with log-uniform spectrum."""
    X = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    Q, _ = np.linalg.qr(X)
    lo, hi = np.log(spread[0]), np.log(spread[1])
    lam = -np.exp(rng.uniform(lo, hi, dim))
    H = (Q * lam) @ Q.conj().T
    return 0.5 * (H + H.conj().T)
