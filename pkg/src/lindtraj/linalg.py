"""Dense complex linear algebra kernel.

Matrices and state vectors are plain ``numpy`` arrays of dtype
``complex128``; nothing here keeps state, so every function is safe to
call from concurrent workers.
"""

from __future__ import annotations

from functools import reduce

import numpy as np
import scipy.linalg

from .errors import NegativeEigenvalueError, NonSquareError, NotHermitianError

HERMITIAN_ATOL = 1e-12
NEGATIVE_EIG_TOL = 1e-10


def as_matrix(m) -> np.ndarray:
    return np.asarray(m, dtype=np.complex128)


def _require_square(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NonSquareError(f"expected a square matrix, got shape {m.shape}")


def is_hermitian(m, atol: float = HERMITIAN_ATOL) -> bool:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= atol)


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.complex128)


def kron(a, b) -> np.ndarray:
    return np.kron(as_matrix(a), as_matrix(b))


def kron_all(*ops) -> np.ndarray:
    """Kronecker product of ``ops`` with the first factor leftmost."""
    return reduce(kron, ops)


def hermitian_sqrt(m, tol: float = NEGATIVE_EIG_TOL) -> np.ndarray:
    """Principal square root of a Hermitian positive-semidefinite matrix.

    Eigenvalues in ``[-tol, 0)`` are treated as round-off and clamped to
    zero; anything more negative raises :class:`NegativeEigenvalueError`.
    The result is re-symmetrized so it is Hermitian to machine precision.
    """
    m = as_matrix(m)
    _require_square(m)
    scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
    if not is_hermitian(m, HERMITIAN_ATOL * scale):
        raise NotHermitianError("hermitian_sqrt needs a Hermitian matrix")
    evals, evecs = np.linalg.eigh(m)
    if evals.size and evals[0] < -tol:
        raise NegativeEigenvalueError(
            f"minimum eigenvalue {evals[0]:.3e} is below -{tol:g}"
        )
    roots = np.sqrt(np.clip(evals, 0.0, None))
    s = (evecs * roots) @ evecs.conj().T
    return 0.5 * (s + s.conj().T)


def matrix_exp(m) -> np.ndarray:
    """Matrix exponential.

    Hermitian and anti-Hermitian arguments go through ``eigh``, which keeps
    unitaries unitary to machine precision. Everything else falls back to
    scaling-and-squaring.
    """
    m = as_matrix(m)
    _require_square(m)
    if m.shape[0] == 0:
        return m.copy()
    scale = max(1.0, float(np.max(np.abs(m))))
    atol = HERMITIAN_ATOL * scale
    if is_hermitian(m, atol):
        evals, evecs = np.linalg.eigh(0.5 * (m + m.conj().T))
        return (evecs * np.exp(evals)) @ evecs.conj().T
    if is_hermitian(1j * m, atol):
        k = 1j * m
        evals, evecs = np.linalg.eigh(0.5 * (k + k.conj().T))
        return (evecs * np.exp(-1j * evals)) @ evecs.conj().T
    return scipy.linalg.expm(m)


def propagator(h, t: float) -> np.ndarray:
    """``exp(-i h t)`` for a Hermitian (or non-Hermitian) generator ``h``."""
    return matrix_exp(-1j * t * as_matrix(h))


def trace_norm(m) -> float:
    """Schatten-1 norm (sum of singular values)."""
    m = as_matrix(m)
    _require_square(m)
    if m.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def spectral_norm(m) -> float:
    """Largest singular value."""
    m = as_matrix(m)
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def normalize(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.complex128)
    return psi / np.linalg.norm(psi)
