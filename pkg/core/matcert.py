"""
Dense symmetric-matrix numerics used by every certificate check.

Eigenvalues come from the cyclic Jacobi method, so results are deterministic
and need no LAPACK driver beyond numpy's array primitives. Matrices here are at
most a few hundred rows.
"""

import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CertificateError, InputError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
MAX_SWEEPS = 100

ArrayLike = Union[Sequence[Sequence[float]], np.ndarray, "SymMatrix"]


class SymMatrix:
    """Immutable real symmetric matrix, symmetrized on construction"""

    __slots__ = ('_data',)

    def __init__(self, entries: ArrayLike):
        if isinstance(entries, SymMatrix):
            data = entries.array
        else:
            data = np.array(entries, dtype=float)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise InputError(f"symmetric matrix must be square, got shape {data.shape}")
        if data.shape[0] < 1:
            raise InputError("symmetric matrix must have dim >= 1")
        if not np.all(np.isfinite(data)):
            raise InputError("symmetric matrix has non-finite entries")
        data = 0.5 * (data + data.T)
        data.setflags(write=False)
        self._data = data

    @classmethod
    def zeros(cls, dim: int) -> 'SymMatrix':
        return cls(np.zeros((dim, dim)))

    @classmethod
    def identity(cls, dim: int) -> 'SymMatrix':
        return cls(np.eye(dim))

    @property
    def array(self) -> np.ndarray:
        return self._data

    @property
    def dim(self) -> int:
        return self._data.shape[0]

    def norm(self) -> float:
        """Frobenius norm"""
        return float(np.linalg.norm(self._data))

    def block(self, rows: slice, cols: slice) -> np.ndarray:
        return self._data[rows, cols].copy()

    def quad(self, v: np.ndarray) -> np.ndarray:
        """v^T A v for a vector or a batch of row vectors"""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            return float(v @ self._data @ v)
        return np.einsum('ij,jk,ik->i', v, self._data, v)

    def __add__(self, other: 'SymMatrix') -> 'SymMatrix':
        return SymMatrix(self._data + _as_array(other))

    def __sub__(self, other: 'SymMatrix') -> 'SymMatrix':
        return SymMatrix(self._data - _as_array(other))

    def __neg__(self) -> 'SymMatrix':
        return SymMatrix(-self._data)

    def __mul__(self, scalar: float) -> 'SymMatrix':
        return SymMatrix(float(scalar) * self._data)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, SymMatrix):
            return NotImplemented
        return self._data.shape == other._data.shape and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash(self._data.tobytes())

    def __repr__(self) -> str:
        return f"SymMatrix({self._data.tolist()!r})"


def _as_array(a: ArrayLike) -> np.ndarray:
    return a.array if isinstance(a, SymMatrix) else np.asarray(a, dtype=float)


def _scaled_tol(A: SymMatrix, tol: Optional[float]) -> float:
    if tol is None:
        return DEFAULT_TOL * max(1.0, A.norm())
    if tol < 0:
        raise InputError(f"tolerance must be nonnegative, got {tol}")
    return tol


def jacobi_eigh(A: SymMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition; returns ascending eigenvalues and column eigenvectors"""
    a = np.array(A.array, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = max(1.0, float(np.linalg.norm(a)))
    threshold = 1e-12 * scale
    skip = 1e-18 * scale

    for sweep in range(MAX_SWEEPS):
        off = float(np.sqrt(np.sum(np.triu(a, 1) ** 2)))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sign = 1.0 if theta >= 0 else -1.0
                t = sign / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    else:
        logger.warning("Jacobi iteration hit %d sweeps on a %dx%d matrix", MAX_SWEEPS, n, n)

    eigvals = np.diag(a).copy()
    order = np.argsort(eigvals, kind='stable')
    return eigvals[order], v[:, order]


def sym_eigvals(A: SymMatrix) -> List[float]:
    """All eigenvalues of A in ascending order"""
    vals, _ = jacobi_eigh(A)
    return [float(x) for x in vals]


def min_eig(A: SymMatrix) -> float:
    return sym_eigvals(A)[0]


def max_eig(A: SymMatrix) -> float:
    return sym_eigvals(A)[-1]


def is_psd(A: SymMatrix, tol: Optional[float] = None) -> bool:
    """A is positive semidefinite up to tol; 'A <= 0' is is_psd(-A, tol)"""
    return min_eig(A) >= -_scaled_tol(A, tol)


def is_nsd(A: SymMatrix, tol: Optional[float] = None) -> bool:
    return is_psd(-A, tol)


def is_pd(A: SymMatrix, margin: Optional[float] = None) -> bool:
    """Strict positive definiteness with a declared margin"""
    if margin is None:
        margin = 1e-12 * max(1.0, A.norm())
    return min_eig(A) > margin


def pos_neg_split(A: SymMatrix) -> Tuple[SymMatrix, SymMatrix]:
    """Spectral split A = Aplus + Aminus with Aplus >= 0 and Aminus <= 0"""
    vals, vecs = jacobi_eigh(A)
    plus = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    minus = (vecs * np.minimum(vals, 0.0)) @ vecs.T
    return SymMatrix(plus), SymMatrix(minus)


def sqrt_inv(B: SymMatrix) -> np.ndarray:
    """B^{-1/2} for positive definite B"""
    if not is_pd(B):
        raise CertificateError("matrix is not positive definite", min_eig=min_eig(B))
    vals, vecs = jacobi_eigh(B)
    return (vecs / np.sqrt(vals)) @ vecs.T


def min_dominance_scale(A: SymMatrix, B: SymMatrix) -> float:
    """Smallest c with A <= c*B, i.e. lambda_max(B^{-1/2} A B^{-1/2})"""
    if A.dim != B.dim:
        raise InputError(f"dimension mismatch {A.dim} vs {B.dim}")
    root = sqrt_inv(B)
    return max_eig(SymMatrix(root @ A.array @ root))


def block_matrix(blocks: Iterable[Iterable[np.ndarray]]) -> SymMatrix:
    """Assemble a symmetric matrix from a nested list of dense blocks"""
    return SymMatrix(np.block([[np.atleast_2d(np.asarray(b, dtype=float)) for b in row] for row in blocks]))


def block_diag(blocks: Sequence[np.ndarray]) -> np.ndarray:
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out
