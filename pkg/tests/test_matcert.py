import numpy as np
import pytest

from core.errors import CertificateError, InputError
from core.matcert import (
    SymMatrix, block_diag, block_matrix, is_nsd, is_pd, is_psd, jacobi_eigh, max_eig, min_dominance_scale,
    min_eig, pos_neg_split, sqrt_inv, sym_eigvals,
)


def _random_symmetric(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    return a + a.T


@pytest.mark.parametrize('seed,n', [(0, 1), (1, 2), (2, 5), (3, 8)])
def test_jacobi_matches_numpy(seed, n):
    a = _random_symmetric(seed, n)
    np.testing.assert_allclose(sym_eigvals(SymMatrix(a)), np.linalg.eigvalsh(a), atol=1e-9)


def test_jacobi_eigenvectors_diagonalize():
    a = _random_symmetric(7, 6)
    vals, vecs = jacobi_eigh(SymMatrix(a))
    np.testing.assert_allclose(vecs.T @ a @ vecs, np.diag(vals), atol=1e-9)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(6), atol=1e-9)


def test_symmetrized_on_construction():
    A = SymMatrix([[1.0, 2.0], [0.0, 1.0]])
    np.testing.assert_array_equal(A.array, [[1.0, 1.0], [1.0, 1.0]])
    assert not A.array.flags.writeable


def test_rejects_bad_shapes_and_values():
    with pytest.raises(InputError):
        SymMatrix([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    with pytest.raises(InputError):
        SymMatrix([[np.nan, 0.0], [0.0, 1.0]])


def test_scalar_becomes_one_by_one():
    assert SymMatrix(3.0).dim == 1


def test_definiteness_predicates():
    A = SymMatrix([[2.0, 0.0], [0.0, 0.0]])
    assert is_psd(A)
    assert not is_pd(A)
    assert is_nsd(-A)
    assert not is_psd(SymMatrix([[1.0, 0.0], [0.0, -1e-3]]))
    assert is_psd(SymMatrix([[1.0, 0.0], [0.0, -1e-3]]), tol=1e-2)


def test_negative_tolerance_is_rejected():
    with pytest.raises(InputError):
        is_psd(SymMatrix.identity(2), tol=-1.0)


def test_pos_neg_split_reassembles():
    A = SymMatrix(_random_symmetric(11, 4))
    plus, minus = pos_neg_split(A)
    np.testing.assert_allclose((plus + minus).array, A.array, atol=1e-9)
    assert min_eig(plus) >= -1e-9
    assert max_eig(minus) <= 1e-9


def test_sqrt_inv_requires_positive_definite():
    B = SymMatrix([[4.0, 0.0], [0.0, 9.0]])
    np.testing.assert_allclose(sqrt_inv(B), np.diag([0.5, 1.0 / 3.0]), atol=1e-12)
    with pytest.raises(CertificateError):
        sqrt_inv(SymMatrix([[1.0, 0.0], [0.0, -1.0]]))


def test_min_dominance_scale():
    B = SymMatrix([[2.0, 0.5], [0.5, 1.0]])
    assert min_dominance_scale(B * 3.0, B) == pytest.approx(3.0)
    with pytest.raises(InputError):
        min_dominance_scale(SymMatrix.identity(2), SymMatrix.identity(3))


def test_block_helpers():
    out = block_diag([np.eye(2), [[5.0]]])
    assert out.shape == (3, 3)
    assert out[2, 2] == 5.0 and out[0, 2] == 0.0
    M = block_matrix([[np.eye(1), [[2.0]]], [[[2.0]], np.eye(1)]])
    assert M == SymMatrix([[1.0, 2.0], [2.0, 1.0]])
