import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from fieldsplit.linalg import (
    BlockSystem,
    LinearSolverError,
    block_assemble,
    lower_block_matvec,
    lu_solve,
)


def _random_sparse(n, rng, density=0.1):
    A = sp.random(n, n, density=density, random_state=rng, format="csr")
    return (A + sp.identity(n) * (n * 1.0)).tocsr()


def test_identity_solve():
    b = np.array([3.0, -1.0, 2.5])
    np.testing.assert_array_equal(lu_solve(sp.identity(3, format="csr"), b), b)


def test_diagonal_solve():
    np.testing.assert_allclose(lu_solve(sp.diags([2.0, 4.0]).tocsr(), [2.0, 8.0]), [1.0, 2.0])


@pytest.mark.parametrize("dense", [True, False])
def test_random_well_conditioned(dense):
    rng = np.random.default_rng(3)
    A = _random_sparse(50, rng)
    b = rng.standard_normal(50)
    x = lu_solve(A, b, dense=dense)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-11


def test_hundred_random_systems():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 80))
        A = _random_sparse(n, rng, density=0.2)
        b = rng.standard_normal(n)
        x = lu_solve(A, b)
        assert np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300) <= 1e-11


def test_large_sparse_path():
    rng = np.random.default_rng(5)
    n = 800
    A = sp.diags([-1.0, 2.5, -1.0], [-1, 0, 1], shape=(n, n), format="csr")
    b = rng.standard_normal(n)
    x = lu_solve(A, b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-11


@pytest.mark.parametrize("dense", [True, False])
def test_singular_matrix_reported(dense):
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(LinearSolverError):
        lu_solve(A, [1.0, 1.0], dense=dense)


def test_zero_matrix_reported():
    with pytest.raises(LinearSolverError):
        lu_solve(sp.csr_matrix((3, 3)), np.ones(3))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        lu_solve(sp.identity(3, format="csr"), np.ones(2))


def _blocks(m, rng):
    return [sp.csr_matrix(rng.standard_normal((m, m))) for _ in range(4)]


def test_zero_blocks():
    z = sp.csr_matrix((3, 3))
    A = block_assemble(BlockSystem(z, z, z, z))
    assert A.shape == (6, 6) and A.nnz == 0


def test_identity_blocks():
    I = sp.identity(3, format="csr")
    z = sp.csr_matrix((3, 3))
    A = block_assemble(BlockSystem(I, z, z, I))
    np.testing.assert_array_equal(A.toarray(), np.eye(6))


def test_block_dimension_mismatch():
    I = sp.identity(3, format="csr")
    with pytest.raises(ValueError):
        BlockSystem(I, I, sp.identity(2, format="csr"), I)


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_block_matvec_equivalence(m, seed):
    rng = np.random.default_rng(seed)
    App, Aps, Asp, Ass = _blocks(m, rng)
    v1, v2 = rng.standard_normal(m), rng.standard_normal(m)
    full = block_assemble(BlockSystem(App, Aps, Asp, Ass)) @ np.concatenate([v1, v2])
    ref = np.concatenate([App @ v1 + Aps @ v2, Asp @ v1 + Ass @ v2])
    np.testing.assert_allclose(full, ref, rtol=1e-14, atol=1e-14 * np.abs(ref).max())


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_lower_block_matvec_dense_oracle(m, seed):
    rng = np.random.default_rng(seed)
    App, _, Asp, Ass = _blocks(m, rng)
    v1, v2 = rng.standard_normal(m), rng.standard_normal(m)
    a, b = lower_block_matvec(App, Asp, Ass, v1, v2)
    L = np.block([[App.toarray(), np.zeros((m, m))], [Asp.toarray(), Ass.toarray()]])
    np.testing.assert_allclose(np.concatenate([a, b]), L @ np.concatenate([v1, v2]), rtol=1e-12, atol=1e-12)


def test_lower_block_matvec_trivial_cases():
    rng = np.random.default_rng(0)
    App, _, Asp, Ass = _blocks(3, rng)
    a, b = lower_block_matvec(App, Asp, Ass, np.zeros(3), np.zeros(3))
    assert not a.any() and not b.any()
    v1, v2 = rng.standard_normal(3), rng.standard_normal(3)
    a, b = lower_block_matvec(App, sp.csr_matrix((3, 3)), Ass, v1, v2)
    np.testing.assert_allclose(a, App @ v1)
    np.testing.assert_allclose(b, Ass @ v2)
