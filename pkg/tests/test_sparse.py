import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridsolve.errors import CapExceeded, DimensionMismatch, SingularBlock
from hybridsolve.sparse import (
    CsrMatrix,
    ElementBlockOperator,
    add,
    assemble_dense,
    dense_cap_check,
    lu_factor,
    lu_solve,
    matmul,
    spmv,
    submatrix,
    to_dense,
    transpose,
    triple_product,
)


def random_csr(rng, m, n, density=0.3):
    a = rng.standard_normal((m, n)) * (rng.random((m, n)) < density)
    return CsrMatrix.from_dense(a), a


class TestCsr:
    def test_from_coo_sums_duplicates(self):
        a = CsrMatrix.from_coo([0, 0, 1], [1, 1, 0], [1.0, 2.0, 5.0], (2, 2))
        assert a.nnz == 2
        np.testing.assert_array_equal(to_dense(a), [[0, 3], [5, 0]])

    def test_validate_rejects_unsorted(self):
        with pytest.raises(ValueError):
            CsrMatrix(1, 3, np.array([0, 2]), np.array([2, 0]), np.array([1.0, 1.0])).validate()

    def test_scipy_round_trip(self):
        rng = np.random.default_rng(0)
        a, dense = random_csr(rng, 6, 4)
        np.testing.assert_array_equal(CsrMatrix.from_scipy(a.to_scipy()).to_scipy().toarray(), dense)

    def test_identity_and_diagonal(self):
        np.testing.assert_array_equal(CsrMatrix.identity(3).diagonal(), np.ones(3))


class TestSpmv:
    def test_identity(self):
        np.testing.assert_array_equal(spmv(CsrMatrix.identity(3), [1, 2, 3]), [1, 2, 3])

    def test_zero_matrix(self):
        np.testing.assert_array_equal(spmv(CsrMatrix.zeros(3, 4), np.arange(4.0)), np.zeros(3))

    def test_hand_arithmetic(self):
        a = CsrMatrix.from_dense([[2, 1], [0, 3]])
        np.testing.assert_array_equal(spmv(a, [1, 1]), [3, 3])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            spmv(CsrMatrix.identity(3), np.ones(2))

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_matches_dense(self, m, n, seed):
        rng = np.random.default_rng(seed)
        a, dense = random_csr(rng, m, n)
        x = rng.standard_normal(n)
        np.testing.assert_allclose(spmv(a, x), dense @ x, rtol=1e-14, atol=1e-14)


class TestTranspose:
    def test_row_to_column(self):
        t = transpose(CsrMatrix.from_dense([[1, 2, 3]]))
        assert t.shape == (3, 1)
        np.testing.assert_array_equal(to_dense(t), [[1], [2], [3]])

    def test_symmetric_equal(self):
        s = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_array_equal(to_dense(transpose(CsrMatrix.from_dense(s))), s)

    def test_double_transpose(self):
        rng = np.random.default_rng(3)
        a, dense = random_csr(rng, 5, 7)
        tt = transpose(transpose(a))
        np.testing.assert_array_equal(to_dense(tt), dense)
        np.testing.assert_array_equal(to_dense(transpose(a)), dense.T)


class TestTripleProduct:
    def test_identity(self):
        rng = np.random.default_rng(1)
        a, dense = random_csr(rng, 4, 4)
        i = CsrMatrix.identity(4)
        np.testing.assert_array_equal(to_dense(triple_product(i, a, i)), dense)

    def test_all_ones_column(self):
        n = 5
        ones = CsrMatrix.from_dense(np.ones((n, 1)))
        r = triple_product(transpose(ones), CsrMatrix.identity(n), ones)
        np.testing.assert_array_equal(to_dense(r), [[n]])

    def test_block_operator_matches_dense(self):
        rng = np.random.default_rng(2)
        blocks = [rng.standard_normal((3, 3)) for _ in range(2)]
        op = ElementBlockOperator(
            ((np.array([0, 1, 2]), np.array([1.0, -1.0, 1.0])), (np.array([2, 3, 4]), np.array([-1.0, 1.0, 1.0]))),
            tuple(blocks),
        )
        a_hat = np.zeros((6, 6))
        a_hat[:3, :3], a_hat[3:, 3:] = blocks
        p_dense = np.zeros((6, 5))
        for e, (idx, sgn) in enumerate(op.dof_maps):
            p_dense[3 * e + np.arange(3), idx] = sgn
        oracle = p_dense.T @ a_hat @ p_dense
        pc = CsrMatrix.from_dense(p_dense)
        got = to_dense(triple_product(transpose(pc), op, pc))
        assert np.abs(got - oracle).max() <= 1e-14 * np.abs(oracle).max()
        np.testing.assert_allclose(assemble_dense(op, 5), oracle, rtol=0, atol=1e-14 * np.abs(oracle).max())
        np.testing.assert_array_equal(to_dense(op.to_csr()), a_hat)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            triple_product(CsrMatrix.identity(2), CsrMatrix.identity(3), CsrMatrix.identity(3))


class TestLu:
    def test_diagonal(self):
        np.testing.assert_array_equal(lu_solve(lu_factor(np.diag([2.0, 4.0])), [2.0, 4.0]), [1, 1])

    def test_hilbert(self):
        h = 1.0 / (np.arange(4)[:, None] + np.arange(4)[None, :] + 1.0)
        x = lu_solve(lu_factor(h), h @ np.ones(4))
        assert np.abs(x - 1).max() <= 1e-8

    def test_singular(self):
        with pytest.raises(SingularBlock):
            lu_factor(np.ones((2, 2)))

    def test_reconstruction(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((7, 7))
        f = lu_factor(a)
        rec = f.lower() @ f.upper()
        assert np.abs(rec - a[f.perm]).max() <= 1e-12 * np.abs(a).max()
        assert np.all(np.abs(np.diag(f.upper())) > 0)

    def test_matrix_rhs(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((5, 5)) + 5 * np.eye(5)
        b = rng.standard_normal((5, 3))
        np.testing.assert_allclose(lu_solve(lu_factor(a), b), np.linalg.solve(a, b), rtol=1e-12, atol=1e-12)


class TestToDense:
    def test_empty(self):
        np.testing.assert_array_equal(to_dense(CsrMatrix.zeros(2, 3)), np.zeros((2, 3)))

    def test_one_block(self):
        blk = np.array([[1.0, 2.0], [3.0, 4.0]])
        op = ElementBlockOperator(((np.array([0, 1]), np.array([1.0, 1.0])),), (blk,))
        np.testing.assert_array_equal(to_dense(op), blk)

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        dense = rng.standard_normal((4, 6)) * (rng.random((4, 6)) < 0.5)
        np.testing.assert_array_equal(to_dense(CsrMatrix.from_dense(dense)), dense)

    def test_cap(self):
        with pytest.raises(CapExceeded):
            to_dense(CsrMatrix.zeros(100, 100), cap=10)
        with pytest.raises(CapExceeded):
            dense_cap_check((10, 10), cap=99)


def test_matmul_add_submatrix_against_scipy():
    rng = np.random.default_rng(8)
    a, da = random_csr(rng, 4, 5)
    b, db = random_csr(rng, 5, 3)
    c, dc = random_csr(rng, 4, 5)
    np.testing.assert_allclose(to_dense(matmul(a, b)), da @ db, atol=1e-14)
    np.testing.assert_allclose(to_dense(add(a, c, 2.0, -1.0)), 2 * da - dc, atol=1e-14)
    np.testing.assert_array_equal(to_dense(submatrix(a, [0, 2], [1, 3])), da[np.ix_([0, 2], [1, 3])])
    assert sp.issparse(a.to_scipy())
