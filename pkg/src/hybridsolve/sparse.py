"""Sparse and small dense linear algebra kernels.

``CsrMatrix`` is a thin immutable wrapper around compressed-row arrays with
canonical structure (sorted, unique column indices per row).  Heavy kernels
(matvec, sparse-sparse products) are delegated to ``scipy.sparse`` which uses
the same storage; everything that the reduction algorithms depend on for
exactness (COO merging order, dense LU with pivot checks) lives here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sps

from .errors import CapExceeded, DimensionMismatch, SingularBlock

DENSE_CAP = 4_000_000
SINGULAR_RTOL = 1e-14


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        for a in (ro, ci, va):
            a.setflags(write=False)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)

    # ---- construction -------------------------------------------------
    @classmethod
    def from_coo(cls, rows, cols, vals, shape, drop_zeros=False) -> "CsrMatrix":
        """Build from triplets; duplicates are summed in input order.

        The merge is a stable sort on (row, col) followed by a segmented sum,
        so the floating point result only depends on the triplet order.
        """
        nrows, ncols = int(shape[0]), int(shape[1])
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (rows.size == cols.size == vals.size):
            raise DimensionMismatch("triplet arrays differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols):
            raise DimensionMismatch("triplet index out of range")
        order = np.lexsort((cols, rows))
        r, c, v = rows[order], cols[order], vals[order]
        if r.size:
            new = np.empty(r.size, dtype=bool)
            new[0] = True
            new[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
            starts = np.flatnonzero(new)
            v = _segment_sum(v, starts)
            r, c = r[starts], c[starts]
        if drop_zeros:
            keep = v != 0.0
            r, c, v = r[keep], c[keep], v[keep]
        offsets = np.zeros(nrows + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=nrows), out=offsets[1:])
        return cls(nrows, ncols, offsets, c, v)

    @classmethod
    def from_dense(cls, a, drop_zeros=True) -> "CsrMatrix":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionMismatch("expected a 2-d array")
        r, c = np.nonzero(a) if drop_zeros else np.indices(a.shape).reshape(2, -1)
        return cls.from_coo(r, c, a[r, c], a.shape)

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        m = sps.csr_matrix(m, dtype=np.float64, copy=True)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def identity(cls, n) -> "CsrMatrix":
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.ones(n))

    @classmethod
    def zeros(cls, nrows, ncols) -> "CsrMatrix":
        return cls(nrows, ncols, np.zeros(nrows + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))

    # ---- views --------------------------------------------------------
    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self):
        return int(self.values.size)

    def to_scipy(self) -> sps.csr_matrix:
        return sps.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape, copy=False
        )

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.nrows), np.diff(self.row_offsets))

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.shape))
        r = self.row_indices()
        on = r == self.col_indices
        d[r[on]] = self.values[on]
        return d

    def validate(self):
        """Raise ``ValueError`` if any structural invariant is broken."""
        ro, ci = self.row_offsets, self.col_indices
        if ro.size != self.nrows + 1 or ro[0] != 0 or ro[-1] != ci.size or ci.size != self.values.size:
            raise ValueError("inconsistent row offsets")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row offsets decrease")
        if ci.size and (ci.min() < 0 or ci.max() >= self.ncols):
            raise ValueError("column index out of range")
        r = self.row_indices()
        same_row = r[1:] == r[:-1]
        if np.any(same_row & (ci[1:] <= ci[:-1])):
            raise ValueError("columns not strictly increasing within a row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite value")
        return self

    def __matmul__(self, x):
        if isinstance(x, CsrMatrix):
            return matmul(self, x)
        return spmv(self, x)

    def scaled(self, alpha: float) -> "CsrMatrix":
        return CsrMatrix(self.nrows, self.ncols, self.row_offsets, self.col_indices, alpha * self.values)

    def __repr__(self):
        return f"CsrMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


def _segment_sum(v, starts):
    # sequential left-to-right sums, unlike np.add.reduceat's pairwise blocks
    out = np.empty(starts.size)
    bounds = np.append(starts, v.size)
    lengths = np.diff(bounds)
    if np.all(lengths == 1):
        return v[starts].copy()
    out[:] = v[starts]
    # vectorised over segments, looping over position within a segment
    for k in range(1, int(lengths.max())):
        live = lengths > k
        out[live] += v[starts[live] + k]
    return out


def spmv(a: CsrMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != a.ncols:
        raise DimensionMismatch(f"spmv: matrix has {a.ncols} columns, vector has {x.shape[0]}")
    return a.to_scipy() @ x


def transpose(a: CsrMatrix) -> CsrMatrix:
    # stable sort by column keeps the row order inside each output row
    r = a.row_indices()
    order = np.argsort(a.col_indices, kind="stable")
    offsets = np.zeros(a.ncols + 1, dtype=np.int64)
    np.cumsum(np.bincount(a.col_indices, minlength=a.ncols), out=offsets[1:])
    return CsrMatrix(a.ncols, a.nrows, offsets, r[order], a.values[order])


def matmul(a: CsrMatrix, b: CsrMatrix) -> CsrMatrix:
    if a.ncols != b.nrows:
        raise DimensionMismatch(f"matmul: {a.shape} @ {b.shape}")
    return CsrMatrix.from_scipy(a.to_scipy() @ b.to_scipy())


def add(a: CsrMatrix, b: CsrMatrix, alpha=1.0, beta=1.0) -> CsrMatrix:
    if a.shape != b.shape:
        raise DimensionMismatch(f"add: {a.shape} vs {b.shape}")
    ra, rb = a.row_indices(), b.row_indices()
    return CsrMatrix.from_coo(
        np.concatenate([ra, rb]),
        np.concatenate([a.col_indices, b.col_indices]),
        np.concatenate([alpha * a.values, beta * b.values]),
        a.shape,
    )


def submatrix(a: CsrMatrix, rows=None, cols=None) -> CsrMatrix:
    m = a.to_scipy()
    if rows is not None:
        m = m[np.asarray(rows, dtype=np.int64), :]
    if cols is not None:
        m = m[:, np.asarray(cols, dtype=np.int64)]
    return CsrMatrix.from_scipy(m)


# ---------------------------------------------------------------------------
# element block operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ElementBlockOperator:
    """Block diagonal matrix of element matrices in broken numbering.

    Block ``e`` occupies the contiguous broken rows/columns
    ``offsets[e]:offsets[e+1]``.  ``dof_maps[e]`` records the signed global
    dof of every local row; it is bookkeeping for scattering and for
    :func:`assemble_dense`, the operator itself never uses it.
    """

    dof_maps: tuple
    matrices: tuple
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        maps, mats = [], []
        for (idx, sgn), mat in zip(self.dof_maps, self.matrices):
            idx = np.asarray(idx, dtype=np.int64)
            sgn = np.asarray(sgn, dtype=np.float64)
            mat = np.asarray(mat, dtype=np.float64)
            if mat.shape != (idx.size, idx.size) or sgn.size != idx.size:
                raise DimensionMismatch("block matrix size does not match its dof map")
            if not np.all(np.abs(sgn) == 1.0):
                raise ValueError("dof map signs must be +1 or -1")
            maps.append((idx, sgn))
            mats.append(mat)
        if len(self.dof_maps) != len(self.matrices):
            raise DimensionMismatch("dof_maps and matrices differ in length")
        object.__setattr__(self, "dof_maps", tuple(maps))
        object.__setattr__(self, "matrices", tuple(mats))
        sizes = [m.shape[0] for m in mats]
        object.__setattr__(self, "offsets", np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)]).astype(np.int64))

    @property
    def nblocks(self):
        return len(self.matrices)

    @property
    def broken_dim(self):
        return int(self.offsets[-1])

    @property
    def shape(self):
        return (self.broken_dim, self.broken_dim)

    def block_range(self, e):
        return slice(int(self.offsets[e]), int(self.offsets[e + 1]))

    def to_csr(self) -> CsrMatrix:
        rows, cols, vals = [], [], []
        for e, mat in enumerate(self.matrices):
            s = mat.shape[0]
            if s == 0:
                continue
            loc = np.arange(s) + self.offsets[e]
            rows.append(np.repeat(loc, s))
            cols.append(np.tile(loc, s))
            vals.append(mat.ravel())
        if not rows:
            return CsrMatrix.zeros(self.broken_dim, self.broken_dim)
        return CsrMatrix.from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), self.shape)

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.broken_dim:
            raise DimensionMismatch("block operator matvec size mismatch")
        y = np.empty_like(x)
        for e, mat in enumerate(self.matrices):
            sl = self.block_range(e)
            y[sl] = mat @ x[sl]
        return y

    def __matmul__(self, x):
        return self.matvec(x)


def triple_product(r: CsrMatrix, a, p: CsrMatrix) -> CsrMatrix:
    """Return ``R @ A @ P`` in canonical CSR form.

    ``a`` may be a :class:`CsrMatrix` or an :class:`ElementBlockOperator`
    (expanded block by block in its broken numbering).
    """
    if isinstance(a, ElementBlockOperator):
        a = a.to_csr()
    if r.ncols != a.nrows or a.ncols != p.nrows:
        raise DimensionMismatch(f"triple_product: {r.shape} x {a.shape} x {p.shape}")
    return CsrMatrix.from_scipy(r.to_scipy() @ (a.to_scipy() @ p.to_scipy()))


def to_dense(a, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense expansion of a CSR matrix or the broken block-diagonal matrix."""
    nr, nc = a.shape
    if nr * nc > cap:
        raise CapExceeded(f"dense expansion of {nr}x{nc} exceeds cap of {cap} entries")
    if isinstance(a, ElementBlockOperator):
        d = np.zeros((nr, nc))
        for e, mat in enumerate(a.matrices):
            sl = a.block_range(e)
            d[sl, sl] = mat
        return d
    d = np.zeros((nr, nc))
    np.add.at(d, (a.row_indices(), a.col_indices), a.values)
    return d


def assemble_dense(op: ElementBlockOperator, n: int, cap: int = DENSE_CAP) -> np.ndarray:
    """Scatter blocks through their signed dof maps: D[g_i, g_j] += s_i s_j B_ij."""
    if n * n > cap:
        raise CapExceeded(f"dense assembly of {n}x{n} exceeds cap of {cap} entries")
    d = np.zeros((n, n))
    for (idx, sgn), mat in zip(op.dof_maps, op.matrices):
        d[np.ix_(idx, idx)] += np.outer(sgn, sgn) * mat
    return d


# ---------------------------------------------------------------------------
# dense LU
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LuFactors:
    """Packed LU with row pivoting: ``A[perm] = L @ U``."""

    lu: np.ndarray
    perm: np.ndarray

    @property
    def n(self):
        return self.lu.shape[0]

    def lower(self):
        return np.tril(self.lu, -1) + np.eye(self.n)

    def upper(self):
        return np.triu(self.lu)

    def solve(self, b):
        return lu_solve(self, b)


def lu_factor(a, singular_rtol: float = SINGULAR_RTOL) -> LuFactors:
    """LU factorization with partial pivoting on the largest column entry.

    Raises :class:`SingularBlock` when a pivot magnitude falls below
    ``singular_rtol * max|A|``.
    """
    lu = np.array(a, dtype=np.float64, copy=True)
    if lu.ndim != 2 or lu.shape[0] != lu.shape[1]:
        raise DimensionMismatch(f"lu_factor needs a square matrix, got {lu.shape}")
    if not np.all(np.isfinite(lu)):
        raise ValueError("lu_factor: non-finite entries")
    n = lu.shape[0]
    perm = np.arange(n)
    if n == 0:
        return LuFactors(lu, perm)
    thresh = singular_rtol * np.abs(lu).max()
    for k in range(n):
        piv = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[piv, k]) <= thresh or lu[piv, k] == 0.0:
            raise SingularBlock(f"pivot {k} has magnitude {abs(lu[piv, k]):.3e} <= {thresh:.3e}")
        if piv != k:
            lu[[k, piv]] = lu[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
        lu[k + 1:, k] /= lu[k, k]
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return LuFactors(lu, perm)


def lu_solve(f: LuFactors, b) -> np.ndarray:
    """Solve with a vector or a matrix of right-hand sides (columns)."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != f.n:
        raise DimensionMismatch(f"lu_solve: factor is {f.n}x{f.n}, rhs has {b.shape[0]} rows")
    x = b[f.perm].copy()
    lu = f.lu
    for k in range(f.n):
        x[k + 1:] -= np.multiply.outer(lu[k + 1:, k], x[k])
    for k in range(f.n - 1, -1, -1):
        x[k] /= lu[k, k]
        x[:k] -= np.multiply.outer(lu[:k, k], x[k])
    return x


def dense_cap_check(shape: Sequence[int], cap: int = DENSE_CAP):
    if int(np.prod(shape)) > cap:
        raise CapExceeded(f"dense object of shape {tuple(shape)} exceeds cap of {cap} entries")
