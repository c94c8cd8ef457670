"""Assembly, hybridization and static condensation of element block systems.

Everything here works on :class:`ReductionInputs` (element blocks ``A_hat``
in broken numbering, the global-to-local map ``P``, the constraint matrix
``C`` and the broken load ``f_hat``), so systems generated by the RT
frontend and systems imported from files take the same code path.

Interior dofs are found algebraically as the zero columns of ``C``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, ValidationError
from .mesh import CellCoefficients
from .rt import RtSpace, element_blocks, element_matrices
from .sparse import (
    DENSE_CAP,
    CsrMatrix,
    ElementBlockOperator,
    LuFactors,
    dense_cap_check,
    lu_factor,
    lu_solve,
    transpose,
    triple_product,
)


@dataclass(frozen=True)
class EssentialData:
    """Bookkeeping for dofs removed by :func:`eliminate_essential`."""

    n_full: int
    free_dofs: np.ndarray
    fixed_dofs: np.ndarray
    fixed_values: np.ndarray


@dataclass(frozen=True, eq=False)
class ReductionInputs:
    a_hat: ElementBlockOperator
    p_mat: CsrMatrix
    c_mat: CsrMatrix
    f_hat: np.ndarray
    essential: EssentialData | None = None
    # broken dofs kept as masters by static condensation even when C has a
    # zero column there (boundary face dofs); None means zero columns only
    keep_mask: np.ndarray | None = None

    @property
    def n(self):
        return self.p_mat.ncols

    @property
    def n_hat(self):
        return self.a_hat.broken_dim

    @property
    def m(self):
        return self.c_mat.nrows

    def validate(self, check_cp=True):
        nh = self.n_hat
        if self.p_mat.nrows != nh:
            raise DimensionMismatch(f"P has {self.p_mat.nrows} rows, A_hat has size {nh}")
        if self.c_mat.ncols != nh:
            raise DimensionMismatch(f"C has {self.c_mat.ncols} columns, A_hat has size {nh}")
        if np.asarray(self.f_hat).shape != (nh,):
            raise DimensionMismatch(f"f_hat has shape {np.shape(self.f_hat)}, expected ({nh},)")
        if self.m != nh - self.n:
            raise ValidationError(f"constraint count m={self.m} differs from n_hat - n = {nh - self.n}")
        if self.keep_mask is not None and np.shape(self.keep_mask) != (nh,):
            raise DimensionMismatch(f"keep_mask has shape {np.shape(self.keep_mask)}, expected ({nh},)")
        if check_cp:
            check_constraints(self.p_mat, self.c_mat)
        return self


def check_constraints(p_mat: CsrMatrix, c_mat: CsrMatrix):
    """Raise :class:`ValidationError` unless C P vanishes.

    Integer-valued inputs must give an exactly zero product; otherwise the
    largest entry must stay below 1e-13 |C|_inf |P|_inf.
    """
    cp = (c_mat.to_scipy() @ p_mat.to_scipy()).tocoo()
    if cp.nnz == 0:
        return 0.0
    absvals = np.abs(cp.data)
    k = int(np.argmax(absvals))
    worst = float(absvals[k])
    integer = np.all(p_mat.values == np.round(p_mat.values)) and np.all(c_mat.values == np.round(c_mat.values))
    if integer:
        tol = 0.0
    else:
        norm_c = np.abs(c_mat.to_scipy()).sum(axis=1).max() if c_mat.nnz else 0.0
        norm_p = np.abs(p_mat.to_scipy()).sum(axis=1).max() if p_mat.nnz else 0.0
        tol = 1e-13 * float(norm_c) * float(norm_p)
    if worst > tol:
        raise ValidationError(
            f"C P != 0: max |CP| = {worst:.3e} at entry ({int(cp.row[k])}, {int(cp.col[k])}), tolerance {tol:.3e}"
        )
    return worst


# ---------------------------------------------------------------------------
# P and C for RT spaces
# ---------------------------------------------------------------------------


def build_P(space: RtSpace) -> CsrMatrix:
    """Signed global-to-broken map, one +-1 per broken row."""
    idx, sgn = space.dof_table
    nh = space.broken_ndofs
    return CsrMatrix(nh, space.ndofs, np.arange(nh + 1), idx.ravel(), sgn.ravel())


def interior_face_pairs(space: RtSpace):
    """Broken indices of the two copies of every shared face dof.

    Returns (global face dof, minus-side broken index, plus-side broken
    index, face axis) arrays ordered by global dof.
    """
    mesh = space.mesh
    faces, _ = mesh.cell_face_table
    nloc, nint, dpf = space.local_size, space.interior_dofs_per_cell, space.dofs_per_face
    minus = np.full(mesh.nfaces, -1, dtype=np.int64)
    plus = np.full(mesh.nfaces, -1, dtype=np.int64)
    minus_slot = np.zeros(mesh.nfaces, dtype=np.int64)
    plus_slot = np.zeros(mesh.nfaces, dtype=np.int64)
    cells = np.arange(mesh.ncells)
    for axis in range(mesh.dim):
        hi = faces[:, 2 * axis + 1]
        lo = faces[:, 2 * axis]
        minus[hi], minus_slot[hi] = cells, 2 * axis + 1
        plus[lo], plus_slot[lo] = cells, 2 * axis
    shared = np.flatnonzero((minus >= 0) & (plus >= 0))
    sub = np.arange(dpf)
    gdof = (shared[:, None] * dpf + sub).ravel()
    b_minus = (minus[shared, None] * nloc + nint + minus_slot[shared, None] * dpf + sub).ravel()
    b_plus = (plus[shared, None] * nloc + nint + plus_slot[shared, None] * dpf + sub).ravel()
    axes = np.repeat(minus_slot[shared] // 2, dpf)
    return gdof, b_minus, b_plus, axes


def build_C(space: RtSpace, weighted: bool = False) -> CsrMatrix:
    """Normal-flux continuity constraints, one row per shared face dof.

    Broken face dofs are element-outward, so continuity reads
    ``x_minus + x_plus = 0``.  ``weighted`` multiplies each face's row block
    by the face mass matrix of the trace basis.
    """
    gdof, bm, bp, axes = interior_face_pairs(space)
    m = gdof.size
    shape = (m, space.broken_ndofs)
    if m == 0:
        return CsrMatrix.zeros(*shape)
    if not weighted:
        rows = np.repeat(np.arange(m), 2)
        cols = np.stack([bm, bp], axis=1).ravel()
        return CsrMatrix.from_coo(rows, cols, np.ones(2 * m), shape)
    dpf = space.dofs_per_face
    nface = m // dpf
    rows, cols, vals = [], [], []
    for axis in range(space.dim):
        ms = space.face_mass(axis)
        sel = np.flatnonzero(axes[::dpf] == axis)
        if sel.size == 0:
            continue
        r = sel[:, None] * dpf + np.arange(dpf)
        for copies in (bm, bp):
            c = copies.reshape(nface, dpf)[sel]
            rows.append(np.repeat(r, dpf, axis=1).ravel())
            cols.append(np.tile(c, (1, dpf)).ravel())
            vals.append(np.tile(ms.ravel(), sel.size))
    return CsrMatrix.from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), shape, drop_zeros=True)


def rt_inputs(space: RtSpace, coeffs: CellCoefficients, weighted: bool = False, source=(1.0, 1.0, 1.0)) -> ReductionInputs:
    a_hat, f_hat = element_blocks(space, coeffs, source)
    keep = np.ones((space.mesh.ncells, space.local_size), dtype=bool)
    keep[:, :space.interior_dofs_per_cell] = False
    return ReductionInputs(a_hat, build_P(space), build_C(space, weighted), f_hat, keep_mask=keep.ravel())


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def assemble(inputs: ReductionInputs):
    """A = P^T A_hat P and f = P^T f_hat."""
    p = inputs.p_mat
    if p.nrows != inputs.n_hat or np.shape(inputs.f_hat) != (inputs.n_hat,):
        raise DimensionMismatch("assemble: P / f_hat do not match A_hat")
    pt = transpose(p)
    return triple_product(pt, inputs.a_hat, p), pt @ inputs.f_hat


def restriction_apply(p_mat: CsrMatrix, x_hat):
    """x = (P^T P)^{-1} P^T x_hat."""
    pt = transpose(p_mat)
    rhs = pt @ x_hat
    ptp = (pt.to_scipy() @ p_mat.to_scipy()).tocsr()
    off = ptp - sps.diags(ptp.diagonal())
    if off.count_nonzero() == 0:
        return rhs / ptp.diagonal()
    return spla.spsolve(ptp.tocsc(), rhs)


# ---------------------------------------------------------------------------
# element-wise block factorization
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ElementFactor:
    """Block LU of one element matrix split into interior (i) and b dofs.

    ``ce`` is the dense constraint slice (``rows`` x b) of C.
    """

    i_idx: np.ndarray
    b_idx: np.ndarray
    a_ii: LuFactors
    a_ib: np.ndarray
    a_bi: np.ndarray
    x_ib: np.ndarray  # A_ii^{-1} A_ib
    s_b: np.ndarray
    s_lu: LuFactors
    rows: np.ndarray
    ce: np.ndarray

    def solve(self, rhs):
        """Solve with the full element matrix through its block LU."""
        y_i = lu_solve(self.a_ii, rhs[self.i_idx])
        r_b = rhs[self.b_idx] - self.a_bi @ y_i
        x_b = lu_solve(self.s_lu, r_b)
        out = np.empty_like(rhs, dtype=np.float64)
        out[self.b_idx] = x_b
        out[self.i_idx] = y_i - self.x_ib @ x_b
        return out

    def condensed_rhs(self, rhs):
        """f_b - A_bi A_ii^{-1} f_i."""
        return rhs[self.b_idx] - self.a_bi @ lu_solve(self.a_ii, rhs[self.i_idx])


def _constraint_slices(c_mat: CsrMatrix, offsets):
    """Per element: (nonzero C columns in local numbering, rows, dense slice)."""
    coo = c_mat.to_scipy().tocoo()
    keep = coo.data != 0.0
    r, c, v = coo.row[keep].astype(np.int64), coo.col[keep].astype(np.int64), coo.data[keep]
    elem = np.searchsorted(offsets, c, side="right") - 1
    order = np.lexsort((c, r, elem))
    r, c, v, elem = r[order], c[order], v[order], elem[order]
    nblocks = offsets.size - 1
    bounds = np.searchsorted(elem, np.arange(nblocks + 1))
    out = []
    for e in range(nblocks):
        sl = slice(bounds[e], bounds[e + 1])
        re, ce, ve = r[sl], c[sl] - offsets[e], v[sl]
        cols = np.unique(ce)
        rows = np.unique(re)
        dense = np.zeros((rows.size, cols.size))
        dense[np.searchsorted(rows, re), np.searchsorted(cols, ce)] = ve
        out.append((cols, rows, dense))
    return out


def factor_elements(inputs: ReductionInputs, use_keep_mask=False):
    """Block LU of every element.

    The b block is the set of nonzero C columns, widened by
    ``inputs.keep_mask`` when ``use_keep_mask`` is set.
    """
    offsets = inputs.a_hat.offsets
    slices = _constraint_slices(inputs.c_mat, offsets)
    keep = inputs.keep_mask if use_keep_mask else None
    factors = []
    for e, mat in enumerate(inputs.a_hat.matrices):
        c_idx, rows, c_dense = slices[e]
        if keep is None:
            b_idx, ce = c_idx, c_dense
        else:
            b_idx = np.union1d(c_idx, np.flatnonzero(keep[offsets[e]:offsets[e + 1]]))
            ce = np.zeros((rows.size, b_idx.size))
            ce[:, np.searchsorted(b_idx, c_idx)] = c_dense
        i_idx = np.setdiff1d(np.arange(mat.shape[0]), b_idx)
        a_ii = mat[np.ix_(i_idx, i_idx)]
        a_ib = mat[np.ix_(i_idx, b_idx)]
        a_bi = mat[np.ix_(b_idx, i_idx)]
        lu_ii = lu_factor(a_ii)
        x_ib = lu_solve(lu_ii, a_ib)
        s_b = mat[np.ix_(b_idx, b_idx)] - a_bi @ x_ib
        factors.append(ElementFactor(i_idx, b_idx, lu_ii, a_ib, a_bi, x_ib, s_b, lu_factor(s_b), rows, ce))
    return factors


# ---------------------------------------------------------------------------
# hybridization
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class HybridizedOperator:
    factors: list
    offsets: np.ndarray
    h_mat: CsrMatrix
    p_mat: CsrMatrix
    essential: EssentialData | None = None

    @property
    def m(self):
        return self.h_mat.nrows

    def solve_broken(self, rhs):
        """A_hat^{-1} rhs element by element."""
        out = np.empty(self.offsets[-1])
        for e, fac in enumerate(self.factors):
            sl = slice(self.offsets[e], self.offsets[e + 1])
            out[sl] = fac.solve(rhs[sl])
        return out


def hybridize(inputs: ReductionInputs):
    """Multiplier Schur complement H = C A_hat^{-1} C^T and g = C A_hat^{-1} f_hat.

    Per element only the b-block enters: ``H += C_b S_b^{-1} C_b^T``.
    """
    factors = factor_elements(inputs)
    offsets = inputs.a_hat.offsets
    m = inputs.m
    rows, cols, vals = [], [], []
    g = np.zeros(m)
    f_hat = np.asarray(inputs.f_hat, dtype=np.float64)
    for e, fac in enumerate(factors):
        if fac.rows.size == 0:
            continue
        y = lu_solve(fac.s_lu, fac.ce.T)
        he = fac.ce @ y
        he = 0.5 * (he + he.T)
        nr = fac.rows.size
        rows.append(np.repeat(fac.rows, nr))
        cols.append(np.tile(fac.rows, nr))
        vals.append(he.ravel())
        x_e = fac.solve(f_hat[offsets[e]:offsets[e + 1]])
        g[fac.rows] += fac.ce @ x_e[fac.b_idx]
    if rows:
        h = CsrMatrix.from_coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (m, m))
    else:
        h = CsrMatrix.zeros(m, m)
    return HybridizedOperator(factors, offsets, h, inputs.p_mat, inputs.essential), g


def recover_hybrid(op: HybridizedOperator, lam, f_hat):
    """Back substitution x_hat = A_hat^{-1}(f_hat - C^T lam), x = R x_hat."""
    lam = np.asarray(lam, dtype=np.float64)
    f_hat = np.asarray(f_hat, dtype=np.float64)
    if lam.shape != (op.m,):
        raise DimensionMismatch(f"lambda has shape {lam.shape}, expected ({op.m},)")
    if f_hat.shape != (op.offsets[-1],):
        raise DimensionMismatch("f_hat does not match the broken space")
    rhs = f_hat.copy()
    for e, fac in enumerate(op.factors):
        if fac.rows.size:
            rhs[op.offsets[e] + fac.b_idx] -= fac.ce.T @ lam[fac.rows]
    x_hat = op.solve_broken(rhs)
    return x_hat, restriction_apply(op.p_mat, x_hat)


# ---------------------------------------------------------------------------
# static condensation
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CondensedOperator:
    factors: list
    offsets: np.ndarray
    s_mat: CsrMatrix
    pb_mat: CsrMatrix  # b rows of P restricted to master columns
    b_rows: np.ndarray  # broken indices of the b dofs, element by element
    masters: np.ndarray  # global indices of the master dofs
    p_mat: CsrMatrix
    essential: EssentialData | None = None

    @property
    def size(self):
        return self.s_mat.nrows


def static_condense(inputs: ReductionInputs):
    """S = P_b^T S_hat P_b and f_S = P_b^T (f_b - A_bi A_ii^{-1} f_i).

    Masters are the global dofs reached from the b rows of P.  With a
    ``keep_mask`` (set by the RT frontend) every face dof is a master, so for
    RT_0 the condensed matrix is the assembled one.
    """
    factors = factor_elements(inputs, use_keep_mask=inputs.keep_mask is not None)
    offsets = inputs.a_hat.offsets
    f_hat = np.asarray(inputs.f_hat, dtype=np.float64)
    b_rows = np.concatenate([offsets[e] + fac.b_idx for e, fac in enumerate(factors)]).astype(np.int64)
    p_b_all = inputs.p_mat.to_scipy()[b_rows, :]
    masters = np.flatnonzero(np.diff(p_b_all.tocsc().indptr) > 0)
    pb = CsrMatrix.from_scipy(p_b_all[:, masters])
    s_blocks = ElementBlockOperator(
        tuple((np.zeros(f.b_idx.size, dtype=np.int64), np.ones(f.b_idx.size)) for f in factors),
        tuple(f.s_b for f in factors),
    )
    pbt = transpose(pb)
    s_mat = triple_product(pbt, s_blocks, pb)
    f_b = np.concatenate(
        [fac.condensed_rhs(f_hat[offsets[e]:offsets[e + 1]]) for e, fac in enumerate(factors)]
    ) if factors else np.zeros(0)
    f_s = pbt @ f_b
    op = CondensedOperator(factors, offsets, s_mat, pb, b_rows, masters, inputs.p_mat, inputs.essential)
    return op, f_s


def recover_condensed(op: CondensedOperator, x_b, f_hat):
    """Interior values from the master solution, then x = R x_hat."""
    x_b = np.asarray(x_b, dtype=np.float64)
    f_hat = np.asarray(f_hat, dtype=np.float64)
    if x_b.shape != (op.size,):
        raise DimensionMismatch(f"x_b has shape {x_b.shape}, expected ({op.size},)")
    xb_hat = op.pb_mat @ x_b
    x_hat = np.empty(op.offsets[-1])
    pos = 0
    for e, fac in enumerate(op.factors):
        o = op.offsets[e]
        nb = fac.b_idx.size
        xb = xb_hat[pos:pos + nb]
        pos += nb
        fe = f_hat[o:op.offsets[e + 1]]
        x_hat[o + fac.b_idx] = xb
        x_hat[o + fac.i_idx] = lu_solve(fac.a_ii, fe[fac.i_idx] - fac.a_ib @ xb)
    return restriction_apply(op.p_mat, x_hat)


def recover_condensed_broken(op: CondensedOperator, x_b, f_hat):
    """Like :func:`recover_condensed` but also returns the broken vector."""
    x = recover_condensed(op, x_b, f_hat)
    return op.p_mat @ x, x


# ---------------------------------------------------------------------------
# essential dofs
# ---------------------------------------------------------------------------


def essential_face_dofs(space: RtSpace, faces):
    """Global dofs of the given faces; every face must lie on the boundary."""
    faces = np.asarray(faces, dtype=np.int64).ravel()
    mask = space.mesh.boundary_face_mask
    bad = faces[~mask[faces]] if faces.size else faces
    if bad.size:
        raise ValueError(f"essential face {int(bad[0])} is not on the boundary")
    return (faces[:, None] * space.dofs_per_face + np.arange(space.dofs_per_face)).ravel()


def boundary_faces(mesh):
    return np.flatnonzero(mesh.boundary_face_mask)


def eliminate_essential(inputs: ReductionInputs, essential_dofs, values=None) -> ReductionInputs:
    """Remove prescribed global dofs from the element system.

    ``values`` (default zero) are the prescribed global dof values; their
    contribution ``-A_hat[:, e] x_e`` moves to the right-hand side.  The
    broken copies of every essential dof must have zero columns in C.
    """
    ess = np.unique(np.asarray(essential_dofs, dtype=np.int64).ravel())
    n = inputs.n
    if ess.size and (ess[0] < 0 or ess[-1] >= n):
        raise IndexError("essential dof out of range")
    vals = np.zeros(ess.size) if values is None else np.broadcast_to(np.asarray(values, dtype=np.float64), ess.shape).copy()
    pcsc = inputs.p_mat.to_scipy().tocsc()
    is_ess = np.zeros(n, dtype=bool)
    is_ess[ess] = True
    removed = []
    for g in ess:
        removed.append(pcsc.indices[pcsc.indptr[g]:pcsc.indptr[g + 1]])
    removed = np.unique(np.concatenate(removed)) if removed else np.zeros(0, dtype=np.int64)
    c_cols = np.diff(inputs.c_mat.to_scipy().tocsc().indptr)
    if removed.size and np.any(c_cols[removed] > 0):
        raise ValueError("essential dof has a constrained (shared) broken copy; it is not on the boundary")
    psp = inputs.p_mat.to_scipy()
    rows_touch = psp[removed, :]
    if rows_touch.nnz and np.any(~is_ess[rows_touch.indices]):
        raise ValueError("a removed broken row also depends on a free dof")
    x_fixed = np.zeros(n)
    x_fixed[ess] = vals
    xh_fixed = psp @ x_fixed
    f_adj = np.asarray(inputs.f_hat, dtype=np.float64) - inputs.a_hat.matvec(xh_fixed)

    keep_broken = np.ones(inputs.n_hat, dtype=bool)
    keep_broken[removed] = False
    free = np.flatnonzero(~is_ess)
    new_index = np.full(n, -1, dtype=np.int64)
    new_index[free] = np.arange(free.size)

    maps, mats = [], []
    offsets = inputs.a_hat.offsets
    for e, ((idx, sgn), mat) in enumerate(zip(inputs.a_hat.dof_maps, inputs.a_hat.matrices)):
        keep = keep_broken[offsets[e]:offsets[e + 1]]
        maps.append((new_index[idx[keep]], sgn[keep]))
        mats.append(mat[np.ix_(keep, keep)])
    a_new = ElementBlockOperator(tuple(maps), tuple(mats))
    kb = np.flatnonzero(keep_broken)
    p_new = CsrMatrix.from_scipy(psp[kb, :][:, free])
    c_new = CsrMatrix.from_scipy(inputs.c_mat.to_scipy()[:, kb])

    if inputs.essential is None:
        ess_data = EssentialData(n, free, ess, vals)
    else:
        prev = inputs.essential
        ess_data = EssentialData(
            prev.n_full,
            prev.free_dofs[free],
            np.concatenate([prev.fixed_dofs, prev.free_dofs[ess]]),
            np.concatenate([prev.fixed_values, vals]),
        )
    km = None if inputs.keep_mask is None else inputs.keep_mask[kb]
    return ReductionInputs(a_new, p_new, c_new, f_adj[kb], ess_data, keep_mask=km)


def restore_essential(essential: EssentialData | None, x):
    """Scatter a reduced solution back into the full global numbering."""
    if essential is None:
        return np.asarray(x, dtype=np.float64)
    full = np.zeros(essential.n_full)
    full[essential.free_dofs] = x
    full[essential.fixed_dofs] = essential.fixed_values
    return full


# ---------------------------------------------------------------------------
# near-nullspace diagnostic
# ---------------------------------------------------------------------------


def near_nullspace_check(space: RtSpace, coeffs: CellCoefficients, weighted: bool = False, cap: int = DENSE_CAP):
    """Sorted eigenvalues of C Y C^T with Y = M^-1 - M^-1 B^T (B M^-1 B^T)^-1 B M^-1.

    Y is built densely in broken numbering from the element mass and
    divergence blocks.
    """
    nh = space.broken_ndofs
    c = build_C(space, weighted)
    dense_cap_check((nh, nh), cap)
    dense_cap_check((c.nrows, c.nrows), cap)
    if c.nrows == 0:
        return np.zeros(0)
    y = np.zeros((nh, nh))
    s = space.local_size
    for cell in range(space.mesh.ncells):
        em = element_matrices(space, cell, coeffs)
        minv = np.linalg.inv(em.m_mat)
        mb = minv @ em.b_mat.T
        ye = minv - mb @ np.linalg.solve(em.b_mat @ mb, mb.T)
        sl = slice(cell * s, (cell + 1) * s)
        y[sl, sl] = 0.5 * (ye + ye.T)
    cd = c.to_scipy().toarray()
    return np.sort(np.linalg.eigvalsh(cd @ y @ cd.T))


def near_kernel_dimension(eigs, rtol=1e-10):
    eigs = np.asarray(eigs)
    if eigs.size == 0:
        return 0
    lam_max = np.max(np.abs(eigs))
    return int(np.sum(eigs <= rtol * lam_max))


def with_f_hat(inputs: ReductionInputs, f_hat) -> ReductionInputs:
    return replace(inputs, f_hat=np.asarray(f_hat, dtype=np.float64))
