"""Preconditioned conjugate gradients and its preconditioners.

The multigrid preconditioner is smoothed aggregation seeded with the
constant vector as the only near-nullspace candidate, applied as one
V(1,1) cycle with a forward Gauss-Seidel pre-sweep and a backward post-sweep
so that the cycle is a symmetric operator.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import (
    CapExceeded,
    IndefinitePreconditioner,
    NotSymmetric,
    SetupFailed,
    ZeroDiagonal,
)
from .sparse import DENSE_CAP, CsrMatrix, add, lu_factor, lu_solve, to_dense, transpose, triple_product

log = logging.getLogger(__name__)

DEFAULT_THETA = 0.08
DEFAULT_OMEGA = 2.0 / 3.0
DEFAULT_COARSE_CAP = 64
DEFAULT_MAX_LEVELS = 25
DEFAULT_POWER_ITERS = 10
MAX_COARSENING_RATIO = 0.9


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _gs_forward(indptr, indices, data, diag, x, b):
    n = x.shape[0]
    for i in range(n):
        s = b[i]
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            if j != i:
                s -= data[jj] * x[j]
        x[i] = s / diag[i]


@numba.njit(cache=True)
def _gs_backward(indptr, indices, data, diag, x, b):
    n = x.shape[0]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            if j != i:
                s -= data[jj] * x[j]
        x[i] = s / diag[i]


@numba.njit(cache=True)
def _aggregate(indptr, indices, n):
    """Greedy aggregation over a symmetric strength graph (no self loops).

    Pass 1 seeds an aggregate at every node whose strong neighbours are all
    free, pass 2 attaches leftovers to the lowest-numbered neighbouring
    pass-1 aggregate, pass 3 groups what is still free.  Nodes without strong
    neighbours stay unaggregated (-1).
    """
    agg = np.full(n, -1, dtype=np.int64)
    count = 0
    for i in range(n):
        if agg[i] >= 0 or indptr[i + 1] == indptr[i]:
            continue
        free = True
        for jj in range(indptr[i], indptr[i + 1]):
            if agg[indices[jj]] >= 0:
                free = False
                break
        if free:
            agg[i] = count
            for jj in range(indptr[i], indptr[i + 1]):
                agg[indices[jj]] = count
            count += 1
    pass1 = agg.copy()
    for i in range(n):
        if agg[i] >= 0 or indptr[i + 1] == indptr[i]:
            continue
        best = -1
        for jj in range(indptr[i], indptr[i + 1]):
            a = pass1[indices[jj]]
            if a >= 0 and (best < 0 or a < best):
                best = a
        if best >= 0:
            agg[i] = best
    for i in range(n):
        if agg[i] >= 0 or indptr[i + 1] == indptr[i]:
            continue
        agg[i] = count
        for jj in range(indptr[i], indptr[i + 1]):
            if agg[indices[jj]] < 0:
                agg[indices[jj]] = count
        count += 1
    return agg, count


# ---------------------------------------------------------------------------
# PCG
# ---------------------------------------------------------------------------


@dataclass
class PcgReport:
    iterations: int
    relative_residuals: list
    converged: bool
    wall_time: float

    @property
    def final_relative_residual(self):
        return self.relative_residuals[-1]


def check_symmetric(a: CsrMatrix, rtol=1e-10):
    if a.nrows != a.ncols:
        raise NotSymmetric(f"matrix is {a.nrows}x{a.ncols}")
    if a.nnz == 0:
        return 0.0
    m = a.to_scipy()
    diff = abs(m - m.T)
    err = diff.max() if diff.nnz else 0.0
    scale = np.abs(a.values).max()
    if err > rtol * scale:
        raise NotSymmetric(f"max |A - A^T| = {err:.3e} exceeds {rtol:.1e} * max|A| = {rtol * scale:.3e}")
    return float(err / scale)


def _as_operator(a):
    if isinstance(a, CsrMatrix):
        return a.to_scipy()
    return a


def pcg(a: CsrMatrix, precond, b, rtol: float = 1e-12, maxit: int = 2000, x0=None, check=True):
    """Preconditioned CG; stops when ||b - A x||_2 <= rtol ||b||_2.

    ``precond`` is a callable ``r -> z`` or ``None``.  Non-convergence is
    reported through ``PcgReport.converged``.
    """
    t0 = time.perf_counter()
    if check:
        check_symmetric(a)
    op = _as_operator(a)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (a.nrows,):
        raise ValueError(f"rhs has shape {b.shape}, expected ({a.nrows},)")
    apply_m = precond if precond is not None else (lambda r: r.copy())
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), PcgReport(0, [0.0], True, time.perf_counter() - t0)
    r = b - op @ x
    hist = [np.linalg.norm(r) / bnorm]
    if hist[0] <= rtol:
        return x, PcgReport(0, hist, True, time.perf_counter() - t0)
    z = apply_m(r)
    rz = float(r @ z)
    if not rz > 0.0:
        raise IndefinitePreconditioner(f"<z, r> = {rz:.3e} at iteration 0")
    p = z.copy()
    converged = False
    it = 0
    while it < maxit:
        it += 1
        ap = op @ p
        pap = float(p @ ap)
        if not pap > 0.0:
            raise ArithmeticError(f"<p, A p> = {pap:.3e} at iteration {it}; matrix is not positive definite")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        hist.append(np.linalg.norm(r) / bnorm)
        if hist[-1] <= rtol:
            converged = True
            break
        z = apply_m(r)
        rz_new = float(r @ z)
        if not rz_new > 0.0:
            raise IndefinitePreconditioner(f"<z, r> = {rz_new:.3e} at iteration {it}")
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, PcgReport(it, hist, converged, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# one-level preconditioners
# ---------------------------------------------------------------------------


def _positive_diagonal(a: CsrMatrix):
    d = a.diagonal()
    bad = np.flatnonzero(d <= 0.0)
    if bad.size:
        raise ZeroDiagonal(f"diagonal entry {int(bad[0])} is {d[bad[0]]!r}; need a positive diagonal")
    return d


class JacobiPreconditioner:
    def __init__(self, a: CsrMatrix):
        self.inv_diag = 1.0 / _positive_diagonal(a)

    def __call__(self, r):
        return self.inv_diag * r


class SgsPreconditioner:
    """One forward then one backward Gauss-Seidel sweep from a zero guess."""

    def __init__(self, a: CsrMatrix):
        self.diag = _positive_diagonal(a)
        self.a = a

    def __call__(self, r):
        a = self.a
        x = np.zeros_like(r, dtype=np.float64)
        r = np.ascontiguousarray(r, dtype=np.float64)
        _gs_forward(a.row_offsets, a.col_indices, a.values, self.diag, x, r)
        _gs_backward(a.row_offsets, a.col_indices, a.values, self.diag, x, r)
        return x


def jacobi_setup(a: CsrMatrix) -> JacobiPreconditioner:
    return JacobiPreconditioner(a)


def ssgs_setup(a: CsrMatrix) -> SgsPreconditioner:
    return SgsPreconditioner(a)


# ---------------------------------------------------------------------------
# smoothed aggregation
# ---------------------------------------------------------------------------


def strength_graph(a: CsrMatrix, theta: float) -> CsrMatrix:
    """Off-diagonal entries with |a_ij| >= theta sqrt(a_ii a_jj)."""
    d = np.abs(a.diagonal())
    r = a.row_indices()
    c = a.col_indices
    keep = (r != c) & (np.abs(a.values) >= theta * np.sqrt(d[r] * d[c]))
    return CsrMatrix.from_coo(r[keep], c[keep], np.ones(int(keep.sum())), a.shape)


def aggregate(strength: CsrMatrix):
    agg, count = _aggregate(strength.row_offsets, strength.col_indices, strength.nrows)
    return agg, int(count)


def tentative_prolongator(agg, naggs, candidate):
    """Candidate restricted to each aggregate, columns normalised."""
    rows = np.flatnonzero(agg >= 0)
    cols = agg[rows]
    vals = candidate[rows]
    norms = np.sqrt(np.bincount(cols, weights=vals * vals, minlength=naggs))
    if np.any(norms == 0.0):
        raise SetupFailed("near-nullspace candidate vanishes on an aggregate")
    t = CsrMatrix.from_coo(rows, cols, vals / norms[cols], (agg.size, naggs))
    return t, norms


def spectral_radius_estimate(a: CsrMatrix, inv_diag, iters=DEFAULT_POWER_ITERS, seed=0):
    """Power iterations on D^-1 A."""
    op = a.to_scipy()
    x = np.random.default_rng(seed).random(a.nrows) + 0.5
    x /= np.linalg.norm(x)
    rho = 0.0
    for _ in range(iters):
        y = inv_diag * (op @ x)
        rho = np.linalg.norm(y)
        if rho == 0.0:
            break
        x = y / rho
    return float(rho)


@dataclass(eq=False)
class AmgLevel:
    a: CsrMatrix
    diag: np.ndarray
    p: CsrMatrix | None = None
    pt: CsrMatrix | None = None
    aggregates: np.ndarray | None = None


@dataclass(eq=False)
class AmgHierarchy:
    levels: list
    coarse_lu: object
    near_nullspace: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def nlevels(self):
        return len(self.levels)

    def sizes(self):
        return [lvl.a.nrows for lvl in self.levels]

    def operator_complexity(self):
        nnz = [lvl.a.nnz for lvl in self.levels]
        return sum(nnz) / max(nnz[0], 1)

    def __call__(self, r):
        return amg_apply(self, r)


def amg_setup(a: CsrMatrix, theta=DEFAULT_THETA, omega=DEFAULT_OMEGA, coarse_cap=DEFAULT_COARSE_CAP,
              max_levels=DEFAULT_MAX_LEVELS, candidate=None, dense_cap=DENSE_CAP) -> AmgHierarchy:
    """Smoothed-aggregation hierarchy for an SPD matrix.

    The prolongator smoother uses the damping ``2 * omega / rho(D^-1 A)``
    (4/3 over the spectral radius estimate for the default omega).
    Coarsening stops at ``coarse_cap`` unknowns, when a level coarsens by
    less than 10%, or when nothing aggregates.
    """
    params = dict(theta=theta, omega=omega, coarse_cap=coarse_cap, max_levels=max_levels)
    b = np.ones(a.nrows) if candidate is None else np.asarray(candidate, dtype=np.float64).copy()
    levels = []
    current = a
    while True:
        diag = _positive_diagonal(current)
        level = AmgLevel(current, diag)
        levels.append(level)
        n = current.nrows
        if n <= coarse_cap or len(levels) >= max_levels:
            break
        agg, naggs = aggregate(strength_graph(current, theta))
        if naggs == 0:
            log.debug("level %d: no strong connections, stopping", len(levels) - 1)
            break
        if naggs >= n:
            raise SetupFailed(f"level {len(levels) - 1}: coarse size {naggs} does not decrease from {n}")
        if naggs > MAX_COARSENING_RATIO * n:
            break
        t, b = tentative_prolongator(agg, naggs, b)
        inv_diag = 1.0 / diag
        rho = spectral_radius_estimate(current, inv_diag)
        w = 2.0 * omega / rho
        at = current @ t
        scaled = CsrMatrix(at.nrows, at.ncols, at.row_offsets, at.col_indices, at.values * inv_diag[at.row_indices()])
        p = add(t, scaled, 1.0, -w)
        pt = transpose(p)
        level.p, level.pt, level.aggregates = p, pt, agg
        current = triple_product(pt, current, p)
        if current.nrows == 0:
            raise SetupFailed("empty coarse level")
    last = levels[-1].a
    if last.nrows * last.nrows > dense_cap:
        raise CapExceeded(f"coarsest level has {last.nrows} unknowns; too large for a dense solve")
    coarse_lu = lu_factor(to_dense(last, dense_cap))
    return AmgHierarchy(levels, coarse_lu, np.ones(a.nrows) if candidate is None else np.asarray(candidate), params)


def amg_apply(h: AmgHierarchy, r) -> np.ndarray:
    r = np.ascontiguousarray(r, dtype=np.float64)
    return _vcycle(h, 0, r)


def _vcycle(h, k, r):
    level = h.levels[k]
    if k == len(h.levels) - 1:
        return lu_solve(h.coarse_lu, r)
    a = level.a
    x = np.zeros_like(r)
    _gs_forward(a.row_offsets, a.col_indices, a.values, level.diag, x, r)
    res = r - a @ x
    xc = _vcycle(h, k + 1, np.ascontiguousarray(level.pt @ res))
    x += level.p @ xc
    _gs_backward(a.row_offsets, a.col_indices, a.values, level.diag, x, r)
    return x


# ---------------------------------------------------------------------------
# direct oracle
# ---------------------------------------------------------------------------


def dense_solve(a, b, cap: int = DENSE_CAP):
    dense = to_dense(a, cap) if isinstance(a, CsrMatrix) else np.asarray(a, dtype=np.float64)
    if dense.size > cap:
        raise CapExceeded(f"dense matrix with {dense.size} entries exceeds cap {cap}")
    return lu_solve(lu_factor(dense), np.asarray(b, dtype=np.float64))


def make_preconditioner(kind: str, a: CsrMatrix, **amg_kwargs):
    if kind == "amg":
        return amg_setup(a, **amg_kwargs)
    if kind == "jacobi":
        return jacobi_setup(a)
    if kind == "sgs":
        return ssgs_setup(a)
    if kind == "none":
        return None
    raise ValueError(f"unknown preconditioner {kind!r}")
