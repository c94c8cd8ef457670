"""Dense-oracle identity checks for the reduction algorithms.

Oracles here deliberately use ``numpy.linalg`` on fully expanded matrices
rather than the element-wise factorizations in :mod:`hybridsolve.reduction`,
so each check compares two independent computations.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .mesh import CellCoefficients, build_mesh, soft_hard_coefficients, unit_cube_mesh
from .reduction import (
    ReductionInputs,
    assemble,
    build_C,
    build_P,
    hybridize,
    interior_face_pairs,
    near_kernel_dimension,
    near_nullspace_check,
    recover_condensed,
    recover_hybrid,
    rt_inputs,
    static_condense,
)
from .rt import RtSpace, build_space, element_matrices
from .sparse import to_dense


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max error {self.error:.3e} (tol {self.tol:.1e}) {self.detail}".rstrip()


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(b).max(initial=0.0), np.abs(a).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - b).max() / scale)


def _check(name, error, tol, t0, detail=""):
    return CheckResult(name, float(error), tol, bool(error <= tol), time.perf_counter() - t0, detail)


@dataclass
class Instance:
    """One generated problem with the dense oracle objects precomputed."""

    label: str
    space: RtSpace
    coeffs: CellCoefficients
    inputs: ReductionInputs
    a_hat: np.ndarray
    p: np.ndarray
    c: np.ndarray

    @classmethod
    def build(cls, n, order, p_exp=0, weighted=False, dim=3):
        mesh = unit_cube_mesh(n, dim)
        space = build_space(mesh, order)
        coeffs = soft_hard_coefficients(mesh, p_exp) if dim == 3 else CellCoefficients.uniform(mesh.ncells)
        inputs = rt_inputs(space, coeffs, weighted)
        label = f"{mesh.label()} k={order} p={p_exp} {'weighted' if weighted else 'unweighted'}"
        return cls(label, space, coeffs, inputs, to_dense(inputs.a_hat),
                   to_dense(inputs.p_mat), to_dense(inputs.c_mat))

    def oracle_h(self):
        return self.c @ np.linalg.solve(self.a_hat, self.c.T)

    def oracle_solution(self):
        """x from the assembled system, all dense."""
        a = self.p.T @ self.a_hat @ self.p
        return np.linalg.solve(a, self.p.T @ self.inputs.f_hat)


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------


def check_multiplier_equivalence(inst: Instance, tol=1e-9):
    """x_hat from the multiplier system equals P x from the assembled one."""
    t0 = time.perf_counter()
    f_hat = inst.inputs.f_hat
    x = inst.oracle_solution()
    h = inst.oracle_h()
    if h.shape[0]:
        lam = np.linalg.solve(h, inst.c @ np.linalg.solve(inst.a_hat, f_hat))
    else:
        lam = np.zeros(0)
    x_hat = np.linalg.solve(inst.a_hat, f_hat - inst.c.T @ lam)
    err = np.abs(x_hat - inst.p @ x).max() / max(np.abs(x_hat).max(), 1e-300)
    return _check(f"equivalence x_hat = P x [{inst.label}]", err, tol, t0)


def check_saddle_point(inst: Instance, tol=1e-9):
    """Solve the saddle system densely; C x_hat = 0 and P^T(A_hat x_hat - f_hat) = 0."""
    t0 = time.perf_counter()
    nh, m = inst.a_hat.shape[0], inst.c.shape[0]
    k = np.zeros((nh + m, nh + m))
    k[:nh, :nh] = inst.a_hat
    k[:nh, nh:] = inst.c.T
    k[nh:, :nh] = inst.c
    rhs = np.concatenate([inst.inputs.f_hat, np.zeros(m)])
    sol = np.linalg.solve(k, rhs)
    x_hat = sol[:nh]
    scale = max(np.abs(x_hat).max(), 1e-300)
    e1 = np.abs(inst.c @ x_hat).max(initial=0.0) / scale
    fscale = max(np.abs(inst.inputs.f_hat).max(), 1e-300)
    e2 = np.abs(inst.p.T @ (inst.a_hat @ x_hat - inst.inputs.f_hat)).max() / fscale
    return _check(f"saddle system: C x_hat = 0, P^T residual = 0 [{inst.label}]", max(e1, e2), tol, t0)


def check_paths_agree(inst: Instance, tol=1e-8):
    """Assembled, hybridized and condensed solutions agree pairwise."""
    t0 = time.perf_counter()
    inputs = inst.inputs
    a, f = assemble(inputs)
    x_a = np.linalg.solve(to_dense(a), f)
    hop, g = hybridize(inputs)
    lam = np.linalg.solve(to_dense(hop.h_mat), g) if hop.m else np.zeros(0)
    _, x_h = recover_hybrid(hop, lam, inputs.f_hat)
    cop, f_s = static_condense(inputs)
    x_b = np.linalg.solve(to_dense(cop.s_mat), f_s)
    x_c = recover_condensed(cop, x_b, inputs.f_hat)
    err = max(_rel(x_a, x_h), _rel(x_a, x_c), _rel(x_h, x_c))
    return _check(f"assembled/hybridized/condensed agree [{inst.label}]", err, tol, t0)


def schur_identity_oracle(inst: Instance):
    """[-W, I] S_hat^-1 [-W, I]^T (times M_s) from dense blocks."""
    c = inst.c
    nonzero = np.flatnonzero(np.any(c != 0.0, axis=0))
    interior = np.setdiff1d(np.arange(c.shape[1]), nonzero)
    _, b_minus, b_plus, _ = interior_face_pairs(inst.space)
    masters, slaves = b_minus, b_plus
    b = np.concatenate([masters, slaves])
    if set(b.tolist()) != set(nonzero.tolist()):
        raise AssertionError("interface copies do not match the nonzero columns of C")
    a = inst.a_hat
    a_ii = a[np.ix_(interior, interior)]
    s_hat = a[np.ix_(b, b)] - a[np.ix_(b, interior)] @ np.linalg.solve(a_ii, a[np.ix_(interior, b)])
    m = masters.size
    w = -np.eye(m)
    m_s = c[:, slaves]
    if not np.allclose(c[:, masters], -m_s @ w, rtol=0, atol=0):
        raise AssertionError("C is not of the form [0, -M_s W, M_s] with W = -I")
    jump = np.hstack([-w, np.eye(m)])
    return m_s @ jump @ np.linalg.solve(s_hat, jump.T) @ m_s.T


def check_schur_identity(inst: Instance, tol=1e-10, h_override=None):
    t0 = time.perf_counter()
    h = to_dense(hybridize(inst.inputs)[0].h_mat) if h_override is None else h_override
    err = _rel(h, schur_identity_oracle(inst))
    return _check(f"H = [-W, I] S_hat^-1 [-W, I]^T [{inst.label}]", err, tol, t0)


def three_field_oracle(inst: Instance):
    """Multiplier Schur complement of [[M, B^T, C^T], [B, -W, 0], [C, 0, 0]]."""
    space, coeffs = inst.space, inst.coeffs
    ncell = space.mesh.ncells
    s, npres = space.local_size, space.pressure_size
    nh = space.broken_ndofs
    m_hat = np.zeros((nh, nh))
    b_hat = np.zeros((ncell * npres, nh))
    w_hat = np.zeros((ncell * npres, ncell * npres))
    for cell in range(ncell):
        em = element_matrices(space, cell, coeffs)
        u = slice(cell * s, (cell + 1) * s)
        q = slice(cell * npres, (cell + 1) * npres)
        m_hat[u, u] = em.m_mat
        b_hat[q, u] = em.b_mat
        w_hat[q, q] = em.w_mat
    k = np.block([[m_hat, b_hat.T], [b_hat, -w_hat]])
    ext = np.hstack([inst.c, np.zeros((inst.c.shape[0], ncell * npres))])
    return ext @ np.linalg.solve(k, ext.T)


def check_three_field(inst: Instance, tol=1e-10):
    t0 = time.perf_counter()
    h = to_dense(hybridize(inst.inputs)[0].h_mat)
    err = _rel(h, three_field_oracle(inst))
    return _check(f"H = H_tilde from the 3-field system [{inst.label}]", err, tol, t0)


def check_h_against_oracle(inst: Instance, tol=1e-10):
    t0 = time.perf_counter()
    h = to_dense(hybridize(inst.inputs)[0].h_mat)
    return _check(f"H = C A_hat^-1 C^T [{inst.label}]", _rel(h, inst.oracle_h()), tol, t0)


def check_h_spd(inst: Instance, tol=1e-12):
    """Symmetric to tol and Cholesky-factorizable."""
    t0 = time.perf_counter()
    h = to_dense(hybridize(inst.inputs)[0].h_mat)
    asym = _rel(h, h.T)
    try:
        np.linalg.cholesky(h)
        chol = True
    except np.linalg.LinAlgError:
        chol = False
    res = _check(f"H symmetric positive definite [{inst.label}]", asym, tol, t0, "" if chol else "cholesky failed")
    res.passed = res.passed and chol
    return res


def check_constraints_exact(space: RtSpace):
    """C P = 0 in exact integer arithmetic (unweighted C)."""
    t0 = time.perf_counter()
    p = build_P(space).to_scipy().astype(np.int64)
    c = build_C(space, weighted=False).to_scipy().astype(np.int64)
    cp = c @ p
    worst = int(np.abs(cp.data).max()) if cp.nnz else 0
    return _check(f"C P = 0 exactly [{space.mesh.label()} k={space.order}]", worst, 0, t0)


def check_element_identity(space: RtSpace, coeffs: CellCoefficients, tol=1e-12):
    """a = b^T w^-1 b + m on every element."""
    t0 = time.perf_counter()
    worst = 0.0
    for cell in range(space.mesh.ncells):
        em = element_matrices(space, cell, coeffs)
        rebuilt = em.b_mat.T @ np.linalg.solve(em.w_mat, em.b_mat) + em.m_mat
        worst = max(worst, np.linalg.norm(em.a_mat - rebuilt) / np.linalg.norm(em.a_mat))
    return _check(f"element a = b^T w^-1 b + m [{space.mesh.label()} k={space.order}]", worst, tol, t0)


def check_near_nullspace(inst: Instance, rtol=1e-10):
    t0 = time.perf_counter()
    eigs = near_nullspace_check(inst.space, inst.coeffs)
    dim = near_kernel_dimension(eigs, rtol)
    ratio = eigs[0] / eigs[-1] if eigs.size else 0.0
    res = _check(f"dim near-kernel of C Y C^T <= 1 [{inst.label}]", float(dim), 1.0, t0,
                 f"(smallest/largest eigenvalue {ratio:.3e})")
    return res


def check_energy(inst: Instance, tol=1e-12):
    t0 = time.perf_counter()
    a, _ = assemble(inst.inputs)
    x = np.random.default_rng(1).standard_normal(inst.inputs.n)
    x_hat = inst.p @ x
    lhs = x @ (a @ x)
    rhs = x_hat @ (inst.a_hat @ x_hat)
    return _check(f"energy x^T A x = x_hat^T A_hat x_hat [{inst.label}]", abs(lhs - rhs) / abs(rhs), tol, t0)


def check_condensation(inst: Instance, tol=1e-9):
    t0 = time.perf_counter()
    cop, f_s = static_condense(inst.inputs)
    x_b = np.linalg.solve(to_dense(cop.s_mat), f_s)
    x = recover_condensed(cop, x_b, inst.inputs.f_hat)
    return _check(f"condensed solve + recovery = full solve [{inst.label}]", _rel(x, inst.oracle_solution()), tol, t0)


def check_condensed_equals_assembled(inst: Instance, tol=1e-13):
    t0 = time.perf_counter()
    a, _ = assemble(inst.inputs)
    cop, _ = static_condense(inst.inputs)
    if cop.s_mat.shape != a.shape:
        return _check(f"S = A [{inst.label}]", np.inf, tol, t0, "shape mismatch")
    return _check(f"S = A entrywise [{inst.label}]", _rel(to_dense(cop.s_mat), to_dense(a)), tol, t0)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def _instance_checks(inst: Instance):
    out = [
        check_multiplier_equivalence(inst),
        check_saddle_point(inst),
        check_paths_agree(inst),
        check_h_against_oracle(inst),
        check_schur_identity(inst),
        check_three_field(inst),
        check_energy(inst),
        check_condensation(inst),
    ]
    out.append(check_h_spd(inst))
    if inst.space.order == 0:
        out.append(check_condensed_equals_assembled(inst))
        out.append(check_near_nullspace(inst))
    return out


def run_suite(level="fast"):
    """Run the identity suite and return a list of :class:`CheckResult`."""
    if level not in ("fast", "full"):
        raise ValueError(f"unknown verification level {level!r}")
    if level == "fast":
        cases = [(2, 0, 0, False)]
    else:
        cases = [(n, k, p, w) for (n, k) in ((2, 0), (3, 0), (2, 1)) for p in (-8, 0, 8) for w in (False, True)]
    results = []
    for n, k, p, w in cases:
        inst = Instance.build(n, k, p, w)
        results.extend(_instance_checks(inst))
    rng = np.random.default_rng(7)
    for k in (0, 1):
        space = build_space(build_mesh(3, (2, 2, 2)), k)
        results.append(check_constraints_exact(space))
        coeffs = CellCoefficients(10.0 ** rng.uniform(-8, 8, 8), 10.0 ** rng.uniform(-8, 8, 8))
        results.append(check_element_identity(space, coeffs))
    return results
