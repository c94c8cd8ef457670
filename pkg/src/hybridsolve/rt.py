"""Raviart-Thomas spaces RT_0 / RT_1 on axis-aligned boxes.

Basis functions are tensor products.  The component along axis ``a`` is a
Lagrange polynomial of degree k+1 in the normal coordinate (closed points
0, [1/2,] 1) times degree-k Lagrange polynomials at Gauss-Legendre points in
the tangential coordinates, divided by the area of the face normal to ``a``.
With this scaling an RT_0 face dof is the total normal flux through the face.

Element-local numbering is interior dofs first, then face dofs in
``cell_faces`` order; face basis functions point out of the element.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import product

import numpy as np

from .mesh import CartesianMesh, CellCoefficients
from .sparse import ElementBlockOperator

SUPPORTED_ORDERS = (0, 1)
DEFAULT_SOURCE = (1.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# 1-d polynomial families on [0, 1]
# ---------------------------------------------------------------------------


def _lagrange(nodes):
    """Return (values, derivatives) callables for the Lagrange basis on nodes."""
    nodes = np.asarray(nodes, dtype=np.float64)
    polys = []
    for i, xi in enumerate(nodes):
        others = np.delete(nodes, i)
        c = np.poly1d(others, r=True) / np.prod(xi - others)
        polys.append(c)
    derivs = [p.deriv() for p in polys]

    def val(x):
        return np.stack([p(x) for p in polys], axis=-1)

    def der(x):
        return np.stack([d(x) for d in derivs], axis=-1)

    return val, der


def gauss_points(n):
    """Gauss-Legendre points and weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _families(order):
    closed = np.linspace(0.0, 1.0, order + 2)
    open_ = gauss_points(order + 1)[0] if order > 0 else np.array([0.5])
    return _lagrange(closed), _lagrange(open_)


# ---------------------------------------------------------------------------
# space
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RtSpace:
    mesh: CartesianMesh
    order: int

    def __post_init__(self):
        if self.order not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported RT order {self.order}; expected one of {SUPPORTED_ORDERS}")

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def dofs_per_face(self):
        return (self.order + 1) ** (self.dim - 1)

    @property
    def interior_dofs_per_cell(self):
        # per component: order interior normal functions x (order+1)^(dim-1)
        return self.dim * self.order * (self.order + 1) ** (self.dim - 1)

    @property
    def local_size(self):
        return self.interior_dofs_per_cell + 2 * self.dim * self.dofs_per_face

    @property
    def nface_dofs(self):
        return self.mesh.nfaces * self.dofs_per_face

    @property
    def ndofs(self):
        return self.nface_dofs + self.mesh.ncells * self.interior_dofs_per_cell

    @property
    def broken_ndofs(self):
        return self.mesh.ncells * self.local_size

    @property
    def pressure_size(self):
        return (self.order + 1) ** self.dim

    def face_dofs(self, face):
        return face * self.dofs_per_face + np.arange(self.dofs_per_face)

    @cached_property
    def dof_table(self):
        """(ncells, local_size) global indices and signs for every cell."""
        mesh = self.mesh
        nint, dpf = self.interior_dofs_per_cell, self.dofs_per_face
        faces, fsigns = mesh.cell_face_table
        idx = np.empty((mesh.ncells, self.local_size), dtype=np.int64)
        sgn = np.empty((mesh.ncells, self.local_size), dtype=np.float64)
        cells = np.arange(mesh.ncells)
        idx[:, :nint] = self.nface_dofs + cells[:, None] * nint + np.arange(nint)
        sgn[:, :nint] = 1.0
        sub = np.arange(dpf)
        fd = (faces[:, :, None] * dpf + sub).reshape(mesh.ncells, -1)
        idx[:, nint:] = fd
        sgn[:, nint:] = np.repeat(fsigns, dpf, axis=1)
        idx.setflags(write=False)
        sgn.setflags(write=False)
        return idx, sgn

    def local_dof_map(self, cell):
        """Signed global dofs of a cell's local basis, as (index, sign) arrays."""
        if not 0 <= cell < self.mesh.ncells:
            raise IndexError(f"cell {cell} out of range")
        idx, sgn = self.dof_table
        return idx[cell].copy(), sgn[cell].copy()

    def local_face_slots(self):
        """Local indices of the face dofs, shape (2*dim, dofs_per_face)."""
        start = self.interior_dofs_per_cell
        return start + np.arange(2 * self.dim * self.dofs_per_face).reshape(2 * self.dim, self.dofs_per_face)

    @cached_property
    def reference(self):
        return ReferenceElement(self.dim, self.order)

    def face_mass(self, axis):
        """Mass matrix of the tangential trace basis on one face normal to ``axis``."""
        return self.mesh.face_area(axis) * self.reference.face_mass_ref


def build_space(mesh: CartesianMesh, order: int) -> RtSpace:
    return RtSpace(mesh, order)


# ---------------------------------------------------------------------------
# reference element tabulation
# ---------------------------------------------------------------------------


class ReferenceElement:
    """Tabulated RT_k basis on the unit box.

    ``comp[j]`` is the axis carrying basis function j, ``normal[j]`` the index
    into the normal 1-d family, ``tang[j]`` the tangential multi-index (one
    entry per non-normal axis, lowest axis first) and ``sign[j]`` its
    orientation (+1 interior, outward for faces).
    """

    def __init__(self, dim, order):
        self.dim, self.order = dim, order
        k = order
        comp, normal, tang, sign = [], [], [], []
        tang_range = list(product(range(k + 1), repeat=dim - 1))
        # reverse so the lowest tangential axis varies fastest
        tang_range = [t[::-1] for t in tang_range]
        for a in range(dim):
            for t in tang_range:
                for m in range(1, k + 1):
                    comp.append(a), normal.append(m), tang.append(t), sign.append(1.0)
        for a in range(dim):
            for side, node in ((-1.0, 0), (1.0, k + 1)):
                for t in tang_range:
                    comp.append(a), normal.append(node), tang.append(t), sign.append(side)
        self.comp = np.array(comp)
        self.normal = np.array(normal)
        self.tang = np.array(tang, dtype=np.int64).reshape(len(comp), dim - 1)
        self.sign = np.array(sign)
        self.size = len(comp)
        self.npres = (k + 1) ** dim
        (_, _), (tval, _) = _families(order)
        x, w = gauss_points(k + 1)
        mass1 = (tval(x) * w[:, None]).T @ tval(x)
        fm = np.ones((1, 1))
        for _ in range(dim - 1):
            fm = np.kron(mass1, fm)
        self.face_mass_ref = fm

    def tabulate(self, points, sizes):
        """Physical basis values, divergences and pressure basis at points.

        ``points`` are reference coordinates of shape (nq, dim).  Returns
        ``phi`` (nq, nbasis, dim), ``div`` (nq, nbasis), ``psi`` (nq, npres).
        """
        (nval, nder), (tval, _) = _families(self.order)
        pts = np.atleast_2d(points)
        nq, dim = pts.shape
        sizes = np.asarray(sizes, dtype=np.float64)
        vol = np.prod(sizes)
        N = [nval(pts[:, a]) for a in range(dim)]
        dN = [nder(pts[:, a]) for a in range(dim)]
        T = [tval(pts[:, a]) for a in range(dim)]
        phi = np.zeros((nq, self.size, dim))
        div = np.zeros((nq, self.size))
        for j in range(self.size):
            a = self.comp[j]
            others = [t for t in range(dim) if t != a]
            tprod = np.ones(nq)
            for t, ti in zip(others, self.tang[j]):
                tprod = tprod * T[t][:, ti]
            area = vol / sizes[a]
            s = self.sign[j]
            phi[:, j, a] = s * N[a][:, self.normal[j]] * tprod / area
            div[:, j] = s * dN[a][:, self.normal[j]] * tprod / vol
        psi = np.ones((nq, 1))
        for a in range(dim):
            # lowest axis fastest in the pressure numbering
            psi = (T[a][:, :, None] * psi[:, None, :]).reshape(nq, -1)
        return phi, div, psi


def quadrature(dim, npoints):
    x, w = gauss_points(npoints)
    pts = np.array(list(product(x, repeat=dim)))[:, ::-1]
    wts = np.prod(np.array(list(product(w, repeat=dim))), axis=1)
    return pts, wts


@dataclass(frozen=True, eq=False)
class ElementMatrices:
    a_mat: np.ndarray
    m_mat: np.ndarray
    b_mat: np.ndarray
    w_mat: np.ndarray
    load: np.ndarray


@lru_cache(maxsize=64)
def _reference_forms(dim, order, sizes, npoints, source):
    """Unit-coefficient element forms for a box with the given edge lengths."""
    ref = ReferenceElement(dim, order)
    pts, wts = quadrature(dim, npoints)
    phi, div, psi = ref.tabulate(pts, sizes)
    jw = wts * float(np.prod(sizes))
    dd = np.einsum("q,qi,qj->ij", jw, div, div)
    mm = np.einsum("q,qid,qjd->ij", jw, phi, phi)
    bb = np.einsum("q,qp,qj->pj", jw, psi, div)
    ww = np.einsum("q,qp,qr->pr", jw, psi, psi)
    g = np.asarray(source, dtype=np.float64)[:dim]
    load = np.einsum("q,qjd,d->j", jw, phi, g)
    for arr in (dd, mm, bb, ww, load):
        arr.setflags(write=False)
    return dd, mm, bb, ww, load


def _symmetrize(a):
    return 0.5 * (a + a.T)


def element_matrices(space: RtSpace, cell: int, coeffs: CellCoefficients,
                     source=DEFAULT_SOURCE, npoints: int | None = None) -> ElementMatrices:
    """Element forms of (alpha div u, div v) + (beta u, v) and (g, v).

    ``source`` is a constant vector or a callable ``g(x) -> (nq, dim)`` of
    physical points.  ``npoints`` Gauss points per axis, default k+2
    (exact for the constant-coefficient integrands).
    """
    if not 0 <= cell < space.mesh.ncells:
        raise IndexError(f"cell {cell} out of range")
    mesh = space.mesh
    npoints = space.order + 2 if npoints is None else npoints
    alpha, beta = float(coeffs.alpha[cell]), float(coeffs.beta[cell])
    if callable(source):
        dd, mm, bb, ww, _ = _reference_forms(mesh.dim, space.order, mesh.sizes, npoints, DEFAULT_SOURCE)
        load = _callable_load(space, cell, source, npoints)
    else:
        dd, mm, bb, ww, load = _reference_forms(mesh.dim, space.order, mesh.sizes, npoints, tuple(source))
        load = load.copy()
    m_mat = beta * mm
    a_mat = _symmetrize(alpha * dd + m_mat)
    return ElementMatrices(a_mat, m_mat.copy(), bb.copy(), ww / alpha, load)


def _callable_load(space, cell, source, npoints):
    mesh = space.mesh
    ref = space.reference
    pts, wts = quadrature(mesh.dim, npoints)
    phi, _, _ = ref.tabulate(pts, mesh.sizes)
    lo = np.asarray(mesh.cell_box(cell))
    xq = lo + pts * np.asarray(mesh.sizes)
    g = np.asarray(source(xq), dtype=np.float64).reshape(len(pts), mesh.dim)
    return np.einsum("q,qjd,qd->j", wts * mesh.cell_volume, phi, g)


def element_blocks(space: RtSpace, coeffs: CellCoefficients, source=DEFAULT_SOURCE):
    """All element matrices as a block operator plus the broken load vector."""
    idx, sgn = space.dof_table
    mats, loads = [], []
    for c in range(space.mesh.ncells):
        em = element_matrices(space, c, coeffs, source)
        mats.append(em.a_mat)
        loads.append(em.load)
    maps = tuple((idx[c], sgn[c]) for c in range(space.mesh.ncells))
    f_hat = np.concatenate(loads) if loads else np.zeros(0)
    return ElementBlockOperator(maps, tuple(mats)), f_hat


def interpolate_constant(space: RtSpace, u) -> np.ndarray:
    """Global dof vector of a constant vector field (exact in RT_k)."""
    mesh = space.mesh
    u = np.asarray(u, dtype=np.float64)
    x = np.zeros(space.ndofs)
    dpf = space.dofs_per_face
    for axis in range(mesh.dim):
        start = mesh._face_axis_offsets[axis] * dpf
        stop = mesh._face_axis_offsets[axis + 1] * dpf
        x[start:stop] = u[axis] * mesh.face_area(axis)
    ref = space.reference
    nint = space.interior_dofs_per_cell
    if nint:
        per_cell = np.array([u[ref.comp[j]] * mesh.face_area(ref.comp[j]) for j in range(nint)])
        x[space.nface_dofs:] = np.tile(per_cell, mesh.ncells)
    return x
