"""Structured Cartesian meshes (quads in 2D, hexes in 3D) with oriented faces.

Cells are numbered lexicographically with x fastest.  Faces are grouped by
normal axis, then numbered lexicographically over the (n_axis + 1) x n_other
face grid.  Every face carries a global normal pointing along +axis; its
``minus_cell`` sits on the low side and ``plus_cell`` on the high side.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

SWEPT_EXPONENTS = (-8, -4, 0, 4, 8)


@dataclass(frozen=True)
class Face:
    index: int
    axis: int
    minus_cell: int | None
    plus_cell: int | None
    area: float

    @property
    def is_boundary(self):
        return self.minus_cell is None or self.plus_cell is None


@dataclass(frozen=True)
class CellCoefficients:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=np.float64)
        b = np.asarray(self.beta, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("alpha and beta must be 1-d arrays of equal length")
        for name, v in (("alpha", a), ("beta", b)):
            if not np.all(np.isfinite(v)) or np.any(v <= 0):
                raise ValueError(f"{name} must be positive and finite")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)

    @classmethod
    def uniform(cls, ncells, alpha=1.0, beta=1.0):
        return cls(np.full(ncells, float(alpha)), np.full(ncells, float(beta)))


@dataclass(frozen=True, eq=False)
class CartesianMesh:
    dim: int
    counts: tuple
    sizes: tuple
    origin: tuple

    @property
    def ncells(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def _face_axis_offsets(self):
        offs = [0]
        for ax in range(self.dim):
            offs.append(offs[-1] + self.faces_on_axis(ax))
        return tuple(offs)

    def faces_on_axis(self, axis) -> int:
        shape = list(self.counts)
        shape[axis] += 1
        return int(np.prod(shape))

    @property
    def nfaces(self) -> int:
        return self._face_axis_offsets[-1]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.sizes))

    def face_area(self, axis) -> float:
        return float(np.prod([h for a, h in enumerate(self.sizes) if a != axis]))

    def cell_ijk(self, cell):
        out = []
        for n in self.counts:
            out.append(cell % n)
            cell //= n
        return tuple(out)

    def cell_index(self, ijk) -> int:
        idx, stride = 0, 1
        for i, n in zip(ijk, self.counts):
            idx += i * stride
            stride *= n
        return idx

    def face_index(self, axis, ijk) -> int:
        shape = list(self.counts)
        shape[axis] += 1
        idx, stride = 0, 1
        for i, n in zip(ijk, shape):
            idx += i * stride
            stride *= n
        return self._face_axis_offsets[axis] + idx

    def face(self, f) -> Face:
        if not 0 <= f < self.nfaces:
            raise IndexError(f"face {f} out of range [0, {self.nfaces})")
        axis = int(np.searchsorted(self._face_axis_offsets, f, side="right") - 1)
        local = f - self._face_axis_offsets[axis]
        shape = list(self.counts)
        shape[axis] += 1
        ijk = []
        for n in shape:
            ijk.append(local % n)
            local //= n
        i = ijk[axis]
        minus = plus = None
        if i > 0:
            c = list(ijk)
            c[axis] = i - 1
            minus = self.cell_index(c)
        if i < self.counts[axis]:
            plus = self.cell_index(ijk)
        return Face(f, axis, minus, plus, self.face_area(axis))

    def cell_faces(self, cell):
        """(face, outward_sign) pairs in the order -x, +x, -y, +y[, -z, +z]."""
        if not 0 <= cell < self.ncells:
            raise IndexError(f"cell {cell} out of range [0, {self.ncells})")
        ijk = self.cell_ijk(cell)
        out = []
        for axis in range(self.dim):
            lo = list(ijk)
            hi = list(ijk)
            hi[axis] += 1
            out.append((self.face_index(axis, lo), -1))
            out.append((self.face_index(axis, hi), +1))
        return out

    @cached_property
    def cell_face_table(self):
        """Arrays (ncells, 2*dim) of face indices and outward signs."""
        faces = np.empty((self.ncells, 2 * self.dim), dtype=np.int64)
        signs = np.empty((self.ncells, 2 * self.dim), dtype=np.int64)
        grids = np.meshgrid(*[np.arange(n) for n in self.counts], indexing="ij")
        # flatten in x-fastest (Fortran) order to match the cell numbering
        ijk = [g.ravel(order="F") for g in grids]
        for axis in range(self.dim):
            shape = list(self.counts)
            shape[axis] += 1
            strides = np.cumprod([1] + shape[:-1])
            lo = sum(i * s for i, s in zip(ijk, strides))
            faces[:, 2 * axis] = self._face_axis_offsets[axis] + lo
            faces[:, 2 * axis + 1] = self._face_axis_offsets[axis] + lo + strides[axis]
            signs[:, 2 * axis] = -1
            signs[:, 2 * axis + 1] = 1
        faces.setflags(write=False)
        signs.setflags(write=False)
        return faces, signs

    @cached_property
    def boundary_face_mask(self):
        faces, _ = self.cell_face_table
        counts = np.bincount(faces.ravel(), minlength=self.nfaces)
        return counts == 1

    def cell_centers(self) -> np.ndarray:
        grids = np.meshgrid(
            *[o + (np.arange(n) + 0.5) * h for o, n, h in zip(self.origin, self.counts, self.sizes)],
            indexing="ij",
        )
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    def cell_box(self, cell):
        """Lower corner of a cell."""
        ijk = self.cell_ijk(cell)
        return tuple(o + i * h for o, i, h in zip(self.origin, ijk, self.sizes))

    def label(self) -> str:
        return "x".join(str(n) for n in self.counts)


def build_mesh(dim, counts, sizes=None, origin=None) -> CartesianMesh:
    if dim not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {dim}")
    counts = tuple(int(c) for c in counts)
    if len(counts) != dim or any(c < 1 for c in counts):
        raise ValueError(f"need {dim} positive cell counts, got {counts}")
    if sizes is None:
        sizes = tuple(1.0 / c for c in counts)
    sizes = tuple(float(h) for h in sizes)
    if len(sizes) != dim or any(not np.isfinite(h) or h <= 0 for h in sizes):
        raise ValueError(f"need {dim} positive cell sizes, got {sizes}")
    if origin is None or np.isscalar(origin):
        origin = (float(origin or 0.0),) * dim
    origin = tuple(float(o) for o in origin)
    if len(origin) != dim:
        raise ValueError("origin has the wrong dimension")
    return CartesianMesh(dim, counts, sizes, origin)


def unit_cube_mesh(n, dim=3) -> CartesianMesh:
    """n^dim cells on [0,1]^dim; ``n`` may also be a tuple of counts."""
    counts = (n,) * dim if np.isscalar(n) else tuple(n)
    return build_mesh(len(counts), counts)


def in_soft_hard_region(points) -> np.ndarray:
    """Membership in [1/4,1/2]^3 U [1/2,3/4]^3 (closed boxes)."""
    pts = np.atleast_2d(points)
    box1 = np.all((pts >= 0.25) & (pts <= 0.5), axis=1)
    box2 = np.all((pts >= 0.5) & (pts <= 0.75), axis=1)
    return box1 | box2


def soft_hard_coefficients(mesh: CartesianMesh, p: int) -> CellCoefficients:
    """alpha = 1; beta = 10**p on cells centred inside the two inner cubes."""
    if p not in SWEPT_EXPONENTS:
        warnings.warn(f"soft-hard exponent p={p} is outside the swept set {SWEPT_EXPONENTS}", stacklevel=2)
    inside = in_soft_hard_region(mesh.cell_centers())
    beta = np.where(inside, 10.0 ** p, 1.0)
    return CellCoefficients(np.ones(mesh.ncells), beta)


def read_coefficients(path, ncells) -> CellCoefficients:
    """Per-cell file: one ``cell_index alpha beta`` line per cell, in order."""
    from .errors import FormatError

    alpha = np.empty(ncells)
    beta = np.empty(ncells)
    seen = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            t = s.split()
            if len(t) != 3:
                raise FormatError("expected 'cell_index alpha beta'", line=lineno, path=path)
            try:
                c, a, b = int(t[0]), float(t[1]), float(t[2])
            except ValueError:
                raise FormatError("cannot parse coefficient line", line=lineno, path=path) from None
            if c != seen:
                raise FormatError(f"expected cell {seen}, found {c} (lexicographic order required)", line=lineno, path=path)
            if seen >= ncells:
                raise FormatError(f"more than {ncells} cells", line=lineno, path=path)
            if not (a > 0 and b > 0 and np.isfinite(a) and np.isfinite(b)):
                raise FormatError("coefficients must be positive and finite", line=lineno, path=path)
            alpha[c], beta[c] = a, b
            seen += 1
    if seen != ncells:
        raise FormatError(f"expected {ncells} cells, found {seen}", path=path)
    return CellCoefficients(alpha, beta)


def write_coefficients(path, coeffs: CellCoefficients):
    with open(path, "w") as fh:
        for c, (a, b) in enumerate(zip(coeffs.alpha, coeffs.beta)):
            fh.write(f"{c} {a:.17g} {b:.17g}\n")
