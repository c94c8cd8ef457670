import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridsolve.errors import FormatError
from hybridsolve.mesh import (
    CellCoefficients,
    build_mesh,
    read_coefficients,
    soft_hard_coefficients,
    unit_cube_mesh,
    write_coefficients,
)


def test_counts_2x2x2():
    m = build_mesh(3, (2, 2, 2), (0.5, 0.5, 0.5), 0)
    assert m.ncells == 8
    assert m.nfaces == 36


def test_single_quad_has_four_edges():
    m = build_mesh(2, (1, 1), (1, 1), 0)
    assert (m.ncells, m.nfaces) == (1, 4)


def test_large_mesh_face_count():
    # RT0 dofs are faces
    assert build_mesh(3, (64, 64, 32)).nfaces == 401_408


@pytest.mark.parametrize("dim", [1, 4])
def test_invalid_dimension(dim):
    with pytest.raises(ValueError):
        build_mesh(dim, (1,) * dim)


def test_invalid_counts_and_sizes():
    with pytest.raises(ValueError):
        build_mesh(3, (0, 1, 1))
    with pytest.raises(ValueError):
        build_mesh(2, (1, 1), (1.0, -1.0))


def test_single_cell_signs():
    m = unit_cube_mesh(1)
    assert [s for _, s in m.cell_faces(0)] == [-1, 1, -1, 1, -1, 1]
    assert all(m.face(f).is_boundary for f, _ in m.cell_faces(0))


def test_shared_face_2x1x1():
    m = build_mesh(3, (2, 1, 1))
    f0 = dict((s, f) for f, s in m.cell_faces(0)[:2])[1]
    f1 = dict((s, f) for f, s in m.cell_faces(1)[:2])[-1]
    assert f0 == f1
    face = m.face(f0)
    assert (face.minus_cell, face.plus_cell) == (0, 1) and not face.is_boundary


def test_cell_faces_out_of_range():
    m = unit_cube_mesh(2)
    with pytest.raises(IndexError):
        m.cell_faces(8)
    with pytest.raises(IndexError):
        m.face(m.nfaces)


@given(st.integers(2, 3).flatmap(lambda d: st.tuples(st.just(d), st.lists(st.integers(1, 4), min_size=d, max_size=d))))
@settings(max_examples=30, deadline=None)
def test_interior_faces_shared_with_opposite_signs(arg):
    dim, counts = arg
    m = build_mesh(dim, counts)
    seen = {}
    for c in range(m.ncells):
        for f, s in m.cell_faces(c):
            seen.setdefault(f, []).append((c, s))
    assert len(seen) == m.nfaces
    for f, uses in seen.items():
        face = m.face(f)
        if face.is_boundary:
            assert len(uses) == 1
            assert (face.minus_cell is None) != (face.plus_cell is None)
        else:
            assert sorted(s for _, s in uses) == [-1, 1]
            by_sign = dict((s, c) for c, s in uses)
            assert (by_sign[1], by_sign[-1]) == (face.minus_cell, face.plus_cell)
    faces, signs = m.cell_face_table
    for c in range(m.ncells):
        assert [tuple(x) for x in zip(faces[c], signs[c])] == [(f, s) for f, s in m.cell_faces(c)]


def _membership_oracle(center):
    lo1 = all(0.25 <= x <= 0.5 for x in center)
    lo2 = all(0.5 <= x <= 0.75 for x in center)
    return lo1 or lo2


def test_soft_hard_flat_case():
    c = soft_hard_coefficients(unit_cube_mesh(4), 0)
    assert np.all(c.beta == 1.0) and np.all(c.alpha == 1.0)


def test_soft_hard_4cubed():
    m = unit_cube_mesh(4)
    c = soft_hard_coefficients(m, 4)
    marked = np.flatnonzero(c.beta == 1e4)
    expect = [i for i, ijk in enumerate(itertools.product(range(4), repeat=3))
              if _membership_oracle([(v + 0.5) / 4 for v in ijk[::-1]])]
    assert marked.tolist() == expect
    assert marked.size == 2


def test_soft_hard_8cubed_count():
    assert int(np.sum(soft_hard_coefficients(unit_cube_mesh(8), -4).beta != 1.0)) == 16


def test_soft_hard_warns_outside_sweep():
    with pytest.warns(UserWarning):
        soft_hard_coefficients(unit_cube_mesh(2), 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        soft_hard_coefficients(unit_cube_mesh(2), 8)


def test_coefficients_validation():
    with pytest.raises(ValueError):
        CellCoefficients(np.array([1.0]), np.array([0.0]))
    with pytest.raises(ValueError):
        CellCoefficients(np.array([1.0, np.inf]), np.array([1.0, 1.0]))


def test_coefficient_file_round_trip(tmp_path):
    c = CellCoefficients(np.array([1.0, 2.5]), np.array([1e-8, 3.0]))
    path = tmp_path / "coef.txt"
    write_coefficients(path, c)
    back = read_coefficients(path, 2)
    np.testing.assert_array_equal(back.alpha, c.alpha)
    np.testing.assert_array_equal(back.beta, c.beta)
    path.write_text("0 1 1\n2 1 1\n")
    with pytest.raises(FormatError) as info:
        read_coefficients(path, 2)
    assert info.value.line == 2
