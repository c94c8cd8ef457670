import numpy as np
import pytest

from hybridsolve import fileio
from hybridsolve.errors import FormatError
from hybridsolve.sparse import CsrMatrix, ElementBlockOperator, to_dense


def test_matrix_market_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(0)
    dense = rng.standard_normal((5, 4)) * (rng.random((5, 4)) < 0.6)
    dense[0, 0] = 1.0 / 3.0
    path = tmp_path / "a.mtx"
    fileio.write_matrix_market(path, CsrMatrix.from_dense(dense), comment="test")
    back = fileio.read_matrix_market(path)
    assert back.shape == (5, 4)
    np.testing.assert_array_equal(to_dense(back), dense)


def test_matrix_market_is_one_based_and_sorted(tmp_path):
    path = tmp_path / "a.mtx"
    fileio.write_matrix_market(path, CsrMatrix.from_coo([1, 0], [0, 1], [2.0, 1.0], (2, 2)))
    lines = path.read_text().splitlines()
    assert lines[0].startswith("%%MatrixMarket matrix coordinate real general")
    assert lines[-2:] == ["1 2 1", "2 1 2"]


def test_vector_round_trip(tmp_path):
    x = np.array([0.1, -2.5e-300, 1e300, 0.0])
    path = tmp_path / "x.mtx"
    fileio.write_vector(path, x)
    np.testing.assert_array_equal(fileio.read_vector(path), x)


def test_blocks_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    op = ElementBlockOperator(
        ((np.array([0, 2]), np.array([1.0, -1.0])), (np.array([1, 2, 3]), np.array([-1.0, 1.0, 1.0]))),
        (rng.standard_normal((2, 2)), rng.standard_normal((3, 3))),
    )
    path = tmp_path / "blocks.txt"
    fileio.write_blocks(path, op)
    back = fileio.read_blocks(path)
    for (i0, s0), (i1, s1) in zip(op.dof_maps, back.dof_maps):
        np.testing.assert_array_equal(i0, i1)
        np.testing.assert_array_equal(s0, s1)
    for m0, m1 in zip(op.matrices, back.matrices):
        np.testing.assert_array_equal(m0, m1)


@pytest.mark.parametrize(
    "text, line",
    [
        ("%%MatrixMarket matrix foo\n", 1),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1.0\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n", None),
    ],
)
def test_malformed_matrix_market(tmp_path, text, line):
    path = tmp_path / "bad.mtx"
    path.write_text(text)
    with pytest.raises(FormatError) as info:
        fileio.read_matrix_market(path)
    if line is not None:
        assert info.value.line == line


def test_malformed_blocks(tmp_path):
    path = tmp_path / "b.txt"
    path.write_text("%hybridsolve element-blocks v1\nnblocks 1\nblock 1\n0 +2\n1.0\n")
    with pytest.raises(FormatError) as info:
        fileio.read_blocks(path)
    assert info.value.line == 4
    path.write_text("not a block file\n")
    with pytest.raises(FormatError):
        fileio.read_blocks(path)


def test_plain_vector(tmp_path):
    path = tmp_path / "x.txt"
    fileio.write_plain_vector(path, [1.0, 2.0 / 3.0])
    np.testing.assert_array_equal(fileio.read_plain_vector(path), [1.0, 2.0 / 3.0])
