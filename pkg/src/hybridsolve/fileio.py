"""Plain-text file formats: Matrix Market, element block files, vectors.

Floating point values are written with 17 significant digits, which
round-trips IEEE doubles exactly.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import FormatError
from .sparse import CsrMatrix, ElementBlockOperator

MM_COORD_HEADER = "%%MatrixMarket matrix coordinate real general"
MM_ARRAY_HEADER = "%%MatrixMarket matrix array real general"
BLOCK_HEADER = "%hybridsolve element-blocks v1"


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_matrix_market(path, a: CsrMatrix, comment: str | None = None):
    rows = a.row_indices()
    with open(path, "w") as fh:
        fh.write(MM_COORD_HEADER + "\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{a.nrows} {a.ncols} {a.nnz}\n")
        for r, c, v in zip(rows, a.col_indices, a.values):
            fh.write(f"{r + 1} {c + 1} {_fmt(v)}\n")


def write_vector(path, x, comment: str | None = None):
    """Dense column vector in Matrix Market array format."""
    x = np.asarray(x, dtype=np.float64).ravel()
    with open(path, "w") as fh:
        fh.write(MM_ARRAY_HEADER + "\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{x.size} 1\n")
        for v in x:
            fh.write(_fmt(v) + "\n")


def _data_lines(path):
    """Yield (line_number, stripped_text) skipping comments and blanks."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("%"):
                continue
            yield lineno, s


def _read_header(path):
    with open(path) as fh:
        first = fh.readline()
    if not first:
        raise FormatError("empty file", line=1, path=path)
    tokens = first.strip().lower().split()
    if len(tokens) != 5 or tokens[0] != "%%matrixmarket" or tokens[1] != "matrix":
        raise FormatError(f"bad Matrix Market header {first.strip()!r}", line=1, path=path)
    fmt, field, symmetry = tokens[2:]
    if fmt not in ("coordinate", "array") or field not in ("real", "integer", "double") or symmetry != "general":
        raise FormatError(f"unsupported Matrix Market variant {first.strip()!r}", line=1, path=path)
    return fmt


def _parse_number(tok, lineno, path, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise FormatError(f"cannot parse {tok!r} as {kind.__name__}", line=lineno, path=path) from None


def read_matrix_market(path) -> CsrMatrix:
    fmt = _read_header(path)
    lines = _data_lines(path)
    try:
        lineno, size = next(lines)
    except StopIteration:
        raise FormatError("missing size line", path=path) from None
    parts = size.split()
    if fmt == "array":
        if len(parts) != 2:
            raise FormatError("array size line needs 2 integers", line=lineno, path=path)
        nr, nc = (_parse_number(t, lineno, path, int) for t in parts)
        vals = []
        for lineno, s in lines:
            vals.append(_parse_number(s, lineno, path))
        if len(vals) != nr * nc:
            raise FormatError(f"expected {nr * nc} values, found {len(vals)}", path=path)
        dense = np.array(vals, dtype=np.float64).reshape(nc, nr).T
        return CsrMatrix.from_dense(dense, drop_zeros=False)
    if len(parts) != 3:
        raise FormatError("coordinate size line needs 3 integers", line=lineno, path=path)
    nr, nc, nnz = (_parse_number(t, lineno, path, int) for t in parts)
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    k = 0
    for lineno, s in lines:
        t = s.split()
        if len(t) != 3:
            raise FormatError("coordinate entry needs 'row col value'", line=lineno, path=path)
        if k >= nnz:
            raise FormatError(f"more than {nnz} entries", line=lineno, path=path)
        i = _parse_number(t[0], lineno, path, int)
        j = _parse_number(t[1], lineno, path, int)
        if not (1 <= i <= nr and 1 <= j <= nc):
            raise FormatError(f"index ({i}, {j}) outside {nr}x{nc}", line=lineno, path=path)
        rows[k], cols[k], vals[k] = i - 1, j - 1, _parse_number(t[2], lineno, path)
        k += 1
    if k != nnz:
        raise FormatError(f"expected {nnz} entries, found {k}", path=path)
    if not np.all(np.isfinite(vals)):
        raise FormatError("non-finite value", path=path)
    return CsrMatrix.from_coo(rows, cols, vals, (nr, nc))


def read_vector(path) -> np.ndarray:
    m = read_matrix_market(path)
    if m.ncols != 1:
        raise FormatError(f"expected a column vector, got {m.nrows}x{m.ncols}", path=path)
    out = np.zeros(m.nrows)
    out[m.row_indices()] = m.values
    return out


def write_blocks(path, op: ElementBlockOperator):
    """Element block file.

    Layout after the header line::

        nblocks <N>
        block <size>
        <global_0> <sign_0>     (size lines)
        <row 0 entries>         (size lines, row-major)
    """
    with open(path, "w") as fh:
        fh.write(BLOCK_HEADER + "\n")
        fh.write(f"nblocks {op.nblocks}\n")
        for (idx, sgn), mat in zip(op.dof_maps, op.matrices):
            fh.write(f"block {idx.size}\n")
            for g, s in zip(idx, sgn):
                fh.write(f"{g} {int(s):+d}\n")
            for row in mat:
                fh.write(" ".join(_fmt(v) for v in row) + "\n")


def read_blocks(path) -> ElementBlockOperator:
    with open(path) as fh:
        first = fh.readline().strip()
    if first != BLOCK_HEADER:
        raise FormatError(f"bad block file header {first!r}", line=1, path=path)
    lines = _data_lines(path)

    def take(expect):
        try:
            lineno, s = next(lines)
        except StopIteration:
            raise FormatError(f"unexpected end of file, expected {expect}", path=path) from None
        return lineno, s

    lineno, s = take("nblocks")
    t = s.split()
    if len(t) != 2 or t[0] != "nblocks":
        raise FormatError("expected 'nblocks <N>'", line=lineno, path=path)
    nblocks = _parse_number(t[1], lineno, path, int)
    maps, mats = [], []
    for _ in range(nblocks):
        lineno, s = take("block")
        t = s.split()
        if len(t) != 2 or t[0] != "block":
            raise FormatError("expected 'block <size>'", line=lineno, path=path)
        size = _parse_number(t[1], lineno, path, int)
        idx = np.empty(size, dtype=np.int64)
        sgn = np.empty(size)
        for k in range(size):
            lineno, s = take("dof entry")
            t = s.split()
            if len(t) != 2:
                raise FormatError("dof entry needs 'index sign'", line=lineno, path=path)
            idx[k] = _parse_number(t[0], lineno, path, int)
            sgn[k] = _parse_number(t[1], lineno, path, int)
            if idx[k] < 0 or sgn[k] not in (1.0, -1.0):
                raise FormatError("dof index must be >= 0 and sign +1/-1", line=lineno, path=path)
        mat = np.empty((size, size))
        for k in range(size):
            lineno, s = take("matrix row")
            t = s.split()
            if len(t) != size:
                raise FormatError(f"matrix row needs {size} values", line=lineno, path=path)
            mat[k] = [_parse_number(v, lineno, path) for v in t]
        maps.append((idx, sgn))
        mats.append(mat)
    for lineno, s in lines:
        raise FormatError("trailing content after last block", line=lineno, path=path)
    return ElementBlockOperator(tuple(maps), tuple(mats))


def write_plain_vector(path, x):
    """One value per line; used for solution output."""
    x = np.asarray(x, dtype=np.float64).ravel()
    with open(path, "w") as fh:
        for v in x:
            fh.write(_fmt(v) + "\n")


def read_plain_vector(path) -> np.ndarray:
    vals = []
    for lineno, s in _data_lines(path):
        vals.append(_parse_number(s, lineno, path))
    return np.array(vals, dtype=np.float64)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
