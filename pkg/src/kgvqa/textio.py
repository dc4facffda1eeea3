"""Plain-text matrix blocks used by every checkpoint format.

Floats are written with 17 significant digits, which round-trips IEEE
doubles exactly.
"""

import numpy as np

from .errors import DataError


def next_line(lines) -> str:
    line = next(lines, None)
    if line is None:
        raise DataError("checkpoint ends early")
    return line


def fmt(x) -> str:
    return "%.17g" % x


def write_rows(fh, matrix) -> None:
    matrix = np.atleast_2d(matrix)
    for row in matrix:
        fh.write(" ".join(fmt(v) for v in row) + "\n")


def read_rows(lines, n_rows, n_cols) -> np.ndarray:
    out = np.empty((n_rows, n_cols))
    for i in range(n_rows):
        vals = next_line(lines).split()
        if len(vals) != n_cols:
            raise DataError(f"expected {n_cols} values, got {len(vals)}")
        try:
            out[i] = [float(v) for v in vals]
        except ValueError as exc:
            raise DataError(str(exc)) from None
    return out


def write_named(fh, name, array) -> None:
    """``name ndim dims...`` then the array as 2-D rows (1-D arrays become one row)."""
    array = np.asarray(array, dtype=float)
    fh.write(f"{name} {array.ndim} {' '.join(map(str, array.shape))}\n")
    write_rows(fh, array.reshape(1, -1) if array.ndim <= 1 else array.reshape(array.shape[0], -1))


def read_named(lines):
    parts = next_line(lines).split()
    try:
        name, ndim, shape = parts[0], int(parts[1]), tuple(int(d) for d in parts[2:])
    except (IndexError, ValueError):
        raise DataError(f"bad array header {' '.join(parts)!r}") from None
    if len(shape) != ndim:
        raise DataError(f"bad header for {name}")
    if len(shape) <= 1:
        data = read_rows(lines, 1, shape[0] if shape else 1)
    else:
        data = read_rows(lines, shape[0], int(np.prod(shape[1:])))
    return name, data.reshape(shape)
