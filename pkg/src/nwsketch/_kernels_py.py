"""Pure numpy implementations of the sketch kernels.

Used when the compiled ``_kernels`` extension is unavailable or when
``NWSKETCH_PURE_PYTHON`` is set.
"""
import numpy as np

# Points projected per matmul call. Both backends use the same chunking so
# BLAS sees identical operand shapes and returns identical projections.
PROJECTION_CHUNK = 2048


def srp_codes(X, P, rows, bits):
    n, d = X.shape
    if P.shape != (rows * bits, d):
        raise ValueError("projection matrix shape does not match rows*bits x dim")
    place = np.left_shift(np.int64(1), np.arange(bits, dtype=np.int64))
    out = np.empty((n, rows), dtype=np.int64)
    for start in range(0, n, PROJECTION_CHUNK):
        signs = np.dot(X[start : start + PROJECTION_CHUNK], P.T) >= 0.0
        out[start : start + PROJECTION_CHUNK] = signs.reshape(-1, rows, bits) @ place
    return out


def scatter_add(cells, codes, values):
    rows, width = cells.shape
    n = codes.shape[0]
    if codes.shape[1] != rows or values.shape[0] != n:
        raise ValueError("shape mismatch between cells, codes and values")
    if n == 0:
        return
    if codes.min() < 0 or codes.max() >= width:
        raise IndexError(f"bucket out of range for width {width}")
    flat = codes + (np.arange(rows, dtype=np.int64) * width)[None, :]
    # np.add.at is unbuffered and walks indices in order, so each cell sums
    # its contributions point by point like the compiled loop.
    np.add.at(cells.reshape(-1), flat.ravel(), np.repeat(values, rows))


def gather(cells, codes):
    rows, width = cells.shape
    if codes.shape[1] != rows:
        raise ValueError("shape mismatch between cells and codes")
    if codes.size and (codes.min() < 0 or codes.max() >= width):
        raise IndexError(f"bucket out of range for width {width}")
    return cells[np.arange(rows)[None, :], codes]
