# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for SRP hashing and bucket accumulation.

Mirrors ``_kernels_py`` exactly. Projections come from the same BLAS matmul
on the same point chunks in both backends, so the sign bits, and with them
the bucket codes, agree bit-for-bit. Accumulation is point-major in both.
No fast-math.
"""
import numpy as np

from libc.stdint cimport int64_t

from nwsketch._kernels_py import PROJECTION_CHUNK


def srp_codes(X, P, Py_ssize_t rows, Py_ssize_t bits):
    X = np.asarray(X, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0]
    if P.shape[0] != rows * bits or P.shape[1] != X.shape[1]:
        raise ValueError("projection matrix shape does not match rows*bits x dim")
    out = np.empty((n, rows), dtype=np.int64)
    cdef int64_t[:, ::1] codes = out
    cdef const double[:, ::1] proj
    cdef Py_ssize_t start, m, i, r, j, base
    cdef int64_t code
    PT = P.T
    for start in range(0, n, PROJECTION_CHUNK):
        proj = np.ascontiguousarray(np.dot(X[start : start + PROJECTION_CHUNK], PT))
        m = proj.shape[0]
        with nogil:
            for i in range(m):
                for r in range(rows):
                    code = 0
                    base = r * bits
                    for j in range(bits):
                        if proj[i, base + j] >= 0.0:
                            code = code | ((<int64_t>1) << j)
                    codes[start + i, r] = code
    return out


def scatter_add(double[:, ::1] cells, const int64_t[:, ::1] codes, const double[::1] values):
    cdef Py_ssize_t n = codes.shape[0]
    cdef Py_ssize_t rows = codes.shape[1]
    cdef Py_ssize_t width = cells.shape[1]
    cdef Py_ssize_t i, r
    cdef int64_t c
    if cells.shape[0] != rows or values.shape[0] != n:
        raise ValueError("shape mismatch between cells, codes and values")
    with nogil:
        for i in range(n):
            for r in range(rows):
                c = codes[i, r]
                if c < 0 or c >= width:
                    with gil:
                        raise IndexError(f"bucket {c} out of range for width {width}")
                cells[r, c] += values[i]


def gather(const double[:, ::1] cells, const int64_t[:, ::1] codes):
    cdef Py_ssize_t n = codes.shape[0]
    cdef Py_ssize_t rows = codes.shape[1]
    cdef Py_ssize_t width = cells.shape[1]
    cdef Py_ssize_t i, r
    cdef int64_t c
    if cells.shape[0] != rows:
        raise ValueError("shape mismatch between cells and codes")
    out = np.empty((n, rows), dtype=np.float64)
    cdef double[:, ::1] vals = out
    with nogil:
        for i in range(n):
            for r in range(rows):
                c = codes[i, r]
                if c < 0 or c >= width:
                    with gil:
                        raise IndexError(f"bucket {c} out of range for width {width}")
                vals[i, r] = cells[r, c]
    return out
