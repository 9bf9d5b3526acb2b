import numpy as np
import pytest

from nwsketch import _backend
from nwsketch._backend import available_backends
from nwsketch._kernels_py import PROJECTION_CHUNK


def brute_codes(X, P, rows, bits):
    out = np.zeros((len(X), rows), dtype=np.int64)
    for i, x in enumerate(X):
        for r in range(rows):
            code = 0
            for j in range(bits):
                if sum(P[r * bits + j, k] * x[k] for k in range(len(x))) >= 0:
                    code |= 1 << j
            out[i, r] = code
    return out


@pytest.fixture
def problem(rng):
    rows, bits, d = 7, 5, 6
    X = rng.standard_normal((40, d))
    P = rng.standard_normal((rows * bits, d))
    return X, P, rows, bits


@pytest.mark.parametrize("name", sorted(available_backends()))
def test_codes_match_brute_force(name, problem):
    k = available_backends()[name]
    X, P, rows, bits = problem
    np.testing.assert_array_equal(k.srp_codes(X, P, rows, bits), brute_codes(X, P, rows, bits))


@pytest.mark.parametrize("name", sorted(available_backends()))
def test_scatter_then_gather(name, problem, rng):
    k = available_backends()[name]
    X, P, rows, bits = problem
    codes = k.srp_codes(X, P, rows, bits)
    values = rng.integers(-5, 5, size=len(X)).astype(float)
    cells = np.zeros((rows, 1 << bits))
    k.scatter_add(cells, codes, values)
    expected = np.zeros_like(cells)
    for i in range(len(X)):
        for r in range(rows):
            expected[r, codes[i, r]] += values[i]
    np.testing.assert_array_equal(cells, expected)
    np.testing.assert_array_equal(k.gather(cells, codes), expected[np.arange(rows), codes])


@pytest.mark.parametrize("name", sorted(available_backends()))
def test_out_of_range_code_rejected(name):
    k = available_backends()[name]
    cells = np.zeros((2, 4))
    with pytest.raises(IndexError):
        k.scatter_add(cells, np.array([[0, 4]], dtype=np.int64), np.ones(1))
    with pytest.raises(IndexError):
        k.gather(cells, np.array([[-1, 0]], dtype=np.int64))


def test_backends_agree_bitwise(rng):
    backends = available_backends()
    if len(backends) < 2:
        pytest.skip("compiled extension not built")
    # more points than one projection chunk, so chunk boundaries are crossed
    n = PROJECTION_CHUNK + 300
    X = rng.standard_normal((n, 12))
    X[:10] = 0.0  # exact ties
    P = rng.standard_normal((30 * 8, 12))
    values = rng.standard_normal(n)
    outs = {}
    for name, k in backends.items():
        codes = k.srp_codes(X, P, 30, 8)
        cells = np.zeros((30, 256))
        k.scatter_add(cells, codes, values)
        outs[name] = (codes, cells, k.gather(cells, codes))
    a, b = outs["python"], outs["cython"]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_selected_backend_is_known():
    assert _backend.BACKEND in available_backends()
