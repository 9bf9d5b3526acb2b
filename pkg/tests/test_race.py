import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nwsketch.lsh import LshFamilySpec, kernel_matrix
from nwsketch.race import RaceSketch, SnapshotError, estimate_mean, estimate_mom, group_bounds


def make(rows=5, bits=4, dim=3, seed=1):
    return RaceSketch(LshFamilySpec(bits=bits, dim=dim, seed=seed), rows)


def histogram_oracle(sketch, X, values):
    """Per-row bucket sums computed one hasher at a time."""
    out = np.zeros((sketch.rows, sketch.width))
    for r, h in enumerate(sketch.bank.hashers):
        for x, v in zip(X, values):
            out[r, h.hash(x)] += v
    return out


def test_single_insertion(backend):
    sk = make()
    x = np.array([0.3, -1.0, 2.0])
    sk.increment(x, 1.0)
    assert np.all((sk.cells == 0) | (sk.cells == 1))
    np.testing.assert_array_equal(sk.cells.sum(axis=1), np.ones(sk.rows))
    assert sk.insert_count == 1


def test_additivity(backend):
    sk = make()
    x = np.array([0.3, -1.0, 2.0])
    sk.increment(x, 2.5)
    sk.increment(x, -0.5, count=False)
    np.testing.assert_array_equal(sk.retrieve(x), np.full(sk.rows, 2.0))
    assert sk.insert_count == 1


def test_count_oracle(backend, rng):
    sk = make(rows=6, bits=5, dim=4)
    X = rng.standard_normal((1000, 4))
    sk.increment_many(X, 1.0)
    np.testing.assert_array_equal(sk.cells, histogram_oracle(sk, X, np.ones(1000)))
    np.testing.assert_array_equal(sk.cells.sum(axis=1), np.full(sk.rows, 1000.0))
    assert sk.insert_count == 1000


def test_retrieve_empty_and_self(backend):
    sk = make()
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(sk.retrieve(x), np.zeros(sk.rows))
    sk.increment(x)
    np.testing.assert_array_equal(sk.retrieve(x), np.ones(sk.rows))


def test_retrieve_does_not_modify(rng):
    sk = make()
    sk.increment_many(rng.standard_normal((20, 3)))
    before = sk.cells.copy()
    sk.retrieve_many(rng.standard_normal((5, 3)))
    np.testing.assert_array_equal(sk.cells, before)


def test_retrieve_mean_converges_to_kernel(rng):
    x = np.array([1.0, 0.5, -0.2])
    q = np.array([0.8, 0.9, 0.1])
    sk = RaceSketch(LshFamilySpec(bits=3, dim=3, seed=11), 2000)
    sk.increment(x)
    assert abs(estimate_mean(sk.retrieve(q)) - kernel_matrix(q[None], x[None], 3)[0, 0]) <= 0.03


def test_dimension_mismatch():
    sk = make(dim=3)
    with pytest.raises(ValueError):
        sk.increment(np.ones(4))
    with pytest.raises(ValueError):
        sk.retrieve(np.ones(2))


def test_estimate_mean_examples(rng):
    assert estimate_mean([1, 1, 1]) == 1.0
    assert estimate_mean([0, 2]) == 1.0
    v = rng.standard_normal(37)
    naive = 0.0
    for a in v:
        naive += a
    assert estimate_mean(v) == pytest.approx(naive / 37, rel=1e-14, abs=1e-15)


def test_estimate_mom_examples():
    v = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0])
    assert estimate_mom(v, 1) == estimate_mean(v)
    assert estimate_mom([0, 0, 0, 100, 0, 0], 3) == 0.0
    assert estimate_mom(v, 6) == np.median(v)
    # even group count averages the two central means
    assert estimate_mom([1.0, 2.0, 10.0, 20.0], 4) == 6.0


def test_mom_rejects_bad_groups():
    with pytest.raises(ValueError):
        estimate_mom([1.0, 2.0], 3)
    with pytest.raises(ValueError):
        estimate_mom([1.0, 2.0], 0)


def test_group_bounds_balanced():
    starts, sizes = group_bounds(10, 3)
    assert sizes.tolist() == [4, 3, 3]
    assert starts.tolist() == [0, 4, 7]


def test_mom_vectorised_matches_rowwise(rng):
    V = rng.standard_normal((8, 23))
    out = estimate_mom(V, 5)
    for i in range(8):
        assert out[i] == estimate_mom(V[i], 5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50))
def test_mom_single_group_equals_mean(values):
    assert estimate_mom(values, 1) == estimate_mean(values)


def test_merge(backend, rng):
    X = rng.standard_normal((300, 3))
    vals = rng.integers(-8, 8, size=300) / 4.0
    whole = make(rows=7)
    whole.increment_many(X, vals)
    a, b = make(rows=7), make(rows=7)
    a.increment_many(X[:120], vals[:120])
    b.increment_many(X[120:], vals[120:])
    ab, ba = a.merge(b), b.merge(a)
    np.testing.assert_array_equal(ab.cells, whole.cells)
    np.testing.assert_array_equal(ab.cells, ba.cells)
    assert ab.insert_count == 300
    np.testing.assert_array_equal(a.merge(make(rows=7)).cells, a.cells)
    q = rng.standard_normal((10, 3))
    np.testing.assert_array_equal(ab.retrieve_many(q), a.retrieve_many(q) + b.retrieve_many(q))


def test_merge_rejects_mismatch():
    with pytest.raises(ValueError):
        make(rows=5).merge(make(rows=6))
    with pytest.raises(ValueError):
        make(seed=1).merge(make(seed=2))


def test_unbiased_kernel_sum(rng):
    X = rng.standard_normal((100, 4))
    Q = rng.standard_normal((3, 4))
    truth = kernel_matrix(Q, X, 4).sum(axis=1)
    est = []
    for s in range(50):
        sk = RaceSketch(LshFamilySpec(bits=4, dim=4, seed=1000 + s), 200)
        sk.increment_many(X)
        est.append(estimate_mean(sk.retrieve_many(Q)))
    est = np.array(est)
    se = est.std(axis=0, ddof=1) / np.sqrt(50)
    assert np.all(np.abs(est.mean(axis=0) - truth) <= 3 * se)


def test_snapshot_round_trip(tmp_path, rng):
    sk = make(rows=4, bits=6, dim=5, seed=2**63 + 5)
    sk.increment_many(rng.standard_normal((50, 5)), rng.standard_normal(50))
    path = tmp_path / "s.bin"
    sk.save(path)
    back = RaceSketch.load(path)
    assert back.cells.tobytes() == sk.cells.tobytes()
    assert back.insert_count == 50 and back.spec == sk.spec
    assert back.bank.same_functions(sk.bank)


@pytest.mark.parametrize("offset", [0, 9, 10, 12, 16, 24, 30, 36])
def test_snapshot_header_corruption(offset):
    data = bytearray(make().to_bytes())
    data[offset] ^= 0xFF
    with pytest.raises(SnapshotError):
        RaceSketch.from_bytes(bytes(data))


def test_snapshot_truncation():
    data = make().to_bytes()
    with pytest.raises(SnapshotError):
        RaceSketch.from_bytes(data[:-8])
    with pytest.raises(SnapshotError):
        RaceSketch.from_bytes(data + b"\0")


def test_serialized_writer_concurrent_readers(rng):
    """One writer inserts whole batches while readers retrieve.

    Every batch adds one point per row, so a consistent read sees the same
    total in every row and never more than the final count.
    """
    sk = make(rows=8, bits=3, dim=3)
    X = rng.standard_normal((200, 3))
    errors = []
    done = threading.Event()

    def writer():
        try:
            for i in range(0, 200, 4):
                sk.increment_many(X[i : i + 4])
        finally:
            done.set()

    def reader():
        while not done.is_set():
            with sk._lock:
                totals = sk.cells.sum(axis=1)
            if not np.all(totals == totals[0]) or totals[0] % 4:
                errors.append(totals)
            sk.retrieve_many(X[:10])

    threads = [threading.Thread(target=writer)] + [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=30)
    assert not any(t.is_alive() for t in threads)
    assert not errors
    assert sk.insert_count == 200
    np.testing.assert_array_equal(sk.cells, histogram_oracle(sk, X, np.ones(200)))
