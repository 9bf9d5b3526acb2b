"""Repeated arrays of accumulators indexed by LSH codes (RACE sketch).

Row ``r`` of an ``R x W`` array is addressed by hash function ``h_r``.
Inserting ``x`` with value ``v`` adds ``v`` to ``cells[r, h_r(x)]`` for every
row; retrieving ``q`` reads ``cells[r, h_r(q)]``. With unit values the
expected retrieved value is the kernel sum ``sum_i k(x_i, q)``.

Thread safety: every sketch owns a lock. Writers (``increment``, ``merge``
into, ``scale``) and readers (``retrieve``) both take it, so a reader always
observes the cells between two whole increments, never half of a batch.
Callers may share one sketch between threads without extra locking.

Snapshot format (little endian)::

    magic      8s   b"NWSRACE\\0"
    version    u16
    bits       u16
    rows       u32
    width      u32
    dim        u32
    seed       u64  master seed of the hash family
    count      u64  insert_count
    crc        u32  CRC-32 of the preceding 40 header bytes
    cells      rows * width float64, row-major
"""
import io
import struct
import threading
import zlib

import numpy as np

from nwsketch._backend import kernels
from nwsketch.lsh import HashBank, LshFamilySpec

MAX_SKETCH_BITS = 24
SNAPSHOT_MAGIC = b"NWSRACE\x00"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<8sHHIIIQQ")
_CRC = struct.Struct("<I")


class SnapshotError(ValueError):
    """Raised when a snapshot is truncated, corrupted or incompatible."""


def estimate_mean(row_values):
    """Average retrieved values over rows (the last axis)."""
    row_values = np.asarray(row_values, dtype=np.float64)
    if row_values.shape[-1] < 1:
        raise ValueError("need at least one row value")
    return row_values.sum(axis=-1) / row_values.shape[-1]


def group_bounds(R, m):
    """Start offsets and sizes of ``m`` contiguous groups over ``R`` rows.

    Sizes differ by at most one; the first ``R % m`` groups get the extra row.
    """
    base, extra = divmod(R, m)
    sizes = np.full(m, base, dtype=np.int64)
    sizes[:extra] += 1
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    return starts, sizes


def estimate_mom(row_values, m):
    """Median of the means of ``m`` contiguous row groups.

    With an even ``m`` the two central group means are averaged.
    """
    row_values = np.asarray(row_values, dtype=np.float64)
    R = row_values.shape[-1]
    m = int(m)
    if m < 1 or m > R:
        raise ValueError(f"group count must be in [1, {R}], got {m}")
    if m == 1:
        return estimate_mean(row_values)
    starts, sizes = group_bounds(R, m)
    means = np.add.reduceat(row_values, starts, axis=-1) / sizes
    return np.median(means, axis=-1)


def default_groups(R):
    return min(R, 9)


class RaceSketch:
    """``R x W`` accumulator array, ``W = 2**bits``.

    Parameters
    ----------
    spec : LshFamilySpec
        Hash family; ``spec.bits`` fixes the width.
    rows : int
        Number of rows ``R`` (one hash function each).
    bank : HashBank, optional
        Pre-built hashers to share with another sketch. Must match ``spec``.
    """

    def __init__(self, spec, rows, bank=None):
        if not 1 <= spec.bits <= MAX_SKETCH_BITS:
            raise ValueError(f"sketch width 2**bits requires bits in [1, {MAX_SKETCH_BITS}]")
        rows = int(rows)
        if rows < 1:
            raise ValueError(f"rows must be positive, got {rows}")
        if bank is None:
            bank = HashBank.from_spec(spec, rows)
        elif bank.rows != rows or bank.bits != spec.bits or bank.dim != spec.dim:
            raise ValueError("hash bank does not match the requested sketch shape")
        self.spec = spec
        self.bank = bank
        self.cells = np.zeros((rows, 1 << spec.bits), dtype=np.float64)
        self.insert_count = 0
        self._lock = threading.RLock()

    @property
    def rows(self):
        return self.cells.shape[0]

    @property
    def width(self):
        return self.cells.shape[1]

    @property
    def dim(self):
        return self.spec.dim

    def add_codes(self, codes, values, count=True):
        """Accumulate pre-computed ``(n, R)`` bucket codes. Used by paired sketches."""
        values = np.ascontiguousarray(values, dtype=np.float64)
        with self._lock:
            kernels.scatter_add(self.cells, codes, values)
            if count:
                self.insert_count += len(values)

    def increment_many(self, X, values=1.0, count=True):
        X = np.asarray(X, dtype=np.float64)
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), (len(np.atleast_2d(X)),))
        self.add_codes(self.bank.codes(X), values, count=count)

    def increment(self, x, value=1.0, count=True):
        """Add ``value`` to ``cells[r, h_r(x)]`` in every row.

        ``count`` controls whether ``insert_count`` advances; pass ``False``
        when the call adjusts a value rather than inserting a new point.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("increment expects a single vector; use increment_many")
        self.add_codes(self.bank.codes(x), np.array([value], dtype=np.float64), count=count)

    def retrieve_codes(self, codes):
        with self._lock:
            return kernels.gather(self.cells, codes)

    def retrieve_many(self, Q):
        return self.retrieve_codes(self.bank.codes(Q))

    def retrieve(self, q):
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 1:
            raise ValueError("retrieve expects a single vector; use retrieve_many")
        return self.retrieve_many(q)[0]

    def query(self, q, estimator="mean", groups=None):
        values = self.retrieve_many(q) if np.ndim(q) == 2 else self.retrieve(q)
        if estimator == "mean":
            return estimate_mean(values)
        return estimate_mom(values, groups or default_groups(self.rows))

    def scale(self, gamma):
        """Multiply every cell by ``gamma``."""
        with self._lock:
            self.cells *= gamma

    def compatible(self, other):
        return (
            self.spec == other.spec
            and self.cells.shape == other.cells.shape
            and self.bank.same_functions(other.bank)
        )

    def merge(self, other):
        """Return a new sketch holding the cell-wise sum of ``self`` and ``other``."""
        if not isinstance(other, RaceSketch) or not self.compatible(other):
            raise ValueError("can only merge sketches with identical shape and hash functions")
        out = RaceSketch(self.spec, self.rows, bank=self.bank)
        with self._lock:
            out.cells += self.cells
            out.insert_count = self.insert_count
        with other._lock:
            out.cells += other.cells
            out.insert_count += other.insert_count
        return out

    def copy(self):
        out = RaceSketch(self.spec, self.rows, bank=self.bank)
        with self._lock:
            out.cells[...] = self.cells
            out.insert_count = self.insert_count
        return out

    # -- snapshots ---------------------------------------------------------

    def write(self, fh):
        with self._lock:
            header = _HEADER.pack(
                SNAPSHOT_MAGIC,
                SNAPSHOT_VERSION,
                self.spec.bits,
                self.rows,
                self.width,
                self.spec.dim,
                self.spec.seed,
                self.insert_count,
            )
            fh.write(header)
            fh.write(_CRC.pack(zlib.crc32(header)))
            fh.write(self.cells.astype("<f8", copy=False).tobytes(order="C"))

    @classmethod
    def read(cls, fh, bank=None):
        raw = fh.read(_HEADER.size + _CRC.size)
        if len(raw) != _HEADER.size + _CRC.size:
            raise SnapshotError("truncated sketch header")
        header, crc_bytes = raw[: _HEADER.size], raw[_HEADER.size :]
        if zlib.crc32(header) != _CRC.unpack(crc_bytes)[0]:
            raise SnapshotError("sketch header checksum mismatch")
        magic, version, bits, rows, width, dim, seed, count = _HEADER.unpack(header)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotError(f"bad magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(f"unsupported snapshot version {version}")
        if width != 1 << bits:
            raise SnapshotError(f"width {width} inconsistent with {bits} bits")
        nbytes = rows * width * 8
        payload = fh.read(nbytes)
        if len(payload) != nbytes:
            raise SnapshotError("truncated sketch payload")
        spec = LshFamilySpec(bits=bits, dim=dim, seed=seed)
        sketch = cls(spec, rows, bank=bank)
        sketch.cells[...] = np.frombuffer(payload, dtype="<f8").reshape(rows, width)
        sketch.insert_count = count
        return sketch

    def to_bytes(self):
        buf = io.BytesIO()
        self.write(buf)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data):
        buf = io.BytesIO(data)
        sketch = cls.read(buf)
        if buf.read(1):
            raise SnapshotError("trailing bytes after sketch payload")
        return sketch

    def save(self, path):
        with open(path, "wb") as fh:
            self.write(fh)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def __repr__(self):
        return f"RaceSketch(rows={self.rows}, width={self.width}, dim={self.dim}, inserts={self.insert_count})"
