"""Nadaraya-Watson sketch: kernel regression with constant-time queries.

Two RACE sketches share one set of hash functions. The *top* sketch sums the
(clipped) responses landing in each bucket, the *bottom* sketch counts the
points. A query aggregates the retrieved top and bottom rows separately and
returns their ratio, which estimates

    f(q) = sum_i y_i k(q, x_i) / sum_i k(q, x_i)

for the SRP collision kernel ``k``. Aggregation happens before division;
dividing row by row and then aggregating is biased and is not offered.
"""
import io
import math
import struct
import threading
import zlib

import numpy as np

from nwsketch.lsh import HashBank, kernel_matrix
from nwsketch.race import (
    RaceSketch,
    SnapshotError,
    default_groups,
    estimate_mean,
    estimate_mom,
)

ESTIMATORS = ("mean", "mom")
NWS_MAGIC = b"NWSKETCH"
NWS_VERSION = 1
_NWS_HEADER = struct.Struct("<8sHdBId")
_CRC = struct.Struct("<I")


def rows_for_error(B, eps, delta):
    """Rows needed for additive error ``eps`` with failure probability ``delta``.

    ``ceil(32 B^2 (B+2)^2 / eps^2 * ln(1/delta))``; the ``B+2`` factor uses
    ``eps < 1``, so larger ``eps`` is rejected.
    """
    if B <= 0:
        raise ValueError("B must be positive")
    if not 0 < eps < 1:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    return math.ceil(rows_for_error_exact(B, eps, delta))


def rows_for_error_exact(B, eps, delta):
    """The row count before rounding up."""
    return 32.0 * B**2 * (B + 2.0) ** 2 / eps**2 * math.log(1.0 / delta)


def error_bound(B, delta, R):
    """High-probability error of an ``R``-row sketch: ``B sqrt(32 ln(1/delta) (B+1) / R)``."""
    if B <= 0 or R < 1 or not 0 < delta < 1:
        raise ValueError("need B > 0, R >= 1 and delta in (0, 1)")
    return B * math.sqrt(32.0 * math.log(1.0 / delta) * (B + 1.0) / R)


class NwSketch:
    """Paired weighted/unweighted RACE sketches.

    Parameters
    ----------
    spec : LshFamilySpec
    rows : int
        Number of hash functions ``R`` shared by both sketches.
    y_bound : float
        Responses are clipped to ``[-y_bound, y_bound]`` on insert.
    estimator : {"mean", "mom"}
        Row aggregation. ``"mom"`` is median-of-means over ``groups``
        contiguous row groups (default ``min(R, 9)``).
    decay : float
        Factor in ``(0, 1]`` applied to every cell by :meth:`apply_decay`.
    """

    def __init__(self, spec, rows, y_bound, estimator="mean", groups=None, decay=1.0, bank=None):
        if not y_bound > 0 or not math.isfinite(y_bound):
            raise ValueError(f"y_bound must be positive and finite, got {y_bound}")
        if estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
        if not 0 < decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {decay}")
        rows = int(rows)
        if groups is None:
            groups = default_groups(rows) if estimator == "mom" else 1
        if not 1 <= groups <= rows:
            raise ValueError(f"groups must be in [1, {rows}], got {groups}")
        bank = bank if bank is not None else HashBank.from_spec(spec, rows)
        self.top = RaceSketch(spec, rows, bank=bank)
        self.bottom = RaceSketch(spec, rows, bank=bank)
        self.spec = spec
        self.bank = bank
        self.y_bound = float(y_bound)
        self.estimator = estimator
        self.groups = int(groups)
        self.decay = float(decay)
        self._lock = threading.RLock()

    @property
    def rows(self):
        return self.top.rows

    @property
    def width(self):
        return self.top.width

    @property
    def hashers(self):
        return self.bank.hashers

    @property
    def insert_count(self):
        return self.bottom.insert_count

    def insert_many(self, X, y):
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if not np.isfinite(y).all():
            raise ValueError("responses must be finite")
        codes = self.bank.codes(X)
        if len(codes) != len(y):
            raise ValueError(f"got {len(codes)} vectors but {len(y)} responses")
        clipped = np.clip(y, -self.y_bound, self.y_bound)
        with self._lock:
            self.top.add_codes(codes, clipped)
            self.bottom.add_codes(codes, np.ones(len(y)))

    def insert(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("insert expects a single vector; use insert_many")
        self.insert_many(x[None, :], [y])

    def _aggregate(self, values):
        if self.estimator == "mean":
            return estimate_mean(values)
        return estimate_mom(values, self.groups)

    def components_many(self, Q):
        """Aggregated ``(top, bottom)`` estimates for each row of ``Q``."""
        codes = self.bank.codes(Q)
        with self._lock:
            t = self.top.retrieve_codes(codes)
            b = self.bottom.retrieve_codes(codes)
        return self._aggregate(t), self._aggregate(b)

    def query_many(self, Q):
        top, bottom = self.components_many(Q)
        out = np.zeros_like(top)
        ok = bottom > 0
        out[ok] = top[ok] / bottom[ok]
        return out

    def query(self, q):
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 1:
            raise ValueError("query expects a single vector; use query_many")
        return float(self.query_many(q[None, :])[0])

    def apply_decay(self, gamma=None):
        gamma = self.decay if gamma is None else gamma
        if gamma == 1.0:
            return
        with self._lock:
            self.top.scale(gamma)
            self.bottom.scale(gamma)

    # -- snapshots ---------------------------------------------------------

    def write(self, fh):
        with self._lock:
            header = _NWS_HEADER.pack(
                NWS_MAGIC,
                NWS_VERSION,
                self.y_bound,
                ESTIMATORS.index(self.estimator),
                self.groups,
                self.decay,
            )
            fh.write(header)
            fh.write(_CRC.pack(zlib.crc32(header)))
            self.top.write(fh)
            self.bottom.write(fh)

    @classmethod
    def read(cls, fh):
        raw = fh.read(_NWS_HEADER.size + _CRC.size)
        if len(raw) != _NWS_HEADER.size + _CRC.size:
            raise SnapshotError("truncated sketch header")
        header = raw[: _NWS_HEADER.size]
        if zlib.crc32(header) != _CRC.unpack(raw[_NWS_HEADER.size :])[0]:
            raise SnapshotError("sketch header checksum mismatch")
        magic, version, y_bound, est, groups, decay = _NWS_HEADER.unpack(header)
        if magic != NWS_MAGIC:
            raise SnapshotError(f"bad magic {magic!r}")
        if version != NWS_VERSION:
            raise SnapshotError(f"unsupported snapshot version {version}")
        if est >= len(ESTIMATORS):
            raise SnapshotError(f"unknown estimator code {est}")
        top = RaceSketch.read(fh)
        bottom = RaceSketch.read(fh, bank=top.bank)
        if bottom.spec != top.spec or bottom.rows != top.rows:
            raise SnapshotError("top and bottom sketches disagree on hash family")
        try:
            sketch = cls(top.spec, top.rows, y_bound, ESTIMATORS[est], groups, decay, bank=top.bank)
        except ValueError as exc:
            raise SnapshotError(str(exc)) from exc
        sketch.top, sketch.bottom = top, bottom
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
        return (
            f"NwSketch(rows={self.rows}, bits={self.spec.bits}, dim={self.spec.dim}, "
            f"y_bound={self.y_bound}, estimator={self.estimator!r}, inserts={self.insert_count})"
        )


def construct(dataset, spec, R, W=None, y_bound=1.0, **kwargs):
    """Build an :class:`NwSketch` from ``(x, y)`` pairs.

    ``dataset`` may be an iterable of pairs or an ``(X, y)`` tuple of arrays.
    ``W`` defaults to ``2**spec.bits`` and must equal it if given.
    """
    if W is not None and W != 1 << spec.bits:
        raise ValueError(f"width must be 2**bits = {1 << spec.bits}, got {W}")
    sketch = NwSketch(spec, R, y_bound, **kwargs)
    if isinstance(dataset, tuple) and len(dataset) == 2 and np.ndim(dataset[0]) == 2:
        X, y = dataset
    else:
        pairs = list(dataset)
        if not pairs:
            return sketch
        X = np.array([p[0] for p in pairs], dtype=np.float64)
        y = np.array([p[1] for p in pairs], dtype=np.float64)
    if len(y):
        sketch.insert_many(X, y)
    return sketch


class NwExactOracle:
    """Direct-summation Nadaraya-Watson regressor with the SRP collision kernel."""

    def __init__(self, bits, X, y, y_bound=None):
        self.bits = int(bits)
        self.X = np.asarray(X, dtype=np.float64).reshape(len(y), -1) if len(y) else np.zeros((0, 0))
        y = np.asarray(y, dtype=np.float64)
        self.y = np.clip(y, -y_bound, y_bound) if y_bound is not None else y

    def components_many(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if len(self.y) == 0:
            return np.zeros(len(Q)), np.zeros(len(Q))
        K = kernel_matrix(Q, self.X, self.bits)
        return K @ self.y, K.sum(axis=1)

    def predict_many(self, Q):
        top, bottom = self.components_many(Q)
        out = np.zeros_like(top)
        ok = bottom > 0
        out[ok] = top[ok] / bottom[ok]
        return out

    def predict(self, q):
        return float(self.predict_many(np.asarray(q, dtype=np.float64)[None, :])[0])


def oracle_predict(oracle, q):
    return oracle.predict(q)
