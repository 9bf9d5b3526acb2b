"""Sign random projection (SRP) hashing.

Each :class:`SrpHash` draws ``bits`` Gaussian hyperplanes and maps a vector
to the integer whose bit ``j`` is set when the vector lies on the
non-negative side of hyperplane ``j``. Two vectors at angle ``theta`` collide
on one bit with probability ``1 - theta/pi``, so the full code collides with
probability ``(1 - theta/pi) ** bits``; that is the kernel the sketches
estimate.

Randomness
----------
Every hasher is derived from a master seed with numpy's ``SeedSequence``:
hasher ``i`` uses ``SeedSequence(master_seed, spawn_key=(i,))``, from which a
64-bit seed is drawn and fed to a ``PCG64`` bit generator. Projections are
``Generator(PCG64(seed)).standard_normal((bits, dim))``. Both PCG64 and the
SeedSequence hashing are fully specified and platform independent, and the
spawn key only depends on the index, so spawning is prefix-stable.
"""
from dataclasses import dataclass

import numpy as np

from nwsketch._backend import kernels

MAX_CODE_BITS = 62


def _as_matrix(X, dim):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"expected vectors of dimension {dim}, got shape {np.shape(X)}")
    if not np.isfinite(X).all():
        raise ValueError("input vectors must be finite")
    if X.shape[0] and not X.any(axis=1).all():
        raise ValueError("zero vector has no direction and cannot be hashed")
    return X


def derive_seed(master_seed, index):
    """64-bit seed of the ``index``-th hasher spawned from ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def collision_kernel(x, y, bits):
    """Probability that a random ``bits``-bit SRP code collides on ``x`` and ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be vectors of equal dimension")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValueError("collision kernel is undefined for the zero vector")
    cos = np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0)
    theta = np.arccos(cos)
    return float((1.0 - theta / np.pi) ** bits)


def kernel_matrix(Q, X, bits):
    """Pairwise SRP collision kernel between rows of ``Q`` and rows of ``X``."""
    Q = np.asarray(Q, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    qn = np.linalg.norm(Q, axis=1)
    xn = np.linalg.norm(X, axis=1)
    if (qn == 0).any() or (xn == 0).any():
        raise ValueError("collision kernel is undefined for the zero vector")
    cos = np.clip((Q / qn[:, None]) @ (X / xn[:, None]).T, -1.0, 1.0)
    return (1.0 - np.arccos(cos) / np.pi) ** bits


@dataclass(frozen=True)
class LshFamilySpec:
    """Parameters that pin down a family of SRP hashers."""

    bits: int
    dim: int
    seed: int = 0
    kind: str = "srp"

    def __post_init__(self):
        if self.kind != "srp":
            raise ValueError(f"unsupported LSH family {self.kind!r}; only 'srp' is available")
        if not 1 <= self.bits <= MAX_CODE_BITS:
            raise ValueError(f"bits must be in [1, {MAX_CODE_BITS}], got {self.bits}")
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a non-negative 64-bit integer")


class SrpHash:
    """A single SRP hash function with a fixed projection matrix.

    Immutable after construction and safe to share between threads.
    """

    def __init__(self, projections, seed=None):
        projections = np.array(projections, dtype=np.float64, order="C")
        if projections.ndim != 2 or projections.shape[0] < 1:
            raise ValueError("projections must be a (bits, dim) matrix")
        if projections.shape[0] > MAX_CODE_BITS:
            raise ValueError(f"at most {MAX_CODE_BITS} bits are supported")
        projections.setflags(write=False)
        self.projections = projections
        self.seed = seed

    @classmethod
    def from_seed(cls, seed, bits, dim):
        rng = np.random.Generator(np.random.PCG64(int(seed)))
        return cls(rng.standard_normal((bits, dim)), seed=int(seed))

    @property
    def bits(self):
        return self.projections.shape[0]

    @property
    def dim(self):
        return self.projections.shape[1]

    @property
    def width(self):
        return 1 << self.bits

    def hash_many(self, X):
        X = _as_matrix(X, self.dim)
        return kernels.srp_codes(X, self.projections, 1, self.bits)[:, 0]

    def hash(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("hash expects a single vector; use hash_many for batches")
        return int(self.hash_many(x)[0])

    __call__ = hash

    def collision_kernel(self, x, y):
        return collision_kernel(x, y, self.bits)

    def __eq__(self, other):
        if not isinstance(other, SrpHash):
            return NotImplemented
        return np.array_equal(self.projections, other.projections)

    def __hash__(self):
        return hash(self.projections.tobytes())

    def __repr__(self):
        return f"SrpHash(bits={self.bits}, dim={self.dim}, seed={self.seed})"


def spawn_functions(spec, R):
    """Deterministically build ``R`` independent hashers from ``spec``.

    Hasher ``i`` depends only on ``(spec.seed, i, spec.bits, spec.dim)``, so
    ``spawn_functions(spec, 1)[0] == spawn_functions(spec, 3)[0]``.
    """
    R = int(R)
    if R < 1:
        raise ValueError(f"need at least one hash function, got R={R}")
    return [SrpHash.from_seed(derive_seed(spec.seed, i), spec.bits, spec.dim) for i in range(R)]


class HashBank:
    """``R`` hashers stacked into one projection matrix for batched hashing.

    ``codes(X)`` returns an ``(n, R)`` int64 array whose column ``r`` is
    ``hashers[r].hash_many(X)``.
    """

    def __init__(self, hashers, spec=None):
        hashers = list(hashers)
        if not hashers:
            raise ValueError("HashBank needs at least one hasher")
        bits = {h.bits for h in hashers}
        dims = {h.dim for h in hashers}
        if len(bits) != 1 or len(dims) != 1:
            raise ValueError("all hashers in a bank must share bits and dim")
        self.hashers = hashers
        self.spec = spec
        self.bits = bits.pop()
        self.dim = dims.pop()
        stacked = np.ascontiguousarray(np.vstack([h.projections for h in hashers]))
        stacked.setflags(write=False)
        self._stacked = stacked

    @classmethod
    def from_spec(cls, spec, R):
        return cls(spawn_functions(spec, R), spec=spec)

    @property
    def rows(self):
        return len(self.hashers)

    @property
    def width(self):
        return 1 << self.bits

    def codes(self, X):
        X = _as_matrix(X, self.dim)
        return kernels.srp_codes(X, self._stacked, self.rows, self.bits)

    def same_functions(self, other):
        return self.rows == other.rows and np.array_equal(self._stacked, other._stacked)
