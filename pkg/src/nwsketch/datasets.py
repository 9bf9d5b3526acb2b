"""Tabular data: CSV ingestion, synthetic generators and an OLS baseline."""
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# Singular values below this fraction of the largest are treated as zero by
# the least-squares solve.
LSTSQ_RCOND = 1e-12


@dataclass
class TabularDataset:
    features: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray = None
    test_idx: np.ndarray = None
    feature_names: list = field(default_factory=list)
    target_name: str = "y"
    bound: float = None  # known |f| bound for synthetic regression data
    signal: np.ndarray = None  # noiseless f(x) for synthetic regression data

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be an N x d matrix")
        if len(self.targets) != len(self.features):
            raise ValueError("features and targets differ in length")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.d)]

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def with_split(self, test_ratio=0.1, seed=0):
        """Random disjoint train/test split, deterministic in ``seed``."""
        if not 0 < test_ratio < 1:
            raise ValueError("test_ratio must be in (0, 1)")
        perm = np.random.default_rng(seed).permutation(self.n)
        n_test = max(1, int(round(self.n * test_ratio)))
        if n_test >= self.n:
            raise ValueError("dataset too small to split")
        return replace(self, train_idx=np.sort(perm[n_test:]), test_idx=np.sort(perm[:n_test]))

    def train(self):
        return self.features[self.train_idx], self.targets[self.train_idx]

    def test(self):
        return self.features[self.test_idx], self.targets[self.test_idx]


def _read_numeric(path, has_header, delimiter):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path} is empty")
    header = None
    first_line = 1
    if has_header:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_line = 2
        if not rows:
            raise ValueError(f"{path} has a header but no data rows")
    ncol = len(header) if header else len(rows[0])
    data = np.empty((len(rows), ncol))
    for i, row in enumerate(rows):
        line = i + first_line
        if len(row) != ncol:
            raise ValueError(f"line {line}: expected {ncol} fields, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                raise ValueError(f"line {line}, column {j + 1}: non-numeric value {cell!r}") from None
            if not math.isfinite(value):
                raise ValueError(f"line {line}, column {j + 1}: non-finite value {cell!r}")
            data[i, j] = value
    return header, data


def _resolve_column(col, header, ncol):
    if isinstance(col, str) and not col.lstrip("-").isdigit():
        if header is None or col not in header:
            raise ValueError(f"unknown column {col!r}")
        return header.index(col)
    idx = int(col)
    if not -ncol <= idx < ncol:
        raise ValueError(f"column index {idx} out of range for {ncol} columns")
    return idx % ncol


def load_csv(path, target_column=-1, has_header=True, delimiter=",", drop_columns=()):
    """Read a numeric delimiter-separated file.

    ``target_column`` is a column index or, with a header, a column name.
    Every other column not in ``drop_columns`` becomes a feature, in order.
    Unparseable cells raise ``ValueError`` naming the line and column.
    """
    header, data = _read_numeric(path, has_header, delimiter)
    ncol = data.shape[1]
    tcol = _resolve_column(target_column, header, ncol)
    dropped = {_resolve_column(c, header, ncol) for c in drop_columns}
    fcols = [j for j in range(ncol) if j != tcol and j not in dropped]
    names = [header[j] for j in fcols] if header else [f"x{j}" for j in range(len(fcols))]
    return TabularDataset(
        features=data[:, fcols],
        targets=data[:, tcol],
        feature_names=names,
        target_name=header[tcol] if header else "y",
    )


def load_matrix(path, has_header=True, delimiter=",", drop_columns=()):
    """Read every (non-dropped) column of a numeric CSV as a feature matrix."""
    header, data = _read_numeric(path, has_header, delimiter)
    dropped = {_resolve_column(c, header, data.shape[1]) for c in drop_columns}
    keep = [j for j in range(data.shape[1]) if j not in dropped]
    return data[:, keep]


def write_csv(dataset, path, delimiter=","):
    """Write features then target; ``repr`` keeps floats bit-exact on reload."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(list(dataset.feature_names) + [dataset.target_name])
        for x, y in zip(dataset.features, dataset.targets):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


class Standardizer:
    """Per-column zero mean / unit variance using statistics of a fit set."""

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        scale = X.std(axis=0)
        # constant columns are centred but left unscaled
        scale[scale == 0] = 1.0
        return cls(X.mean(axis=0), scale)

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["scale"])


def _unit_direction(rng, d):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def synth_regression(kind, N, d, noise=0.0, seed=0, offset=0.0):
    """Regression data whose response depends on direction only.

    ``smooth-angular``: ``f(x) = cos(2 theta)``, ``theta`` the angle between
    ``x`` and a hidden unit direction. ``step``: ``f(x) = 1`` on the
    non-negative side of that direction, else ``-1``. Both satisfy
    ``|f - offset| <= 1``; ``y = f(x) + N(0, noise^2)``.
    """
    if N < 1 or d < 1:
        raise ValueError("N and d must be positive")
    rng = np.random.default_rng(seed)
    u = _unit_direction(rng, d)
    X = rng.standard_normal((N, d))
    proj = X @ u
    if kind == "smooth-angular":
        cos = np.clip(proj / np.linalg.norm(X, axis=1), -1.0, 1.0)
        f = 2.0 * cos**2 - 1.0
    elif kind == "step":
        f = np.where(proj >= 0, 1.0, -1.0)
    else:
        raise ValueError(f"unknown regression kind {kind!r}")
    eps = rng.standard_normal(N) * noise if noise > 0 else np.zeros(N)
    f = f + offset
    return TabularDataset(features=X, targets=f + eps, bound=1.0 + abs(offset), signal=f)


def synth_classification(N, d, separation=2.0, label_noise=0.0, seed=0):
    """Two isotropic Gaussians at ``+/- separation/2`` along a hidden direction.

    Labels are balanced Bernoulli draws; each is flipped with probability
    ``label_noise``.
    """
    if N < 1 or d < 1:
        raise ValueError("N and d must be positive")
    if not 0 <= label_noise <= 0.5:
        raise ValueError("label_noise must be in [0, 0.5]")
    rng = np.random.default_rng(seed)
    u = _unit_direction(rng, d)
    clean = rng.integers(0, 2, size=N)
    X = rng.standard_normal((N, d)) + np.outer(clean * 2.0 - 1.0, u) * (separation / 2.0)
    flip = rng.random(N) < label_noise
    labels = np.where(flip, 1 - clean, clean).astype(np.int64)
    return TabularDataset(features=X, targets=labels)


@dataclass
class LinearPredictor:
    coef: np.ndarray
    intercept: float

    def predict(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept


def fit_linear_regression(X, y):
    """Ordinary least squares with intercept, via SVD-based ``lstsq``.

    Rank-deficient designs (e.g. constant columns) get the minimum-norm
    solution.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.column_stack([np.ones(len(X)), X])
    beta, *_ = np.linalg.lstsq(A, y, rcond=LSTSQ_RCOND)
    return LinearPredictor(coef=beta[1:], intercept=float(beta[0]))


def mse(predictor, X, y):
    pred = predictor.predict(X) if hasattr(predictor, "predict") else predictor(X)
    return float(np.mean((np.asarray(y, dtype=np.float64) - pred) ** 2))


def from_spec(spec, seed=0):
    """Parse ``synth:<kind>[:key=value,...]`` into a dataset.

    Kinds: ``smooth-angular``, ``step`` (regression) and ``two-gaussians``
    (classification). Keys: ``n``, ``d``, ``noise``, ``sep``, ``offset``.
    """
    parts = spec.split(":")
    if parts[0] != "synth" or len(parts) < 2:
        raise ValueError(f"not a synthesizer spec: {spec!r}")
    opts = {}
    if len(parts) > 2 and parts[2]:
        for item in parts[2].split(","):
            key, _, val = item.partition("=")
            opts[key.strip()] = float(val)
    n = int(opts.get("n", 2000))
    d = int(opts.get("d", 8))
    if parts[1] in ("smooth-angular", "step"):
        return synth_regression(
            parts[1], n, d, noise=opts.get("noise", 0.1), seed=seed, offset=opts.get("offset", 0.0)
        )
    if parts[1] == "two-gaussians":
        return synth_classification(n, d, opts.get("sep", 2.0), opts.get("noise", 0.0), seed=seed)
    raise ValueError(f"unknown synthesizer {parts[1]!r}")
