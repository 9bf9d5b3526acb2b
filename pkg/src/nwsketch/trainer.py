"""Desk-scale training loop with sketch-driven adaptive sampling.

The baseline trains on every example of every batch. The adaptive run
trains on full batches during warm-up while inserting ``(representation,
loss)`` pairs into a :class:`~nwsketch.nws.NwSketch`; afterwards it queries
the sketch for estimated losses, samples a weighted subset of each batch,
trains only on that subset and writes the true losses of the trained
examples back on scheduled update rounds.

Both runs draw data, initial weights and batch order from the same seed, so
with sampling disabled the two produce identical metric streams.
"""
import csv
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from nwsketch.datasets import Standardizer, load_csv, synth_classification
from nwsketch.lsh import LshFamilySpec
from nwsketch.nws import NwSketch
from nwsketch.sampler import SamplerConfig, make_plan, should_update_sketch

RECORD_COLUMNS = (
    "iter",
    "train_loss",
    "test_loss",
    "test_acc",
    "n_backprop",
    "wall_ns",
    "sketch_update",
)


# -- model ---------------------------------------------------------------


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class Sgd:
    def __init__(self, lr=0.1):
        self.lr = lr

    def update(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr=2e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def update(self, params, grads):
        self.t += 1
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class DeskModel:
    """Softmax classifier: linear (``logistic``) or one tanh hidden layer (``mlp``).

    The training objective for a batch is ``sum_i w_i * CE_i / normalizer``.
    """

    def __init__(self, kind, dim, n_classes, hidden=32, optimizer=None, rng=None):
        if kind not in ("logistic", "mlp"):
            raise ValueError(f"unknown model kind {kind!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kind = kind
        self.n_classes = n_classes
        if kind == "logistic":
            self.params = {
                "W": rng.standard_normal((dim, n_classes)) * 0.01,
                "b": np.zeros(n_classes),
            }
        else:
            self.params = {
                "W1": rng.standard_normal((dim, hidden)) / np.sqrt(dim),
                "b1": np.zeros(hidden),
                "W2": rng.standard_normal((hidden, n_classes)) / np.sqrt(hidden),
                "b2": np.zeros(n_classes),
            }
        self.optimizer = optimizer if optimizer is not None else Sgd()

    def hidden(self, X):
        """Penultimate activations (the raw input for the linear model)."""
        if self.kind == "logistic":
            return np.asarray(X, dtype=np.float64)
        p = self.params
        return np.tanh(X @ p["W1"] + p["b1"])

    def logits(self, X):
        H = self.hidden(X)
        if self.kind == "logistic":
            return H @ self.params["W"] + self.params["b"]
        return H @ self.params["W2"] + self.params["b2"]

    def losses(self, X, y):
        return -_log_softmax(self.logits(X))[np.arange(len(y)), y]

    def loss_and_grad(self, X, y, weights=None, normalizer=None):
        """Per-example CE losses and the gradient of the weighted objective."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = len(y)
        weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        if X.shape[0] != n or weights.shape != (n,):
            raise ValueError("batch features, labels and weights must align")
        normalizer = n if normalizer is None else normalizer
        H = self.hidden(X)
        out_w = "W" if self.kind == "logistic" else "W2"
        out_b = "b" if self.kind == "logistic" else "b2"
        logp = _log_softmax(H @ self.params[out_w] + self.params[out_b])
        losses = -logp[np.arange(n), y]
        dz = np.exp(logp)
        dz[np.arange(n), y] -= 1.0
        dz *= (weights / normalizer)[:, None]
        grads = {out_w: H.T @ dz, out_b: dz.sum(axis=0)}
        if self.kind == "mlp":
            dh = (dz @ self.params["W2"].T) * (1.0 - H**2)
            grads["W1"] = X.T @ dh
            grads["b1"] = dh.sum(axis=0)
        return losses, grads

    def objective(self, X, y, weights=None, normalizer=None):
        n = len(y)
        weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        normalizer = n if normalizer is None else normalizer
        return float(np.sum(weights * self.losses(X, y)) / normalizer)

    def evaluate(self, X, y):
        logits = self.logits(X)
        loss = float(np.mean(-_log_softmax(logits)[np.arange(len(y)), y]))
        acc = float(np.mean(logits.argmax(axis=1) == y))
        return loss, acc


def train_model(model, X, y, weights=None, normalizer=None):
    """One optimizer step on the weighted batch; returns unweighted per-example losses.

    A batch whose weights are all zero leaves the parameters untouched (no
    optimizer step, so Adam moments do not move either).
    """
    losses, grads = model.loss_and_grad(X, y, weights, normalizer)
    if weights is None or np.any(np.asarray(weights) != 0):
        model.optimizer.update(model.params, grads)
    return losses


# -- configuration ---------------------------------------------------------


@dataclass
class DatasetConfig:
    kind: str = "two-gaussians"
    n_train: int = 4000
    n_test: int = 2000
    dim: int = 10
    separation: float = 2.5
    label_noise: float = 0.05
    path: str = None
    target_column: str = "-1"
    has_header: bool = True
    test_ratio: float = 0.1


@dataclass
class ModelConfig:
    kind: str = "logistic"
    hidden: int = 32
    optimizer: str = "sgd"
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class SketchConfig:
    bits: int = 6
    rows: int = 200
    y_bound: float = 10.0
    estimator: str = "mean"
    groups: int = None
    decay: float = 1.0


@dataclass
class TrainConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    sketch: SketchConfig = field(default_factory=SketchConfig)
    iterations: int = 400
    batch_size: int = 64
    seed: int = 0
    representation: str = "raw"

    def validate(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be positive")
        if self.representation not in ("raw", "penultimate"):
            raise ValueError(f"unknown representation {self.representation!r}")
        if self.model.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.model.optimizer!r}")
        self.sampler.validate()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        sections = {
            "dataset": DatasetConfig,
            "model": ModelConfig,
            "sampler": SamplerConfig,
            "sketch": SketchConfig,
        }
        kwargs = {}
        top = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in top:
                raise ValueError(f"unknown config key {key!r}")
            if key in sections:
                sub = sections[key]
                known = {f.name for f in fields(sub)}
                bad = set(value or {}) - known
                if bad:
                    raise ValueError(f"unknown keys in [{key}]: {sorted(bad)}")
                kwargs[key] = sub(**(value or {}))
            else:
                kwargs[key] = value
        return cls(**kwargs).validate()

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))


# -- runs ----------------------------------------------------------------


@dataclass
class IterRecord:
    iter: int
    train_loss: float
    test_loss: float
    test_acc: float
    n_backprop: int
    wall_ns: int
    sketch_update: bool


@dataclass
class TrainRun:
    config: TrainConfig
    mode: str
    records: list = field(default_factory=list)
    model: DeskModel = None
    sketch: NwSketch = None

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RECORD_COLUMNS)
            for r in self.records:
                w.writerow(
                    [
                        r.iter,
                        repr(r.train_loss),
                        repr(r.test_loss),
                        repr(r.test_acc),
                        r.n_backprop,
                        r.wall_ns,
                        int(r.sketch_update),
                    ]
                )

    @classmethod
    def from_csv(cls, path, config=None, mode="unknown"):
        records = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(RECORD_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            for row in reader:
                records.append(
                    IterRecord(
                        iter=int(row["iter"]),
                        train_loss=float(row["train_loss"]),
                        test_loss=float(row["test_loss"]),
                        test_acc=float(row["test_acc"]),
                        n_backprop=int(row["n_backprop"]),
                        wall_ns=int(row["wall_ns"]),
                        sketch_update=bool(int(row["sketch_update"])),
                    )
                )
        return cls(config=config, mode=mode, records=records)


def prepare_data(cfg):
    """Return ``(X_train, y_train, X_test, y_test, n_classes)`` for a config."""
    ds_cfg = cfg.dataset
    data_seed = np.random.SeedSequence(cfg.seed, spawn_key=(0,))
    if ds_cfg.kind == "two-gaussians":
        ds = synth_classification(
            ds_cfg.n_train + ds_cfg.n_test,
            ds_cfg.dim,
            ds_cfg.separation,
            ds_cfg.label_noise,
            seed=data_seed,
        )
        X, y = ds.features, ds.targets
        return X[: ds_cfg.n_train], y[: ds_cfg.n_train], X[ds_cfg.n_train :], y[ds_cfg.n_train :], 2
    if ds_cfg.kind == "csv":
        ds = load_csv(ds_cfg.path, ds_cfg.target_column, ds_cfg.has_header)
        if not np.all(ds.targets == np.round(ds.targets)) or ds.targets.min() < 0:
            raise ValueError("classification targets must be non-negative integer labels")
        ds = ds.with_split(ds_cfg.test_ratio, seed=data_seed)
        Xtr, ytr = ds.train()
        Xte, yte = ds.test()
        scaler = Standardizer.fit(Xtr)
        ytr, yte = ytr.astype(np.int64), yte.astype(np.int64)
        n_classes = int(max(ytr.max(), yte.max())) + 1
        return scaler.transform(Xtr), ytr, scaler.transform(Xte), yte, n_classes
    raise ValueError(f"unknown dataset kind {ds_cfg.kind!r}")


def _make_model(cfg, dim, n_classes):
    m = cfg.model
    if m.optimizer == "sgd":
        opt = Sgd(m.lr)
    else:
        opt = Adam(m.lr, m.beta1, m.beta2, m.eps)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    return DeskModel(m.kind, dim, n_classes, hidden=m.hidden, optimizer=opt, rng=rng)


def _batches(n, batch_size, rng):
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start : start + batch_size]


def _make_sketch(cfg, dim):
    s = cfg.sketch
    sketch_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(3,)).generate_state(1, np.uint64)[0])
    spec = LshFamilySpec(bits=s.bits, dim=dim, seed=sketch_seed)
    return NwSketch(spec, s.rows, s.y_bound, estimator=s.estimator, groups=s.groups, decay=s.decay)


def _run(cfg, adaptive):
    cfg.validate()
    Xtr, ytr, Xte, yte, n_classes = prepare_data(cfg)
    if cfg.batch_size > len(ytr):
        raise ValueError("batch_size exceeds the training set size")
    model = _make_model(cfg, Xtr.shape[1], n_classes)
    order = _batches(len(ytr), cfg.batch_size, np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,))))
    sample_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(4, cfg.sampler.seed)))
    sketch = _make_sketch(cfg, model.hidden(Xtr[:1]).shape[1]) if adaptive else None
    penultimate = cfg.representation == "penultimate"
    run = TrainRun(config=cfg, mode="adaptive" if adaptive else "baseline")
    wall = 0
    warmup = cfg.sampler.warmup_iters
    for it in range(cfg.iterations):
        idx = next(order)
        Xb, yb = Xtr[idx], ytr[idx]
        t0 = time.perf_counter_ns()
        updated = False
        if not adaptive:
            losses = train_model(model, Xb, yb)
            n_bp = len(yb)
        elif it < warmup:
            reps = model.hidden(Xb) if penultimate else Xb
            losses = train_model(model, Xb, yb)
            sketch.insert_many(reps, losses)
            n_bp = len(yb)
            updated = True
        else:
            reps = model.hidden(Xb) if penultimate else Xb
            plan = make_plan(sketch.query_many(reps), cfg.sampler, sample_rng)
            keep = plan.indices
            losses = train_model(model, Xb[keep], yb[keep], plan.weights[keep], normalizer=len(yb))
            n_bp = len(keep)
            if should_update_sketch(it, cfg.sampler) and len(keep):
                sketch.apply_decay()
                sketch.insert_many(reps[keep], losses)
                updated = True
        wall += time.perf_counter_ns() - t0
        test_loss, test_acc = model.evaluate(Xte, yte)
        run.records.append(
            IterRecord(
                iter=it,
                train_loss=float(np.mean(losses)) if len(losses) else float("nan"),
                test_loss=test_loss,
                test_acc=test_acc,
                n_backprop=int(n_bp),
                wall_ns=wall,
                sketch_update=updated,
            )
        )
    run.model = model
    run.sketch = sketch
    return run


def run_baseline(cfg):
    """Train on every example of every batch."""
    return _run(cfg, adaptive=False)


def run_adaptive(cfg):
    """Train with sketch-estimated losses driving importance sampling."""
    return _run(cfg, adaptive=True)


def _first_reach(run, target):
    acc = run.column("test_acc")
    hits = np.flatnonzero(acc >= target)
    if not len(hits):
        return None
    i = int(hits[0])
    return {
        "iter": run.records[i].iter,
        "examples": int(run.column("n_backprop")[: i + 1].sum()),
        "wall_ns": int(run.records[i].wall_ns),
    }


def compare_runs(baseline, adaptive):
    """Summarise how fast ``adaptive`` reaches the baseline's final accuracy.

    ``speedup`` is measured in examples backpropagated (deterministic under a
    seed); ``speedup_wallclock`` uses the recorded training wall-clock.
    """
    target = baseline.records[-1].test_acc
    base = _first_reach(baseline, target)
    adap = _first_reach(adaptive, target)
    warm = baseline.config.sampler.warmup_iters if baseline.config is not None else 0
    bp = adaptive.column("n_backprop")
    batch = baseline.column("n_backprop")
    post_total = batch[warm:].sum()
    report = {
        "baseline_final_acc": baseline.records[-1].test_acc,
        "adaptive_final_acc": adaptive.records[-1].test_acc,
        "acc_gap": adaptive.records[-1].test_acc - baseline.records[-1].test_acc,
        "target_acc": target,
        "baseline_reach": base,
        "adaptive_reach": adap if adap is not None else "not reached",
        "baseline_examples": int(batch.sum()),
        "adaptive_examples": int(bp.sum()),
        "post_warmup_backprop_fraction": float(bp[warm:].sum() / post_total) if post_total else 1.0,
    }
    if adap is None:
        report["speedup"] = "not reached"
        report["speedup_wallclock"] = "not reached"
    else:
        report["speedup"] = base["examples"] / adap["examples"]
        report["speedup_wallclock"] = base["wall_ns"] / adap["wall_ns"] if adap["wall_ns"] else float("inf")
    return report
