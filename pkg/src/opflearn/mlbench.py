"""Feed-forward regression benchmark across datasets.

A small MLP (three sigmoid hidden layers, linear output) is trained with
Adam on mean squared error to map loads to generator set-points.  Models
trained on one dataset are tested on held-out records of another, which
exposes how much of the load space each dataset covers.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, split
from .errors import DegenerateData, FingerprintMismatch, SchemaMismatch

TARGETS = ("Pg", "Vg")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam constants")


@dataclass
class Normalizer:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray

    @staticmethod
    def _stats(A):
        mu = A.mean(axis=0)
        sd = A.std(axis=0)
        # constant columns pass through unscaled
        return mu, np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, 1.0)

    @classmethod
    def fit(cls, X, Y) -> "Normalizer":
        X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
        return cls(*cls._stats(X), *cls._stats(Y))

    def x(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_scale

    def y(self, Y):
        return (np.asarray(Y, dtype=float) - self.y_mean) / self.y_scale

    def y_inv(self, Z):
        return Z * self.y_scale + self.y_mean

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(**{k: np.asarray(d[k], dtype=float) for k in ("x_mean", "x_scale", "y_mean", "y_scale")})


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class MlpModel:
    widths: list
    weights: list           # W[k] has shape (widths[k+1], widths[k])
    biases: list
    loss_history: list = field(default_factory=list)

    @classmethod
    def init(cls, widths, rng) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError("need at least input and output widths, all positive")
        W, b = [], []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            a = np.sqrt(6.0 / (n_in + n_out))
            W.append(rng.uniform(-a, a, size=(n_out, n_in)))
            b.append(np.zeros(n_out))
        return cls(widths, W, b)

    @classmethod
    def for_network(cls, n_load: int, n_gen: int, rng) -> "MlpModel":
        return cls.init([2 * n_load, 2 * n_load, 2 * n_load, n_gen, n_gen], rng)

    @property
    def params(self) -> list:
        return self.weights + self.biases

    def forward(self, X, keep=False):
        """Output for rows of ``X``; with ``keep`` also the layer activations."""
        a = np.asarray(X, dtype=float)
        acts = [a]
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W.T + b
            a = z if k == last else _sigmoid(z)
            acts.append(a)
        return (a, acts) if keep else a

    def loss_and_grad(self, X, Y):
        """Mean squared error over all entries and its parameter gradients."""
        out, acts = self.forward(X, keep=True)
        n = out.size
        r = out - Y
        loss = float(np.sum(r * r) / n)
        delta = 2.0 * r / n
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            gW[k] = delta.T @ acts[k]
            gb[k] = delta.sum(axis=0)
            if k:
                a = acts[k]
                delta = (delta @ self.weights[k]) * a * (1.0 - a)
        return loss, gW + gb

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        widths = [int(w) for w in d["widths"]]
        W = [np.asarray(w, dtype=float).reshape(o, i) for w, i, o in zip(d["weights"], widths[:-1], widths[1:])]
        b = [np.asarray(v, dtype=float).reshape(o) for v, o in zip(d["biases"], widths[1:])]
        if len(W) != len(widths) - 1 or len(b) != len(W):
            raise SchemaMismatch("checkpoint layer count does not match widths")
        return cls(widths, W, b)


def fit(model: MlpModel, X, Y, cfg: TrainConfig) -> MlpModel:
    """Adam on mini-batches, in place; appends the mean epoch loss to ``loss_history``."""
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    n = len(X)
    rng = np.random.default_rng(cfg.seed)
    params = model.params
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    t = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            loss, grads = model.loss_and_grad(X[idx], Y[idx])
            total += loss * len(idx)
            t += 1
            c1, c2 = 1.0 - cfg.beta1 ** t, 1.0 - cfg.beta2 ** t
            for p, g, mk, vk in zip(params, grads, m, v):
                mk *= cfg.beta1
                mk += (1.0 - cfg.beta1) * g
                vk *= cfg.beta2
                vk += (1.0 - cfg.beta2) * g * g
                p -= cfg.lr * (mk / c1) / (np.sqrt(vk / c2) + cfg.eps)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise DegenerateData("training loss is not finite")
        model.loss_history.append(epoch_loss)
    return model


def train(train_set: Dataset, target: str, cfg: TrainConfig | None = None):
    """Train the benchmark MLP on one target; returns ``(model, normalizer)``."""
    cfg = cfg or TrainConfig()
    if len(train_set) < 2:
        raise DegenerateData(f"need at least 2 records to train, got {len(train_set)}")
    X, Y = train_set.X, train_set.target(_target(target))
    norm = Normalizer.fit(X, Y)
    rng = np.random.default_rng(cfg.seed)
    model = MlpModel.for_network(X.shape[1] // 2, Y.shape[1], rng)
    fit(model, norm.x(X), norm.y(Y), cfg)
    return model, norm


def predict(model: MlpModel, norm: Normalizer, X) -> np.ndarray:
    return norm.y_inv(model.forward(norm.x(X)))


def errors(pred, actual) -> dict:
    pred, actual = np.asarray(pred, dtype=float), np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise SchemaMismatch(f"prediction shape {pred.shape} differs from {actual.shape}")
    if not len(pred):
        return {"mse": float("nan"), "max_sample_error": float("nan")}
    r = pred - actual
    return {"mse": float(np.mean(np.mean(r * r, axis=1))),
            "max_sample_error": float(np.max(np.sum(np.abs(r), axis=1)))}


def evaluate(model: MlpModel, norm: Normalizer, test_set: Dataset, target: str) -> dict:
    X = test_set.X
    if X.shape[1] != model.widths[0]:
        raise SchemaMismatch(f"model expects {model.widths[0]} inputs, dataset has {X.shape[1]}")
    return errors(predict(model, norm, X), test_set.target(_target(target)))


def _target(name: str) -> str:
    for t in TARGETS:
        if name.lower() == t.lower():
            return t
    raise ValueError(f"unknown target {name!r}; expected one of {TARGETS}")


# checkpoints

def save_checkpoint(path, model: MlpModel, norm: Normalizer, meta=None):
    doc = {"model": model.to_dict(), "normalizer": norm.to_dict(),
           "loss_history": [float(v) for v in model.loss_history], "metadata": dict(meta or {})}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    return path


def load_checkpoint(path):
    """Returns ``(model, normalizer, metadata)``."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        model = MlpModel.from_dict(doc["model"])
        norm = Normalizer.from_dict(doc["normalizer"])
    except (KeyError, ValueError, TypeError) as e:
        raise SchemaMismatch(f"bad checkpoint {path}: {e}") from None
    model.loss_history = list(doc.get("loss_history", []))
    return model, norm, doc.get("metadata", {})


# cross-dataset experiment

def check_same_network(datasets: dict):
    prints = {name: ds.fingerprint for name, ds in datasets.items()}
    if len(set(prints.values())) > 1:
        raise FingerprintMismatch(f"datasets come from different networks: {prints}")


def split_all(datasets: dict, train_fraction=0.8, seed=0) -> dict:
    """``{name: (train, test)}`` with the same split seed for every dataset."""
    return {name: split(ds, train_fraction, seed) for name, ds in datasets.items()}


def _train_job(args):
    name, target, train_set, cfg = args
    model, norm = train(train_set, target, cfg)
    return name, target, model, norm


def train_models(splits: dict, cfg: TrainConfig, targets=TARGETS, workers: int = 1) -> dict:
    """``{(train_name, target): (model, normalizer)}`` over every split and target."""
    jobs = [(name, t, tr, cfg) for name, (tr, _) in splits.items() for t in targets]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            done = list(pool.map(_train_job, jobs))
    else:
        done = [_train_job(j) for j in jobs]
    return {(name, t): (m, nz) for name, t, m, nz in done}


@dataclass
class CrossReport:
    rows: list              # dicts: target, train, test, mse, max_sample_error
    metadata: dict

    def cell(self, target, train, test, key="mse") -> float:
        for r in self.rows:
            if r["target"] == target and r["train"] == train and r["test"] == test:
                return r[key]
        raise KeyError((target, train, test))

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target", "train", "test", "mse", "max_sample_error"])
            for r in self.rows:
                w.writerow([r["target"], r["train"], r["test"],
                            "%.6e" % r["mse"], "%.6e" % r["max_sample_error"]])
        with open(path.with_suffix(".json"), "w") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def cross_experiment(model_dirs, datasets: dict, cfg: TrainConfig | None = None,
                     train_fraction=0.8, split_seed=0, workers: int = 1) -> CrossReport:
    """Every model tested on the held-out split of every dataset.

    ``datasets`` maps a method name to its Dataset.  ``model_dirs`` maps
    ``(train_name, target)`` to a checkpoint path or a ``(model, normalizer)``
    pair; missing entries are trained here.  ``None`` trains everything.
    """
    cfg = cfg or TrainConfig()
    check_same_network(datasets)
    splits = split_all(datasets, train_fraction, split_seed)
    models = {}
    for key, val in dict(model_dirs or {}).items():
        models[key] = load_checkpoint(val)[:2] if isinstance(val, (str, Path)) else tuple(val)
    missing = {name: splits[name] for name in splits
               if any((name, t) not in models for t in TARGETS)}
    if missing:
        trained = train_models(missing, cfg, workers=workers)
        for key, val in trained.items():
            models.setdefault(key, val)
    rows = []
    for target in TARGETS:
        for tr in datasets:
            model, norm = models[(tr, target)]
            for te in datasets:
                res = evaluate(model, norm, splits[te][1], target)
                rows.append({"target": target, "train": tr, "test": te, **res})
    meta = {"train_config": asdict(cfg), "train_fraction": train_fraction, "split_seed": split_seed,
            "fingerprint": next(iter(datasets.values())).fingerprint,
            "sizes": {name: [len(a), len(b)] for name, (a, b) in splits.items()}}
    return CrossReport(rows, meta)
