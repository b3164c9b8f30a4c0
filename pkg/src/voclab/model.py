"""Trainable 5-way vocalization classifier head.

A softmax classifier over fixed feature vectors, optionally with one
rectified hidden layer.  Training follows the mini-batch protocol:
seeded shuffling each epoch, batches of 32 with the final partial batch
included, dev-set UAR evaluated per epoch, and the weights from the
best dev epoch (first maximum on ties) kept.  All arithmetic is 64-bit
and every run is a pure function of (data, order, seed).
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .features import FeatureConfig, FeatureVector
from .manifest import LABELS, LabelClass
from . import metrics

N_CLASSES = len(LABELS)
OPTIMIZERS = ("sgd_momentum", "adaptive_moments")

MODEL_MAGIC = b"VOCM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 1e-2  # head-scale default; 3e-5 remains available
    hidden_units: int = 256
    seed: int = 0
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.hidden_units < 0:
            raise ValueError("hidden_units must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class Params:
    """Weight matrices; W1/b1 are None for the no-hidden configuration."""

    W1: Optional[np.ndarray]
    b1: Optional[np.ndarray]
    W2: np.ndarray
    b2: np.ndarray

    def copy(self) -> "Params":
        return Params(
            W1=None if self.W1 is None else self.W1.copy(),
            b1=None if self.b1 is None else self.b1.copy(),
            W2=self.W2.copy(),
            b2=self.b2.copy(),
        )

    def flat(self) -> list[np.ndarray]:
        arrays = [] if self.W1 is None else [self.W1, self.b1]
        return arrays + [self.W2, self.b2]


@dataclass
class EpochStats:
    epoch: int  # 1-based
    train_loss: float
    dev_uar: float


@dataclass
class ClassifierModel:
    feature_config: FeatureConfig
    params: Params
    training_log: list[EpochStats] = field(default_factory=list)
    selected_epoch: int = 0

    @property
    def input_dim(self) -> int:
        return self.params.W2.shape[0] if self.params.W1 is None else self.params.W1.shape[0]

    @property
    def hidden_units(self) -> int:
        return 0 if self.params.W1 is None else self.params.W1.shape[1]


@dataclass(frozen=True)
class PredictionRecord:
    clip_id: str
    scores: np.ndarray  # 5 softmax probabilities
    predicted: LabelClass


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def init_params(dim: int, hidden_units: int, rng: np.random.Generator) -> Params:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases."""
    if hidden_units > 0:
        bound1 = 1.0 / np.sqrt(dim)
        W1 = rng.uniform(-bound1, bound1, size=(dim, hidden_units))
        b1 = np.zeros(hidden_units)
        bound2 = 1.0 / np.sqrt(hidden_units)
        W2 = rng.uniform(-bound2, bound2, size=(hidden_units, N_CLASSES))
        b2 = np.zeros(N_CLASSES)
        return Params(W1=W1, b1=b1, W2=W2, b2=b2)
    bound = 1.0 / np.sqrt(dim)
    W2 = rng.uniform(-bound, bound, size=(dim, N_CLASSES))
    b2 = np.zeros(N_CLASSES)
    return Params(W1=None, b1=None, W2=W2, b2=b2)


def forward(params: Params, X: np.ndarray) -> np.ndarray:
    """Logits for a batch; the hidden layer uses a rectifier (0 at 0)."""
    if params.W1 is not None:
        hidden = np.maximum(X @ params.W1 + params.b1, 0.0)
        return hidden @ params.W2 + params.b2
    return X @ params.W2 + params.b2


def loss_and_grads(
    params: Params, X: np.ndarray, y: np.ndarray
) -> tuple[float, Params]:
    """Mean softmax cross-entropy and its analytic gradients."""
    n = X.shape[0]
    if params.W1 is not None:
        Z1 = X @ params.W1 + params.b1
        A1 = np.maximum(Z1, 0.0)
        logits = A1 @ params.W2 + params.b2
    else:
        A1 = X
        logits = X @ params.W2 + params.b2

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), y].mean()

    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dW2 = A1.T @ dlogits
    db2 = dlogits.sum(axis=0)
    if params.W1 is not None:
        dA1 = dlogits @ params.W2.T
        dZ1 = dA1 * (Z1 > 0)
        dW1 = X.T @ dZ1
        db1 = dZ1.sum(axis=0)
        return float(loss), Params(W1=dW1, b1=db1, W2=dW2, b2=db2)
    return float(loss), Params(W1=None, b1=None, W2=dW2, b2=db2)


def mean_loss(params: Params, X: np.ndarray, y: np.ndarray) -> float:
    logits = forward(params, X)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(X.shape[0]), y].mean())


class _SgdMomentum:
    def __init__(self, params: Params, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params.flat()]

    def step(self, params: Params, grads: Params) -> None:
        for v, p, g in zip(self.velocity, params.flat(), grads.flat()):
            v *= self.momentum
            v -= self.lr * g
            p += v


class _Adam:
    def __init__(self, params: Params, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params.flat()]
        self.v = [np.zeros_like(p) for p in params.flat()]
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for m, v, p, g in zip(self.m, self.v, params.flat(), grads.flat()):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)


def _as_arrays(
    data: Sequence[tuple[FeatureVector, LabelClass]]
) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([vec.values for vec, _ in data]).astype(np.float64)
    y = np.array([label.index for _, label in data], dtype=np.int64)
    return X, y


def train(
    train_set: Sequence[tuple[FeatureVector, LabelClass]],
    dev_set: Sequence[tuple[FeatureVector, LabelClass]],
    cfg: TrainConfig = TrainConfig(),
    feature_config: FeatureConfig = FeatureConfig(),
) -> ClassifierModel:
    """Mini-batch training with per-epoch dev UAR model selection."""
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be non-empty")
    X, y = _as_arrays(train_set)
    Xd, yd = _as_arrays(dev_set)
    if X.shape[1] != Xd.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: train {X.shape[1]} vs dev {Xd.shape[1]}"
        )
    present = set(int(c) for c in np.unique(y))
    missing = [lab.value for lab in LABELS if lab.index not in present]
    if missing:
        raise ValueError(f"classes missing from train set: {missing}")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    params = init_params(X.shape[1], cfg.hidden_units, rng)
    if cfg.optimizer == "sgd_momentum":
        optimizer = _SgdMomentum(params, cfg.learning_rate, cfg.momentum)
    else:
        optimizer = _Adam(params, cfg.learning_rate)

    log: list[EpochStats] = []
    best_uar = -1.0
    best_params = params.copy()
    best_epoch = 0
    n = X.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(params, X[batch], y[batch])
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            optimizer.step(params, grads)
        train_loss = mean_loss(params, X, y)
        dev_uar = _dev_uar(params, Xd, yd)
        log.append(EpochStats(epoch=epoch, train_loss=train_loss, dev_uar=dev_uar))
        if dev_uar > best_uar:
            best_uar = dev_uar
            best_params = params.copy()
            best_epoch = epoch

    return ClassifierModel(
        feature_config=feature_config,
        params=best_params,
        training_log=log,
        selected_epoch=best_epoch,
    )


def _dev_uar(params: Params, Xd: np.ndarray, yd: np.ndarray) -> float:
    preds = forward(params, Xd).argmax(axis=1)
    pairs = [(LABELS[a], LABELS[b]) for a, b in zip(yd, preds)]
    # zero-support classes in a small dev fold are routine during epoch
    # selection; the evaluation report is where exclusions get surfaced
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", metrics.ZeroSupportWarning)
        return metrics.uar(metrics.confusion(pairs))


def predict(
    model: ClassifierModel, features: Sequence[FeatureVector]
) -> list[PredictionRecord]:
    """Softmax scores and argmax labels (ties to the earlier class)."""
    if not features:
        return []
    X = np.stack([vec.values for vec in features]).astype(np.float64)
    if X.shape[1] != model.input_dim:
        raise ValueError(
            f"feature dimension {X.shape[1]} does not match model ({model.input_dim})"
        )
    scores = softmax(forward(model.params, X))
    out = []
    for vec, row in zip(features, scores):
        out.append(
            PredictionRecord(
                clip_id=vec.clip_id,
                scores=row,
                predicted=LABELS[int(row.argmax())],
            )
        )
    return out


# --- model file -----------------------------------------------------------
#
# Binary layout: magic "VOCM", u32 version, u8 kind (0 = logmel_stats,
# 1 = imported_embedding), u32 D, u32 H, u32 feature-config JSON length +
# bytes, parameter arrays as little-endian float64 (W1, b1 when H > 0,
# then W2, b2), u32 epoch count with (f8 train_loss, f8 dev_uar) pairs,
# and the u32 selected epoch.


def save_model(model: ClassifierModel, path: str | Path) -> None:
    cfg = model.feature_config
    cfg_json = json.dumps(
        {
            "kind": cfg.kind,
            "n_mels": cfg.n_mels,
            "window_ms": cfg.window_ms,
            "hop_ms": cfg.hop_ms,
            "fmin_hz": cfg.fmin_hz,
            "fmax_hz": cfg.fmax_hz,
            "log_floor": cfg.log_floor,
        },
        sort_keys=True,
    ).encode("utf-8")
    kind_code = 0 if cfg.kind == "logmel_stats" else 1
    p = model.params
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IBII", MODEL_VERSION, kind_code, model.input_dim, model.hidden_units))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        for arr in p.flat():
            fh.write(np.asarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(model.training_log)))
        for stats in model.training_log:
            fh.write(struct.pack("<dd", stats.train_loss, stats.dev_uar))
        fh.write(struct.pack("<I", model.selected_epoch))


def load_model(path: str | Path) -> ClassifierModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: bad model magic {magic!r}")
        version, kind_code, dim, hidden = struct.unpack("<IBII", fh.read(13))
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        cfg_obj = json.loads(fh.read(cfg_len).decode("utf-8"))
        feature_config = FeatureConfig(**cfg_obj)

        def read_array(shape):
            count = int(np.prod(shape))
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
            return data.reshape(shape)

        if hidden > 0:
            params = Params(
                W1=read_array((dim, hidden)),
                b1=read_array((hidden,)),
                W2=read_array((hidden, N_CLASSES)),
                b2=read_array((N_CLASSES,)),
            )
        else:
            params = Params(
                W1=None,
                b1=None,
                W2=read_array((dim, N_CLASSES)),
                b2=read_array((N_CLASSES,)),
            )
        (n_epochs,) = struct.unpack("<I", fh.read(4))
        log = []
        for i in range(n_epochs):
            train_loss, dev_uar = struct.unpack("<dd", fh.read(16))
            log.append(EpochStats(epoch=i + 1, train_loss=train_loss, dev_uar=dev_uar))
        (selected,) = struct.unpack("<I", fh.read(4))
        _ = kind_code
        return ClassifierModel(
            feature_config=feature_config,
            params=params,
            training_log=log,
            selected_epoch=selected,
        )


# --- predictions file ------------------------------------------------------


def write_predictions(
    preds: Sequence[PredictionRecord], path: str | Path, header: dict | None = None
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for rec in preds:
            obj = {
                "kind": "prediction",
                "clip_id": rec.clip_id,
                "scores": [float(s) for s in rec.scores],
                "predicted": rec.predicted.value,
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def load_predictions(path: str | Path) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("kind") != "prediction":
                continue
            scores = np.array(obj["scores"], dtype=np.float64)
            out.append(
                PredictionRecord(
                    clip_id=obj["clip_id"],
                    scores=scores,
                    predicted=LabelClass.from_name(obj["predicted"]),
                )
            )
    return out
