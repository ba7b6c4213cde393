"""Trainable preference head: a two-hidden-layer MLP on difference vectors.

Architecture is d -> h1 -> h2 -> 1 with ReLU hidden activations and a sigmoid
output, where h1 = min(floor(d/2), 250) and h2 = min(floor(d/4), 125). The
objective is mean binary cross-entropy plus an L2 penalty on the weight
matrices scaled by alpha / (2n), optimized with seeded mini-batch Adam and
early stopping on the epoch training loss. Everything is plain numpy with
hand-written backpropagation, so training is fully deterministic given the
seed and checkable against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .preference import PreferencePair

__all__ = [
    "HeadConfig",
    "TrainedHead",
    "hidden_sizes",
    "init_head",
    "forward",
    "forward_batch",
    "loss",
    "grad",
    "train",
    "accuracy",
    "save_head",
    "load_head",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Probability clip inside the cross-entropy, for numerical stability.
PROB_CLIP = 1e-12

_PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def hidden_sizes(input_dim: int) -> tuple[int, int]:
    """Capped halving sizes; floor division, clamped to at least one unit."""
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    h1 = max(1, min(input_dim // 2, 250))
    h2 = max(1, min(input_dim // 4, 125))
    return h1, h2


@dataclass(frozen=True)
class HeadConfig:
    input_dim: int
    l2_alpha: float = 1.0
    max_epochs: int = 25
    tol: float = 1e-3
    patience: int = 3
    learning_rate: float = 1e-3
    batch_size: int | None = None  # None resolves to min(200, n) at fit time
    seed: int = 0

    def __post_init__(self):
        h1, h2 = hidden_sizes(self.input_dim)
        if not (h1 >= h2 >= 1):
            raise ValueError(f"invalid hidden sizes ({h1}, {h2})")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")
        if self.learning_rate <= 0 or self.tol < 0:
            raise ValueError("learning_rate must be > 0 and tol >= 0")

    @property
    def hidden(self) -> tuple[int, int]:
        return hidden_sizes(self.input_dim)


@dataclass(eq=False)
class TrainedHead:
    """Parameters plus training metadata. Treated as immutable once trained."""

    config: HeadConfig
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    epochs_run: int = 0
    final_loss: float = math.nan
    seed: int = 0

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAM_NAMES}


def init_head(cfg: HeadConfig) -> TrainedHead:
    """Glorot-uniform weights from the seeded generator, zero biases."""
    rng = np.random.default_rng([cfg.seed, 0])
    d = cfg.input_dim
    h1, h2 = cfg.hidden

    def glorot(fan_out: int, fan_in: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    return TrainedHead(
        config=cfg,
        W1=glorot(h1, d),
        b1=np.zeros(h1),
        W2=glorot(h2, h1),
        b2=np.zeros(h2),
        W3=glorot(1, h2),
        b3=np.zeros(1),
        seed=cfg.seed,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_full(
    head: TrainedHead, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return (z1, a1, z2, a2, p) for a (n, d) batch."""
    z1 = X @ head.W1.T + head.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ head.W2.T + head.b2
    a2 = np.maximum(z2, 0.0)
    z3 = (a2 @ head.W3.T + head.b3).ravel()
    p = np.clip(_sigmoid(z3), PROB_CLIP, 1.0 - PROB_CLIP)
    return z1, a1, z2, a2, p


def forward_batch(head: TrainedHead, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != head.config.input_dim:
        raise ValueError(
            f"input dim {X.shape[1]} != head dim {head.config.input_dim}"
        )
    p = _forward_full(head, X)[4]
    if not np.all(np.isfinite(p)):
        raise FloatingPointError("non-finite head output")
    return p


def forward(head: TrainedHead, delta_z: np.ndarray) -> float:
    """Probability that affect increases along the given difference vector."""
    return float(forward_batch(head, np.asarray(delta_z, dtype=np.float64))[0])


def _check_batch(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y must have matching lengths")
    if X.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    return X, y


def loss(head: TrainedHead, X: np.ndarray, y: np.ndarray) -> float:
    """Mean BCE plus alpha/(2n) * sum of squared weights (biases excluded)."""
    X, y = _check_batch(X, y)
    n = X.shape[0]
    p = _forward_full(head, X)[4]
    bce = -float(np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    reg = sum(float(np.sum(W * W)) for W in (head.W1, head.W2, head.W3))
    return bce + head.config.l2_alpha / (2.0 * n) * reg


def grad(head: TrainedHead, X: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic gradient of loss() with respect to every parameter."""
    X, y = _check_batch(X, y)
    n = X.shape[0]
    z1, a1, z2, a2, p = _forward_full(head, X)
    alpha = head.config.l2_alpha

    dz3 = (p - y) / n  # (n,)
    gW3 = dz3[None, :] @ a2 + alpha / n * head.W3
    gb3 = np.array([dz3.sum()])
    da2 = np.outer(dz3, head.W3.ravel())
    dz2 = da2 * (z2 > 0)
    gW2 = dz2.T @ a1 + alpha / n * head.W2
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ head.W2
    dz1 = da1 * (z1 > 0)
    gW1 = dz1.T @ X + alpha / n * head.W1
    gb1 = dz1.sum(axis=0)
    return {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2, "W3": gW3, "b3": gb3}


def _pairs_to_arrays(pairs: Sequence[PreferencePair]) -> tuple[np.ndarray, np.ndarray]:
    if not pairs:
        raise ValueError("no pairs to train or evaluate on")
    if any(p.delta_z is None for p in pairs):
        raise ValueError("pairs lack difference representations")
    X = np.stack([p.delta_z for p in pairs]).astype(np.float64)
    y = np.asarray([p.label for p in pairs], dtype=np.float64)
    return X, y


def train(
    head: TrainedHead, pairs: Sequence[PreferencePair], cfg: HeadConfig | None = None
) -> TrainedHead:
    """Mini-batch Adam with seeded shuffling and loss-based early stopping.

    Training stops once the full-data epoch loss has failed to improve on the
    best seen value by more than tol for patience consecutive epochs. The
    input head is left untouched; a new TrainedHead is returned.
    """
    cfg = cfg or head.config
    X, y = _pairs_to_arrays(pairs)
    return _train_arrays(head, X, y, cfg)


def _train_arrays(
    head: TrainedHead, X: np.ndarray, y: np.ndarray, cfg: HeadConfig
) -> TrainedHead:
    X, y = _check_batch(X, y)
    if X.shape[1] != cfg.input_dim:
        raise ValueError(f"pair dim {X.shape[1]} != configured dim {cfg.input_dim}")
    n = X.shape[0]
    batch = min(200, n) if cfg.batch_size is None else min(cfg.batch_size, n)

    work = replace_params(head, {k: v.copy() for k, v in head.params().items()})
    rng = np.random.default_rng([cfg.seed, 1])
    m = {k: np.zeros_like(v) for k, v in work.params().items()}
    v = {k: np.zeros_like(p) for k, p in work.params().items()}
    t = 0

    best = math.inf
    bad_epochs = 0
    epochs_run = 0
    epoch_loss = math.nan
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            g = grad(work, X[idx], y[idx])
            t += 1
            for name, gval in g.items():
                m[name] = ADAM_BETA1 * m[name] + (1 - ADAM_BETA1) * gval
                v[name] = ADAM_BETA2 * v[name] + (1 - ADAM_BETA2) * gval * gval
                m_hat = m[name] / (1 - ADAM_BETA1**t)
                v_hat = v[name] / (1 - ADAM_BETA2**t)
                param = getattr(work, name)
                param -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        epoch_loss = loss(work, X, y)
        epochs_run = epoch
        if best - epoch_loss > cfg.tol:
            best = epoch_loss
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break

    work.config = cfg
    work.epochs_run = epochs_run
    work.final_loss = epoch_loss
    work.seed = cfg.seed
    return work


def replace_params(head: TrainedHead, params: dict[str, np.ndarray]) -> TrainedHead:
    return TrainedHead(
        config=head.config,
        W1=params["W1"],
        b1=params["b1"],
        W2=params["W2"],
        b2=params["b2"],
        W3=params["W3"],
        b3=params["b3"],
        epochs_run=head.epochs_run,
        final_loss=head.final_loss,
        seed=head.seed,
    )


def accuracy(head: TrainedHead, pairs: Sequence[PreferencePair]) -> float:
    """Fraction of pairs whose thresholded probability matches the label.

    A probability of exactly 0.5 counts as predicting 0.
    """
    X, y = _pairs_to_arrays(pairs)
    preds = (forward_batch(head, X) > 0.5).astype(np.float64)
    return float(np.mean(preds == y))


def save_head(head: TrainedHead, path: str | Path) -> None:
    """Write a versioned JSON checkpoint that round-trips bit-exactly."""
    doc = {
        "format": "lasca-head-v1",
        "config": {
            "input_dim": head.config.input_dim,
            "l2_alpha": head.config.l2_alpha,
            "max_epochs": head.config.max_epochs,
            "tol": head.config.tol,
            "patience": head.config.patience,
            "learning_rate": head.config.learning_rate,
            "batch_size": head.config.batch_size,
            "seed": head.config.seed,
        },
        "params": {name: p.tolist() for name, p in head.params().items()},
        "metadata": {
            "epochs_run": head.epochs_run,
            "final_loss": head.final_loss,
            "seed": head.seed,
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_head(path: str | Path) -> TrainedHead:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != "lasca-head-v1":
        raise ValueError(f"unsupported checkpoint format: {doc.get('format')}")
    cfg = HeadConfig(**doc["config"])
    params = {
        name: np.asarray(vals, dtype=np.float64)
        for name, vals in doc["params"].items()
    }
    meta = doc["metadata"]
    head = TrainedHead(
        config=cfg,
        **params,
        epochs_run=int(meta["epochs_run"]),
        final_loss=float(meta["final_loss"]),
        seed=int(meta["seed"]),
    )
    h1, h2 = cfg.hidden
    expected = {
        "W1": (h1, cfg.input_dim),
        "b1": (h1,),
        "W2": (h2, h1),
        "b2": (h2,),
        "W3": (1, h2),
        "b3": (1,),
    }
    for name, shape in expected.items():
        if head.params()[name].shape != shape:
            raise ValueError(f"checkpoint parameter {name} has wrong shape")
    return head
