"""Latent-space temporal prediction: fill a frame's missing segments from the previous K frames.

The predictor is a two-layer MLP mapping the concatenated (K, B, S) history of
filled feature vectors to a predicted (B, S) vector. Received segments are never
overwritten; only the undelivered tail is taken from the prediction.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn import Mlp, NonFiniteError, Sgd, TrainConfig, backward, dump_mlps, forward, init_mlp, load_mlps, mse_loss
from .progressive import ReceivedPrefix, TaildropDistribution, sample_keep_length, taildrop_mask, zero_pad

log = logging.getLogger(__name__)

# a lower step than the autoencoder's: larger steps drive output sigmoids whose
# targets sit near 0 into saturation, where they stop learning
PREDICTOR_TRAIN_CONFIG = TrainConfig(learning_rate=0.25)


@dataclass
class PredictorModel:
    net: Mlp
    history_length: int
    n_segments: int
    segment_width: int

    def __post_init__(self):
        latent = self.n_segments * self.segment_width
        if self.net.n_in != self.history_length * latent or self.net.n_out != latent:
            raise ValueError(
                f"predictor net is {self.net.n_in}->{self.net.n_out}, "
                f"expected {self.history_length * latent}->{latent}"
            )

    def to_bytes(self) -> bytes:
        ext = {"kind": "predictor", "K": self.history_length, "B": self.n_segments, "S": self.segment_width}
        return dump_mlps([self.net], ext)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PredictorModel":
        (net,), ext = load_mlps(data)
        if ext.get("kind") != "predictor":
            raise ValueError("checkpoint is not a predictor")
        return cls(net, ext["K"], ext["B"], ext["S"])

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "PredictorModel":
        return cls.from_bytes(Path(path).read_bytes())


def init_predictor(
    history_length: int,
    n_segments: int,
    segment_width: int,
    hidden: int = 64,
    rng: np.random.Generator | None = None,
) -> PredictorModel:
    rng = rng if rng is not None else np.random.default_rng(0)
    latent = n_segments * segment_width
    net = init_mlp([history_length * latent, hidden, latent], ["relu", "sigmoid"], rng)
    return PredictorModel(net, history_length, n_segments, segment_width)


class History:
    """The last K filled feature vectors, oldest first."""

    def __init__(self, history_length: int, items: Iterable[np.ndarray] = ()):
        if history_length < 1:
            raise ValueError("history length must be >= 1")
        self.history_length = history_length
        self._items: deque[np.ndarray] = deque(maxlen=history_length)
        for v in items:
            self.push(v)

    def push(self, filled: np.ndarray) -> "History":
        self._items.append(np.array(filled, dtype=np.float64))
        return self

    @property
    def full(self) -> bool:
        return len(self._items) == self.history_length

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def as_array(self) -> np.ndarray:
        return np.stack(list(self._items))


def push_history(history: History, filled: np.ndarray) -> History:
    return history.push(filled)


def predict(model: PredictorModel, history: History | Sequence[np.ndarray]) -> np.ndarray:
    items = list(history)
    if len(items) != model.history_length:
        raise ValueError(f"history holds {len(items)} vectors, predictor needs {model.history_length}")
    x = np.concatenate([np.asarray(v, dtype=np.float64).reshape(-1) for v in items])
    out = forward(model.net, x)[0]
    return out.reshape(model.n_segments, model.segment_width)


def fill_missing(prefix: ReceivedPrefix, predicted: np.ndarray) -> np.ndarray:
    """Delivered segments verbatim, then the predicted values for the rest."""
    predicted = np.asarray(predicted, dtype=np.float64)
    if predicted.ndim != 2:
        raise ValueError(f"predicted must be (B, S), got {predicted.shape}")
    n_segments, width = predicted.shape
    if prefix.m > n_segments:
        raise ValueError(f"prefix has {prefix.m} segments, prediction only {n_segments}")
    if prefix.m and prefix.data.shape[1] != width:
        raise ValueError(f"segment width {prefix.data.shape[1]} != {width}")
    out = predicted.copy()
    out[: prefix.m] = prefix.data
    return out


def _windows(seqs: Sequence[np.ndarray], k: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack (inputs (n, K, B, S), targets (n, B, S)) over every position i >= K."""
    xs, ys = [], []
    for seq in seqs:
        for i in range(k, len(seq)):
            xs.append(seq[i - k : i])
            ys.append(seq[i])
    return np.array(xs), np.array(ys)


def _usable(seqs: Sequence[np.ndarray], k: int, what: str) -> list[np.ndarray]:
    out = []
    for j, seq in enumerate(seqs):
        seq = np.asarray(seq, dtype=np.float64)
        if len(seq) < k + 1:
            log.warning("%s sequence %d has %d frames, needs %d; skipped", what, j, len(seq), k + 1)
            continue
        out.append(seq)
    return out


def train_predictor(
    encoded: Sequence[np.ndarray],
    history_length: int = 1,
    config: TrainConfig = PREDICTOR_TRAIN_CONFIG,
    dist: TaildropDistribution = TaildropDistribution(),
    val_encoded: Sequence[np.ndarray] | None = None,
    hidden: int = 64,
    history: list[float] | None = None,
) -> PredictorModel:
    """Fit the predictor on per-video (n_frames, B, S) latent stacks from a frozen encoder.

    Each input window has every history vector independently taildropped and
    zero-padded, with fresh draws every epoch; the target is the true next
    vector. Validation uses untouched windows from `val_encoded` (or the
    training videos when none are given), and the lowest-loss epoch is returned.
    """
    k = history_length
    train = _usable(encoded, k, "training")
    if not train:
        raise ValueError(f"no training sequence is longer than K={k}")
    val = _usable(val_encoded, k, "validation") if val_encoded is not None else train
    if not val:
        raise ValueError(f"no validation sequence is longer than K={k}")
    _, n_segments, width = train[0].shape
    rng = np.random.default_rng(config.seed)
    model = init_predictor(k, n_segments, width, hidden, rng)
    x_train, y_train = _windows(train, k)
    x_val, y_val = _windows(val, k)
    x_val = x_val.reshape(len(x_val), -1)
    y_train = y_train.reshape(len(y_train), -1)
    y_val = y_val.reshape(len(y_val), -1)
    opt = Sgd(config)
    best_loss, best = np.inf, None
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            keep = np.array([sample_keep_length(dist, n_segments, rng) for _ in range(len(idx) * k)])
            mask = taildrop_mask(keep, n_segments, width).reshape(len(idx), -1)
            x = x_train[idx].reshape(len(idx), -1) * mask
            out, trace = forward(model.net, x)
            loss, g = mse_loss(out, y_train[idx])
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite predictor loss at epoch {epoch}")
            opt.step(model.net, backward(model.net, trace, g))
        val_loss = mse_loss(forward(model.net, x_val)[0], y_val)[0]
        log.info("predictor epoch %d: val loss %.6g", epoch + 1, val_loss)
        if history is not None:
            history.append(val_loss)
        if val_loss < best_loss:
            best_loss, best = val_loss, model.net.copy()
    model.net = best
    return model


def reconstruct_latents(
    prefixes: Sequence[ReceivedPrefix],
    n_segments: int,
    segment_width: int,
    predictor: PredictorModel | None = None,
) -> np.ndarray:
    """Fill every frame's received prefix in stream order.

    Without a predictor, or while the history is shorter than K, the tail is
    zero-padded. Filled vectors feed the history for later frames.
    """
    hist = History(predictor.history_length) if predictor is not None else None
    out = []
    for prefix in prefixes:
        if predictor is not None and hist.full and prefix.m < n_segments:
            filled = fill_missing(prefix, predict(predictor, hist))
        else:
            filled = zero_pad(prefix, n_segments, segment_width)
        if hist is not None:
            hist.push(filled)
        out.append(filled)
    return np.array(out)
