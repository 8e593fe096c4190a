"""Progressive (prefix-decodable) frame autoencoder trained with stochastic taildrop.

A frame is encoded into B importance-ordered segments of S latent values each,
held as a (B, S) array. A receiver that only got the first m segments pads the
rest with zeros and decodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .frame_io import FrameSequence
from .nn import Mlp, NonFiniteError, Sgd, TrainConfig, backward, dump_mlps, forward, init_mlp, load_mlps, mse_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaildropDistribution:
    """Keep all B segments with `keep_all_probability`, otherwise keep m ~ U{1..B-1}."""

    keep_all_probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.keep_all_probability <= 1.0:
            raise ValueError("keep_all_probability must be in [0, 1]")

    def pmf(self, n_segments: int) -> np.ndarray:
        """P(m = k) for k = 0..B (index 0 is always zero)."""
        p = np.zeros(n_segments + 1)
        if n_segments == 1:
            p[1] = 1.0
            return p
        p[n_segments] = self.keep_all_probability
        p[1:n_segments] = (1.0 - self.keep_all_probability) / (n_segments - 1)
        return p


def sample_keep_length(dist: TaildropDistribution, n_segments: int, rng: np.random.Generator) -> int:
    if n_segments == 1 or rng.random() < dist.keep_all_probability:
        return n_segments
    return int(rng.integers(1, n_segments))


@dataclass(frozen=True)
class ReceivedPrefix:
    """The first m segments of a feature vector, as delivered."""

    data: np.ndarray  # (m, S)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"prefix data must be (m, S), got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @classmethod
    def of(cls, features: np.ndarray, m: int) -> "ReceivedPrefix":
        return cls(np.asarray(features)[:m])


def zero_pad(prefix: ReceivedPrefix, n_segments: int, segment_width: int) -> np.ndarray:
    if prefix.m > n_segments:
        raise ValueError(f"prefix has {prefix.m} segments, model has only {n_segments}")
    if prefix.m and prefix.data.shape[1] != segment_width:
        raise ValueError(f"segment width {prefix.data.shape[1]} != {segment_width}")
    out = np.zeros((n_segments, segment_width))
    out[: prefix.m] = prefix.data
    return out


def taildrop_mask(keep: np.ndarray, n_segments: int, segment_width: int) -> np.ndarray:
    """(len(keep), B*S) 0/1 mask keeping the first keep[i] segments of row i."""
    seg = np.repeat(np.arange(n_segments), segment_width)
    return (seg[None, :] < np.asarray(keep)[:, None]).astype(np.float64)


@dataclass
class AutoencoderModel:
    encoder: Mlp
    decoder: Mlp
    n_segments: int
    segment_width: int
    dims: tuple[int, int, int]  # (width, height, channels)
    taildrop: TaildropDistribution = TaildropDistribution()

    def __post_init__(self):
        latent = self.n_segments * self.segment_width
        if self.encoder.n_out != latent or self.decoder.n_in != latent:
            raise ValueError("encoder output / decoder input must equal B*S")
        if self.encoder.n_in != self.frame_dim or self.decoder.n_out != self.frame_dim:
            raise ValueError("encoder input / decoder output must equal the frame size")
        if self.decoder.layers[-1].activation != "sigmoid":
            raise ValueError("decoder must end in a sigmoid")

    @property
    def frame_dim(self) -> int:
        w, h, c = self.dims
        return w * h * c

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        w, h, c = self.dims
        return h, w, c

    def to_bytes(self) -> bytes:
        ext = {
            "kind": "autoencoder",
            "B": self.n_segments,
            "S": self.segment_width,
            "dims": list(self.dims),
            "keep_all_probability": self.taildrop.keep_all_probability,
        }
        return dump_mlps([self.encoder, self.decoder], ext)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AutoencoderModel":
        (enc, dec), ext = load_mlps(data)
        if ext.get("kind") != "autoencoder":
            raise ValueError("checkpoint is not an autoencoder")
        return cls(
            enc, dec, ext["B"], ext["S"], tuple(ext["dims"]),
            TaildropDistribution(ext["keep_all_probability"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "AutoencoderModel":
        return cls.from_bytes(Path(path).read_bytes())


def init_autoencoder(
    dims: tuple[int, int, int],
    n_segments: int = 10,
    segment_width: int = 1,
    hidden: int = 256,
    seed: int = 0,
    taildrop: TaildropDistribution = TaildropDistribution(),
    rng: np.random.Generator | None = None,
) -> AutoencoderModel:
    rng = rng or np.random.default_rng(seed)
    w, h, c = dims
    d = w * h * c
    latent = n_segments * segment_width
    enc = init_mlp([d, hidden, latent], ["relu", "sigmoid"], rng)
    dec = init_mlp([latent, hidden, d], ["relu", "sigmoid"], rng)
    return AutoencoderModel(enc, dec, n_segments, segment_width, tuple(dims), taildrop)


def _flatten(model: AutoencoderModel, frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    single = frames.ndim == 3
    batch = frames[None] if single else frames
    if batch.shape[1:] != model.frame_shape:
        raise ValueError(f"frame shape {batch.shape[1:]} does not match model {model.frame_shape}")
    return batch.reshape(len(batch), -1)


def encode(model: AutoencoderModel, frame: np.ndarray) -> np.ndarray:
    """Encode one (h, w, c) frame to (B, S), or a stack (n, h, w, c) to (n, B, S)."""
    x = _flatten(model, frame)
    z = forward(model.encoder, x)[0]
    z = z.reshape(len(x), model.n_segments, model.segment_width)
    return z[0] if np.ndim(frame) == 3 else z


def decode(model: AutoencoderModel, features: np.ndarray) -> np.ndarray:
    """Decode (B, S) to an (h, w, c) frame, or (n, B, S) to (n, h, w, c)."""
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 2
    batch = f[None] if single else f
    if batch.shape[1:] != (model.n_segments, model.segment_width):
        raise ValueError(
            f"features {batch.shape[1:]} do not match model ({model.n_segments}, {model.segment_width})"
        )
    out = forward(model.decoder, batch.reshape(len(batch), -1))[0]
    out = out.reshape((len(batch),) + model.frame_shape)
    return out[0] if single else out


def reconstruction_loss(model: AutoencoderModel, frames: np.ndarray, keep: int | None = None) -> float:
    """Per-pixel MSE of decode(encode(x)) over `frames`, optionally keeping only `keep` segments."""
    x = _flatten(model, frames)
    z = forward(model.encoder, x)[0]
    if keep is not None:
        z = z * taildrop_mask(np.full(len(x), keep), model.n_segments, model.segment_width)
    out = forward(model.decoder, z)[0]
    return mse_loss(out, x)[0]


def _stack(seqs: Sequence[FrameSequence]) -> np.ndarray:
    return np.concatenate([s.frames for s in seqs])


def train_autoencoder(
    train: Sequence[FrameSequence],
    val: Sequence[FrameSequence],
    config: TrainConfig = TrainConfig(),
    dist: TaildropDistribution = TaildropDistribution(),
    n_segments: int = 10,
    segment_width: int = 1,
    hidden: int = 256,
    history: list[float] | None = None,
) -> AutoencoderModel:
    """Fit encoder and decoder jointly on frame MSE with a per-sample taildrop mask.

    Validation loss is the full-vector reconstruction MSE; the parameters from
    the epoch with the lowest validation loss are returned. Per-epoch validation
    losses are appended to `history` when given.
    """
    if not train or not val:
        raise ValueError("train and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    dims = train[0].dims
    model = init_autoencoder(dims, n_segments, segment_width, hidden, taildrop=dist, rng=rng)
    x_train = _flatten(model, _stack(train))
    x_val = _stack(val)
    opt_enc, opt_dec = Sgd(config), Sgd(config)
    best_loss, best = np.inf, None
    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), config.batch_size):
            x = x_train[order[start : start + config.batch_size]]
            keep = np.array([sample_keep_length(dist, n_segments, rng) for _ in range(len(x))])
            mask = taildrop_mask(keep, n_segments, segment_width)
            z, enc_trace = forward(model.encoder, x)
            out, dec_trace = forward(model.decoder, z * mask)
            loss, g = mse_loss(out, x)
            if not np.isfinite(loss):
                raise NonFiniteError(f"non-finite training loss at epoch {epoch}")
            dec_grads, dz = backward(model.decoder, dec_trace, g, return_input_grad=True)
            enc_grads = backward(model.encoder, enc_trace, dz * mask)
            opt_dec.step(model.decoder, dec_grads)
            opt_enc.step(model.encoder, enc_grads)
        val_loss = reconstruction_loss(model, x_val)
        if not np.isfinite(val_loss):
            raise NonFiniteError(f"non-finite validation loss at epoch {epoch}")
        log.info("autoencoder epoch %d: val loss %.6f", epoch + 1, val_loss)
        if history is not None:
            history.append(val_loss)
        if val_loss < best_loss:
            best_loss = val_loss
            best = (model.encoder.copy(), model.decoder.copy())
    model.encoder, model.decoder = best
    return model
