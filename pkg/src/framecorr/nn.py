"""Small dense networks in float64 numpy: forward, hand-derived backward, MSE, SGD+momentum.

Inputs may be a single vector (n_in,) or a batch (batch, n_in); traces and
gradients follow the same convention. Gradients for a batch are summed over
rows, so pair them with a loss gradient that already carries the 1/batch factor.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "relu", "sigmoid")
CHECKPOINT_MAGIC = b"FCNN"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return _sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d a / d z given pre-activation z and post-activation a."""
    if kind == "identity":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return a * (1.0 - a)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise NonFiniteError("layer parameters must be finite")

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class Mlp:
    layers: list[DenseLayer]

    def __post_init__(self):
        for k in range(len(self.layers) - 1):
            if self.layers[k].n_out != self.layers[k + 1].n_in:
                raise ShapeError(
                    f"layer {k} outputs {self.layers[k].n_out} but layer {k + 1} "
                    f"expects {self.layers[k + 1].n_in}"
                )

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in (W0, b0, W1, b1, ...) order; the live arrays, not copies."""
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def copy(self) -> "Mlp":
        return Mlp([l.copy() for l in self.layers])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


def init_mlp(sizes: list[int], activations: list[str], rng: np.random.Generator) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        limit = np.sqrt(6.0 / (n_in + n_out))
        layers.append(DenseLayer(rng.uniform(-limit, limit, (n_out, n_in)), np.zeros(n_out), act))
    return Mlp(layers)


@dataclass
class Trace:
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, Trace]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.n_in or x.ndim not in (1, 2):
        raise ShapeError(f"input shape {x.shape} does not match network input {net.n_in}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite network input")
    trace = Trace()
    a = x
    for layer in net.layers:
        trace.inputs.append(a)
        z = a @ layer.weights.T + layer.bias
        a = activate(layer.activation, z)
        trace.pre.append(z)
        trace.post.append(a)
    return a, trace


def backward(
    net: Mlp, trace: Trace, loss_grad: np.ndarray, return_input_grad: bool = False
):
    """Gradients of the loss w.r.t. every parameter, in `Mlp.params()` order.

    With `return_input_grad=True` also returns d loss / d input, which is how the
    autoencoder chains the decoder's gradient back into the encoder.
    """
    delta = np.asarray(loss_grad, dtype=np.float64)
    if delta.shape != trace.post[-1].shape:
        raise ShapeError(f"loss_grad shape {delta.shape} != output shape {trace.post[-1].shape}")
    grads: list[np.ndarray] = []
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        dz = delta * activation_grad(layer.activation, trace.pre[k], trace.post[k])
        a_in = trace.inputs[k]
        if dz.ndim == 1:
            gw = np.outer(dz, a_in)
            gb = dz.copy()
        else:
            gw = dz.T @ a_in
            gb = dz.sum(axis=0)
        grads += [gb, gw]
        delta = dz @ layer.weights
    grads.reverse()
    if return_input_grad:
        return grads, delta
    return grads


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient 2(pred - target)/n w.r.t. `pred`.

    For a batch the mean runs over every element, so the per-row loss is averaged
    across rows.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} and target {target.shape} differ")
    diff = pred - target
    n = diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / n


@dataclass
class TrainConfig:
    epochs: int = 15
    learning_rate: float = 1.0
    momentum: float = 0.9
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class Sgd:
    """SGD with heavy-ball momentum: v <- momentum*v + g; p <- p - lr*v."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.velocity: list[np.ndarray] | None = None

    def step(self, net: Mlp, grads: list[np.ndarray]) -> Mlp:
        params = net.params()
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ShapeError("gradient shapes do not match parameters")
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        lr, mu = self.config.learning_rate, self.config.momentum
        updates = []
        for v, g in zip(self.velocity, grads):
            v *= mu
            v += g
            updates.append(lr * v)
        if not all(np.all(np.isfinite(u)) for u in updates):
            raise NonFiniteError("non-finite parameter update")
        for p, u in zip(params, updates):
            p -= u
        return net


def sgd_step(net: Mlp, grads: list[np.ndarray], config: TrainConfig, state: Sgd | None = None) -> Mlp:
    """One optimizer step in place. Pass the same `state` across calls to keep momentum."""
    return (state or Sgd(config)).step(net, grads)


def finite_diff_check(
    net: Mlp, x: np.ndarray, target: np.ndarray, epsilon: float = 1e-4
) -> float:
    """Max relative error between backward() and central differences of the MSE loss."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not net.layers or net.n_params() == 0:
        return 0.0
    out, trace = forward(net, x)
    _, g = mse_loss(out, target)
    analytic = backward(net, trace, g)
    worst = 0.0
    for p, a in zip(net.params(), analytic):
        flat = p.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = mse_loss(forward(net, x)[0], target)[0]
            flat[i] = orig - epsilon
            lm = mse_loss(forward(net, x)[0], target)[0]
            flat[i] = orig
            num = (lp - lm) / (2 * epsilon)
            err = abs(a_flat[i] - num) / max(abs(a_flat[i]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# --- checkpoints -------------------------------------------------------------
#
# magic "FCNN" | u16 version | u32 extension length | extension (UTF-8 JSON) |
# u32 layer count | per layer: u32 in, u32 out, u8 activation id,
# weights row-major f64 LE, bias f64 LE


def dump_mlps(nets: list[Mlp], extension: dict | None = None) -> bytes:
    """Serialize one or more networks back to back; `extension` holds model metadata."""
    ext = dict(extension or {})
    ext["layers_per_net"] = [len(n.layers) for n in nets]
    blob = json.dumps(ext, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    layers = [l for n in nets for l in n.layers]
    buf.write(struct.pack("<I", len(layers)))
    for layer in layers:
        buf.write(struct.pack("<IIB", layer.n_in, layer.n_out, ACTIVATIONS.index(layer.activation)))
        buf.write(layer.weights.astype("<f8").tobytes())
        buf.write(layer.bias.astype("<f8").tobytes())
    return buf.getvalue()


def load_mlps(data: bytes) -> tuple[list[Mlp], dict]:
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not an FCNN checkpoint")
    version, ext_len = struct.unpack_from("<HI", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 10
    ext = json.loads(data[pos : pos + ext_len].decode("utf-8"))
    pos += ext_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    layers = []
    for _ in range(count):
        n_in, n_out, act = struct.unpack_from("<IIB", data, pos)
        pos += 9
        w = np.frombuffer(data, "<f8", n_in * n_out, pos).reshape(n_out, n_in).astype(np.float64)
        pos += 8 * n_in * n_out
        b = np.frombuffer(data, "<f8", n_out, pos).astype(np.float64)
        pos += 8 * n_out
        layers.append(DenseLayer(w, b, ACTIVATIONS[act]))
    if pos != len(data):
        raise ValueError("trailing bytes after checkpoint")
    nets = []
    for n in ext.pop("layers_per_net", [count]):
        nets.append(Mlp(layers[:n]))
        layers = layers[n:]
    return nets, ext
