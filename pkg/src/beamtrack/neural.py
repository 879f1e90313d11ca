"""Small dense networks with exact backpropagation and Adam, in float64."""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels


class Activation(enum.IntEnum):
    IDENTITY = 0
    RELU = 1
    SCALED_SIGMOID = 2


class StaleCacheError(RuntimeError):
    """A forward cache was reused with parameters it was not computed from."""


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: Activation = Activation.RELU
    low: np.ndarray | None = None
    high: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    def copy(self) -> "Layer":
        return Layer(self.W.copy(), self.b.copy(), self.activation,
                     None if self.low is None else self.low.copy(),
                     None if self.high is None else self.high.copy())


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.W.shape[1] != prev.W.shape[0]:
                raise ValueError(
                    f"layer dims do not chain: {prev.W.shape} -> {nxt.W.shape}")
        for layer in self.layers:
            if layer.b.shape != (layer.W.shape[0],):
                raise ValueError("bias length must match layer output size")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.W.shape[0] for layer in self.layers]

    def copy(self) -> "MlpParams":
        return MlpParams([layer.copy() for layer in self.layers])

    def is_finite(self) -> bool:
        return all(np.isfinite(l.W).all() and np.isfinite(l.b).all() for l in self.layers)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.W.ravel(), l.b]) for l in self.layers])


@dataclass
class ForwardCache:
    net: MlpParams
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    outputs: list[np.ndarray]
    squeeze: bool


def init_mlp(sizes: Sequence[int], activations: Sequence[Activation],
             rng: np.random.Generator, bounds: tuple | None = None) -> MlpParams:
    """Uniform(+-1/sqrt(fan_in)) initialisation.

    ``bounds=(low, high)`` sets the output range of a ScaledSigmoid layer.
    """
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        lim = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-lim, lim, size=(fan_out, fan_in))
        b = rng.uniform(-lim, lim, size=fan_out)
        low = high = None
        if act == Activation.SCALED_SIGMOID:
            lo, hi = bounds if bounds is not None else (np.zeros(fan_out), np.ones(fan_out))
            low = np.broadcast_to(np.asarray(lo, float), (fan_out,)).copy()
            high = np.broadcast_to(np.asarray(hi, float), (fan_out,)).copy()
        layers.append(Layer(W, b, Activation(act), low, high))
    return MlpParams(layers)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(net: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != net.input_dim:
        raise ValueError(f"input has dimension {h.shape[1]}, network expects {net.input_dim}")
    inputs, preacts, outputs = [], [], []
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.W.T + layer.b
        preacts.append(z)
        if layer.activation == Activation.RELU:
            h = np.maximum(z, 0.0)
        elif layer.activation == Activation.SCALED_SIGMOID:
            h = layer.low + (layer.high - layer.low) * _sigmoid(z)
        else:
            h = z
        outputs.append(h)
    out = h[0] if squeeze else h
    return out, ForwardCache(net, inputs, preacts, outputs, squeeze)


def backward(net: MlpParams, cache: ForwardCache, output_gradient):
    """Gradients of sum(output * output_gradient) w.r.t. parameters and input.

    Returns ``(grads, input_gradient)`` with ``grads`` a list of (dW, db).
    """
    if cache.net is not net:
        raise StaleCacheError("cache was produced by a different parameter set")
    g = np.asarray(output_gradient, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)  # type: ignore
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        z = cache.preacts[i]
        if layer.activation == Activation.RELU:
            g = g * (z > 0.0)
        elif layer.activation == Activation.SCALED_SIGMOID:
            s = _sigmoid(z)
            g = g * (layer.high - layer.low) * s * (1.0 - s)
        grads[i] = (g.T @ cache.inputs[i], g.sum(axis=0))
        g = g @ layer.W
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class OptimizerState:
    m: list[tuple[np.ndarray, np.ndarray]]
    v: list[tuple[np.ndarray, np.ndarray]]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: MlpParams, lr: float = 1e-4, **kw) -> "OptimizerState":
        zeros = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]
        zeros2 = [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]
        return cls(zeros, zeros2, 0, lr, **kw)


def apply_gradients(net: MlpParams, opt: OptimizerState, grads, lr: float | None = None,
                    ascend: bool = False) -> tuple[MlpParams, OptimizerState]:
    """One Adam step; descends by default, ``ascend=True`` maximises."""
    if len(grads) != len(net.layers):
        raise ValueError("gradient list does not match network depth")
    for i, (dW, db) in enumerate(grads):
        if dW.shape != net.layers[i].W.shape or db.shape != net.layers[i].b.shape:
            raise ValueError(f"gradient shape mismatch in layer {i}")
        if not (np.isfinite(dW).all() and np.isfinite(db).all()):
            raise NonFiniteGradientError(f"non-finite gradient in layer {i}")
    lr = opt.lr if lr is None else lr
    step = opt.step + 1
    b1, b2, eps = opt.beta1, opt.beta2, opt.eps
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    sign = 1.0 if ascend else -1.0
    layers, new_m, new_v = [], [], []
    for layer, (dW, db), (mW, mb), (vW, vb) in zip(net.layers, grads, opt.m, opt.v):
        W, mW2, vW2 = kernels.adam_step(layer.W, dW, mW, vW, lr, b1, b2, eps, c1, c2, sign)
        b, mb2, vb2 = kernels.adam_step(layer.b, db, mb, vb, lr, b1, b2, eps, c1, c2, sign)
        layers.append(Layer(W, b, layer.activation, layer.low, layer.high))
        new_m.append((mW2, mb2))
        new_v.append((vW2, vb2))
    return MlpParams(layers), OptimizerState(new_m, new_v, step, opt.lr, b1, b2, eps)


def soft_update(target: MlpParams, online: MlpParams, tau_mix: float) -> MlpParams:
    """Blend ``tau_mix * online + (1 - tau_mix) * target`` elementwise."""
    if not 0.0 <= tau_mix <= 1.0:
        raise ValueError("tau_mix must lie in [0, 1]")
    if target.sizes() != online.sizes():
        raise ValueError("target and online networks have different shapes")
    layers = []
    for t, o in zip(target.layers, online.layers):
        layers.append(Layer(kernels.polyak(t.W, o.W, tau_mix),
                            kernels.polyak(t.b, o.b, tau_mix),
                            t.activation, t.low, t.high))
    return MlpParams(layers)


# --- checkpoints -----------------------------------------------------------
# Layout (little-endian): b"BTNN", u32 version, u32 layer count, then per layer
# u32 out, u32 in, u32 activation; then per layer W (row-major), b, and for
# ScaledSigmoid layers low and high, all float64.

_MAGIC = b"BTNN"
_VERSION = 1


def save_checkpoint(path, nets: Sequence[MlpParams]) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(nets)))
        for net in nets:
            fh.write(to_bytes(net))


def load_checkpoint(path) -> list[MlpParams]:
    with open(path, "rb") as fh:
        data = fh.read()
    (count,) = struct.unpack_from("<I", data, 0)
    offset = 4
    nets = []
    for _ in range(count):
        net, offset = from_bytes(data, offset)
        nets.append(net)
    return nets


def to_bytes(net: MlpParams) -> bytes:
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(net.layers))]
    for l in net.layers:
        parts.append(struct.pack("<III", l.W.shape[0], l.W.shape[1], int(l.activation)))
    for l in net.layers:
        parts.append(np.ascontiguousarray(l.W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(l.b, dtype="<f8").tobytes())
        if l.activation == Activation.SCALED_SIGMOID:
            parts.append(np.ascontiguousarray(l.low, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(l.high, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes, offset: int = 0) -> tuple[MlpParams, int]:
    if data[offset:offset + 4] != _MAGIC:
        raise ValueError("not a network checkpoint")
    version, n_layers = struct.unpack_from("<II", data, offset + 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset += 12
    headers = []
    for _ in range(n_layers):
        headers.append(struct.unpack_from("<III", data, offset))
        offset += 12

    def take(n):
        nonlocal offset
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).astype(np.float64)
        offset += 8 * n
        return arr

    layers = []
    for n_out, n_in, act in headers:
        W = take(n_out * n_in).reshape(n_out, n_in)
        b = take(n_out)
        low = high = None
        if act == Activation.SCALED_SIGMOID:
            low, high = take(n_out), take(n_out)
        layers.append(Layer(W, b, Activation(act), low, high))
    return MlpParams(layers), offset
