"""Layers with explicit forward/backward passes.

Every layer caches what its backward pass needs during ``forward``; calling
``backward`` first raises :class:`LayerStateError`. Parameter gradients
accumulate into ``Param.grad`` until :meth:`Layer.zero_grad`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import InvalidShapeError, Rng

PaddingMode = Literal["zero", "circular_frequency"]


class LayerStateError(RuntimeError):
    pass


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray

    @classmethod
    def of(cls, name: str, value) -> "Param":
        value = np.asarray(value, dtype=np.float64)
        return cls(name, value, np.zeros_like(value))


class Layer:
    training: bool = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    def train(self, mode: bool = True) -> "Layer":
        self.training = mode
        return self

    def eval(self) -> "Layer":
        return self.train(False)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def _cached(self):
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise LayerStateError(f"{type(self).__name__}.backward called before forward")
        return cache


def kaiming_uniform(shape, fan_in: int, rng: Rng) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(shape, -bound, bound)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    padding_mode: PaddingMode = "zero"
    bias: bool = True

    def __post_init__(self):
        kt, kf = self.kernel
        if kt % 2 == 0 or kf % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got {self.kernel}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.padding_mode not in ("zero", "circular_frequency"):
            raise ValueError(f"unknown padding mode {self.padding_mode!r}")


def pad_input(x: np.ndarray, kernel: tuple[int, int], padding_mode: str) -> np.ndarray:
    pt, pf = kernel[0] // 2, kernel[1] // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (0, 0)))
    if padding_mode == "circular_frequency":
        return np.pad(xp, ((0, 0), (0, 0), (0, 0), (pf, pf)), mode="wrap")
    return np.pad(xp, ((0, 0), (0, 0), (0, 0), (pf, pf)))


def conv_windows(x: np.ndarray, kernel: tuple[int, int], padding_mode: str) -> np.ndarray:
    """Sliding windows of shape (N, C, T, F, kt, kf) over the padded input."""
    return sliding_window_view(pad_input(x, kernel, padding_mode), kernel, axis=(2, 3))


def unpad_grad(dxp: np.ndarray, kernel: tuple[int, int], padding_mode: str) -> np.ndarray:
    """Adjoint of :func:`pad_input`."""
    pt, pf = kernel[0] // 2, kernel[1] // 2
    T = dxp.shape[2] - 2 * pt
    F = dxp.shape[3] - 2 * pf
    dx = dxp[:, :, pt : pt + T, :]
    if padding_mode == "circular_frequency" and pf > 0:
        out = dx[:, :, :, pf : pf + F].copy()
        # wrapped columns map back onto the opposite edge; pf may exceed F
        for j in range(pf):
            out[:, :, :, (F - pf + j) % F] += dx[:, :, :, j]
            out[:, :, :, j % F] += dx[:, :, :, pf + F + j]
        return out
    return dx[:, :, :, pf : pf + F].copy()


def windows_adjoint(dwin: np.ndarray, x_shape, kernel: tuple[int, int], padding_mode: str) -> np.ndarray:
    """Scatter window gradients (N, C, T, F, kt, kf) back onto the input."""
    N, C, T, F = x_shape
    kt, kf = kernel
    dxp = np.zeros((N, C, T + kt - 1, F + kf - 1))
    for i in range(kt):
        for j in range(kf):
            dxp[:, :, i : i + T, j : j + F] += dwin[..., i, j]
    return unpad_grad(dxp, kernel, padding_mode)


def conv2d_forward(x: np.ndarray, spec: ConvSpec, weights: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """Same-size 2-D cross-correlation, stride 1.

    ``weights`` has shape (out_channels, in_channels, kt, kf). Time is always
    zero-padded; frequency is zero- or circularly padded per ``spec``.
    """
    if x.ndim != 4:
        raise InvalidShapeError(f"conv input must be rank 4, got {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise InvalidShapeError(f"conv expects {spec.in_channels} input channels, got {x.shape[1]}")
    if weights.shape != (spec.out_channels, spec.in_channels, *spec.kernel):
        raise InvalidShapeError(f"weight shape {weights.shape} does not match {spec}")
    return _conv_windows_apply(conv_windows(x, spec.kernel, spec.padding_mode), weights, bias)


def _conv_windows_apply(win: np.ndarray, weights: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    y = np.einsum("nctfij,ocij->notf", win, weights, optimize=True)
    if bias is not None:
        y = y + bias[None, :, None, None]
    return y


class Conv2D(Layer):
    def __init__(self, spec: ConvSpec, rng: Rng, name: str = "conv"):
        self.spec = spec
        kt, kf = spec.kernel
        fan_in = spec.in_channels * kt * kf
        self.weight = Param.of(f"{name}.weight", kaiming_uniform((spec.out_channels, spec.in_channels, kt, kf), fan_in, rng))
        self.bias = Param.of(f"{name}.bias", np.zeros(spec.out_channels)) if spec.bias else None
        self._cache = None

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise InvalidShapeError(f"conv expects {self.spec.in_channels} input channels, got shape {x.shape}")
        win = conv_windows(x, self.spec.kernel, self.spec.padding_mode)
        self._cache = (x.shape, win)
        return _conv_windows_apply(win, self.weight.value, None if self.bias is None else self.bias.value)

    def backward(self, dy):
        x_shape, win = self._cached()
        self.weight.grad += np.einsum("notf,nctfij->ocij", dy, win, optimize=True)
        if self.bias is not None:
            self.bias.grad += dy.sum(axis=(0, 2, 3))
        dwin = np.einsum("notf,ocij->nctfij", dy, self.weight.value, optimize=True)
        return windows_adjoint(dwin, x_shape, self.spec.kernel, self.spec.padding_mode)

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoolSpec:
    kind: Literal["average", "max"] = "average"
    window: tuple[int, int] = (1, 2)


def _pool_view(x: np.ndarray, window) -> np.ndarray:
    N, C, T, F = x.shape
    pt, pf = window
    if T % pt or F % pf:
        raise InvalidShapeError(f"pool window {tuple(window)} does not divide (T, F) = {(T, F)}")
    return x.reshape(N, C, T // pt, pt, F // pf, pf).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, T // pt, F // pf, pt * pf)


def pool_forward(x: np.ndarray, spec: PoolSpec) -> np.ndarray:
    v = _pool_view(x, spec.window)
    return v.mean(axis=-1) if spec.kind == "average" else v.max(axis=-1)


class Pool2D(Layer):
    def __init__(self, spec: PoolSpec):
        if spec.kind not in ("average", "max"):
            raise ValueError(f"unknown pool kind {spec.kind!r}")
        self.spec = spec
        self._cache = None

    def forward(self, x):
        v = _pool_view(x, self.spec.window)
        if self.spec.kind == "average":
            self._cache = (x.shape, None)
            return v.mean(axis=-1)
        idx = np.argmax(v, axis=-1)  # first index on ties
        self._cache = (x.shape, idx)
        return np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        shape, idx = self._cached()
        N, C, T, F = shape
        pt, pf = self.spec.window
        if idx is None:
            dv = np.repeat(dy[..., None] / (pt * pf), pt * pf, axis=-1)
        else:
            dv = np.zeros(dy.shape + (pt * pf,))
            np.put_along_axis(dv, idx[..., None], dy[..., None], axis=-1)
        return dv.reshape(N, C, T // pt, F // pf, pt, pf).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


class GlobalAvgPool(Layer):
    """Mean over (T, F): (N, C, T, F) -> (N, C)."""

    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        N, C, T, F = self._cached()
        return np.broadcast_to(dy[:, :, None, None] / (T * F), (N, C, T, F)).copy()


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(z):
    return np.maximum(z, 0.0)


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dy):
        return np.where(self._cached(), dy, 0.0)


class Sigmoid(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x):
        self._cache = sigmoid(x)
        return self._cache

    def backward(self, dy):
        s = self._cached()
        return dy * s * (1.0 - s)


class ContextGating(Layer):
    """y = x * sigmoid(W x + b), W mixing channels at every (t, f)."""

    def __init__(self, channels: int, rng: Rng, name: str = "cg"):
        self.channels = channels
        self.weight = Param.of(f"{name}.weight", kaiming_uniform((channels, channels), channels, rng))
        self.bias = Param.of(f"{name}.bias", np.zeros(channels))
        self._cache = None

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise InvalidShapeError(f"context gating expects {self.channels} channels, got {x.shape[1]}")
        z = np.einsum("oc,nctf->notf", self.weight.value, x, optimize=True) + self.bias.value[None, :, None, None]
        g = sigmoid(z)
        self._cache = (x, g)
        return x * g

    def backward(self, dy):
        x, g = self._cached()
        dz = dy * x * g * (1.0 - g)
        self.weight.grad += np.einsum("notf,nctf->oc", dz, x, optimize=True)
        self.bias.grad += dz.sum(axis=(0, 2, 3))
        return dy * g + np.einsum("oc,notf->nctf", self.weight.value, dz, optimize=True)

    def params(self):
        return [self.weight, self.bias]


# ---------------------------------------------------------------------------
# dense, normalization, loss
# ---------------------------------------------------------------------------


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: Rng, name: str = "linear"):
        self.weight = Param.of(f"{name}.weight", kaiming_uniform((out_features, in_features), in_features, rng))
        self.bias = Param.of(f"{name}.bias", np.zeros(out_features))
        self._cache = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.weight.value.shape[1]:
            raise InvalidShapeError(f"linear expects (N, {self.weight.value.shape[1]}), got {x.shape}")
        self._cache = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, dy):
        x = self._cached()
        self.weight.grad += dy.T @ x
        self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.value

    def params(self):
        return [self.weight, self.bias]


class BatchNorm2D(Layer):
    """Per-channel batch normalization over (N, T, F).

    Training mode normalizes with batch statistics and updates running
    estimates (momentum 0.1, unbiased variance); eval mode uses the running
    estimates.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn"):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param.of(f"{name}.gamma", np.ones(channels))
        self.beta = Param.of(f"{name}.beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache = None

    def forward(self, x):
        g = self.gamma.value[None, :, None, None]
        b = self.beta.value[None, :, None, None]
        if not self.training:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) * inv[None, :, None, None]
            self._cache = ("eval", (xhat, inv))
            return xhat * g + b
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
        unbiased = var * m / max(m - 1, 1)
        self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        self._cache = ("train", (xhat, inv))
        return xhat * g + b

    def backward(self, dy):
        mode, (xhat, inv) = self._cached()
        g = self.gamma.value[None, :, None, None]
        self.gamma.grad += (dy * xhat).sum(axis=(0, 2, 3))
        self.beta.grad += dy.sum(axis=(0, 2, 3))
        dxhat = dy * g
        if mode == "eval":
            return dxhat * inv[None, :, None, None]
        mean_d = dxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        return (dxhat - mean_d - xhat * mean_dx) * inv[None, :, None, None]

    def params(self):
        return [self.gamma, self.beta]


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class SoftmaxCrossEntropy(Layer):
    """Per-sample cross-entropy of class logits (N, K) against ``labels``."""

    def __init__(self, labels=None):
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        self._cache = None

    def forward(self, logits):
        if logits.ndim != 2:
            raise InvalidShapeError(f"logits must be (N, n_classes), got {logits.shape}")
        if self.labels is None or self.labels.shape != (logits.shape[0],):
            raise InvalidShapeError("labels must be set with one entry per sample")
        logp = log_softmax(logits)
        self._cache = np.exp(logp)
        return -logp[np.arange(logits.shape[0]), self.labels]

    def backward(self, dy):
        p = self._cached().copy()
        p[np.arange(p.shape[0]), self.labels] -= 1.0
        return p * dy[:, None]
