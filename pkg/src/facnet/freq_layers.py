"""Frequency-position-aware convolutions: FAC, FDY and FAConcat.

* :class:`FAC` adds a learnable sinusoidal frequency encoding, scaled by a
  sigmoid attention coefficient, to its input and then convolves.
* :class:`FDY` mixes ``K`` basis kernels with per-frequency softmax weights.
* :class:`FAConcat` appends a constant ``f / F`` ramp as an extra input channel.
"""

from __future__ import annotations

from typing import Literal

import numpy as np

from .layers import Conv2D, ConvSpec, Layer, Param, conv_windows, sigmoid, windows_adjoint
from .tensor import InvalidShapeError, Rng

FacMode = Literal["fixed", "adapt", "adapt_dep"]
FAC_MODES = ("fixed", "adapt", "adapt_dep")


def fac_encoding_init(n_freq: int) -> np.ndarray:
    """sin(pi/2 * f / F) for f = 0 .. F-1."""
    if n_freq < 1:
        raise ValueError("encoding length must be >= 1")
    return np.sin(0.5 * np.pi * np.arange(n_freq) / n_freq)


def fac_alpha(x: np.ndarray, mode: str, attn_w: np.ndarray | None = None, attn_b: float = 0.0) -> np.ndarray:
    """Encoding scale per (sample, channel), shape (N, C).

    ``adapt_dep`` applies the shared F -> 1 map to each channel's time-averaged
    spectrum; ``adapt`` first averages over channels so one coefficient is
    shared by all of them; ``fixed`` is identically one.
    """
    N, C, T, F = x.shape
    if mode == "fixed":
        return np.ones((N, C))
    if attn_w is None or attn_w.shape != (F,):
        raise InvalidShapeError(f"attention weights must have length F={F}")
    xbar = x.mean(axis=2)
    if mode == "adapt":
        z = xbar.mean(axis=1) @ attn_w + attn_b
        return np.repeat(sigmoid(z)[:, None], C, axis=1)
    if mode == "adapt_dep":
        return sigmoid(xbar @ attn_w + attn_b)
    raise ValueError(f"unknown FAC mode {mode!r}")


class FAC(Layer):
    """Frequency-aware convolution.

    ``x' = x + alpha * p_freq`` is formed per sample and channel, then passed
    through an ordinary :class:`Conv2D`. ``p_freq`` starts at
    :func:`fac_encoding_init` and is trained; in ``fixed`` mode there are no
    attention parameters.
    """

    def __init__(self, spec: ConvSpec, n_freq: int, rng: Rng, mode: FacMode = "adapt_dep", name: str = "fac"):
        if mode not in FAC_MODES:
            raise ValueError(f"unknown FAC mode {mode!r}")
        self.mode = mode
        self.n_freq = n_freq
        self.p_freq = Param.of(f"{name}.p_freq", fac_encoding_init(n_freq))
        self.attn_w = Param.of(f"{name}.attn_w", np.zeros(n_freq))
        self.attn_b = Param.of(f"{name}.attn_b", np.zeros(1))
        self.conv = Conv2D(spec, rng, name=f"{name}.conv")
        self._cache = None

    def alpha(self, x: np.ndarray) -> np.ndarray:
        return fac_alpha(x, self.mode, self.attn_w.value, float(self.attn_b.value[0]))

    def inject(self, x: np.ndarray) -> np.ndarray:
        return x + self.alpha(x)[:, :, None, None] * self.p_freq.value[None, None, None, :]

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.n_freq:
            raise InvalidShapeError(f"FAC expects frequency dim {self.n_freq}, got shape {x.shape}")
        alpha = self.alpha(x)
        xp = x + alpha[:, :, None, None] * self.p_freq.value[None, None, None, :]
        self._cache = (x, alpha)
        return self.conv.forward(xp)

    def backward(self, dy):
        x, alpha = self._cached()
        N, C, T, F = x.shape
        dxp = self.conv.backward(dy)
        self.p_freq.grad += np.einsum("nctf,nc->f", dxp, alpha)
        dx = dxp.copy()
        if self.mode == "fixed":
            return dx
        dalpha = dxp.sum(axis=2) @ self.p_freq.value  # (N, C)
        if self.mode == "adapt_dep":
            dz = dalpha * alpha * (1.0 - alpha)
            xbar = x.mean(axis=2)
            self.attn_w.grad += np.einsum("nc,ncf->f", dz, xbar)
            self.attn_b.grad += dz.sum()
            dx += (dz[:, :, None] * self.attn_w.value[None, None, :])[:, :, None, :] / T
        else:
            a = alpha[:, 0]
            dz = dalpha.sum(axis=1) * a * (1.0 - a)
            xtilde = x.mean(axis=(1, 2))
            self.attn_w.grad += dz @ xtilde
            self.attn_b.grad += dz.sum()
            dx += (dz[:, None] * self.attn_w.value[None, :])[:, None, None, :] / (C * T)
        return dx

    def params(self):
        own = [self.p_freq] if self.mode == "fixed" else [self.p_freq, self.attn_w, self.attn_b]
        return own + self.conv.params()


def fdy_forward(
    x: np.ndarray,
    basis_w: np.ndarray,
    basis_b: np.ndarray,
    pi: np.ndarray,
    padding_mode: str = "zero",
    path: Literal["weighted", "combined"] = "weighted",
) -> np.ndarray:
    """Apply K basis kernels mixed by attention ``pi`` of shape (N, K, F).

    ``basis_w`` is (K, out, in, kt, kf) and ``basis_b`` is (K, out). The
    ``weighted`` path convolves with every basis kernel and mixes outputs;
    the ``combined`` path mixes kernels per (sample, frequency) first and
    convolves once. Both give the same result.
    """
    K, O, C, kt, kf = basis_w.shape
    if K < 1:
        raise ValueError("FDY needs at least one basis kernel")
    if x.shape[1] != C:
        raise InvalidShapeError(f"FDY expects {C} input channels, got {x.shape[1]}")
    win = conv_windows(x, (kt, kf), padding_mode)
    if path == "weighted":
        ys = np.einsum("nctfij,kocij->nkotf", win, basis_w, optimize=True) + basis_b[None, :, :, None, None]
        return np.einsum("nkf,nkotf->notf", pi, ys, optimize=True)
    if path == "combined":
        w = np.einsum("nkf,kocij->nfocij", pi, basis_w, optimize=True)
        b = np.einsum("nkf,ko->nof", pi, basis_b)
        return np.einsum("nctfij,nfocij->notf", win, w, optimize=True) + b[:, :, None, :]
    raise ValueError(f"unknown FDY path {path!r}")


def softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class FDY(Layer):
    """Frequency dynamic convolution with ``n_basis`` basis kernels.

    Attention: average over time, a width-3 convolution along frequency from
    ``in_channels`` to ``n_basis`` logits, softmax over the basis axis.
    """

    def __init__(self, spec: ConvSpec, rng: Rng, n_basis: int = 4, name: str = "fdy"):
        if n_basis < 1:
            raise ValueError("FDY needs at least one basis kernel")
        self.spec = spec
        self.n_basis = n_basis
        kt, kf = spec.kernel
        fan_in = spec.in_channels * kt * kf
        bound = np.sqrt(6.0 / fan_in)
        self.basis_w = Param.of(f"{name}.basis_w", rng.uniform((n_basis, spec.out_channels, spec.in_channels, kt, kf), -bound, bound))
        self.basis_b = Param.of(f"{name}.basis_b", np.zeros((n_basis, spec.out_channels)))
        self.attention = Conv2D(ConvSpec(spec.in_channels, n_basis, (1, 3), spec.padding_mode), rng, name=f"{name}.attn")
        self._cache = None

    def attention_weights(self, x: np.ndarray) -> np.ndarray:
        logits = self.attention.forward(x.mean(axis=2, keepdims=True))
        return softmax(logits[:, :, 0, :], axis=1)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise InvalidShapeError(f"FDY expects {self.spec.in_channels} input channels, got shape {x.shape}")
        pi = self.attention_weights(x)
        win = conv_windows(x, self.spec.kernel, self.spec.padding_mode)
        ys = np.einsum("nctfij,kocij->nkotf", win, self.basis_w.value, optimize=True) + self.basis_b.value[None, :, :, None, None]
        self._cache = (x.shape, win, pi, ys)
        return np.einsum("nkf,nkotf->notf", pi, ys, optimize=True)

    def backward(self, dy):
        x_shape, win, pi, ys = self._cached()
        T = x_shape[2]
        dys = pi[:, :, None, None, :] * dy[:, None]
        self.basis_w.grad += np.einsum("nkotf,nctfij->kocij", dys, win, optimize=True)
        self.basis_b.grad += dys.sum(axis=(0, 3, 4))
        dwin = np.einsum("nkotf,kocij->nctfij", dys, self.basis_w.value, optimize=True)
        dx = windows_adjoint(dwin, x_shape, self.spec.kernel, self.spec.padding_mode)
        dpi = np.einsum("notf,nkotf->nkf", dy, ys, optimize=True)
        dlogits = pi * (dpi - (pi * dpi).sum(axis=1, keepdims=True))
        dxbar = self.attention.backward(dlogits[:, :, None, :])
        return dx + dxbar / T

    def params(self):
        return [self.basis_w, self.basis_b] + self.attention.params()


def frequency_ramp(n_freq: int) -> np.ndarray:
    return np.arange(n_freq) / n_freq


class FAConcat(Layer):
    """Convolution over the input with a constant ``f / F`` channel appended.

    ``spec.in_channels`` counts the real input channels; the inner kernel has
    one extra input slice for the ramp.
    """

    def __init__(self, spec: ConvSpec, n_freq: int, rng: Rng, name: str = "faconcat"):
        self.spec = spec
        self.n_freq = n_freq
        inner = ConvSpec(spec.in_channels + 1, spec.out_channels, spec.kernel, spec.padding_mode, spec.bias)
        self.conv = Conv2D(inner, rng, name=f"{name}.conv")
        self._cache = None

    def ramp(self, n: int, t: int) -> np.ndarray:
        return np.broadcast_to(frequency_ramp(self.n_freq), (n, 1, t, self.n_freq))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels or x.shape[3] != self.n_freq:
            raise InvalidShapeError(f"FAConcat expects (N, {self.spec.in_channels}, T, {self.n_freq}), got {x.shape}")
        self._cache = x.shape
        return self.conv.forward(np.concatenate([x, self.ramp(x.shape[0], x.shape[2])], axis=1))

    def backward(self, dy):
        self._cached()
        return self.conv.backward(dy)[:, : self.spec.in_channels]

    def params(self):
        return self.conv.params()
