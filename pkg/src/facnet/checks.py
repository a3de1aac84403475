"""Registry of every layer kind with a factory for random gradient-check cases."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .freq_layers import FAC, FDY, FAConcat
from .layers import (
    BatchNorm2D,
    ContextGating,
    Conv2D,
    ConvSpec,
    GlobalAvgPool,
    Layer,
    Linear,
    Pool2D,
    PoolSpec,
    ReLU,
    Sigmoid,
    SoftmaxCrossEntropy,
)
from .tensor import GradCheckReport, Rng, grad_check

Case = tuple[Layer, np.ndarray]


def _shape(rng: Rng) -> tuple[int, int, int, int]:
    return (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(2, 6)), 2 * int(rng.integers(2, 5)))


def _x(rng: Rng, shape) -> np.ndarray:
    return rng.uniform(shape, -1.0, 1.0)


def _conv(padding):
    def make(rng: Rng) -> Case:
        s = _shape(rng)
        return Conv2D(ConvSpec(s[1], int(rng.integers(1, 4)), (3, 3), padding), rng), _x(rng, s)
    return make


def _pool(kind):
    def make(rng: Rng) -> Case:
        s = _shape(rng)
        if kind == "max":
            # well-separated values keep finite differences away from argmax switches
            x = (rng.permutation(int(np.prod(s))).reshape(s) + 1.0) / np.prod(s)
        else:
            x = _x(rng, s)
        return Pool2D(PoolSpec(kind, (2 if s[2] % 2 == 0 else 1, 2))), x
    return make


def _relu(rng: Rng) -> Case:
    s = _shape(rng)
    sign = np.where(rng.uniform(s) < 0.5, -1.0, 1.0)
    return ReLU(), sign * rng.uniform(s, 0.1, 1.0)


def _simple(cls):
    def make(rng: Rng) -> Case:
        return cls(), _x(rng, _shape(rng))
    return make


def _context_gating(rng: Rng) -> Case:
    s = _shape(rng)
    return ContextGating(s[1], rng), _x(rng, s)


def _linear(rng: Rng) -> Case:
    n, d, k = int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(1, 4))
    return Linear(d, k, rng), rng.uniform((n, d), -1.0, 1.0)


def _batchnorm(training):
    def make(rng: Rng) -> Case:
        s = _shape(rng)
        bn = BatchNorm2D(s[1])
        bn.gamma.value[:] = rng.uniform(s[1], 0.5, 1.5)
        bn.beta.value[:] = rng.uniform(s[1], -0.5, 0.5)
        if not training:
            bn.running_mean[:] = rng.uniform(s[1], -0.5, 0.5)
            bn.running_var[:] = rng.uniform(s[1], 0.5, 2.0)
            bn.eval()
        return bn, _x(rng, s)
    return make


def _softmax_ce(rng: Rng) -> Case:
    n, k = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    return SoftmaxCrossEntropy(rng.integers(0, k, size=n)), rng.uniform((n, k), -2.0, 2.0)


def _faconcat(rng: Rng) -> Case:
    s = _shape(rng)
    return FAConcat(ConvSpec(s[1], int(rng.integers(1, 4))), s[3], rng), _x(rng, s)


def _fdy(k):
    def make(rng: Rng) -> Case:
        s = _shape(rng)
        return FDY(ConvSpec(s[1], int(rng.integers(1, 4))), rng, n_basis=k), _x(rng, s)
    return make


def _fac(mode):
    def make(rng: Rng) -> Case:
        s = _shape(rng)
        layer = FAC(ConvSpec(s[1], int(rng.integers(1, 4))), s[3], rng, mode=mode)
        layer.attn_w.value[:] = rng.uniform(s[3], -1.0, 1.0)
        layer.attn_b.value[:] = rng.uniform(1, -0.5, 0.5)
        return layer, _x(rng, s)
    return make


LAYER_KINDS: dict[str, Callable[[Rng], Case]] = {
    "conv_zero": _conv("zero"),
    "conv_circular": _conv("circular_frequency"),
    "avg_pool": _pool("average"),
    "max_pool": _pool("max"),
    "relu": _relu,
    "sigmoid": _simple(Sigmoid),
    "context_gating": _context_gating,
    "linear": _linear,
    "batchnorm": _batchnorm(True),
    "batchnorm_eval": _batchnorm(False),
    "global_avg_pool": _simple(GlobalAvgPool),
    "softmax_ce": _softmax_ce,
    "faconcat": _faconcat,
    "fdy_k1": _fdy(1),
    "fdy_k4": _fdy(4),
    "fac_fixed": _fac("fixed"),
    "fac_adapt": _fac("adapt"),
    "fac_adapt_dep": _fac("adapt_dep"),
}


def run_gradchecks(kinds=None, n_shapes: int = 3, seed: int = 0, step: float = 1e-5,
                   tolerance: float = 1e-4) -> dict[str, list[GradCheckReport]]:
    kinds = list(LAYER_KINDS) if kinds is None else list(kinds)
    unknown = [k for k in kinds if k not in LAYER_KINDS]
    if unknown:
        raise KeyError(f"unknown layer kinds: {unknown}")
    out = {}
    for i, kind in enumerate(kinds):
        rng = Rng(seed).child(i)
        out[kind] = []
        for _ in range(n_shapes):
            layer, x = LAYER_KINDS[kind](rng)
            out[kind].append(grad_check(layer, x, step=step, tolerance=tolerance, rng=rng))
    return out
