"""Rank-4 float64 tensors, seeded randomness and finite-difference gradient checks.

Tensors are plain ``numpy.ndarray`` objects laid out as (batch, channel, time,
frequency) in C order. The helpers here only validate and allocate; the layers
operate on the arrays directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .layers import Layer

EPS_FLOOR = 1e-8


class InvalidShapeError(ValueError):
    pass


class NumericFailureError(ArithmeticError):
    pass


class Rng:
    """Seeded random stream backed by numpy's PCG64 bit generator.

    PCG64 output for a given seed is fixed by numpy's stream-compatibility
    policy, so draws are identical on every platform.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return lo + (hi - lo) * self._gen.random(shape)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return std * self._gen.standard_normal(shape)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def child(self, offset: int) -> "Rng":
        return Rng(self.seed * 1_000_003 + offset)


def check_dims4(shape: Sequence[int]) -> tuple[int, int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise InvalidShapeError(f"expected 4 dims (N, C, T, F), got {shape}")
    if any(s < 1 for s in shape):
        raise InvalidShapeError(f"all dims must be >= 1, got {shape}")
    return shape


def as_tensor(x, ndim: int = 4) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise InvalidShapeError(f"expected rank-{ndim} tensor, got shape {arr.shape}")
    return arr


def tensor_fill(shape: Sequence[int], value: float) -> np.ndarray:
    return np.full(check_dims4(shape), float(value), dtype=np.float64)


def tensor_rand_uniform(shape: Sequence[int], lo: float, hi: float, rng: Rng) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    out = rng.uniform(check_dims4(shape), lo, hi)
    # lo + (hi - lo) * u can round up to hi for u just below 1
    return np.minimum(out, np.nextafter(hi, lo))


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), EPS_FLOOR)
    return float(np.max(np.abs(a - n) / denom))


@dataclass
class GradCheckReport:
    layer: str
    step: float
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={v:.2e}" for k, v in self.errors.items())
        return f"{self.layer}: {status} max_rel_err={self.max_error:.3e} (step={self.step:g}; {parts})"


def _central_difference(loss_fn, arr: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = loss_fn()
        flat[i] = orig - step
        minus = loss_fn()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * step)
    return grad


def grad_check(
    layer: "Layer",
    x: np.ndarray,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    rng: Rng | None = None,
) -> GradCheckReport:
    """Compare a layer's analytic gradients with central finite differences.

    The scalar probed is ``sum(layer(x) * cotangent)`` for a fixed random
    cotangent drawn from ``rng``. Both the input gradient and every parameter
    gradient are checked; parameter arrays are perturbed in place and restored.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = rng if rng is not None else Rng(0)
    name = type(layer).__name__
    x = np.array(x, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(x)):
        raise NumericFailureError(f"{name}: non-finite input")

    y = layer.forward(x)
    if not np.all(np.isfinite(y)):
        raise NumericFailureError(f"{name}: non-finite output")
    cot = rng.uniform(y.shape, -1.0, 1.0)

    for p in layer.params():
        p.grad[...] = 0.0
    dx = layer.backward(cot)
    analytic = {"input": dx.copy()}
    for p in layer.params():
        analytic[p.name] = p.grad.copy()

    def loss() -> float:
        out = layer.forward(x)
        val = float(np.sum(out * cot))
        if not np.isfinite(val):
            raise NumericFailureError(f"{name}: non-finite loss during finite differences")
        return val

    report = GradCheckReport(layer=name, step=step, tolerance=tolerance)
    report.errors["input"] = relative_error(analytic["input"], _central_difference(loss, x, step))
    for p in layer.params():
        report.errors[p.name] = relative_error(analytic[p.name], _central_difference(loss, p.value, step))
    return report
