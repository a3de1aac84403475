"""Shift probe, synthetic frequency-position benchmark, training, n_FAC sweep and ablation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .accounting import count_params, fac_overhead_closed_form
from .layers import SoftmaxCrossEntropy
from .model import Model, ModelConfig, block_input_shapes, build_model, set_n_fac, with_blocks
from .tensor import Rng

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# shift probe
# ---------------------------------------------------------------------------


@dataclass
class ShiftProbeResult:
    base_bin: int
    rows: list[tuple[int, float, float]]  # (shift, max |raw diff|, max |pooled diff|)
    epsilon: float

    @property
    def tolerated_shift(self) -> int:
        """Largest probed shift whose raw output differs from the unshifted one by less than epsilon."""
        ok = [s for s, raw, _ in self.rows if raw < self.epsilon]
        return max(ok, default=0)


def delta_spectrogram(shape: tuple[int, int, int], bin_index: int) -> np.ndarray:
    """(1, C, T, F) zeros with ones along every frame of one frequency bin."""
    C, T, F = shape
    if not 0 <= bin_index < F:
        raise ValueError(f"bin {bin_index} outside [0, {F})")
    x = np.zeros((1, C, T, F))
    x[:, :, :, bin_index] = 1.0
    return x


def run_shift_probe(model: Model, base_bin: int, shifts, epsilon: float = 1e-9) -> ShiftProbeResult:
    model.eval()
    shape = model.config.input_shape
    ref = model.features(delta_spectrogram(shape, base_bin))
    rows = []
    for s in shifts:
        if not 0 <= base_bin + s < shape[2]:
            raise ValueError(f"shift {s} moves bin {base_bin} out of range [0, {shape[2]})")
        out = model.features(delta_spectrogram(shape, base_bin + s))
        raw = float(np.max(np.abs(out - ref)))
        pooled = float(np.max(np.abs(out.mean(axis=(2, 3)) - ref.mean(axis=(2, 3)))))
        rows.append((int(s), raw, pooled))
    return ShiftProbeResult(base_bin, rows, epsilon)


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SynthSpec(_Strict):
    """Two classes of narrowband lines that differ only by frequency position.

    Samples are generated in pairs: the class-1 sample is the class-0 sample
    rolled along frequency by ``centers[1] - centers[0]`` bins, noise included.
    """

    T: int = Field(default=8, ge=1)
    F: int = Field(default=64, ge=1)
    n_classes: int = 2
    centers: tuple[int, int] = (16, 48)
    width: int = Field(default=3, ge=1)
    jitter_step: int = Field(default=1, ge=1)
    jitter_max: int = Field(default=2, ge=0)
    amplitude_jitter: tuple[float, float] = (1.0, 1.0)
    noise_std: float = Field(default=0.1, ge=0.0)
    n_train: int = Field(default=200, ge=2)
    n_test: int = Field(default=200, ge=2)
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.n_classes != 2:
            raise ValueError("the paired benchmark has exactly 2 classes")
        if self.n_train % 2 or self.n_test % 2:
            raise ValueError("n_train and n_test must be even (samples come in pairs)")
        lo, hi = self.amplitude_jitter
        if not 0 < lo <= hi:
            raise ValueError("amplitude_jitter must satisfy 0 < lo <= hi")
        reach = self.width // 2 + self.jitter_max * self.jitter_step
        for c in self.centers:
            if c - reach < 0 or c + reach >= self.F:
                raise ValueError(f"pattern at center {c} with reach {reach} falls outside [0, {self.F})")
        return self

    @property
    def pair_shift(self) -> int:
        return self.centers[1] - self.centers[0]


@dataclass
class SynthDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    spec: SynthSpec
    meta: list[tuple[str, int, int, int, float]] = field(default_factory=list)  # split, index, label, jitter, amplitude

    def pairs(self, split: str = "test") -> tuple[np.ndarray, np.ndarray]:
        """Class-0 samples and their rolled class-1 partners."""
        x = self.x_test if split == "test" else self.x_train
        h = len(x) // 2
        return x[:h], x[h:]


def _gen_split(spec: SynthSpec, n: int, rng: Rng, split: str):
    h = n // 2
    jit = rng.integers(-spec.jitter_max, spec.jitter_max + 1, size=h) * spec.jitter_step
    amp = rng.uniform(h, *spec.amplitude_jitter) if spec.amplitude_jitter[0] < spec.amplitude_jitter[1] else np.full(h, spec.amplitude_jitter[0])
    noise = rng.normal((h, 1, spec.T, spec.F), spec.noise_std)
    x0 = np.zeros((h, 1, spec.T, spec.F))
    half = spec.width // 2
    for i in range(h):
        c = spec.centers[0] + int(jit[i])
        x0[i, :, :, c - half : c - half + spec.width] = 1.0
    x0 = amp[:, None, None, None] * (x0 + noise)
    x1 = np.roll(x0, spec.pair_shift, axis=3)
    x = np.concatenate([x0, x1])
    y = np.concatenate([np.zeros(h, dtype=np.int64), np.ones(h, dtype=np.int64)])
    meta = [(split, i, int(y[i]), int(jit[i % h]), float(amp[i % h])) for i in range(n)]
    return x, y, meta


def gen_synth(spec: SynthSpec) -> SynthDataset:
    rng = Rng(spec.seed)
    x_tr, y_tr, m_tr = _gen_split(spec, spec.n_train, rng, "train")
    x_te, y_te, m_te = _gen_split(spec, spec.n_test, rng, "test")
    return SynthDataset(x_tr, y_tr, x_te, y_te, spec, m_tr + m_te)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class TrainSpec(_Strict):
    lr: float = Field(default=3e-3, ge=0)
    batch_size: int = Field(default=20, ge=1)
    epochs: int = Field(default=50, ge=1)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0


class TrainingDivergedError(ArithmeticError):
    pass


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad ** 2
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def predict_logits(model: Model, x: np.ndarray, batch_size: int = 100) -> np.ndarray:
    model.eval()
    return np.concatenate([model.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])


def accuracy(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(predict_logits(model, x), axis=1) == y))


def paired_logit_gap(model: Model, data: SynthDataset, split: str = "test") -> float:
    """Largest |logit difference| between paired (rolled) samples."""
    a, b = data.pairs(split)
    return float(np.max(np.abs(predict_logits(model, a) - predict_logits(model, b))))


def train(model: Model, data: SynthDataset, spec: TrainSpec) -> list[dict]:
    """Mini-batch Adam on mean softmax cross-entropy; returns one history row per epoch."""
    rng = Rng(spec.seed).child(1)
    params = model.params()
    opt = Adam(params, spec.lr, spec.beta1, spec.beta2, spec.eps)
    loss_layer = SoftmaxCrossEntropy()
    n = len(data.x_train)
    history = []
    for epoch in range(1, spec.epochs + 1):
        model.train()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            model.zero_grad()
            logits = model.forward(data.x_train[idx])
            loss_layer.labels = data.y_train[idx]
            losses = loss_layer.forward(logits)
            if not np.all(np.isfinite(losses)):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}; "
                    f"{int(np.sum(~np.isfinite(logits)))} non-finite logits"
                )
            model.backward(loss_layer.backward(np.full(len(idx), 1.0 / len(idx))))
            opt.step()
            total += float(losses.sum())
        row = {"epoch": epoch, "train_loss": total / n, "test_accuracy": accuracy(model, data.x_test, data.y_test)}
        history.append(row)
        log.debug("epoch %d loss %.4f acc %.3f", epoch, row["train_loss"], row["test_accuracy"])
    return history


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def cumulative_pool_factor(config: ModelConfig) -> int:
    f = 1
    for b in config.blocks:
        f *= b.pool.window[1]
    return f


def run_nfac_sweep(base_config: ModelConfig, n_values, data: SynthDataset, spec: TrainSpec, n_seeds: int = 1) -> list[dict]:
    """Train one model per (n_FAC, seed); seeds are ``spec.seed + k``."""
    rows = []
    for n in n_values:
        config = set_n_fac(base_config, n)
        for k in range(n_seeds):
            seed = spec.seed + k
            model = build_model(config, Rng(seed))
            hist = train(model, data, spec.model_copy(update={"seed": seed}))
            rows.append({
                "n_fac": n,
                "seed": seed,
                "fac_params": fac_overhead_closed_form(config),
                "final_loss": hist[-1]["train_loss"],
                "test_accuracy": hist[-1]["test_accuracy"],
                "paired_logit_gap": paired_logit_gap(model, data),
            })
    return rows


def run_ablation(base_config: ModelConfig, modes, data: SynthDataset, spec: TrainSpec, n_seeds: int = 5):
    """Train an all-FAC model per (mode, seed). Returns (per-run rows, summary rows)."""
    runs = []
    fac = set_n_fac(base_config, len(base_config.blocks))
    for mode in modes:
        config = with_blocks(fac, fac_mode=mode)
        n_params = count_params(config).params
        for k in range(n_seeds):
            seed = spec.seed + k
            model = build_model(config, Rng(seed))
            hist = train(model, data, spec.model_copy(update={"seed": seed}))
            runs.append({
                "mode": mode,
                "seed": seed,
                "params": n_params,
                "fac_params": fac_overhead_closed_form(config),
                "final_loss": hist[-1]["train_loss"],
                "test_accuracy": hist[-1]["test_accuracy"],
            })
    summary = []
    for mode in modes:
        acc = np.array([r["test_accuracy"] for r in runs if r["mode"] == mode])
        summary.append({"mode": mode, "n_runs": len(acc), "mean_accuracy": float(acc.mean()), "std_accuracy": float(acc.std())})
    return runs, summary


def check_blindness_preconditions(config: ModelConfig, spec: SynthSpec) -> None:
    """Raise unless the vanilla model is provably blind to the class difference."""
    factor = cumulative_pool_factor(config)
    if spec.pair_shift % factor:
        raise ValueError(f"pair shift {spec.pair_shift} is not a multiple of the pooling factor {factor}")
    if any(b.padding_mode != "circular_frequency" for b in config.blocks):
        raise ValueError("exact blindness needs circular frequency padding in every block")
    block_input_shapes(config)


# Pinned settings for the two synthetic studies. The ablation uses a short
# budget with loud, amplitude-jittered inputs so the scaling strategies differ
# in how fast they exploit frequency position.
BENCHMARK_SYNTH = SynthSpec()
BENCHMARK_TRAIN = TrainSpec(epochs=50)
ABLATION_SYNTH = SynthSpec(amplitude_jitter=(0.25, 4.0), noise_std=1.0)
ABLATION_TRAIN = TrainSpec(epochs=10)
