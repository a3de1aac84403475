"""Declarative CNN configs and the model builder.

A :class:`ModelConfig` describes a stack of conv blocks
(conv-like layer -> optional batchnorm -> activation -> pooling) followed by an
optional global-pool + linear classifier. The same config drives
:func:`build_model` and the static counters in :mod:`facnet.accounting`.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .freq_layers import FAC, FDY, FAConcat
from .layers import (
    BatchNorm2D,
    Conv2D,
    ContextGating,
    ConvSpec,
    GlobalAvgPool,
    Layer,
    Linear,
    Pool2D,
    PoolSpec,
    ReLU,
)
from .tensor import Rng

LayerKind = Literal["vanilla", "fac", "fdy", "faconcat"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PoolConfig(_Strict):
    kind: Literal["average", "max"] = "average"
    window: tuple[int, int] = (1, 2)


class BlockConfig(_Strict):
    layer_kind: LayerKind = "vanilla"
    out_channels: int = Field(ge=1)
    kernel: tuple[int, int] = (3, 3)
    activation: Literal["relu", "context_gating"] = "relu"
    batchnorm: bool = True
    pool: PoolConfig = PoolConfig()
    padding_mode: Literal["zero", "circular_frequency"] = "zero"
    fac_mode: Literal["fixed", "adapt", "adapt_dep"] = "adapt_dep"
    fdy_basis: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def _odd_kernel(self):
        if self.kernel[0] % 2 == 0 or self.kernel[1] % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got {self.kernel}")
        return self


class HeadConfig(_Strict):
    n_classes: int = Field(ge=1)


class RnnConfig(_Strict):
    """Recurrent stage of a CRNN. Counted by the accounting module, never built."""

    hidden: int = Field(ge=1)
    layers: int = Field(default=2, ge=1)
    bidirectional: bool = True


class ModelConfig(_Strict):
    input_shape: tuple[int, int, int]
    blocks: list[BlockConfig]
    head: HeadConfig | None = None
    rnn: RnnConfig | None = None

    @model_validator(mode="after")
    def _check_shapes(self):
        block_input_shapes(self)
        return self

    @property
    def n_fac(self) -> int:
        return sum(b.layer_kind == "fac" for b in self.blocks)

    def to_json(self, path: str | Path | None = None) -> str:
        text = self.model_dump_json(indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, text_or_path: str | Path) -> "ModelConfig":
        p = Path(text_or_path)
        text = p.read_text() if not str(text_or_path).lstrip().startswith("{") else str(text_or_path)
        return cls.model_validate_json(text)


def block_input_shapes(
    config: ModelConfig, input_shape: tuple[int, int, int] | None = None, floor: bool = False
) -> list[tuple[int, int, int]]:
    """(C, T, F) entering each block, plus the shape after the last block.

    With ``floor=False`` any pooling window that does not divide its input
    raises ``ValueError`` naming the block (1-based).
    """
    C, T, F = input_shape if input_shape is not None else config.input_shape
    shapes = [(C, T, F)]
    for i, b in enumerate(config.blocks, start=1):
        pt, pf = b.pool.window
        if not floor and (T % pt or F % pf):
            raise ValueError(f"block {i}: pool window {(pt, pf)} does not divide (T, F) = {(T, F)}")
        C, T, F = b.out_channels, T // pt, F // pf
        if T < 1 or F < 1:
            raise ValueError(f"block {i}: pooling reduces (T, F) below 1")
        shapes.append((C, T, F))
    return shapes


def set_n_fac(config: ModelConfig, n: int) -> ModelConfig:
    """Use FAC in the first ``n`` blocks and vanilla convolution in the rest."""
    if not 0 <= n <= len(config.blocks):
        raise ValueError(f"n_fac must be in [0, {len(config.blocks)}], got {n}")
    blocks = [b.model_copy(update={"layer_kind": "fac" if i < n else "vanilla"}) for i, b in enumerate(config.blocks)]
    return config.model_copy(update={"blocks": blocks})


def with_blocks(config: ModelConfig, **updates) -> ModelConfig:
    """Apply the same field updates to every block."""
    blocks = [b.model_copy(update=updates) for b in config.blocks]
    return ModelConfig.model_validate({**config.model_dump(), "blocks": [b.model_dump() for b in blocks]})


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

CRNN_CHANNELS = (32, 64, 128, 256, 256, 256, 256)
CRNN_TIME_POOL = (2, 2, 1, 1, 1, 1, 1)


def fig1_probe(n_frames: int = 16, padding_mode: str = "zero") -> ModelConfig:
    block = BlockConfig(out_channels=1, activation="relu", batchnorm=False, padding_mode=padding_mode,
                        pool=PoolConfig(kind="average", window=(1, 2)))
    return ModelConfig(input_shape=(1, n_frames, 64), blocks=[block] * 4)


def crnn_conv(n_frames: int = 628, n_classes: int = 10, padding_mode: str = "zero") -> ModelConfig:
    blocks = [
        BlockConfig(out_channels=c, activation="context_gating", batchnorm=True, padding_mode=padding_mode,
                    pool=PoolConfig(kind="average", window=(tp, 2)))
        for c, tp in zip(CRNN_CHANNELS, CRNN_TIME_POOL)
    ]
    return ModelConfig(input_shape=(1, n_frames, 128), blocks=blocks, head=HeadConfig(n_classes=n_classes),
                       rnn=RnnConfig(hidden=256, layers=2))


def crnn_lite(n_frames: int = 8, n_freq: int = 64, channels=(8, 8, 8, 8), n_classes: int = 2,
              padding_mode: str = "circular_frequency") -> ModelConfig:
    blocks = [
        BlockConfig(out_channels=c, activation="relu", batchnorm=True, padding_mode=padding_mode,
                    pool=PoolConfig(kind="average", window=(1, 2)))
        for c in channels
    ]
    return ModelConfig(input_shape=(1, n_frames, n_freq), blocks=blocks, head=HeadConfig(n_classes=n_classes))


PRESETS = {"fig1-probe": fig1_probe, "crnn-conv": crnn_conv, "crnn-lite": crnn_lite}


def preset(name: str, **kwargs) -> ModelConfig:
    try:
        return PRESETS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = layers

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def train(self, mode: bool = True):
        self.training = mode
        for layer in self.layers:
            layer.train(mode)
        return self


class Model(Sequential):
    """Built network: ``blocks`` (the CNN stack) then ``head`` (may be empty)."""

    def __init__(self, config: ModelConfig, blocks: list[Sequential], head: list[Layer]):
        super().__init__([*blocks, *head])
        self.config = config
        self.blocks = blocks
        self.head = head

    def features(self, x: np.ndarray) -> np.ndarray:
        for block in self.blocks:
            x = block.forward(x)
        return x

    def conv_layers(self) -> list[Layer]:
        return [b.layers[0] for b in self.blocks]


def _conv_layer(b: BlockConfig, c_in: int, n_freq: int, rng: Rng, name: str) -> Layer:
    spec = ConvSpec(c_in, b.out_channels, tuple(b.kernel), b.padding_mode)
    if b.layer_kind == "vanilla":
        return Conv2D(spec, rng, name=name)
    if b.layer_kind == "fac":
        return FAC(spec, n_freq, rng, mode=b.fac_mode, name=name)
    if b.layer_kind == "fdy":
        return FDY(spec, rng, n_basis=b.fdy_basis, name=name)
    return FAConcat(spec, n_freq, rng, name=name)


def build_model(config: ModelConfig, rng: Rng) -> Model:
    shapes = block_input_shapes(config)
    blocks = []
    for i, (b, (c_in, _, f_in)) in enumerate(zip(config.blocks, shapes), start=1):
        name = f"block{i}"
        layers = [_conv_layer(b, c_in, f_in, rng, f"{name}.{b.layer_kind}")]
        if b.batchnorm:
            layers.append(BatchNorm2D(b.out_channels, name=f"{name}.bn"))
        if b.activation == "relu":
            layers.append(ReLU())
        else:
            layers.append(ContextGating(b.out_channels, rng, name=f"{name}.cg"))
        if tuple(b.pool.window) != (1, 1):
            layers.append(Pool2D(PoolSpec(b.pool.kind, tuple(b.pool.window))))
        blocks.append(Sequential(layers))
    head: list[Layer] = []
    if config.head is not None:
        head = [GlobalAvgPool(), Linear(shapes[-1][0], config.head.n_classes, rng, name="head")]
    return Model(config, blocks, head)


def output_shape(config: ModelConfig, batch: int = 1) -> tuple[int, ...]:
    C, T, F = block_input_shapes(config)[-1]
    if config.head is not None:
        return (batch, config.head.n_classes)
    return (batch, C, T, F)


def export_encodings(model: Model) -> list[tuple[int, int, np.ndarray]]:
    """(block index, F, encoding vector) for every FAC block, 1-based."""
    rows = [
        (i, layer.n_freq, layer.p_freq.value.copy())
        for i, layer in enumerate(model.conv_layers(), start=1)
        if isinstance(layer, FAC)
    ]
    if not rows:
        raise ValueError("model has no FAC blocks")
    return rows
