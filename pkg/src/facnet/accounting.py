"""Static parameter and FLOP counts computed from a ModelConfig.

Nothing is allocated or executed. Conventions:

* parameters are trainable values only (batchnorm running statistics excluded);
* one multiply-accumulate (MAC) counts as 2 flops;
* conv flops are ``2 * kt * kf * C_in * C_out * T * F`` (bias adds not counted);
* pooling floors non-divisible sizes, so inputs such as 626 frames can be counted
  even though the executable model requires exact divisibility.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .model import BlockConfig, ModelConfig, block_input_shapes, set_n_fac, with_blocks

CONVENTION = "trainable-params; 1 MAC = 2 flops; conv bias adds not counted; pooling floors"


@dataclass(frozen=True)
class CountRow:
    layer: str
    name: str
    params: int
    flops: int
    macs: int = 0


@dataclass
class CountReport:
    rows: list[CountRow] = field(default_factory=list)
    convention: str = CONVENTION

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def by_layer(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.rows:
            out[r.layer] = out.get(r.layer, 0) + r.params
        return out

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "name", "params", "flops"])
        for r in self.rows:
            w.writerow([r.layer, r.name, r.params, r.flops])
        w.writerow(["total", "", self.params, self.flops])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def conv_params(kt: int, kf: int, c_in: int, c_out: int, bias: bool = True) -> int:
    return kt * kf * c_in * c_out + (c_out if bias else 0)


def fdy_attention_params(c_in: int, n_basis: int) -> int:
    return n_basis * c_in * 3 + n_basis


def _block_rows(i: int, b: BlockConfig, c_in: int, T: int, F: int, n: int) -> list[CountRow]:
    kt, kf = b.kernel
    c_out = b.out_channels
    pre = f"block{i}"
    conv_macs = kt * kf * c_in * c_out * T * F * n
    rows: list[CountRow] = []
    if b.layer_kind == "vanilla":
        rows.append(CountRow("conv", f"{pre}.conv", conv_params(kt, kf, c_in, c_out), 2 * conv_macs, conv_macs))
    elif b.layer_kind == "fac":
        rows.append(CountRow("conv", f"{pre}.fac.conv", conv_params(kt, kf, c_in, c_out), 2 * conv_macs, conv_macs))
        cells = c_in * T * F * n
        if b.fac_mode == "fixed":
            rows.append(CountRow("fac_encoding", f"{pre}.fac.p_freq", F, cells, 0))
        else:
            rows.append(CountRow("fac_encoding", f"{pre}.fac.p_freq", F, 2 * cells, cells))
            if b.fac_mode == "adapt_dep":
                att_macs = c_in * F * n
                rows.append(CountRow("fac_attention", f"{pre}.fac.attn", F + 1, cells + 2 * att_macs, att_macs))
            else:
                att_macs = F * n
                rows.append(CountRow("fac_attention", f"{pre}.fac.attn", F + 1, cells + c_in * F * n + 2 * att_macs, att_macs))
    elif b.layer_kind == "fdy":
        K = b.fdy_basis
        mix_macs = K * c_out * T * F * n
        rows.append(CountRow("fdy_basis", f"{pre}.fdy.basis", K * conv_params(kt, kf, c_in, c_out),
                             2 * K * conv_macs + 2 * mix_macs, K * conv_macs + mix_macs))
        att_macs = 3 * c_in * K * F * n
        rows.append(CountRow("fdy_attention", f"{pre}.fdy.attn", fdy_attention_params(c_in, K),
                             c_in * T * F * n + 2 * att_macs + 3 * K * F * n, att_macs))
    else:
        macs = kt * kf * (c_in + 1) * c_out * T * F * n
        rows.append(CountRow("conv", f"{pre}.faconcat.conv", conv_params(kt, kf, c_in + 1, c_out), 2 * macs, macs))

    cells_out = c_out * T * F * n
    if b.batchnorm:
        rows.append(CountRow("batchnorm", f"{pre}.bn", 2 * c_out, 2 * cells_out, cells_out))
    if b.activation == "relu":
        rows.append(CountRow("relu", f"{pre}.relu", 0, cells_out, 0))
    else:
        cg_macs = c_out * cells_out
        rows.append(CountRow("context_gating", f"{pre}.cg", c_out * c_out + c_out, 2 * cg_macs + 3 * cells_out, cg_macs))
    if tuple(b.pool.window) != (1, 1):
        rows.append(CountRow("pool", f"{pre}.pool", 0, cells_out, 0))
    return rows


def gru_params(input_size: int, hidden: int, bidirectional: bool = True) -> int:
    """3 gates, each with input and recurrent weights and two bias vectors."""
    dirs = 2 if bidirectional else 1
    return dirs * 3 * (input_size * hidden + hidden * hidden + 2 * hidden)


def _count(config: ModelConfig, input_shape: tuple[int, int, int, int] | None) -> CountReport:
    if input_shape is None:
        n, chw = 1, config.input_shape
    else:
        n, chw = input_shape[0], tuple(input_shape[1:])
    shapes = block_input_shapes(config, chw, floor=True)
    report = CountReport()
    for i, (b, (c, T, F)) in enumerate(zip(config.blocks, shapes), start=1):
        report.rows.extend(_block_rows(i, b, c, T, F, n))

    C, T, F = shapes[-1]
    if config.rnn is not None:
        dirs = 2 if config.rnn.bidirectional else 1
        in_size = C * F
        for layer in range(1, config.rnn.layers + 1):
            p = gru_params(in_size, config.rnn.hidden, config.rnn.bidirectional)
            macs = dirs * 3 * (in_size * config.rnn.hidden + config.rnn.hidden ** 2) * T * n
            report.rows.append(CountRow("gru", f"rnn.layer{layer}", p, 2 * macs, macs))
            in_size = dirs * config.rnn.hidden
        if config.head is not None:
            k = config.head.n_classes
            macs = in_size * k * T * n
            report.rows.append(CountRow("linear", "head", in_size * k + k, 2 * macs, macs))
    elif config.head is not None:
        k = config.head.n_classes
        report.rows.append(CountRow("pool", "head.global_pool", 0, C * T * F * n, 0))
        report.rows.append(CountRow("linear", "head", C * k + k, 2 * C * k * n, C * k * n))
    return report


def count_params(config: ModelConfig) -> CountReport:
    return _count(config, None)


def count_flops(config: ModelConfig, input_shape: tuple[int, int, int, int] | None = None) -> CountReport:
    """Counts for an input of shape (N, C, T, F); defaults to one clip of ``config.input_shape``."""
    return _count(config, input_shape)


def fac_overhead_closed_form(config: ModelConfig) -> int:
    """Extra parameters FAC adds over vanilla convolution: F per block, plus F + 1 when adaptive."""
    shapes = block_input_shapes(config, floor=True)
    total = 0
    for b, (_, _, F) in zip(config.blocks, shapes):
        if b.layer_kind == "fac":
            total += F if b.fac_mode == "fixed" else 2 * F + 1
    return total


def vanilla(config: ModelConfig) -> ModelConfig:
    return set_n_fac(config, 0)


def fac_overhead(config: ModelConfig, input_shape=None) -> tuple[int, int]:
    """(params, flops) of ``config`` minus the all-vanilla version of it."""
    a, b = count_flops(config, input_shape), count_flops(vanilla(config), input_shape)
    return a.params - b.params, a.flops - b.flops


def fdy_config(config: ModelConfig, n_basis: int = 4) -> ModelConfig:
    return with_blocks(config, layer_kind="fdy", fdy_basis=n_basis)


def fdy_overhead(config: ModelConfig, n_basis: int = 4, input_shape=None) -> tuple[int, int]:
    a = count_flops(fdy_config(config, n_basis), input_shape)
    b = count_flops(vanilla(config), input_shape)
    return a.params - b.params, a.flops - b.flops


def fdy_overhead_breakdown(config: ModelConfig, n_basis: int = 4) -> dict[str, int]:
    """Split FDY's extra parameters into extra basis kernels and attention nets."""
    shapes = block_input_shapes(config, floor=True)
    extra_kernels = attention = 0
    for b, (c, _, _) in zip(config.blocks, shapes):
        kt, kf = b.kernel
        extra_kernels += (n_basis - 1) * conv_params(kt, kf, c, b.out_channels)
        attention += fdy_attention_params(c, n_basis)
    return {"extra_basis_kernels": extra_kernels, "attention_nets": attention, "total": extra_kernels + attention}
