"""Command-line front end.

Exit codes: 0 success, 1 a check failed or a run errored, 2 usage/config error.
``FACNET_SEED`` overrides ``--seed`` when set.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from . import accounting
from .checks import LAYER_KINDS, run_gradchecks
from .experiments import (
    ABLATION_SYNTH,
    ABLATION_TRAIN,
    BENCHMARK_SYNTH,
    BENCHMARK_TRAIN,
    SynthSpec,
    TrainSpec,
    check_blindness_preconditions,
    gen_synth,
    run_ablation,
    run_nfac_sweep,
    run_shift_probe,
    train,
)
from .freq_layers import FAC_MODES
from .model import ModelConfig, build_model, export_encodings, fig1_probe, preset, set_n_fac, with_blocks
from .tensor import Rng

log = logging.getLogger("facnet")


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class ExperimentConfig(BaseModel):
    """JSON experiment document. ``model`` wins over ``preset`` when both are given.

    ``synth`` and ``train`` default to the pinned benchmark settings, or to the
    ablation settings for the ``ablation`` subcommand.
    """

    model_config = ConfigDict(extra="forbid")

    preset: str = "crnn-lite"
    model: ModelConfig | None = None
    synth: SynthSpec = BENCHMARK_SYNTH
    train: TrainSpec = BENCHMARK_TRAIN
    n_values: list[int] = [0, 1, 4]
    modes: list[str] = list(FAC_MODES)
    n_seeds: int = 5
    layers: list[str] | None = None
    tolerance: float = 1e-4
    n_shapes: int = 3

    def base_model(self) -> ModelConfig:
        return self.model if self.model is not None else preset(self.preset)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        return ExperimentConfig.model_validate_json(p.read_text())
    except ValidationError as e:
        raise UsageError(f"invalid config {path}: {e}") from None


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def to_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])
    return buf.getvalue()


class Outputs:
    """Collects files and writes them together once a command has finished."""

    def __init__(self, out_dir: str, force: bool):
        self.dir = Path(out_dir)
        self.force = force
        self.files: dict[str, str | bytes] = {}

    def add(self, name: str, content) -> None:
        self.files[name] = content

    def check_writable(self) -> None:
        if self.force:
            return
        existing = [n for n in self.files if (self.dir / n).exists()]
        if existing:
            raise UsageError(f"refusing to overwrite {', '.join(existing)} in {self.dir} (use --force)")

    def write(self) -> None:
        self.check_writable()
        self.dir.mkdir(parents=True, exist_ok=True)
        for name, content in self.files.items():
            path = self.dir / name
            if isinstance(content, bytes):
                path.write_bytes(content)
            else:
                path.write_text(content)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gradcheck(args, cfg: ExperimentConfig, out: Outputs) -> None:
    kinds = cfg.layers
    if kinds is not None and any(k not in LAYER_KINDS for k in kinds):
        raise UsageError(f"unknown layer kinds in config; known: {sorted(LAYER_KINDS)}")
    results = run_gradchecks(kinds, n_shapes=cfg.n_shapes, seed=args.seed, tolerance=cfg.tolerance)
    rows = []
    for kind, reports in results.items():
        worst = max(r.max_error for r in reports)
        ok = all(r.passed for r in reports)
        print(f"{kind:16s} max_rel_err={worst:.3e} {'PASS' if ok else 'FAIL'}")
        rows.append({"layer": kind, "max_rel_error": worst, "passed": ok})
    out.add(f"gradcheck_seed{args.seed}.csv", to_csv(["layer", "max_rel_error", "passed"], rows))
    failed = [r["layer"] for r in rows if not r["passed"]]
    if failed:
        out.write()
        raise CheckFailed(f"gradient check failed for: {', '.join(failed)}")
    print(f"all {len(rows)} layer kinds pass at tolerance {cfg.tolerance:g}")


def cmd_shift_probe(args, cfg: ExperimentConfig, out: Outputs) -> None:
    base_bin = args.base_bin - 1 if args.index_base == 1 else args.base_bin
    model = build_model(fig1_probe(padding_mode=args.padding), Rng(args.seed))
    result = run_shift_probe(model, base_bin, args.shifts, args.epsilon)
    rows = [{"shift": s, "raw_max_abs_diff": raw, "pooled_max_abs_diff": pooled} for s, raw, pooled in result.rows]
    out.add(f"shift_probe_{args.padding}_seed{args.seed}.csv",
            to_csv(["shift", "raw_max_abs_diff", "pooled_max_abs_diff"], rows))
    print(f"shift probe ({args.padding} padding, bin index {base_bin}): tolerated_shift={result.tolerated_shift}")


def cmd_synth(args, cfg: ExperimentConfig, out: Outputs) -> None:
    spec = cfg.synth.model_copy(update={"seed": args.seed})
    data = gen_synth(spec)
    buf = io.BytesIO()
    np.savez(buf, x_train=data.x_train, y_train=data.y_train, x_test=data.x_test, y_test=data.y_test)
    out.add(f"synth_seed{args.seed}.npz", buf.getvalue())
    header = ["split", "index", "label", "jitter", "amplitude"]
    out.add(f"synth_seed{args.seed}.csv", to_csv(header, [dict(zip(header, m)) for m in data.meta]))
    print(f"synth: {len(data.x_train)} train / {len(data.x_test)} test samples, pair shift {spec.pair_shift} bins")


def _experiment_inputs(args, cfg: ExperimentConfig, ablation: bool = False):
    synth = cfg.synth if "synth" in cfg.model_fields_set or not ablation else ABLATION_SYNTH
    train_spec = cfg.train if "train" in cfg.model_fields_set or not ablation else ABLATION_TRAIN
    data = gen_synth(synth.model_copy(update={"seed": args.seed}))
    return cfg.base_model(), data, train_spec.model_copy(update={"seed": args.seed})


def cmd_sweep(args, cfg: ExperimentConfig, out: Outputs) -> None:
    base, data, spec = _experiment_inputs(args, cfg)
    try:
        check_blindness_preconditions(base, data.spec)
    except ValueError as e:
        log.warning("vanilla baseline is not provably blind: %s", e)
    rows = run_nfac_sweep(base, cfg.n_values, data, spec, n_seeds=cfg.n_seeds)
    header = ["n_fac", "seed", "fac_params", "final_loss", "test_accuracy", "paired_logit_gap"]
    out.add(f"sweep_seed{args.seed}.csv", to_csv(header, rows))
    means = {n: np.mean([r["test_accuracy"] for r in rows if r["n_fac"] == n]) for n in cfg.n_values}
    print("n_fac sweep: " + ", ".join(f"n={n}: acc={a:.3f}" for n, a in means.items()))


def cmd_ablation(args, cfg: ExperimentConfig, out: Outputs) -> None:
    base, data, spec = _experiment_inputs(args, cfg, ablation=True)
    bad = [m for m in cfg.modes if m not in FAC_MODES]
    if bad:
        raise UsageError(f"unknown FAC modes {bad}")
    runs, summary = run_ablation(base, cfg.modes, data, spec, n_seeds=cfg.n_seeds)
    out.add(f"ablation_runs_seed{args.seed}.csv",
            to_csv(["mode", "seed", "params", "fac_params", "final_loss", "test_accuracy"], runs))
    out.add(f"ablation_seed{args.seed}.csv", to_csv(["mode", "n_runs", "mean_accuracy", "std_accuracy"], summary))
    print("ablation: " + ", ".join(f"{s['mode']}={s['mean_accuracy']:.3f}±{s['std_accuracy']:.3f}" for s in summary))


def cmd_count(args, cfg: ExperimentConfig, out: Outputs) -> None:
    base = cfg.model if cfg.model is not None else preset(args.preset)
    n_fac = len(base.blocks) if args.n_fac is None else args.n_fac
    fac = set_n_fac(with_blocks(base, fac_mode=args.mode), n_fac)
    van = accounting.vanilla(base)
    fdy = accounting.fdy_config(base, args.fdy_basis)
    shape = tuple(args.input_shape) if args.input_shape else None
    reports = {
        f"count_{args.preset}_vanilla.csv": accounting.count_flops(van, shape),
        f"count_{args.preset}_fac{n_fac}_{args.mode}.csv": accounting.count_flops(fac, shape),
        f"count_{args.preset}_fdy{args.fdy_basis}.csv": accounting.count_flops(fdy, shape),
    }
    for name, rep in reports.items():
        out.add(name, rep.to_csv())
    v, f, d = reports.values()
    print(f"vanilla: {v.params} params, {v.flops} flops ({accounting.CONVENTION})")
    print(f"FAC overhead: {f.params - v.params} params, {f.flops - v.flops} flops (n_fac={n_fac}, mode={args.mode})")
    print(f"FDY overhead: {d.params - v.params} params, {d.flops - v.flops} flops (K={args.fdy_basis})")


def cmd_export_encodings(args, cfg: ExperimentConfig, out: Outputs) -> None:
    base = cfg.model if cfg.model is not None else preset(args.preset)
    config = set_n_fac(base, len(base.blocks) if args.n_fac is None else args.n_fac)
    model = build_model(config, Rng(args.seed))
    if args.train:
        data = gen_synth(cfg.synth.model_copy(update={"seed": args.seed}))
        train(model, data, cfg.train.model_copy(update={"seed": args.seed}))
    rows = [{"block": i, "n_freq": F, "bin": f, "value": float(v)} for i, F, vec in export_encodings(model) for f, v in enumerate(vec)]
    tag = "trained" if args.train else "init"
    out.add(f"encodings_{tag}_seed{args.seed}.csv", to_csv(["block", "n_freq", "bin", "value"], rows))
    print(f"exported {len({r['block'] for r in rows})} encoding vectors ({tag})")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _shifts(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"shifts must be comma-separated integers, got {text!r}") from None


def _dims(text: str) -> list[int]:
    try:
        dims = [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N,C,T,F, got {text!r}") from None
    if len(dims) != 4:
        raise argparse.ArgumentTypeError(f"expected 4 comma-separated dims, got {text!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment/model config file")
    common.add_argument("--seed", type=int, default=42, help="master seed (FACNET_SEED overrides; default 42)")
    common.add_argument("--out", default="out", help="output directory, created if missing (default: out)")
    common.add_argument("--force", action="store_true", help="overwrite existing output files")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="facnet", description="Frequency-aware convolution experiments and checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every layer kind")

    p = sub.add_parser("shift-probe", parents=[common], help="frequency-shift probe on the 4-block probe network")
    p.add_argument("--base-bin", type=int, default=19, help="bin carrying the unit pattern (default 19)")
    p.add_argument("--index-base", type=int, choices=(0, 1), default=0, help="read --base-bin as 0- or 1-based")
    p.add_argument("--shifts", type=_shifts, default=list(range(0, 17)), help="comma-separated shifts (default 0..16)")
    p.add_argument("--epsilon", type=float, default=1e-9, help="difference below which outputs count as equal")
    p.add_argument("--padding", choices=("zero", "circular_frequency"), default="zero", help="conv padding mode")

    sub.add_parser("synth", parents=[common], help="generate the shift-paired synthetic dataset")
    sub.add_parser("sweep", parents=[common], help="train one model per n_FAC value and seed")
    sub.add_parser("ablation", parents=[common], help="train FAC models under fixed / adapt / adapt_dep scaling")

    for name, helptext in (("count", "static parameter and flop counts"),
                           ("export-encodings", "write FAC encoding vectors per block")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--preset", default="crnn-conv", help="model preset when --config has no model")
        p.add_argument("--n-fac", type=int, default=None, help="number of leading FAC blocks (default: all)")
        if name == "count":
            p.add_argument("--mode", choices=FAC_MODES, default="adapt_dep", help="FAC scaling mode")
            p.add_argument("--fdy-basis", type=int, default=4, help="FDY basis kernel count K")
            p.add_argument("--input-shape", type=_dims, default=None, help="N,C,T,F for flop counts")
        else:
            p.add_argument("--train", action="store_true", help="train on the synthetic data before exporting")
    return parser


COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "shift-probe": cmd_shift_probe,
    "synth": cmd_synth,
    "sweep": cmd_sweep,
    "ablation": cmd_ablation,
    "count": cmd_count,
    "export-encodings": cmd_export_encodings,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if os.environ.get("FACNET_SEED"):
        try:
            args.seed = int(os.environ["FACNET_SEED"])
        except ValueError:
            print(f"{args.command}: FACNET_SEED must be an integer", file=sys.stderr)
            return 2
    out = Outputs(args.out, args.force)
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg, out)
        out.write()
    except UsageError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return 2
    except CheckFailed as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, ArithmeticError) as e:
        print(f"{args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
