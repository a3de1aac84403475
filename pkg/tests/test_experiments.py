import numpy as np
import pytest
from pydantic import ValidationError

from facnet.experiments import (
    SynthDataset,
    SynthSpec,
    TrainingDivergedError,
    TrainSpec,
    cumulative_pool_factor,
    delta_spectrogram,
    gen_synth,
    paired_logit_gap,
    run_ablation,
    run_nfac_sweep,
    run_shift_probe,
    train,
)
from facnet.model import build_model, crnn_lite, fig1_probe, set_n_fac
from facnet.tensor import Rng

SMALL = SynthSpec(n_train=8, n_test=8)
QUICK = TrainSpec(epochs=1, batch_size=4)


class TestShiftProbe:
    def test_zero_shift_is_exact(self):
        result = run_shift_probe(build_model(fig1_probe(), Rng(0)), 19, [0])
        assert result.rows == [(0, 0.0, 0.0)]

    def test_circular_probe_invariant_at_pool_factor(self):
        model = build_model(fig1_probe(padding_mode="circular_frequency"), Rng(3))
        result = run_shift_probe(model, 19, [0, 16, 32])
        assert all(pooled <= 1e-12 for _, _, pooled in result.rows)

    def test_zero_padding_demo_reports(self):
        result = run_shift_probe(build_model(fig1_probe(), Rng(42)), 19, range(0, 11), epsilon=1e-9)
        assert len(result.rows) == 11
        assert 0 <= result.tolerated_shift <= 10

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            run_shift_probe(build_model(fig1_probe(), Rng(0)), 60, [10])

    def test_delta_spectrogram(self):
        x = delta_spectrogram((1, 4, 64), 19)
        assert x.sum() == 4 and np.all(x[..., 19] == 1)


class TestSynth:
    def test_noiseless_unjittered_class_identical(self):
        data = gen_synth(SynthSpec(noise_std=0.0, jitter_max=0, n_train=20))
        zeros = data.x_train[data.y_train == 0]
        assert np.all(zeros == zeros[0])

    def test_class_one_is_circular_shift_of_class_zero(self):
        data = gen_synth(SynthSpec(centers=(16, 48), F=64, jitter_step=16, jitter_max=0, amplitude_jitter=(0.5, 2.0)))
        for split in ("train", "test"):
            a, b = data.pairs(split)
            np.testing.assert_array_equal(np.roll(a, 32, axis=3), b)

    def test_balanced(self):
        data = gen_synth(SynthSpec(n_train=200))
        assert np.sum(data.y_train == 0) == np.sum(data.y_train == 1) == 100

    def test_deterministic(self):
        a, b = gen_synth(SynthSpec(seed=4)), gen_synth(SynthSpec(seed=4))
        np.testing.assert_array_equal(a.x_train, b.x_train)
        np.testing.assert_array_equal(a.x_test, b.x_test)
        assert not np.array_equal(a.x_train, gen_synth(SynthSpec(seed=5)).x_train)

    def test_pattern_location(self):
        data = gen_synth(SynthSpec(noise_std=0.0, jitter_max=0, width=3))
        np.testing.assert_array_equal(np.nonzero(data.x_train[0, 0, 0])[0], [15, 16, 17])

    def test_amplitude_jitter_range(self):
        data = gen_synth(SynthSpec(noise_std=0.0, amplitude_jitter=(0.25, 4.0)))
        peaks = data.x_train.max(axis=(1, 2, 3))
        assert peaks.min() >= 0.25 and peaks.max() < 4.0 and np.ptp(peaks) > 1.0

    @pytest.mark.parametrize("kwargs", [dict(centers=(1, 48)), dict(centers=(16, 63)), dict(n_train=7),
                                        dict(jitter_max=20), dict(n_classes=3)])
    def test_invalid_specs(self, kwargs):
        with pytest.raises(ValidationError):
            SynthSpec(**kwargs)


class TestTrain:
    def test_zero_lr_leaves_params(self):
        model = build_model(set_n_fac(crnn_lite(), 1), Rng(0))
        before = [p.value.copy() for p in model.params()]
        train(model, gen_synth(SMALL), TrainSpec(lr=0.0, epochs=2, batch_size=4))
        assert all(np.array_equal(b, p.value) for b, p in zip(before, model.params()))

    def test_memorizes_single_sample(self):
        full = gen_synth(SMALL)
        one = SynthDataset(full.x_train[:1], full.y_train[:1], full.x_test, full.y_test, full.spec)
        model = build_model(set_n_fac(crnn_lite(), 1), Rng(1))
        hist = train(model, one, TrainSpec(epochs=60, batch_size=1, lr=1e-2))
        assert hist[-1]["train_loss"] < 0.01

    def test_deterministic_history(self):
        data = gen_synth(SMALL)
        runs = [train(build_model(set_n_fac(crnn_lite(), 2), Rng(3)), data, TrainSpec(epochs=3, batch_size=4, seed=3))
                for _ in range(2)]
        assert runs[0] == runs[1]
        assert [r["epoch"] for r in runs[0]] == [1, 2, 3]

    def test_loss_decreases(self):
        data = gen_synth(SynthSpec(n_train=40, n_test=20))
        hist = train(build_model(set_n_fac(crnn_lite(), 1), Rng(0)), data, TrainSpec(epochs=5))
        assert hist[-1]["train_loss"] < hist[0]["train_loss"]

    def test_non_finite_loss_aborts(self):
        model = build_model(crnn_lite(), Rng(0))
        model.head[-1].weight.value[:] = np.nan
        with pytest.raises(TrainingDivergedError, match="epoch 1"):
            train(model, gen_synth(SMALL), QUICK)


def test_vanilla_paired_logits_equal_untrained():
    model = build_model(crnn_lite(), Rng(0))
    assert paired_logit_gap(model, gen_synth(SMALL)) <= 1e-9


def test_fac_paired_logits_differ_untrained():
    model = build_model(set_n_fac(crnn_lite(), 1), Rng(0))
    assert paired_logit_gap(model, gen_synth(SMALL)) > 1e-6


def test_pool_factor():
    assert cumulative_pool_factor(crnn_lite()) == 16


def test_sweep_rows():
    base = crnn_lite(n_frames=2, n_freq=128, channels=(2,) * 7)
    rows = run_nfac_sweep(base, [0, 1, 4, 7], gen_synth(SynthSpec(T=2, F=128, centers=(32, 96), n_train=4, n_test=4)), QUICK)
    assert [r["n_fac"] for r in rows] == [0, 1, 4, 7]
    assert rows[0]["fac_params"] == 0
    assert rows[1]["fac_params"] == 2 * 128 + 1


def test_ablation_rows():
    runs, summary = run_ablation(crnn_lite(channels=(2, 2, 2, 2)), ["fixed", "adapt", "adapt_dep"], gen_synth(SMALL), QUICK)
    assert len(runs) == 15 and len(summary) == 3
    fac_params = {r["mode"]: r["fac_params"] for r in runs}
    assert fac_params["fixed"] == 64 + 32 + 16 + 8
    assert fac_params["adapt"] == fac_params["adapt_dep"] == sum(2 * f + 1 for f in (64, 32, 16, 8))
    for s in summary:
        accs = [r["test_accuracy"] for r in runs if r["mode"] == s["mode"]]
        assert s["mean_accuracy"] == pytest.approx(np.mean(accs))
