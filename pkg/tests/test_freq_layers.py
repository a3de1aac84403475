import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facnet.freq_layers import (
    FAC,
    FAC_MODES,
    FDY,
    FAConcat,
    fac_alpha,
    fac_encoding_init,
    fdy_forward,
    frequency_ramp,
)
from facnet.layers import ConvSpec, conv2d_forward
from facnet.tensor import InvalidShapeError, Rng


def vanilla(x, layer_conv):
    return conv2d_forward(x, layer_conv.spec, layer_conv.weight.value, layer_conv.bias.value)


class TestEncoding:
    def test_first_bin_is_zero(self):
        assert fac_encoding_init(128)[0] == 0.0

    def test_midpoint(self):
        assert fac_encoding_init(128)[64] == pytest.approx(0.7071068, abs=1e-7)

    def test_four_bins(self):
        np.testing.assert_allclose(fac_encoding_init(4), [0.0, 0.3826834, 0.7071068, 0.9238795], atol=1e-7)

    def test_zero_length(self):
        with pytest.raises(ValueError):
            fac_encoding_init(0)

    def test_monotone_below_one(self):
        v = fac_encoding_init(64)
        assert np.all(np.diff(v) > 0) and v[-1] < 1.0


class TestAlpha:
    def test_zero_input_gives_half(self):
        a = fac_alpha(np.zeros((2, 3, 4, 5)), "adapt_dep", np.ones(5), 0.0)
        np.testing.assert_array_equal(a, 0.5)

    @pytest.mark.parametrize("x", [np.zeros((1, 2, 3, 4)), np.full((2, 5, 1, 4), 9.0)])
    def test_fixed_is_one(self, x):
        np.testing.assert_array_equal(fac_alpha(x, "fixed"), 1.0)

    def test_hand_dot_product(self):
        a = fac_alpha(np.ones((1, 1, 3, 4)), "adapt_dep", np.array([1.0, -1.0, 1.0, -1.0]), 0.0)
        assert a[0, 0] == 0.5

    def test_length_mismatch(self):
        with pytest.raises(InvalidShapeError):
            fac_alpha(np.zeros((1, 1, 2, 4)), "adapt", np.zeros(3))

    def test_adapt_dep_per_channel(self):
        rng = Rng(0)
        x = rng.uniform((2, 3, 4, 6), -1, 1)
        w = rng.uniform(6, -1, 1)
        a = fac_alpha(x, "adapt_dep", w, 0.2)
        expected = 1 / (1 + np.exp(-(x.mean(axis=2) @ w + 0.2)))
        np.testing.assert_allclose(a, expected, atol=1e-15)
        assert np.all((a > 0) & (a < 1))

    def test_adapt_is_adapt_dep_of_channel_mean(self):
        rng = Rng(1)
        x = rng.uniform((3, 4, 5, 8), -1, 1)
        w = rng.uniform(8, -1, 1)
        shared = fac_alpha(x, "adapt", w, -0.3)
        dep_of_mean = fac_alpha(x.mean(axis=1, keepdims=True), "adapt_dep", w, -0.3)
        np.testing.assert_allclose(shared, np.repeat(dep_of_mean, 4, axis=1), atol=1e-12)


class TestFAC:
    def make(self, mode="adapt_dep", padding="zero", c_in=2, c_out=3, F=8, seed=0):
        return FAC(ConvSpec(c_in, c_out, (3, 3), padding), F, Rng(seed), mode=mode)

    def test_alpha_forced_to_zero_is_vanilla(self):
        fac = self.make()
        fac.attn_b.value[:] = -1e6
        x = Rng(3).uniform((2, 2, 4, 8), -1, 1)
        np.testing.assert_allclose(fac(x), vanilla(x, fac.conv), atol=1e-9)

    def test_zero_encoding_fixed_is_vanilla(self):
        fac = self.make("fixed")
        fac.p_freq.value[:] = 0.0
        x = Rng(3).uniform((2, 2, 4, 8), -1, 1)
        np.testing.assert_array_equal(fac(x), vanilla(x, fac.conv))

    def test_zero_input_identity_kernel_returns_encoding(self):
        fac = FAC(ConvSpec(1, 1, (1, 1)), 16, Rng(0), mode="fixed")
        fac.conv.weight.value[:] = 1.0
        y = fac(np.zeros((1, 1, 5, 16)))
        np.testing.assert_allclose(y[0, 0], np.tile(fac_encoding_init(16), (5, 1)), atol=1e-15)

    def test_fixed_equals_adapt_dep_with_alpha_clamped(self):
        fixed, dep = self.make("fixed", seed=4), self.make("adapt_dep", seed=4)
        x = Rng(5).uniform((2, 2, 3, 8), -1, 1)
        clamped = vanilla(x + dep.p_freq.value, dep.conv)
        np.testing.assert_allclose(fixed(x), clamped, atol=1e-12)

    def test_adapt_equals_adapt_dep_on_channel_mean(self):
        adapt, dep = self.make("adapt", seed=6), self.make("adapt_dep", seed=6)
        rng = Rng(7)
        w = rng.uniform(8, -1, 1)
        for layer in (adapt, dep):
            layer.attn_w.value[:] = w
            layer.attn_b.value[:] = 0.1
        x = rng.uniform((2, 2, 3, 8), -1, 1)
        alpha = dep.alpha(np.broadcast_to(x.mean(axis=1, keepdims=True), x.shape))
        reduced = vanilla(x + alpha[:, :, None, None] * dep.p_freq.value, dep.conv)
        np.testing.assert_allclose(adapt(x), reduced, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), mode=st.sampled_from(FAC_MODES))
    def test_shift_sensitivity(self, seed, mode):
        rng = Rng(seed)
        fac = FAC(ConvSpec(2, 2, (3, 3), "circular_frequency"), 16, rng, mode=mode)
        x = rng.uniform((1, 2, 4, 16), 0.1, 1.0)
        diff = fac(np.roll(x, 1, axis=3)) - np.roll(fac(x), 1, axis=3)
        assert np.linalg.norm(diff) > 1e-6

    def test_params_per_mode(self):
        conv_params = 3 * 3 * 2 * 3 + 3
        for mode, extra in (("fixed", 8), ("adapt", 17), ("adapt_dep", 17)):
            assert sum(p.value.size for p in self.make(mode).params()) == conv_params + extra

    def test_frequency_mismatch(self):
        with pytest.raises(InvalidShapeError):
            self.make()(np.zeros((1, 2, 3, 7)))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            self.make("sometimes")


class TestFDY:
    def test_single_basis_is_vanilla(self):
        rng = Rng(1)
        fdy = FDY(ConvSpec(2, 3), rng, n_basis=1)
        fdy.basis_b.value[:] = rng.uniform((1, 3), -1, 1)
        x = rng.uniform((2, 2, 4, 8), -1, 1)
        ref = conv2d_forward(x, ConvSpec(2, 3), fdy.basis_w.value[0], fdy.basis_b.value[0])
        np.testing.assert_allclose(fdy(x), ref, atol=1e-12)

    def test_two_paths_agree(self):
        rng = Rng(5)
        fdy = FDY(ConvSpec(2, 3), rng, n_basis=4)
        fdy.basis_b.value[:] = rng.uniform((4, 3), -1, 1)
        x = rng.uniform((1, 2, 4, 8), -1, 1)
        pi = fdy.attention_weights(x)
        a = fdy_forward(x, fdy.basis_w.value, fdy.basis_b.value, pi, path="weighted")
        b = fdy_forward(x, fdy.basis_w.value, fdy.basis_b.value, pi, path="combined")
        np.testing.assert_allclose(a, b, atol=1e-9)
        np.testing.assert_allclose(fdy(x), b, atol=1e-9)

    def test_uniform_attention_is_mean_kernel(self):
        rng = Rng(8)
        K = 3
        w = rng.uniform((K, 2, 2, 3, 3), -1, 1)
        b = rng.uniform((K, 2), -1, 1)
        x = rng.uniform((2, 2, 3, 6), -1, 1)
        pi = np.full((2, K, 6), 1.0 / K)
        ref = conv2d_forward(x, ConvSpec(2, 2), w.mean(axis=0), b.mean(axis=0))
        np.testing.assert_allclose(fdy_forward(x, w, b, pi), ref, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.integers(1, 6), scale=st.floats(0.01, 100.0))
    def test_attention_normalized(self, seed, k, scale):
        rng = Rng(seed)
        fdy = FDY(ConvSpec(3, 2, (3, 3), "zero"), rng, n_basis=k)
        pi = fdy.attention_weights(scale * rng.uniform((2, 3, 4, 8), -1, 1))
        assert np.all(pi >= 0)
        np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-12)

    def test_attention_varies_with_frequency(self):
        rng = Rng(2)
        fdy = FDY(ConvSpec(1, 1), rng, n_basis=4)
        pi = fdy.attention_weights(rng.uniform((1, 1, 4, 16), -1, 1))
        assert np.ptp(pi[0, 0]) > 0

    def test_zero_basis(self):
        with pytest.raises(ValueError):
            FDY(ConvSpec(1, 1), Rng(0), n_basis=0)
        with pytest.raises(ValueError):
            fdy_forward(np.zeros((1, 1, 2, 2)), np.zeros((0, 1, 1, 3, 3)), np.zeros((0, 1)), np.zeros((1, 0, 2)))


class TestFAConcat:
    def make(self, seed=0, c_in=2, F=8):
        rng = Rng(seed)
        layer = FAConcat(ConvSpec(c_in, 3, (3, 3)), F, rng)
        layer.conv.bias.value[:] = rng.uniform(3, -1, 1)
        return layer

    def test_ramp(self):
        np.testing.assert_array_equal(frequency_ramp(4), [0.0, 0.25, 0.5, 0.75])

    def test_zero_ramp_kernel_is_vanilla(self):
        layer = self.make()
        layer.conv.weight.value[:, 2:] = 0.0
        x = Rng(1).uniform((2, 2, 4, 8), -1, 1)
        ref = conv2d_forward(x, ConvSpec(2, 3), layer.conv.weight.value[:, :2], layer.conv.bias.value)
        np.testing.assert_allclose(layer(x), ref, atol=1e-12)

    def test_zero_input_is_time_invariant_inside(self):
        y = self.make()(np.zeros((1, 2, 6, 8)))
        interior = y[:, :, 1:-1]
        np.testing.assert_allclose(interior, np.broadcast_to(interior[:, :, :1], interior.shape), atol=1e-15)

    def test_decomposition(self):
        for seed in range(5):
            layer = self.make(seed)
            x = Rng(seed + 100).uniform((2, 2, 3, 8), -1, 1)
            w = layer.conv.weight.value
            v = np.broadcast_to(frequency_ramp(8), (2, 1, 3, 8))
            split = conv2d_forward(x, ConvSpec(2, 3), w[:, :2], layer.conv.bias.value) + conv2d_forward(v, ConvSpec(1, 3), w[:, 2:], None)
            np.testing.assert_allclose(layer(x), split, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidShapeError):
            self.make()(np.zeros((1, 3, 4, 8)))
