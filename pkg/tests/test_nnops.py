"""Structured ops: worked examples, shape contracts, and gradient checks."""

import numpy as np
import pytest

from hilbertdet.gradcheck import finite_difference_check
from hilbertdet.nnops import (add_channel_bias, avg_pool2d, bilinear_upsample2d,
                              concat_channels, conv2d, crop2d, layer_norm,
                              nearest_upsample2d, pad2d, plane_transform,
                              scalar_scale, seq_linear, slice_channels)
from hilbertdet.tensor import ShapeError, Tensor, no_grad


class TestConv2d:
    def test_zero_input_gives_zero_output(self, rng):
        x = Tensor(np.zeros((1, 2, 5, 5)))
        w = Tensor(rng.normal(size=(3, 2, 3, 3)))
        assert np.array_equal(conv2d(x, w, padding=1).data, np.zeros((1, 3, 5, 5)))

    def test_ones_kernel_overlap_counts(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        y = conv2d(x, w, padding=1).data[0, 0]
        assert y[1, 1] == 9.0
        assert y[0, 0] == 4.0
        assert y[0, 1] == 6.0

    def test_depthwise_averaging_kernel_on_constant(self):
        c = 0.73
        x = Tensor(np.full((1, 2, 7, 7), c))
        w = Tensor(np.full((2, 1, 5, 5), 1.0 / 25.0))
        y = conv2d(x, w, groups=2).data
        assert y.shape == (1, 2, 3, 3)
        assert np.allclose(y, c, atol=1e-12)

    def test_output_extent_formula(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 11, 9)))
        w = Tensor(rng.normal(size=(1, 1, 3, 3)))
        y = conv2d(x, w, stride=2, padding=1)
        assert y.data.shape == (1, 1, (11 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_linearity_without_bias(self, rng):
        w = Tensor(rng.normal(size=(2, 3, 3, 3)))
        a = rng.normal(size=(1, 3, 4, 4))
        b = rng.normal(size=(1, 3, 4, 4))
        with no_grad():
            lhs = conv2d(Tensor(2.0 * a - 0.5 * b), w, padding=1).data
            rhs = (2.0 * conv2d(Tensor(a), w, padding=1).data
                   - 0.5 * conv2d(Tensor(b), w, padding=1).data)
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_channel_mismatch_rejected(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 4, 4)))
        w = Tensor(rng.normal(size=(2, 4, 3, 3)))
        with pytest.raises(ShapeError, match="channels"):
            conv2d(x, w)

    def test_even_kernel_rejected(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 4, 4)))
        with pytest.raises(ShapeError, match="odd"):
            conv2d(x, Tensor(rng.normal(size=(1, 1, 2, 2))))

    @pytest.mark.parametrize("stride,padding,groups", [
        (1, 1, 1), (2, 1, 1), (1, 2, 1), (1, 1, 4), (2, 0, 2), (4, 2, 1),
    ])
    def test_gradients(self, rng, stride, padding, groups):
        x = Tensor(rng.normal(size=(2, 4, 5, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 4 // groups, 3, 3)) * 0.4,
                   requires_grad=True)
        b = Tensor(rng.normal(size=4) * 0.1, requires_grad=True)

        def f():
            return (conv2d(x, w, b, stride=stride, padding=padding,
                           groups=groups) ** 2).sum() * 0.5

        assert finite_difference_check(f, {"x": x, "w": w, "b": b}) <= 1e-4


class TestPooling:
    def test_block_mean(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None])
        assert avg_pool2d(x).data[0, 0, 0, 0] == 2.5

    def test_constant_preserved(self):
        x = Tensor(np.full((1, 3, 4, 4), 0.17))
        y = avg_pool2d(x).data
        assert y.shape == (1, 3, 2, 2)
        assert np.array_equal(y, np.full((1, 3, 2, 2), 0.17))

    def test_ramp_blocks(self):
        x = Tensor(np.arange(16.0).reshape(1, 1, 4, 4))
        assert np.array_equal(avg_pool2d(x).data[0, 0],
                              np.array([[2.5, 4.5], [10.5, 12.5]]))

    def test_odd_extent_rejected(self, rng):
        with pytest.raises(ShapeError, match="divisible"):
            avg_pool2d(Tensor(rng.normal(size=(1, 1, 3, 4))))

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
        err = finite_difference_check(
            lambda: (avg_pool2d(x) ** 2).sum(), {"x": x})
        assert err <= 1e-4


class TestUpsampling:
    def test_single_pixel_constant_extension(self):
        y = bilinear_upsample2d(Tensor(np.full((1, 1, 1, 1), 3.3)), 2).data
        assert np.array_equal(y, np.full((1, 1, 2, 2), 3.3))

    @pytest.mark.parametrize("factor", [1, 2, 3, 4])
    def test_constant_stays_constant_bitwise(self, factor):
        c = 0.1234567
        y = bilinear_upsample2d(Tensor(np.full((1, 1, 3, 3), c)), factor).data
        assert np.array_equal(y, np.full_like(y, c))

    def test_half_pixel_row_closed_form(self):
        x = Tensor(np.array([[0.0, 1.0]])[None, None])
        y = bilinear_upsample2d(x, 2).data[0, 0, 0]
        assert np.allclose(y, [0.0, 0.25, 0.75, 1.0], atol=1e-12)

    def test_pool_then_upsample_preserves_constants_exactly(self):
        c = 0.1
        x = Tensor(np.full((1, 2, 6, 6), c))
        y = bilinear_upsample2d(avg_pool2d(x), 2).data
        assert np.array_equal(y, x.data)

    def test_bad_factor_rejected(self):
        with pytest.raises(ShapeError):
            bilinear_upsample2d(Tensor(np.zeros((1, 1, 2, 2))), 0)

    def test_nearest_shapes_and_exact_sums(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 3, 3)), requires_grad=True)
        y = nearest_upsample2d(x, 2)
        assert y.data.shape == (1, 1, 6, 6)
        y.sum().backward()
        assert np.array_equal(x.grad, np.full((1, 1, 3, 3), 4.0))

    @pytest.mark.parametrize("factor", [2, 3])
    def test_bilinear_gradient(self, rng, factor):
        x = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
        err = finite_difference_check(
            lambda: (bilinear_upsample2d(x, factor) ** 2).sum(), {"x": x})
        assert err <= 1e-4


class TestLayerNorm:
    def test_constant_channels_map_to_bias(self):
        x = Tensor(np.full((1, 4, 2, 2), 5.0))
        g = Tensor(np.ones(4))
        b = Tensor(np.full(4, 0.25))
        assert np.allclose(layer_norm(x, g, b).data, 0.25, atol=1e-6)

    def test_two_point_normalization(self):
        x = Tensor(np.array([1.0, -1.0]).reshape(1, 2, 1, 1))
        y = layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-6).data
        expected = np.array([1.0, -1.0]) / np.sqrt(1.0 + 1e-6)
        assert np.allclose(y.reshape(2), expected, atol=1e-12)

    def test_scale_invariance_pre_affine(self, rng):
        x = rng.normal(size=(2, 5, 3, 3))
        g, b = Tensor(np.ones(5)), Tensor(np.zeros(5))
        y1 = layer_norm(Tensor(x), g, b).data
        y2 = layer_norm(Tensor(7.5 * x), g, b).data
        assert np.allclose(y1, y2, atol=1e-6)

    def test_normalized_moments(self, rng):
        x = Tensor(rng.normal(size=(2, 8, 4, 4)) * 3 + 1)
        y = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        assert np.allclose(y.mean(axis=1), 0, atol=1e-9)
        assert np.allclose(y.var(axis=1), 1, atol=1e-5)

    def test_bad_eps_rejected(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 2, 2)))
        with pytest.raises(ShapeError):
            layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 2, 2)), requires_grad=True)
        g = Tensor(rng.normal(size=3), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        err = finite_difference_check(
            lambda: (layer_norm(x, g, b).silu() ** 2).sum(), {"x": x, "g": g, "b": b})
        assert err <= 1e-4


class TestLinearMaps:
    def test_seq_linear_matches_loop(self, rng):
        x = rng.normal(size=(2, 3, 5))
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=4)
        y = seq_linear(Tensor(x), Tensor(w), Tensor(b)).data
        for t in range(5):
            assert np.allclose(y[:, :, t], x[:, :, t] @ w + b, atol=1e-12)

    def test_seq_linear_gradient(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        err = finite_difference_check(
            lambda: (seq_linear(x, w, b) ** 2).sum(), {"x": x, "w": w, "b": b})
        assert err <= 1e-4

    def test_plane_transform_roundtrip_and_gradient(self, rng):
        from hilbertdet.freq import dct_matrix
        x = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
        m = dct_matrix(4)
        y = plane_transform(plane_transform(x, m, m), m.T, m.T)
        assert np.allclose(y.data, x.data, atol=1e-12)
        err = finite_difference_check(
            lambda: (plane_transform(x, m, m) ** 3).sum(), {"x": x})
        assert err <= 1e-4


class TestStructure:
    def test_concat_and_slice_roundtrip(self, rng):
        a = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 3, 3, 3)), requires_grad=True)
        cat = concat_channels([a, b])
        assert cat.data.shape == (1, 5, 3, 3)
        assert np.array_equal(slice_channels(cat, 2, 5).data, b.data)
        err = finite_difference_check(
            lambda: (slice_channels(concat_channels([a, b]), 1, 4) ** 2).sum(),
            {"a": a, "b": b})
        assert err <= 1e-4

    def test_pad_crop_inverse(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 4)), requires_grad=True)
        padded = pad2d(x, 1, 2, 0, 3)
        assert padded.data.shape == (1, 2, 6, 7)
        assert np.array_equal(crop2d(padded, 1, 0, 3, 4).data, x.data)
        err = finite_difference_check(
            lambda: (crop2d(pad2d(x, 1, 2, 0, 3), 0, 0, 4, 5) ** 2).sum(), {"x": x})
        assert err <= 1e-4

    def test_scalar_scale_and_bias_gradients(self, rng):
        x = Tensor(rng.normal(size=(1, 3, 2, 2)), requires_grad=True)
        s = Tensor(np.asarray(0.7), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        err = finite_difference_check(
            lambda: (add_channel_bias(scalar_scale(x, s), b) ** 2).sum(),
            {"x": x, "s": s, "b": b})
        assert err <= 1e-4
