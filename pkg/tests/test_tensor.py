"""Autograd engine: forward semantics, FFT contracts, gradient checks."""

import numpy as np
import pytest

from socfno.tensor import (
    ComplexTensor,
    NumericalError,
    Tensor,
    channel_linear,
    concat_channels,
    correlate2d,
    grad_check,
    irfft2,
    real_inner,
    rfft2,
)

from oracles import naive_dft2, naive_idft2


class TestTensorBasics:
    def test_data_is_write_protected(self):
        t = Tensor([[1.0, 2.0]])
        with pytest.raises(ValueError):
            t.data[0, 0] = 3.0

    def test_constructor_copies_input(self):
        src = np.ones(3)
        t = Tensor(src)
        src[0] = 7.0
        assert t.data[0] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((0, 2)))
        with pytest.raises(ValueError):
            ComplexTensor(np.zeros((2, 0), dtype=np.complex128))

    def test_backward_requires_scalar(self):
        t = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            (t * 2.0).backward()

    def test_arithmetic_values(self):
        a = Tensor([1.0, 2.0, 3.0])
        b = Tensor([4.0, 5.0, 6.0])
        assert np.allclose((a + b).data, [5, 7, 9])
        assert np.allclose((a - b).data, [-3, -3, -3])
        assert np.allclose((a * b).data, [4, 10, 18])
        assert np.allclose((b / a).data, [4, 2.5, 2])
        assert np.allclose((2.0 - a).data, [1, 0, -1])
        assert np.allclose((a**2).data, [1, 4, 9])

    def test_division_by_zero_raises(self):
        with pytest.raises(NumericalError):
            Tensor([1.0]) / Tensor([0.0])

    def test_pow_non_finite_raises(self):
        with pytest.raises(NumericalError):
            Tensor([0.0]) ** -0.5

    def test_mean_axis_keepdims(self):
        x = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
        t = Tensor(x)
        got = t.mean(axis=(1, 2), keepdims=True)
        assert got.shape == (2, 1, 1)
        assert np.allclose(got.data, x.mean(axis=(1, 2), keepdims=True))

    def test_shared_subexpression_accumulates(self):
        # y = x*x + x: dy/dx = 2x + 1, gradient flows through both uses.
        x = Tensor([3.0], requires_grad=True)
        y = (x * x + x).sum()
        y.backward()
        assert np.allclose(x.grad, [7.0])

    def test_broadcast_gradient_reduction(self):
        a = Tensor(np.ones((3, 1)), requires_grad=True)
        b = Tensor(np.ones((3, 4)), requires_grad=True)
        (a * b).sum().backward()
        assert a.grad.shape == (3, 1)
        assert np.allclose(a.grad, 4.0)
        assert np.allclose(b.grad, 1.0)


class TestConcatChannels:
    def test_round_trip_values(self):
        a = Tensor(np.full((2, 3, 3), 1.0))
        b = Tensor(np.full((1, 3, 3), 2.0))
        out = concat_channels([a, b])
        assert out.shape == (3, 3, 3)
        assert np.allclose(out.data[:2], 1.0)
        assert np.allclose(out.data[2:], 2.0)

    def test_mismatched_spatial_rejected(self):
        a = Tensor(np.zeros((1, 3, 3)))
        b = Tensor(np.zeros((1, 3, 4)))
        with pytest.raises(ValueError):
            concat_channels([a, b])

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            concat_channels([])

    def test_gradient_splits_back(self):
        a = Tensor(np.ones((2, 2, 2)), requires_grad=True)
        b = Tensor(np.ones((1, 2, 2)), requires_grad=True)
        out = concat_channels([a, b])
        (out * Tensor(np.arange(12, dtype=np.float64).reshape(3, 2, 2))).sum().backward()
        assert np.allclose(a.grad, np.arange(8, dtype=np.float64).reshape(2, 2, 2))
        assert np.allclose(b.grad, np.arange(8, 12, dtype=np.float64).reshape(1, 2, 2))


class TestFftContracts:
    # Expected spectra come from the O(N^4) direct DFT oracle.
    @pytest.mark.parametrize("h", [4, 5, 8])
    @pytest.mark.parametrize("w", [4, 5, 8])
    def test_rfft2_matches_naive_dft(self, h, w):
        rng = np.random.default_rng(h * 100 + w)
        x = rng.standard_normal((1, h, w))
        got = rfft2(Tensor(x)).data[0]
        full = naive_dft2(x[0])
        assert np.max(np.abs(got - full[:, : w // 2 + 1])) <= 1e-10

    @pytest.mark.parametrize("h", [4, 5, 8])
    @pytest.mark.parametrize("w", [4, 5, 8])
    def test_irfft2_matches_naive_inverse(self, h, w):
        rng = np.random.default_rng(h * 10 + w)
        x = rng.standard_normal((1, h, w))
        spectrum = rfft2(Tensor(x))
        back = irfft2(spectrum, w).data[0]
        ref = naive_idft2(naive_dft2(x[0])).real
        assert np.max(np.abs(back - ref)) <= 1e-10
        assert np.max(np.abs(back - x[0])) <= 1e-10

    @pytest.mark.parametrize("h", [4, 5, 8])
    @pytest.mark.parametrize("w", [4, 5, 8])
    def test_parseval(self, h, w):
        # Interior half-spectrum columns stand for a conjugate pair and
        # count twice; the DC column (and Nyquist column for even W) once.
        rng = np.random.default_rng(h + w)
        x = rng.standard_normal((1, h, w))
        s = rfft2(Tensor(x)).data[0]
        weights = np.full(s.shape[1], 2.0)
        weights[0] = 1.0
        if w % 2 == 0:
            weights[-1] = 1.0
        lhs = np.sum(x[0] * x[0])
        rhs = np.sum(weights * np.abs(s) ** 2) / (h * w)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))

    def test_round_trip_identity(self):
        rng = np.random.default_rng(0)
        for w in (6, 7):
            x = rng.standard_normal((2, 5, w))
            assert np.max(np.abs(irfft2(rfft2(Tensor(x)), w).data - x)) <= 1e-12

    def test_irfft2_width_must_match(self):
        s = ComplexTensor(np.zeros((1, 4, 4), dtype=np.complex128))
        with pytest.raises(ValueError):
            irfft2(s, 9)  # 9 // 2 + 1 == 5 != 4

    def test_rfft2_needs_rank3(self):
        with pytest.raises(ValueError):
            rfft2(Tensor(np.zeros((4, 4))))


class TestCorrelate2d:
    def test_matches_direct_loops(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 6, 7))
        k = rng.standard_normal((3, 3))
        got = correlate2d(Tensor(x), k).data
        for c in range(2):
            for i in range(4):
                for j in range(5):
                    ref = float((x[c, i : i + 3, j : j + 3] * k).sum())
                    assert abs(got[c, i, j] - ref) <= 1e-12

    def test_kernel_larger_than_image_rejected(self):
        with pytest.raises(ValueError):
            correlate2d(Tensor(np.zeros((1, 2, 2))), np.zeros((3, 3)))


class TestGradCheck:
    def test_eps_range_enforced(self):
        t = Tensor([1.0])
        with pytest.raises(ValueError):
            grad_check(lambda x: x, [t], eps=1e-2)

    def test_elementwise_ops(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((3, 4, 4)))
        y = Tensor(rng.standard_normal((3, 4, 4)))
        assert grad_check(lambda a, b: a + b, [x, y]) <= 1e-4
        assert grad_check(lambda a, b: a * b, [x, y]) <= 1e-4
        assert grad_check(lambda a, b: a / (b * b + 1.0), [x, y]) <= 1e-4
        assert grad_check(lambda a: a.relu(), [x]) <= 1e-4
        assert grad_check(lambda a: a.gelu(), [x]) <= 1e-4
        assert grad_check(lambda a: a.abs(), [x]) <= 1e-4
        assert grad_check(lambda a: a.mean(), [x]) <= 1e-4
        assert grad_check(lambda a: a.mean(axis=(1, 2), keepdims=True), [x]) <= 1e-4
        assert grad_check(lambda a: a.sum(axis=0), [x]) <= 1e-4

    def test_structural_ops(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((3, 5, 5)))
        y = Tensor(rng.standard_normal((2, 5, 5)))
        w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        k = rng.standard_normal((3, 3))
        assert grad_check(lambda a, b: concat_channels([a, b]), [x, y]) <= 1e-4
        assert (
            grad_check(lambda a: channel_linear(a, w), [x], params={"w": w}) <= 1e-4
        )
        assert grad_check(lambda a: correlate2d(a, k), [x]) <= 1e-4

    def test_fft_ops(self):
        rng = np.random.default_rng(6)
        for w in (6, 7):
            x = Tensor(rng.standard_normal((2, 5, w)))
            assert grad_check(rfft2, [x]) <= 1e-4
            s = ComplexTensor(
                rng.standard_normal((2, 5, w // 2 + 1))
                + 1j * rng.standard_normal((2, 5, w // 2 + 1))
            )
            assert grad_check(lambda t: irfft2(t, w), [s]) <= 1e-4
            x2 = Tensor(rng.standard_normal((2, 5, w)))
            assert grad_check(lambda t: irfft2(rfft2(t), w), [x2]) <= 1e-4

    def test_real_inner_complex(self):
        rng = np.random.default_rng(8)
        s = ComplexTensor(
            rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        )
        coeffs = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        assert grad_check(lambda t: real_inner(t, coeffs), [s]) <= 1e-4
