"""Cosine schedule endpoints and Adamax update semantics."""

import numpy as np
import pytest

from socfno.optim import Adamax, CosineSchedule, cosine_lr
from socfno.tensor import ComplexTensor, NumericalError, Tensor

from oracles import adamax_reference


class TestCosineSchedule:
    def test_endpoints_exact(self):
        sched = CosineSchedule(lr_max=1e-2, lr_min=1e-4, total_epochs=400)
        assert cosine_lr(0, sched) == 1e-2
        assert cosine_lr(399, sched) == 1e-4

    def test_midpoint(self):
        sched = CosineSchedule(lr_max=1e-2, lr_min=1e-4, total_epochs=11)
        mid = cosine_lr(5, sched)
        assert mid == pytest.approx((1e-2 + 1e-4) / 2, abs=1e-15)

    def test_monotone_decay(self):
        sched = CosineSchedule(total_epochs=50)
        values = [cosine_lr(e, sched) for e in range(50)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_single_epoch(self):
        sched = CosineSchedule(total_epochs=1)
        assert cosine_lr(0, sched) == sched.lr_max

    def test_epoch_range(self):
        sched = CosineSchedule(total_epochs=10)
        with pytest.raises(ValueError):
            cosine_lr(-1, sched)
        with pytest.raises(ValueError):
            cosine_lr(10, sched)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CosineSchedule(total_epochs=0)
        with pytest.raises(ValueError):
            CosineSchedule(lr_max=1e-4, lr_min=1e-2)
        with pytest.raises(ValueError):
            CosineSchedule(lr_min=0.0)


def tensor_with_grad(values, grads):
    t = Tensor(np.asarray(values, dtype=np.float64))
    t.requires_grad = True
    t.grad = np.asarray(grads, dtype=np.float64)
    return t


class TestAdamax:
    # Scalar trace from a pure-Python reference implementation.
    def test_matches_scalar_reference(self):
        grads = [0.3, -1.2, 0.05, 0.7, -0.01, 2.0]
        lr, beta1, beta2, eps = 3e-3, 0.9, 0.999, 1e-8
        expected = adamax_reference(1.5, grads, lr, beta1, beta2, eps)

        t = tensor_with_grad([1.5], [grads[0]])
        opt = Adamax({"p": t}, beta1=beta1, beta2=beta2, eps=eps)
        for k, g in enumerate(grads):
            t.grad = np.array([g])
            opt.step(lr)
            assert abs(t.data[0] - expected[k]) <= 1e-12

    def test_complex_parameter_treated_as_two_reals(self):
        grads = [0.4, -0.9, 1.3]
        lr = 1e-2
        re = adamax_reference(0.25, grads, lr, 0.9, 0.999, 1e-8)
        im = adamax_reference(-0.5, [-g for g in grads], lr, 0.9, 0.999, 1e-8)

        c = ComplexTensor(np.array([0.25 - 0.5j]))
        c.requires_grad = True
        opt = Adamax({"c": c})
        for k, g in enumerate(grads):
            c.grad = np.array([g - 1j * g])
            opt.step(lr)
            assert abs(c.data[0].real - re[k]) <= 1e-12
            assert abs(c.data[0].imag - im[k]) <= 1e-12

    def test_missing_grad_is_zero_update_but_state_advances(self):
        t = Tensor(np.array([2.0]))
        t.requires_grad = True
        opt = Adamax({"p": t})
        opt.step(1e-2)
        assert t.data[0] == 2.0
        assert opt.t == 1

    def test_non_finite_gradient_names_parameter(self):
        t = tensor_with_grad([1.0], [np.nan])
        opt = Adamax({"spectral": t})
        with pytest.raises(NumericalError, match="spectral"):
            opt.step(1e-2)

    def test_zero_grad_clears_all(self):
        a = tensor_with_grad([1.0], [0.5])
        b = tensor_with_grad([2.0], [0.25])
        opt = Adamax({"a": a, "b": b})
        opt.zero_grad()
        assert a.grad is None and b.grad is None

    def test_updated_tensor_stays_locked(self):
        t = tensor_with_grad([1.0], [0.5])
        Adamax({"p": t}).step(1e-2)
        assert not t.data.flags.writeable

    def test_validation(self):
        t = tensor_with_grad([1.0], [0.5])
        with pytest.raises(ValueError):
            Adamax({"p": t}, beta1=1.0)
        with pytest.raises(ValueError):
            Adamax({"p": t}, eps=0.0)
        with pytest.raises(ValueError):
            Adamax({"p": t}).step(0.0)

    def test_infinity_norm_memory(self):
        # After a large gradient, u holds its magnitude and decays by
        # beta2 per step, bounding later updates.
        t = tensor_with_grad([0.0], [10.0])
        opt = Adamax({"p": t}, beta2=0.5)
        opt.step(1e-3)
        assert opt.state["p"]["u"][0] == 10.0
        t.grad = np.array([1e-12])
        opt.step(1e-3)
        assert opt.state["p"]["u"][0] == pytest.approx(5.0)
