"""Dense float64/complex128 tensors with reverse-mode differentiation.

The graph is dynamic: every operation records its parent nodes and a
backward closure, and ``backward()`` replays the chain rule in reverse
topological order. Gradients of complex tensors use the real-pair
convention ``grad = dL/d(Re) + 1j * dL/d(Im)``, so for a complex-linear
map ``y = a * x`` the input gradient is ``conj(a) * gy`` and the
coefficient gradient is ``conj(x) * gy``.

Spatial data is channel-first ``[C, H, W]`` throughout the package.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ComplexTensor",
    "NumericalError",
    "concat_channels",
    "channel_linear",
    "correlate2d",
    "rfft2",
    "irfft2",
    "real_inner",
    "grad_check",
]


class NumericalError(ArithmeticError):
    """An operation produced a non-finite value from finite inputs."""


def _locked(arr):
    arr.flags.writeable = False
    return arr


def _unbroadcast(grad, shape):
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class _Node:
    """Shared autograd mechanics for real and complex tensors."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def _init_node(self, data, requires_grad, parents, backward):
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents
        )
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def _add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def _toposort(self):
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.size != 1:
            raise ValueError(
                f"backward() needs a scalar output, got shape {self.shape}"
            )
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that requires no gradient")
        self.grad = np.ones_like(self.data)
        for node in reversed(self._toposort()):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


class Tensor(_Node):
    """Immutable float64 array node in the autograd graph."""

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("tensor extents must be positive")
        self._init_node(_locked(arr), requires_grad, (), None)

    @classmethod
    def _make(cls, arr, parents, backward):
        node = cls.__new__(cls)
        node._init_node(
            _locked(np.ascontiguousarray(arr, dtype=np.float64)),
            False,
            parents,
            backward,
        )
        return node

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=np.float64))
        a, b = self, other
        out = a.data + b.data

        def backward(g):
            if a.requires_grad:
                a._add_grad(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._add_grad(_unbroadcast(g, b.shape))

        return Tensor._make(out, (a, b), backward)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._add_grad(-g)

        return Tensor._make(-a.data, (a,), backward)

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=np.float64))
        return self.__add__(-other)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=np.float64))
        a, b = self, other
        out = a.data * b.data

        def backward(g):
            if a.requires_grad:
                a._add_grad(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._add_grad(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(out, (a, b), backward)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=np.float64))
        a, b = self, other
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.data / b.data
        if not np.all(np.isfinite(out)):
            raise NumericalError("division produced a non-finite value")

        def backward(g):
            if a.requires_grad:
                a._add_grad(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._add_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._make(out, (a, b), backward)

    def __rtruediv__(self, other):
        return Tensor(np.asarray(other, dtype=np.float64)).__truediv__(self)

    def __pow__(self, exponent):
        a = self
        p = float(exponent)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a.data**p
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"pow({p}) produced a non-finite value")

        def backward(g):
            if a.requires_grad:
                a._add_grad(g * p * a.data ** (p - 1.0))

        return Tensor._make(out, (a,), backward)

    # -- elementwise nonlinearities --------------------------------------

    def relu(self):
        a = self
        out = np.maximum(a.data, 0.0)

        def backward(g):
            if a.requires_grad:
                a._add_grad(g * (a.data > 0.0))

        return Tensor._make(out, (a,), backward)

    def gelu(self):
        """Gaussian error linear unit, tanh approximation."""
        a = self
        c = np.sqrt(2.0 / np.pi)
        k = 0.044715
        inner = c * (a.data + k * a.data**3)
        t = np.tanh(inner)
        out = 0.5 * a.data * (1.0 + t)

        def backward(g):
            if a.requires_grad:
                d_inner = c * (1.0 + 3.0 * k * a.data**2)
                local = 0.5 * (1.0 + t) + 0.5 * a.data * (1.0 - t * t) * d_inner
                a._add_grad(g * local)

        return Tensor._make(out, (a,), backward)

    def abs(self):
        a = self

        def backward(g):
            if a.requires_grad:
                a._add_grad(g * np.sign(a.data))

        return Tensor._make(np.abs(a.data), (a,), backward)

    # -- reductions and shape ops ----------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        out = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not a.requires_grad:
                return
            if axis is None:
                a._add_grad(np.broadcast_to(g, a.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._add_grad(np.broadcast_to(g, a.shape).copy())

        return Tensor._make(out, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for ax in axes:
                count *= self.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, shape):
        a = self
        out = a.data.reshape(shape)

        def backward(g):
            if a.requires_grad:
                a._add_grad(g.reshape(a.shape))

        return Tensor._make(out, (a,), backward)


class ComplexTensor(_Node):
    """Immutable complex128 array node in the autograd graph."""

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.complex128)
        if arr.size == 0:
            raise ValueError("tensor extents must be positive")
        self._init_node(_locked(arr), requires_grad, (), None)

    @classmethod
    def _make(cls, arr, parents, backward):
        node = cls.__new__(cls)
        node._init_node(
            _locked(np.ascontiguousarray(arr, dtype=np.complex128)),
            False,
            parents,
            backward,
        )
        return node


def concat_channels(tensors):
    """Concatenate ``[C_i, H, W]`` tensors along the channel axis."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat_channels needs at least one tensor")
    spatial = tensors[0].shape[1:]
    for t in tensors:
        if t.ndim != 3:
            raise ValueError(f"expected rank-3 tensors, got shape {t.shape}")
        if t.shape[1:] != spatial:
            raise ValueError(
                f"mismatched spatial extents {t.shape[1:]} vs {spatial}"
            )
    out = np.concatenate([t.data for t in tensors], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._add_grad(g[lo:hi])

    return Tensor._make(out, tuple(tensors), backward)


def channel_linear(x, weight):
    """Pointwise channel mix: ``out[o, h, w] = sum_i weight[o, i] * x[i, h, w]``."""
    if x.ndim != 3 or weight.ndim != 2:
        raise ValueError("channel_linear expects x of rank 3 and weight of rank 2")
    if weight.shape[1] != x.shape[0]:
        raise ValueError(
            f"weight maps {weight.shape[1]} channels, input has {x.shape[0]}"
        )
    out = np.tensordot(weight.data, x.data, axes=([1], [0]))

    def backward(g):
        if x.requires_grad:
            x._add_grad(np.tensordot(weight.data.T, g, axes=([1], [0])))
        if weight.requires_grad:
            weight._add_grad(np.einsum("ohw,ihw->oi", g, x.data))

    return Tensor._make(out, (x, weight), backward)


def correlate2d(x, kernel):
    """Valid-mode cross-correlation of each channel with a fixed 2-D kernel."""
    if x.ndim != 3:
        raise ValueError("correlate2d expects a [C, H, W] tensor")
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    _, h, w = x.shape
    if kh > h or kw > w:
        raise ValueError(
            f"kernel {kernel.shape} larger than image ({h}, {w})"
        )
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    out = np.einsum("chwij,ij->chw", windows, kernel)

    def backward(g):
        if not x.requires_grad:
            return
        padded = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        flipped = kernel[::-1, ::-1]
        gwin = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
        x._add_grad(np.einsum("chwij,ij->chw", gwin, flipped))

    return Tensor._make(out, (x,), backward)


def _rfft_col_weights(width, half_width):
    """Multiplicity of each half-spectrum column in the full spectrum."""
    w = np.full(half_width, 2.0)
    w[0] = 1.0
    if width % 2 == 0:
        w[-1] = 1.0
    return w


def rfft2(x):
    """2-D real-to-half-complex FFT over the trailing two axes.

    The adjoint halves interior half-spectrum columns before the inverse
    transform: those bins stand for a conjugate pair in the full spectrum,
    so a plain irfft2 of the upstream gradient would count them twice.
    """
    if x.ndim != 3:
        raise ValueError("rfft2 expects a [C, H, W] tensor")
    _, h, w = x.shape
    out = np.fft.rfft2(x.data, axes=(1, 2))
    colw = _rfft_col_weights(w, out.shape[2])

    def backward(g):
        if x.requires_grad:
            x._add_grad(np.fft.irfft2(g / colw, s=(h, w), axes=(1, 2)) * (h * w))

    return ComplexTensor._make(out, (x,), backward)


def irfft2(s, out_width):
    """Inverse of :func:`rfft2`; ``out_width`` disambiguates even/odd width."""
    if s.ndim != 3:
        raise ValueError("irfft2 expects a [C, H, Wh] tensor")
    _, h, wh = s.shape
    out_width = int(out_width)
    if out_width // 2 + 1 != wh:
        raise ValueError(
            f"out_width {out_width} inconsistent with half-spectrum width {wh}"
        )
    out = np.fft.irfft2(s.data, s=(h, out_width), axes=(1, 2))
    colw = _rfft_col_weights(out_width, wh)

    def backward(g):
        if s.requires_grad:
            s._add_grad(np.fft.rfft2(g, axes=(1, 2)) * (colw / (h * out_width)))

    return Tensor._make(out, (s,), backward)


def real_inner(y, coeffs):
    """Real inner product ``sum(Re(conj(coeffs) * y))`` as a scalar tensor.

    Works for real and complex ``y``; the gradient with respect to a
    complex ``y`` is ``g * coeffs`` under the real-pair convention.
    """
    coeffs = np.asarray(coeffs, dtype=y.data.dtype)
    if coeffs.shape != y.shape:
        raise ValueError(f"coefficient shape {coeffs.shape} != {y.shape}")
    out = np.sum(y.data.real * coeffs.real + y.data.imag * coeffs.imag)

    def backward(g):
        if y.requires_grad:
            y._add_grad(g.item() * coeffs)

    return Tensor._make(out, (y,), backward)


def _float_view(arr):
    """Flat float64 view of a real or complex array (re/im interleaved)."""
    if np.iscomplexobj(arr):
        return arr.view(np.float64).ravel()
    return arr.ravel()


def grad_check(op, inputs, eps=1e-5, params=None, seed=7):
    """Compare analytic gradients of ``op`` against central differences.

    ``op`` maps the given input tensors to a tensor; non-scalar outputs are
    reduced with a fixed random linear functional so a single backward pass
    covers every output. Checked tensors are the inputs plus ``params``
    (defaults to ``op.params()`` when present). Returns the maximum over
    checked tensors of ``max|a - n| / max(max|a|, max|n|, 1e-12)``, the
    sup-norm relative error of each gradient array.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    name = getattr(op, "__name__", type(op).__name__)
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
    if params is None:
        params = dict(op.params()) if hasattr(op, "params") else {}
    checked = list(inputs) + list(params.values())

    rng = np.random.default_rng(seed)
    probe = op(*inputs)
    if np.iscomplexobj(probe.data):
        coeffs = rng.standard_normal(probe.shape) + 1j * rng.standard_normal(
            probe.shape
        )
    else:
        coeffs = rng.standard_normal(probe.shape)

    def scalar():
        out = op(*inputs)
        value = out if out.size == 1 and not np.iscomplexobj(out.data) else None
        if value is None:
            value = real_inner(out, coeffs)
        v = float(value.data.reshape(()).real)
        if not np.isfinite(v):
            raise NumericalError(f"non-finite value while checking '{name}'")
        return value

    for t in checked:
        t.zero_grad()
    out = scalar()
    out.backward()
    analytic = [
        np.zeros_like(_float_view(t.data)) if t.grad is None
        else _float_view(t.grad).copy()
        for t in checked
    ]

    max_err = 0.0
    for t, ana in zip(checked, analytic):
        original = t.data
        work = original.copy()
        flat = _float_view(work)
        t.data = work
        numeric = np.zeros_like(ana)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = scalar().item()
            flat[i] = saved - eps
            f_minus = scalar().item()
            flat[i] = saved
            numeric[i] = (f_plus - f_minus) / (2.0 * eps)
        t.data = original
        # Normalize per tensor: elementwise ratios blow up on entries whose
        # true gradient is tiny enough to drown in difference roundoff.
        scale = max(np.max(np.abs(ana)), np.max(np.abs(numeric)), 1e-12)
        max_err = max(max_err, float(np.max(np.abs(ana - numeric))) / scale)
    return max_err
