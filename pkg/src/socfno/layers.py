"""Fourier layers: band-limited spectral convolution plus a pointwise map.

A layer computes ``sigma(norm(W v + b + spectral_conv(v)))`` where the
spectral convolution multiplies retained low-frequency modes of the input
spectrum by learned complex weights and inverse-transforms the result.
Two weight forms exist: ``per_mode`` keeps an independent mixing matrix
for every retained mode (optionally for the whole grid), while ``shared``
reuses one matrix across all modes, which makes the parameter count
independent of resolution and of the number of retained modes.
"""

from __future__ import annotations

import numpy as np

from .tensor import ComplexTensor, Tensor, channel_linear, irfft2, rfft2

__all__ = [
    "SpectralWeights",
    "FourierLayer",
    "mode_mask",
    "spectral_conv",
    "instance_norm",
    "ACTIVATIONS",
    "NORMS",
]

SHARED = "shared"
PER_MODE = "per_mode"

NORMS = ("none", "instance")


def _relu(x):
    return x.relu()


def _gelu(x):
    return x.gelu()


def _identity(x):
    return x


ACTIVATIONS = {"relu": _relu, "gelu": _gelu, "identity": _identity}


def mode_rows(height, n_modes):
    """Sorted retained row frequencies: ``[0, N)`` and ``[H - N, H)``, clipped."""
    if n_modes < 1:
        raise ValueError("n_modes must be positive")
    low = np.arange(min(n_modes, height))
    high = np.arange(max(height - n_modes, 0), height)
    return np.unique(np.concatenate([low, high]))


def mode_mask(height, width, n_modes):
    """Boolean half-spectrum mask of retained modes, shape ``[H, W//2 + 1]``."""
    if height < 1 or width < 1:
        raise ValueError("mask extents must be positive")
    half = width // 2 + 1
    mask = np.zeros((height, half), dtype=bool)
    cols = np.arange(min(n_modes, half))
    mask[mode_rows(height, n_modes)[:, None], cols[None, :]] = True
    return mask


class SpectralWeights:
    """Learned complex mixing weights for retained spectrum modes.

    Layouts: ``shared`` stores ``[C_out, C_in]``; ``per_mode`` stores
    ``[2N, N, C_out, C_in]`` where the first N rows are frequencies
    ``[0, N)`` and the last N rows are ``[H - N, H)`` in ascending index
    order; a full-grid variant stores ``[H, W//2 + 1, C_out, C_in]`` and
    is pinned to one spatial resolution.
    """

    def __init__(self, form, n_modes, weight, grid=None):
        if form not in (SHARED, PER_MODE):
            raise ValueError(f"unknown spectral weight form '{form}'")
        if n_modes < 1:
            raise ValueError("n_modes must be positive")
        self.form = form
        self.n_modes = int(n_modes)
        self.weight = weight
        self.grid = None if grid is None else (int(grid[0]), int(grid[1]))
        if form == SHARED and weight.ndim != 2:
            raise ValueError("shared weights must have shape [C_out, C_in]")
        if form == PER_MODE and weight.ndim != 4:
            raise ValueError("per-mode weights must have rank 4")

    @property
    def full_grid(self):
        return self.grid is not None

    @property
    def out_channels(self):
        return self.weight.shape[-2]

    @property
    def in_channels(self):
        return self.weight.shape[-1]

    @staticmethod
    def _init(shape, fan_in, retained, rng):
        bound = np.sqrt(1.0 / (fan_in * retained))
        re = rng.uniform(-bound, bound, shape)
        im = rng.uniform(-bound, bound, shape)
        return ComplexTensor(re + 1j * im, requires_grad=True)

    @classmethod
    def shared(cls, in_channels, out_channels, n_modes, rng):
        retained = 2 * n_modes * n_modes
        weight = cls._init((out_channels, in_channels), in_channels, retained, rng)
        return cls(SHARED, n_modes, weight)

    @classmethod
    def per_mode(cls, in_channels, out_channels, n_modes, rng):
        retained = 2 * n_modes * n_modes
        shape = (2 * n_modes, n_modes, out_channels, in_channels)
        weight = cls._init(shape, in_channels, retained, rng)
        return cls(PER_MODE, n_modes, weight)

    @classmethod
    def per_mode_full_grid(cls, in_channels, out_channels, grid, rng):
        height, width = grid
        half = width // 2 + 1
        shape = (height, half, out_channels, in_channels)
        weight = cls._init(shape, in_channels, height * half, rng)
        return cls(PER_MODE, max(height, width), weight, grid=grid)

    def param_scalars(self):
        """Real scalar count; every complex entry holds two."""
        return 2 * self.weight.size


def _multiply_shared(s, weights, height, half):
    rows = mode_rows(height, weights.n_modes)
    cols = np.arange(min(weights.n_modes, half))
    r = weights.weight
    sub = s.data[:, rows[:, None], cols[None, :]]
    out = np.zeros((r.shape[0], height, half), dtype=np.complex128)
    out[:, rows[:, None], cols[None, :]] = np.tensordot(r.data, sub, axes=([1], [0]))

    def backward(g):
        gsub = g[:, rows[:, None], cols[None, :]]
        if s.requires_grad:
            gs = np.zeros_like(s.data)
            gs[:, rows[:, None], cols[None, :]] = np.tensordot(
                r.data.conj().T, gsub, axes=([1], [0])
            )
            s._add_grad(gs)
        if r.requires_grad:
            r._add_grad(np.einsum("onc,inc->oi", gsub, sub.conj()))

    return ComplexTensor._make(out, (s, r), backward)


def _multiply_per_mode(s, weights, height, half):
    n = weights.n_modes
    r = weights.weight
    wd = r.data
    top = s.data[:, :n, :n]
    bot = s.data[:, height - n :, :n]
    out = np.zeros((wd.shape[2], height, half), dtype=np.complex128)
    out[:, :n, :n] = np.einsum("rcoi,irc->orc", wd[:n], top)
    out[:, height - n :, :n] = np.einsum("rcoi,irc->orc", wd[n:], bot)

    def backward(g):
        gtop = g[:, :n, :n]
        gbot = g[:, height - n :, :n]
        if s.requires_grad:
            gs = np.zeros_like(s.data)
            gs[:, :n, :n] = np.einsum("rcoi,orc->irc", wd[:n].conj(), gtop)
            gs[:, height - n :, :n] = np.einsum(
                "rcoi,orc->irc", wd[n:].conj(), gbot
            )
            s._add_grad(gs)
        if r.requires_grad:
            gr = np.empty_like(wd)
            gr[:n] = np.einsum("orc,irc->rcoi", gtop, top.conj())
            gr[n:] = np.einsum("orc,irc->rcoi", gbot, bot.conj())
            r._add_grad(gr)

    return ComplexTensor._make(out, (s, r), backward)


def _multiply_full_grid(s, weights):
    r = weights.weight
    out = np.einsum("rcoi,irc->orc", r.data, s.data)

    def backward(g):
        if s.requires_grad:
            s._add_grad(np.einsum("rcoi,orc->irc", r.data.conj(), g))
        if r.requires_grad:
            r._add_grad(np.einsum("orc,irc->rcoi", g, s.data.conj()))

    return ComplexTensor._make(out, (s, r), backward)


def spectral_conv(v, weights):
    """Band-limited spectral convolution of ``v`` by ``weights``.

    Equivalent to a circular convolution whose kernel spectrum is zero
    outside the retained modes; the output is exactly real because the
    inverse transform reads only the Hermitian part of the half spectrum.
    """
    if v.ndim != 3:
        raise ValueError("spectral_conv expects a [C, H, W] tensor")
    c, height, width = v.shape
    if c != weights.in_channels:
        raise ValueError(
            f"input has {c} channels, weights expect {weights.in_channels}"
        )
    half = width // 2 + 1
    if weights.full_grid:
        if weights.grid != (height, width):
            raise ValueError(
                f"full-grid weights pinned to {weights.grid}, input is "
                f"({height}, {width})"
            )
    elif weights.form == PER_MODE:
        n = weights.n_modes
        if 2 * n > height or n > half:
            raise ValueError(
                f"per-mode weights with N={n} need 2N <= H and N <= W//2+1, "
                f"got {height}x{width}"
            )
    s = rfft2(v)
    if weights.full_grid:
        y = _multiply_full_grid(s, weights)
    elif weights.form == PER_MODE:
        y = _multiply_per_mode(s, weights, height, half)
    else:
        y = _multiply_shared(s, weights, height, half)
    return irfft2(y, width)


def instance_norm(x, eps=1e-5):
    """Per-channel standardization over the spatial extent."""
    if x.ndim != 3:
        raise ValueError("instance_norm expects a [C, H, W] tensor")
    mu = x.mean(axis=(1, 2), keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=(1, 2), keepdims=True)
    return centered * (var + eps) ** -0.5


class FourierLayer:
    """One spectral block: pointwise linear path plus spectral path."""

    def __init__(
        self,
        in_channels,
        out_channels,
        n_modes,
        rng,
        shared_r=True,
        norm="instance",
        activation="relu",
        full_grid_shape=None,
    ):
        if norm not in NORMS:
            raise ValueError(f"unknown norm '{norm}'")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}'")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.norm = norm
        self.activation = activation
        bound = np.sqrt(6.0 / in_channels)
        self.w = Tensor(
            rng.uniform(-bound, bound, (out_channels, in_channels)),
            requires_grad=True,
        )
        self.b = Tensor(np.zeros(out_channels), requires_grad=True)
        if full_grid_shape is not None:
            self.r = SpectralWeights.per_mode_full_grid(
                in_channels, out_channels, full_grid_shape, rng
            )
        elif shared_r:
            self.r = SpectralWeights.shared(in_channels, out_channels, n_modes, rng)
        else:
            self.r = SpectralWeights.per_mode(in_channels, out_channels, n_modes, rng)

    def __call__(self, v):
        if v.shape[0] != self.in_channels:
            raise ValueError(
                f"layer expects {self.in_channels} channels, got {v.shape[0]}"
            )
        h = (
            channel_linear(v, self.w)
            + self.b.reshape((self.out_channels, 1, 1))
            + spectral_conv(v, self.r)
        )
        if self.norm == "instance":
            h = instance_norm(h)
        return ACTIVATIONS[self.activation](h)

    def params(self):
        return {"w": self.w, "b": self.b, "r": self.r.weight}
