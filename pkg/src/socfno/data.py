"""Raster dataset handling: storage format, splits, augmentation, synthesis.

A dataset file (``.nras``) is one JSON manifest line, a newline, the
magic bytes ``NRAS1``, then raw little-endian float32 pixels stored
sample-major, each sample as its input bands followed by its target,
row-major within a channel. The manifest carries the split assignment
and the training-split statistics so every downstream consumer
standardizes and scores with the same constants.

The split is deterministic from a seed: 50% train, 20% validation, 30%
test with ``n_val = floor(n / 5)``, ``n_test = ceil(3 n / 10)``, and the
remainder training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BAND_NAMES",
    "MAGIC",
    "RasterSample",
    "DatasetManifest",
    "DatasetFormatError",
    "SampleNotFoundError",
    "AugmentConfig",
    "split_counts",
    "split_assignment",
    "save_dataset",
    "load_dataset",
    "augment",
    "warp_affine",
    "flip_raster",
    "standardize",
    "synth_generate",
    "synth_target",
    "write_pgm",
    "read_pgm",
]

BAND_NAMES = ("blue", "green", "red", "nir", "swir1", "swir3")
MAGIC = b"NRAS1"
SPLIT_NAMES = ("train", "val", "test")

# Synthetic target functional constants. The smoothing kernel is the
# separable 9-tap binomial (row 8 of Pascal's triangle over 256) applied
# circularly along each axis.
SMOOTH_TAPS = (
    np.array([1.0, 8.0, 28.0, 56.0, 70.0, 56.0, 28.0, 8.0, 1.0]) / 256.0
)
TARGET_BIAS = 0.9
TARGET_SMOOTH_GAIN = 2.2
TARGET_TANH_GAIN = 0.45
TARGET_PRODUCT_GAIN = 0.3
TARGET_SCALE = 12.0
TARGET_FLOOR = 5.0


class DatasetFormatError(ValueError):
    """Malformed dataset file; ``offset`` locates the first bad byte."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None
                         else f"{message} (byte offset {offset})")
        self.offset = offset


class SampleNotFoundError(KeyError):
    """Requested sample id is absent from the dataset."""


@dataclass
class RasterSample:
    """One multiband input raster and its single-band target."""

    sample_id: str
    bands: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        self.bands = np.ascontiguousarray(self.bands, dtype=np.float32)
        self.target = np.ascontiguousarray(self.target, dtype=np.float32)
        if self.bands.ndim != 3:
            raise ValueError(f"bands must be [C, H, W], got {self.bands.shape}")
        if self.target.ndim != 3 or self.target.shape[0] != 1:
            raise ValueError(f"target must be [1, H, W], got {self.target.shape}")
        if self.bands.shape[1:] != self.target.shape[1:]:
            raise ValueError("bands and target disagree on spatial extent")
        if not np.all(np.isfinite(self.bands)) or not np.all(
            np.isfinite(self.target)
        ):
            raise ValueError(f"sample '{self.sample_id}' has non-finite pixels")
        if np.any(self.target < 0):
            raise ValueError(f"sample '{self.sample_id}' has negative target")


@dataclass
class DatasetManifest:
    n_samples: int
    channels: int
    target_channels: int
    height: int
    width: int
    ids: list
    split_seed: int
    split: list
    band_mean: list
    band_std: list
    target_min: float
    target_max: float
    band_names: list = field(default_factory=lambda: list(BAND_NAMES))
    generator: dict = None
    version: int = 1

    def split_ids(self, name):
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split '{name}'")
        return [i for i, s in zip(self.ids, self.split) if s == name]

    def to_dict(self):
        return {
            "format": "nras",
            "version": self.version,
            "n_samples": self.n_samples,
            "channels": self.channels,
            "target_channels": self.target_channels,
            "height": self.height,
            "width": self.width,
            "dtype": "<f4",
            "band_names": list(self.band_names),
            "ids": list(self.ids),
            "split_seed": self.split_seed,
            "split": list(self.split),
            "band_mean": [float(v) for v in self.band_mean],
            "band_std": [float(v) for v in self.band_std],
            "target_min": float(self.target_min),
            "target_max": float(self.target_max),
            "generator": self.generator,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_samples=int(d["n_samples"]),
            channels=int(d["channels"]),
            target_channels=int(d["target_channels"]),
            height=int(d["height"]),
            width=int(d["width"]),
            ids=list(d["ids"]),
            split_seed=int(d["split_seed"]),
            split=list(d["split"]),
            band_mean=[float(v) for v in d["band_mean"]],
            band_std=[float(v) for v in d["band_std"]],
            target_min=float(d["target_min"]),
            target_max=float(d["target_max"]),
            band_names=list(d.get("band_names", BAND_NAMES)),
            generator=d.get("generator"),
            version=int(d.get("version", 1)),
        )


def split_counts(n):
    """50/20/30 split sizes: ``(n_train, n_val, n_test)``."""
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    n_val = n // 5
    n_test = -((-3 * n) // 10)
    return n - n_val - n_test, n_val, n_test


def split_assignment(n, seed):
    """Deterministic per-sample split labels from a seeded permutation."""
    n_train, n_val, _ = split_counts(n)
    perm = np.random.default_rng(seed).permutation(n)
    labels = [""] * n
    for rank, idx in enumerate(perm):
        if rank < n_train:
            labels[idx] = "train"
        elif rank < n_train + n_val:
            labels[idx] = "val"
        else:
            labels[idx] = "test"
    return labels


def _check_uniform(samples):
    if not samples:
        raise ValueError("dataset needs at least one sample")
    shape = samples[0].bands.shape
    for s in samples:
        if s.bands.shape != shape:
            raise ValueError(
                f"sample '{s.sample_id}' shape {s.bands.shape} != {shape}"
            )
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids")
    return shape


def save_dataset(path, samples, split_seed, generator=None):
    """Write samples plus a freshly computed manifest; returns the manifest.

    The split is drawn from ``split_seed`` and the band/target statistics
    are computed over the training split only.
    """
    channels, height, width = _check_uniform(samples)
    n = len(samples)
    labels = split_assignment(n, split_seed)
    train = [s for s, lab in zip(samples, labels) if lab == "train"]
    bands = np.stack([s.bands for s in train]).astype(np.float64)
    targets = np.stack([s.target for s in train]).astype(np.float64)
    manifest = DatasetManifest(
        n_samples=n,
        channels=channels,
        target_channels=1,
        height=height,
        width=width,
        ids=[s.sample_id for s in samples],
        split_seed=int(split_seed),
        split=labels,
        band_mean=bands.mean(axis=(0, 2, 3)).tolist(),
        band_std=bands.std(axis=(0, 2, 3)).tolist(),
        target_min=float(targets.min()),
        target_max=float(targets.max()),
        generator=generator,
    )
    header = json.dumps(manifest.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\n")
        fh.write(MAGIC)
        for s in samples:
            fh.write(s.bands.astype("<f4").tobytes())
            fh.write(s.target.astype("<f4").tobytes())
    return manifest


def load_dataset(path):
    """Read a dataset file; returns ``(manifest, samples)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise DatasetFormatError(f"{path}: missing manifest line", offset=0)
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{path}: bad manifest ({exc})", offset=0)
    if header.get("format") != "nras":
        raise DatasetFormatError(f"{path}: not an nras file", offset=0)
    manifest = DatasetManifest.from_dict(header)
    body = newline + 1
    if raw[body : body + len(MAGIC)] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic bytes", offset=body)
    blob = raw[body + len(MAGIC) :]
    per_channelset = manifest.channels + manifest.target_channels
    pixels = manifest.height * manifest.width
    expected = manifest.n_samples * per_channelset * pixels * 4
    if len(blob) != expected:
        raise DatasetFormatError(
            f"{path}: payload holds {len(blob)} bytes, manifest implies "
            f"{expected}",
            offset=body + len(MAGIC) + min(len(blob), expected),
        )
    flat = np.frombuffer(blob, dtype="<f4").reshape(
        manifest.n_samples, per_channelset, manifest.height, manifest.width
    )
    samples = []
    for i, sid in enumerate(manifest.ids):
        samples.append(
            RasterSample(
                sample_id=sid,
                bands=flat[i, : manifest.channels].copy(),
                target=flat[i, manifest.channels :].copy(),
            )
        )
    return manifest, samples


# -- augmentation ---------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    probability: float = 0.8
    rotation_deg: float = 30.0
    shift_frac: float = 0.2
    scale_range: tuple = (0.8, 1.2)
    flips: bool = True

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if self.rotation_deg < 0 or self.shift_frac < 0:
            raise ValueError("rotation and shift ranges must be nonnegative")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must satisfy 0 < lo <= hi")


def _reflect_index(idx, n):
    """Fold integer indices into [0, n) by mirror reflection about edges."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    folded = np.abs(idx) % period
    return np.where(folded >= n, period - folded, folded)


def warp_affine(raster, angle_deg, shift_frac_yx, scale):
    """Rotate/scale about the raster center and shift, bilinear resampling.

    The source is mirrored at its edges for coordinates that fall
    outside. Arithmetic runs in float64 and is cast back to the input
    dtype, so a constant raster stays exactly constant.
    """
    arr = np.asarray(raster)
    if arr.ndim != 3:
        raise ValueError("warp_affine expects [C, H, W]")
    _, h, w = arr.shape
    theta = np.deg2rad(angle_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ty, tx = shift_frac_yx[0] * h, shift_frac_yx[1] * w
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # Invert output = R_theta * scale * (src - c) + c + t.
    ry = (yy - cy - ty) / scale
    rx = (xx - cx - tx) / scale
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    src_y = cos_t * ry + sin_t * rx + cy
    src_x = -sin_t * ry + cos_t * rx + cx
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = src_y - y0
    fx = src_x - x0
    data = arr.astype(np.float64)
    out = np.zeros_like(data)
    for dy in (0, 1):
        wy = (1.0 - fy) if dy == 0 else fy
        iy = _reflect_index(y0 + dy, h)
        for dx in (0, 1):
            wx = (1.0 - fx) if dx == 0 else fx
            ix = _reflect_index(x0 + dx, w)
            out += (wy * wx) * data[:, iy, ix]
    return out.astype(arr.dtype)


def flip_raster(raster, horizontal=False, vertical=False):
    """Exact axis flips (no resampling)."""
    arr = np.asarray(raster)
    if vertical:
        arr = arr[:, ::-1, :]
    if horizontal:
        arr = arr[:, :, ::-1]
    return np.ascontiguousarray(arr)


def augment(sample, cfg, rng):
    """Random geometric augmentation of one sample.

    A single gate draw enables augmentation with ``cfg.probability``;
    below the gate the sample is returned bit-identical. When enabled,
    the draw order is fixed: rotation, shift y, shift x, scale, then two
    independent 50% flips. Bands and target receive the same transform.
    """
    if rng.random() >= cfg.probability:
        return sample
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    shift = (
        rng.uniform(-cfg.shift_frac, cfg.shift_frac),
        rng.uniform(-cfg.shift_frac, cfg.shift_frac),
    )
    scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
    flip_h = bool(cfg.flips and rng.random() < 0.5)
    flip_v = bool(cfg.flips and rng.random() < 0.5)
    stacked = np.concatenate([sample.bands, sample.target], axis=0)
    warped = warp_affine(stacked, angle, shift, scale)
    warped = flip_raster(warped, horizontal=flip_h, vertical=flip_v)
    c = sample.bands.shape[0]
    # Bilinear output is a convex combination of source pixels, so the
    # warped target stays nonnegative.
    return RasterSample(sample.sample_id, warped[:c], warped[c:])


def standardize(bands, mean, std):
    """Per-band standardization to float64 using training statistics."""
    mean = np.asarray(mean, dtype=np.float64)[:, None, None]
    std = np.asarray(std, dtype=np.float64)[:, None, None]
    if np.any(std <= 0):
        raise ValueError("band std must be positive")
    return (np.asarray(bands, dtype=np.float64) - mean) / std


# -- synthetic data -------------------------------------------------------

# Fixed mixing of three latent fields into six correlated bands.
_BAND_MIX = np.array(
    [
        [0.9, 0.1, 0.0],
        [0.8, 0.3, 0.1],
        [0.6, 0.5, 0.2],
        [-0.2, 0.9, 0.3],
        [0.1, 0.7, 0.6],
        [0.3, 0.2, 0.9],
    ]
)
_BAND_OFFSET = np.array([0.1, 0.12, 0.15, 0.5, 0.4, 0.3])


def _smooth_circular(img):
    """Separable circular correlation with the binomial tap kernel."""
    reach = len(SMOOTH_TAPS) // 2
    offsets = range(-reach, reach + 1)
    out = np.zeros_like(img, dtype=np.float64)
    for tap, offset in zip(SMOOTH_TAPS, offsets):
        out += tap * np.roll(img, -offset, axis=0)
    out2 = np.zeros_like(out)
    for tap, offset in zip(SMOOTH_TAPS, offsets):
        out2 += tap * np.roll(out, -offset, axis=1)
    return out2


def _softplus(z):
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def synth_target(bands):
    """Deterministic strictly positive target from the six input bands.

    With bands ``(blue, green, red, nir, swir1, swir3)`` the
    pre-activation is::

        z = 0.9 + 2.2 * smooth(nir - red)
              + 0.45 * tanh(swir1 - green)
              + 0.3  * blue * swir3

    where ``smooth`` is the circular 9x9 binomial smoothing above, and
    the target is ``5 + 12 * softplus(z)`` in g/kg. The smoothed term
    makes the target depend on a pixel's neighborhood, which purely
    pixelwise regressors cannot express; the additive floor keeps
    relative errors well defined everywhere.
    """
    b = np.asarray(bands, dtype=np.float64)
    blue, green, red, nir, swir1, swir3 = b
    z = (
        TARGET_BIAS
        + TARGET_SMOOTH_GAIN * _smooth_circular(nir - red)
        + TARGET_TANH_GAIN * np.tanh(swir1 - green)
        + TARGET_PRODUCT_GAIN * blue * swir3
    )
    return (TARGET_FLOOR + TARGET_SCALE * _softplus(z))[None].astype(np.float32)


def _latent_field(rng, height, width, cutoff=0.16, cap=0.24):
    """Band-limited Gaussian random field with unit-ish variance.

    The hard cap keeps all energy below a quarter cycle per pixel, i.e.
    within the lowest eight modes of a 32-pixel extent.
    """
    white = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    rad2 = fy * fy + fx * fx
    envelope = np.exp(-rad2 / (2.0 * cutoff * cutoff)) * (rad2 <= cap * cap)
    field = np.fft.irfft2(np.fft.rfft2(white) * envelope, s=(height, width))
    std = field.std()
    return field / (std if std > 0 else 1.0)


def synth_generate(seed, n, height, width, target_noise=0.0):
    """Generate ``n`` correlated-band samples with :func:`synth_target` targets.

    ``target_noise`` adds zero-mean Gaussian measurement noise (std in
    g/kg, clamped so targets stay nonnegative) to the stored targets,
    mimicking survey-map ground truth whose fine texture is not
    predictable from the inputs. At the default 0 the stored target is
    exactly the documented functional of the stored bands.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if height < 1 or width < 1:
        raise ValueError("raster extents must be positive")
    if target_noise < 0:
        raise ValueError("target_noise must be nonnegative")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        latents = np.stack([_latent_field(rng, height, width) for _ in range(3)])
        bands = np.tensordot(_BAND_MIX, latents, axes=([1], [0]))
        bands += _BAND_OFFSET[:, None, None]
        bands = bands.astype(np.float32)
        target = synth_target(bands)
        if target_noise > 0.0:
            noise = target_noise * rng.standard_normal(target.shape)
            target = np.maximum(
                target.astype(np.float64) + noise, 0.0
            ).astype(np.float32)
        samples.append(RasterSample(f"synth{i:05d}", bands, target))
    return samples


# -- portable grayscale maps ----------------------------------------------


def write_pgm(path, image, vmin, vmax):
    """Write a 2-D array as binary 8-bit PGM scaled from [vmin, vmax]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("write_pgm expects a 2-D array")
    if not vmax > vmin:
        raise ValueError("need vmax > vmin")
    scaled = np.clip((arr - vmin) / (vmax - vmin), 0.0, 1.0)
    levels = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def read_pgm(path):
    """Read a binary 8-bit PGM written by :func:`write_pgm`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    width, height = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=height * width)
    return pixels.reshape(height, width)
