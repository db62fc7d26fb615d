"""Dataset format, splits, augmentation, and synthetic generator tests."""

import math

import numpy as np
import pytest

from socfno.data import (
    SMOOTH_TAPS,
    TARGET_BIAS,
    TARGET_FLOOR,
    TARGET_PRODUCT_GAIN,
    TARGET_SCALE,
    TARGET_SMOOTH_GAIN,
    TARGET_TANH_GAIN,
    AugmentConfig,
    DatasetFormatError,
    DatasetManifest,
    RasterSample,
    augment,
    flip_raster,
    load_dataset,
    read_pgm,
    save_dataset,
    split_assignment,
    split_counts,
    standardize,
    synth_generate,
    synth_target,
    warp_affine,
    write_pgm,
)


def make_samples(n, h=8, w=8, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        bands = rng.standard_normal((6, h, w)).astype(np.float32)
        target = rng.random((1, h, w)).astype(np.float32) * 40.0 + 1.0
        samples.append(RasterSample(f"s{i:03d}", bands, target))
    return samples


class TestSplits:
    def test_counts(self):
        assert split_counts(10) == (5, 2, 3)
        assert split_counts(200) == (100, 40, 60)
        assert split_counts(3059) == (1530, 611, 918)

    def test_counts_always_partition(self):
        for n in range(10, 400):
            tr, va, te = split_counts(n)
            assert tr + va + te == n
            assert tr >= va >= 0 and te > 0

    def test_too_small(self):
        with pytest.raises(ValueError):
            split_counts(9)

    def test_assignment_deterministic(self):
        a = split_assignment(50, seed=3)
        b = split_assignment(50, seed=3)
        assert a == b
        c = split_assignment(50, seed=4)
        assert a != c

    def test_assignment_counts(self):
        labels = split_assignment(200, seed=1)
        assert labels.count("train") == 100
        assert labels.count("val") == 40
        assert labels.count("test") == 60


class TestDatasetRoundTrip:
    def test_bit_identical_resave(self, tmp_path):
        samples = make_samples(12)
        p1, p2 = str(tmp_path / "a.nras"), str(tmp_path / "b.nras")
        save_dataset(p1, samples, split_seed=5)
        manifest, loaded = load_dataset(p1)
        save_dataset(p2, loaded, split_seed=manifest.split_seed)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_pixels_preserved_exactly(self, tmp_path):
        samples = make_samples(10)
        path = str(tmp_path / "d.nras")
        save_dataset(path, samples, split_seed=0)
        _, loaded = load_dataset(path)
        for orig, back in zip(samples, loaded):
            assert back.sample_id == orig.sample_id
            assert np.array_equal(back.bands, orig.bands)
            assert np.array_equal(back.target, orig.target)

    def test_stats_computed_on_train_split_only(self, tmp_path):
        samples = make_samples(20, seed=2)
        path = str(tmp_path / "d.nras")
        manifest = save_dataset(path, samples, split_seed=9)
        train = [
            s for s, lab in zip(samples, manifest.split) if lab == "train"
        ]
        bands = np.stack([s.bands for s in train]).astype(np.float64)
        targets = np.stack([s.target for s in train]).astype(np.float64)
        assert manifest.band_mean == pytest.approx(
            bands.mean(axis=(0, 2, 3)).tolist(), abs=1e-12
        )
        assert manifest.band_std == pytest.approx(
            bands.std(axis=(0, 2, 3)).tolist(), abs=1e-12
        )
        assert manifest.target_max == targets.max()
        assert manifest.target_min == targets.min()

    def test_split_ids(self, tmp_path):
        samples = make_samples(10)
        path = str(tmp_path / "d.nras")
        manifest = save_dataset(path, samples, split_seed=0)
        all_ids = (
            manifest.split_ids("train")
            + manifest.split_ids("val")
            + manifest.split_ids("test")
        )
        assert sorted(all_ids) == sorted(manifest.ids)
        with pytest.raises(ValueError):
            manifest.split_ids("holdout")

    def test_manifest_dict_round_trip(self, tmp_path):
        samples = make_samples(10)
        path = str(tmp_path / "d.nras")
        manifest = save_dataset(path, samples, split_seed=0)
        again = DatasetManifest.from_dict(manifest.to_dict())
        assert again.to_dict() == manifest.to_dict()


class TestDatasetErrors:
    def write_valid(self, tmp_path):
        path = str(tmp_path / "d.nras")
        save_dataset(path, make_samples(10), split_seed=0)
        return path, open(path, "rb").read()

    def test_truncated_payload_offset(self, tmp_path):
        path, raw = self.write_valid(tmp_path)
        bad = tmp_path / "bad.nras"
        bad.write_bytes(raw[:-4])
        with pytest.raises(DatasetFormatError) as err:
            load_dataset(str(bad))
        assert err.value.offset == len(raw) - 4

    def test_bad_magic(self, tmp_path):
        path, raw = self.write_valid(tmp_path)
        newline = raw.find(b"\n")
        bad = tmp_path / "bad.nras"
        bad.write_bytes(raw[: newline + 1] + b"XXXXX" + raw[newline + 6 :])
        with pytest.raises(DatasetFormatError, match="magic"):
            load_dataset(str(bad))

    def test_bad_manifest_json(self, tmp_path):
        bad = tmp_path / "bad.nras"
        bad.write_bytes(b"{not json\nNRAS1")
        with pytest.raises(DatasetFormatError, match="manifest"):
            load_dataset(str(bad))

    def test_wrong_format_key(self, tmp_path):
        bad = tmp_path / "bad.nras"
        bad.write_bytes(b'{"format": "other"}\nNRAS1')
        with pytest.raises(DatasetFormatError, match="not an nras"):
            load_dataset(str(bad))

    def test_missing_newline(self, tmp_path):
        bad = tmp_path / "bad.nras"
        bad.write_bytes(b"NRAS1")
        with pytest.raises(DatasetFormatError):
            load_dataset(str(bad))


class TestRasterSample:
    def test_validation(self):
        good = np.zeros((6, 4, 4), np.float32)
        tgt = np.zeros((1, 4, 4), np.float32)
        with pytest.raises(ValueError):
            RasterSample("x", np.zeros((4, 4)), tgt)
        with pytest.raises(ValueError):
            RasterSample("x", good, np.zeros((2, 4, 4)))
        with pytest.raises(ValueError):
            RasterSample("x", good, np.zeros((1, 5, 4)))
        with pytest.raises(ValueError):
            RasterSample("x", good, tgt - 1.0)
        nan_bands = good.copy()
        nan_bands[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            RasterSample("x", nan_bands, tgt)

    def test_duplicate_ids_rejected(self, tmp_path):
        samples = make_samples(10)
        samples[3].sample_id = samples[0].sample_id
        with pytest.raises(ValueError, match="duplicate"):
            save_dataset(str(tmp_path / "d.nras"), samples, split_seed=0)


class TestSynthTarget:
    # Recompute the stored target with explicit loops: circular
    # binomial smoothing, tanh, product, and softplus per pixel.
    def test_matches_loop_oracle(self):
        samples = synth_generate(seed=11, n=2, height=16, width=16)
        taps = list(SMOOTH_TAPS)
        reach = len(taps) // 2
        for s in samples:
            bands = s.bands.astype(np.float64)
            blue, green, red, nir, swir1, swir3 = bands
            diff = nir - red
            h, w = diff.shape
            smooth = np.zeros((h, w))
            for r in range(h):
                for c in range(w):
                    acc = 0.0
                    for dy in range(-reach, reach + 1):
                        for dx in range(-reach, reach + 1):
                            acc += (
                                taps[dy + reach]
                                * taps[dx + reach]
                                * diff[(r + dy) % h, (c + dx) % w]
                            )
                    smooth[r, c] = acc
            for r in range(h):
                for c in range(w):
                    z = (
                        TARGET_BIAS
                        + TARGET_SMOOTH_GAIN * smooth[r, c]
                        + TARGET_TANH_GAIN * math.tanh(swir1[r, c] - green[r, c])
                        + TARGET_PRODUCT_GAIN * blue[r, c] * swir3[r, c]
                    )
                    soft = math.log1p(math.exp(-abs(z))) + max(z, 0.0)
                    expected = TARGET_FLOOR + TARGET_SCALE * soft
                    got = float(s.target[0, r, c])
                    assert abs(got - expected) / expected <= 1e-6

    def test_target_floor(self):
        samples = synth_generate(seed=3, n=4, height=16, width=16)
        for s in samples:
            assert np.all(s.target >= TARGET_FLOOR)

    def test_generator_deterministic(self):
        a = synth_generate(seed=5, n=3, height=8, width=8)
        b = synth_generate(seed=5, n=3, height=8, width=8)
        for sa, sb in zip(a, b):
            assert sa.sample_id == sb.sample_id
            assert np.array_equal(sa.bands, sb.bands)
            assert np.array_equal(sa.target, sb.target)
        c = synth_generate(seed=6, n=3, height=8, width=8)
        assert not np.array_equal(a[0].bands, c[0].bands)

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_generate(seed=0, n=0, height=8, width=8)
        with pytest.raises(ValueError):
            synth_generate(seed=0, n=1, height=0, width=8)

    def test_smooth_term_is_nonlocal(self):
        # Perturbing one pixel of nir moves targets at neighbors.
        samples = synth_generate(seed=7, n=1, height=16, width=16)
        bands = samples[0].bands.astype(np.float64)
        bumped = bands.copy()
        bumped[3, 8, 8] += 1.0
        before = synth_target(bands)[0]
        after = synth_target(bumped)[0]
        changed = np.argwhere(np.abs(after - before) > 1e-9)
        assert len(changed) > 1


class TestAugment:
    def sample(self, seed=0, h=12, w=12):
        return make_samples(1, h, w, seed)[0]

    def test_gated_off_is_bit_identical(self):
        s = self.sample()
        cfg = AugmentConfig(probability=0.0)
        out = augment(s, cfg, np.random.default_rng(0))
        assert out is s

    def test_deterministic_given_rng_state(self):
        s = self.sample()
        cfg = AugmentConfig(probability=1.0)
        a = augment(s, cfg, np.random.default_rng(42))
        b = augment(s, cfg, np.random.default_rng(42))
        assert np.array_equal(a.bands, b.bands)
        assert np.array_equal(a.target, b.target)

    def test_identity_warp_exact(self):
        s = self.sample()
        out = warp_affine(s.bands, 0.0, (0.0, 0.0), 1.0)
        assert np.array_equal(out, s.bands)

    def test_constant_raster_warp_exact(self):
        const = np.full((2, 10, 10), 7.25, dtype=np.float32)
        out = warp_affine(const, 23.0, (0.07, -0.04), 1.13)
        assert np.array_equal(out, const)

    def test_flip_involution(self):
        s = self.sample()
        once = flip_raster(s.bands, horizontal=True, vertical=True)
        back = flip_raster(once, horizontal=True, vertical=True)
        assert np.array_equal(back, s.bands)
        assert not np.array_equal(once, s.bands)

    def test_flip_matches_slicing(self):
        s = self.sample()
        assert np.array_equal(
            flip_raster(s.bands, horizontal=True), s.bands[:, :, ::-1]
        )
        assert np.array_equal(
            flip_raster(s.bands, vertical=True), s.bands[:, ::-1, :]
        )

    def test_target_stays_nonnegative(self):
        rng = np.random.default_rng(1)
        cfg = AugmentConfig(probability=1.0)
        s = self.sample(seed=2)
        for _ in range(20):
            out = augment(s, cfg, rng)
            assert np.all(out.target >= 0.0)

    def test_bands_and_target_share_transform(self):
        # Encode the target as a band: both must come back equal.
        s = self.sample(seed=3)
        bands = s.bands.copy()
        bands[5] = s.target[0]
        tagged = RasterSample(s.sample_id, bands, s.target)
        cfg = AugmentConfig(probability=1.0)
        out = augment(tagged, cfg, np.random.default_rng(9))
        assert np.array_equal(out.bands[5], out.target[0])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(probability=1.5)
        with pytest.raises(ValueError):
            AugmentConfig(rotation_deg=-1.0)
        with pytest.raises(ValueError):
            AugmentConfig(scale_range=(0.0, 1.0))
        with pytest.raises(ValueError):
            AugmentConfig(scale_range=(1.2, 0.8))

    def test_warp_rejects_bad_rank(self):
        with pytest.raises(ValueError):
            warp_affine(np.zeros((4, 4)), 0.0, (0.0, 0.0), 1.0)


class TestStandardize:
    def test_values(self):
        bands = np.array([[[2.0, 4.0]], [[10.0, 30.0]]])
        out = standardize(bands, mean=[3.0, 20.0], std=[1.0, 10.0])
        assert np.array_equal(out, np.array([[[-1.0, 1.0]], [[-1.0, 1.0]]]))

    def test_rejects_zero_std(self):
        with pytest.raises(ValueError):
            standardize(np.zeros((1, 2, 2)), mean=[0.0], std=[0.0])


class TestPgm:
    def test_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(4)
        image = rng.random((9, 7)) * 50.0
        path = str(tmp_path / "m.pgm")
        vmin, vmax = 0.0, 50.0
        write_pgm(path, image, vmin, vmax)
        levels = read_pgm(path)
        assert levels.shape == image.shape
        decoded = vmin + levels.astype(np.float64) / 255.0 * (vmax - vmin)
        # Half a quantization step after rounding to 255 levels.
        assert np.max(np.abs(decoded - image)) <= (vmax - vmin) / 255.0 / 2.0

    def test_clipping(self, tmp_path):
        path = str(tmp_path / "m.pgm")
        write_pgm(path, np.array([[-10.0, 60.0]]), 0.0, 50.0)
        levels = read_pgm(path)
        assert levels.tolist() == [[0, 255]]

    def test_validation(self, tmp_path):
        path = str(tmp_path / "m.pgm")
        with pytest.raises(ValueError):
            write_pgm(path, np.zeros((2, 2, 2)), 0.0, 1.0)
        with pytest.raises(ValueError):
            write_pgm(path, np.zeros((2, 2)), 1.0, 1.0)
        (tmp_path / "bad.pgm").write_bytes(b"P2\n2 2\n255\n")
        with pytest.raises(ValueError):
            read_pgm(str(tmp_path / "bad.pgm"))
