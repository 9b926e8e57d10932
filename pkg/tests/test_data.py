import io
import json

import numpy as np
import pytest
from PIL import Image

from trinity_detector import data
from trinity_detector.data import (
    FrequencyThresholdOracle,
    ImageTensor,
    ManifestEntry,
    PerturbationSpec,
    ToyGenConfig,
    generate_toy_dataset,
    gaussian_blur,
    highband_energy_ratio,
    load_manifest,
    perturb,
    preprocess,
    split_entries,
    write_manifest,
)
from trinity_detector.errors import ConfigError, ManifestError, ValidationError


def png_bytes(arr_u8):
    buf = io.BytesIO()
    Image.fromarray(arr_u8).save(buf, format="PNG")
    return buf.getvalue()


class TestManifest:
    def test_single_line(self, tmp_path):
        (tmp_path / "a.png").write_bytes(png_bytes(np.zeros((8, 8, 3), np.uint8)))
        m = tmp_path / "manifest.jsonl"
        m.write_text(
            json.dumps(
                {"image_path": "a.png", "caption": "a dog", "label": "fake", "generator": "glide"}
            )
            + "\n"
        )
        entries = load_manifest(m)
        assert entries == [ManifestEntry("a.png", "a dog", "fake", "glide")]

    def test_empty_file_warns(self, tmp_path):
        m = tmp_path / "manifest.jsonl"
        m.write_text("")
        with pytest.warns(UserWarning, match="empty"):
            assert load_manifest(m) == []

    def test_unknown_label_reports_line_number(self, tmp_path):
        m = tmp_path / "manifest.jsonl"
        m.write_text(
            '{"image_path":"a.png","caption":"","label":"fake","generator":"glide"}\n'
            '{"image_path":"b.png","caption":"","label":"genuine","generator":"real"}\n'
        )
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(m, check_paths=False)

    def test_real_label_requires_real_generator(self, tmp_path):
        m = tmp_path / "manifest.jsonl"
        m.write_text('{"image_path":"a.png","caption":"","label":"real","generator":"glide"}\n')
        with pytest.raises(ManifestError, match="generator"):
            load_manifest(m, check_paths=False)

    def test_unresolvable_path_lists_offenders(self, tmp_path):
        m = tmp_path / "manifest.jsonl"
        m.write_text('{"image_path":"missing.png","caption":"","label":"fake","generator":"toy"}\n')
        with pytest.raises(ManifestError, match="missing.png"):
            load_manifest(m)

    def test_invalid_json_line(self, tmp_path):
        m = tmp_path / "manifest.jsonl"
        m.write_text("{not json\n")
        with pytest.raises(ManifestError, match="line 1"):
            load_manifest(m)

    def test_roundtrip(self, tmp_path):
        entries = [
            ManifestEntry("x/a.png", "cap", "fake", "stable-diffusion"),
            ManifestEntry("x/b.png", "", "real", "real"),
        ]
        m = tmp_path / "manifest.jsonl"
        write_manifest(m, entries)
        assert load_manifest(m, check_paths=False) == entries

    def test_data_root_env_override(self, tmp_path, monkeypatch):
        root = tmp_path / "elsewhere"
        root.mkdir()
        (root / "a.png").write_bytes(png_bytes(np.zeros((8, 8, 3), np.uint8)))
        m = tmp_path / "manifest.jsonl"
        m.write_text('{"image_path":"a.png","caption":"","label":"fake","generator":"toy"}\n')
        with pytest.raises(ManifestError):
            load_manifest(m)
        monkeypatch.setenv(data.DATA_ROOT_ENV, str(root))
        assert len(load_manifest(m)) == 1


class TestPreprocess:
    def test_toy_size_unchanged(self):
        img = preprocess(png_bytes(np.zeros((64, 64, 3), np.uint8)), size=64)
        assert img.data.shape == (3, 64, 64)

    def test_white_image_is_ones(self):
        img = preprocess(png_bytes(np.full((16, 16, 3), 255, np.uint8)))
        np.testing.assert_array_equal(img.data, np.ones((3, 16, 16), np.float32))

    def test_deterministic(self):
        raw = png_bytes(np.random.default_rng(0).integers(0, 256, (32, 32, 3)).astype(np.uint8))
        a, b = preprocess(raw, size=24), preprocess(raw, size=24)
        np.testing.assert_array_equal(a.data, b.data)

    def test_resize(self):
        img = preprocess(png_bytes(np.zeros((50, 40, 3), np.uint8)), size=32)
        assert img.data.shape == (3, 32, 32)

    def test_undecodable_raises(self):
        with pytest.raises(ValidationError):
            preprocess(b"definitely not an image")

    def test_image_tensor_validation(self):
        with pytest.raises(ValidationError):
            ImageTensor(np.zeros((4, 4)))
        with pytest.raises(ValidationError):
            ImageTensor(np.full((3, 4, 4), np.nan))


class TestPerturb:
    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            PerturbationSpec("jpeg", 0)
        with pytest.raises(ValidationError):
            PerturbationSpec("gaussian_blur", -1.0)
        with pytest.raises(ValidationError):
            PerturbationSpec("sharpen", 1)
        with pytest.raises(ValidationError):
            PerturbationSpec("none", 1)

    def test_none_is_identity(self, toy_samples):
        img = toy_samples[0].image
        out = perturb(img, PerturbationSpec("none"))
        assert out.data.tobytes() == img.data.tobytes()

    def test_blur_of_constant_is_constant(self):
        img = ImageTensor(np.full((3, 32, 32), 0.25, np.float32))
        out = perturb(img, PerturbationSpec("gaussian_blur", 1.0))
        np.testing.assert_allclose(out.data, img.data, atol=1e-6)

    def test_blur_preserves_mean(self, toy_samples):
        for s in toy_samples[:5]:
            for sigma in (1.0, 2.0):
                blurred = gaussian_blur(s.image.data, sigma)
                assert abs(blurred.mean() - s.image.data.mean()) < 1e-4

    def test_blur_kernel_radius(self):
        assert len(data._gaussian_kernel(1.0)) == 7
        assert len(data._gaussian_kernel(2.0)) == 13
        assert len(data._gaussian_kernel(0.5)) == 5

    def test_jpeg_distortion_monotone_in_quality(self, toy_samples):
        # statistical check over a seeded batch: quality 50 must distort
        # strictly more than quality 80
        batch = toy_samples[:100]
        mad80 = np.mean(
            [np.abs(perturb(s.image, PerturbationSpec("jpeg", 80)).data - s.image.data).mean() for s in batch]
        )
        mad50 = np.mean(
            [np.abs(perturb(s.image, PerturbationSpec("jpeg", 50)).data - s.image.data).mean() for s in batch]
        )
        assert mad50 > mad80

    def test_jpeg_output_shape_and_range(self, toy_samples):
        out = perturb(toy_samples[0].image, PerturbationSpec("jpeg", 80))
        assert out.data.shape == toy_samples[0].image.data.shape
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0


class TestToyGenerator:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ToyGenConfig(count=0)
        with pytest.raises(ConfigError):
            ToyGenConfig(size=8)
        with pytest.raises(ConfigError):
            ToyGenConfig(artifact="warp")

    def test_count_one_gives_two_lines(self, tmp_path):
        manifest = generate_toy_dataset(ToyGenConfig(count=1, seed=0), tmp_path / "tiny")
        assert len(manifest.read_text().splitlines()) == 2

    def test_same_seed_identical_bytes(self, tmp_path):
        a = generate_toy_dataset(ToyGenConfig(count=3, seed=5), tmp_path / "a")
        b = generate_toy_dataset(ToyGenConfig(count=3, seed=5), tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()
        for rel in sorted(p.name for p in (tmp_path / "a" / "images").iterdir()):
            assert (tmp_path / "a" / "images" / rel).read_bytes() == (
                tmp_path / "b" / "images" / rel
            ).read_bytes()

    def test_classes_separable_by_threshold_oracle(self, toy_samples):
        values = np.array([highband_energy_ratio(s.image) for s in toy_samples])
        labels = np.array([s.label for s in toy_samples])
        oracle = FrequencyThresholdOracle.fit(values, labels)
        assert oracle.accuracy(values, labels) >= 0.95

    def test_class_band_energy_gap(self, toy_samples):
        ratios_real = [highband_energy_ratio(s.image) for s in toy_samples if s.label == 0]
        ratios_fake = [highband_energy_ratio(s.image) for s in toy_samples if s.label == 1]
        assert np.mean(ratios_real) > np.mean(ratios_fake) + 0.05

    def test_split_is_stratified_and_deterministic(self, toy_manifest):
        entries = load_manifest(toy_manifest)
        tr1, ev1 = split_entries(entries, 0.25, seed=4)
        tr2, ev2 = split_entries(entries, 0.25, seed=4)
        assert tr1 == tr2 and ev1 == ev2
        assert sum(e.label == "real" for e in ev1) == sum(e.label == "fake" for e in ev1)
        assert len(ev1) + len(tr1) == len(entries)


class TestThresholdOracle:
    def test_perfectly_separable(self):
        values = np.array([0.1, 0.2, 0.3, 0.7, 0.8, 0.9])
        labels = np.array([1, 1, 1, 0, 0, 0])
        oracle = FrequencyThresholdOracle.fit(values, labels)
        assert oracle.accuracy(values, labels) == 1.0
        assert oracle.fake_below

    def test_direction_flips(self):
        values = np.array([0.1, 0.2, 0.8, 0.9])
        labels = np.array([0, 0, 1, 1])
        oracle = FrequencyThresholdOracle.fit(values, labels)
        assert not oracle.fake_below
        np.testing.assert_array_equal(oracle.predict(values), labels)
