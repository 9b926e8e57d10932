"""Dataset plumbing: JSON-lines manifests, image preprocessing, robustness
perturbations (JPEG / Gaussian blur), and a fully synthetic toy dataset
whose fake class carries 2x nearest-neighbor up-sampling artifacts.

The toy generator is the desk-scale stand-in for a real forgery corpus:
"real" images are seeded 1/f^beta filtered-noise textures, "fake" images
are the same texture family rendered at half resolution and up-sampled,
which injects the spectral imbalance that up-sampling layers leave behind.
A hand-built frequency-energy threshold oracle (fit as a decision stump on
the high-band energy ratio) is shipped alongside as the independent
baseline every end-to-end experiment is gated on.
"""

from __future__ import annotations

import io
import json
import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import spectral
from .encoders import CaptionRecord, TemplateCaptionProvider
from .errors import ConfigError, ManifestError, ValidationError

LABEL_REAL = "real"
LABEL_FAKE = "fake"
LABELS = (LABEL_REAL, LABEL_FAKE)
REAL_GENERATORS = ("real", "toy-real")
MANIFEST_FIELDS = ("image_path", "caption", "label", "generator")
DATA_ROOT_ENV = "TRINITY_DATA_ROOT"

PERTURBATION_KINDS = ("none", "jpeg", "gaussian_blur")

# configured preprocessing resolutions: toy images stay native, external
# pretrained encoders expect the usual 224
TOY_RESOLUTION = 64
EXTERNAL_RESOLUTION = 224


@dataclass(frozen=True)
class ImageTensor:
    """A C x H x W float32 image, values in [0, 1] after preprocessing."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValidationError(f"image tensor must be C x H x W, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValidationError(f"image dimensions must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("image tensor contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    caption: str
    label: str
    generator: str


@dataclass(frozen=True)
class Sample:
    """A loaded dataset item: image, caption record, and integer label
    (real = 0, fake = 1)."""

    image: ImageTensor
    caption: CaptionRecord
    label: int
    path: str = ""


def _validate_entry(obj: dict, lineno: int, problems: list[str]) -> ManifestEntry | None:
    missing = [k for k in MANIFEST_FIELDS if k not in obj]
    if missing:
        problems.append(f"line {lineno}: missing fields {missing}")
        return None
    extra = [k for k in obj if k not in MANIFEST_FIELDS]
    if extra:
        problems.append(f"line {lineno}: unknown fields {extra}")
        return None
    if obj["label"] not in LABELS:
        problems.append(f"line {lineno}: unknown label {obj['label']!r}")
        return None
    if obj["label"] == LABEL_REAL and obj["generator"] not in REAL_GENERATORS:
        problems.append(
            f"line {lineno}: label 'real' requires generator in {REAL_GENERATORS}, "
            f"got {obj['generator']!r}"
        )
        return None
    return ManifestEntry(
        image_path=str(obj["image_path"]),
        caption=str(obj["caption"]),
        label=str(obj["label"]),
        generator=str(obj["generator"]),
    )


def resolve_data_root(manifest_path: Path, data_root: str | os.PathLike | None = None) -> Path:
    """Directory image paths are resolved against: explicit argument, then
    the TRINITY_DATA_ROOT environment variable, then the manifest's own
    directory."""
    if data_root is not None:
        return Path(data_root)
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    return Path(manifest_path).parent


def load_manifest(
    path: str | os.PathLike,
    data_root: str | os.PathLike | None = None,
    check_paths: bool = True,
) -> list[ManifestEntry]:
    """Load a JSON-lines manifest, validating schema and image paths.

    Malformed lines and unresolvable image paths are collected and reported
    together with their line numbers in a single :class:`ManifestError`.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = resolve_data_root(path, data_root)

    entries: list[ManifestEntry] = []
    problems: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: invalid JSON ({exc.msg})")
                continue
            if not isinstance(obj, dict):
                problems.append(f"line {lineno}: expected a JSON object")
                continue
            entry = _validate_entry(obj, lineno, problems)
            if entry is None:
                continue
            if check_paths and not _resolve_image(entry.image_path, root).is_file():
                problems.append(f"line {lineno}: image path not found: {entry.image_path}")
                continue
            entries.append(entry)

    if problems:
        raise ManifestError(f"manifest {path} has {len(problems)} bad line(s):\n  " + "\n  ".join(problems))
    if not entries:
        warnings.warn(f"manifest {path} is empty", stacklevel=2)
    return entries


def _resolve_image(image_path: str, root: Path) -> Path:
    p = Path(image_path)
    return p if p.is_absolute() else root / p


def write_manifest(path: str | os.PathLike, entries: list[ManifestEntry]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(
                json.dumps(
                    {
                        "image_path": e.image_path,
                        "caption": e.caption,
                        "label": e.label,
                        "generator": e.generator,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def split_entries(
    entries: list[ManifestEntry], eval_fraction: float = 0.2, seed: int = 0
) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    """Deterministic stratified train/eval split of manifest entries."""
    rng = np.random.default_rng(seed)
    train: list[ManifestEntry] = []
    evals: list[ManifestEntry] = []
    for label in LABELS:
        group = [e for e in entries if e.label == label]
        perm = rng.permutation(len(group))
        n_eval = int(round(eval_fraction * len(group)))
        picked = set(perm[:n_eval].tolist())
        for i, e in enumerate(group):
            (evals if i in picked else train).append(e)
    return train, evals


# ---------------------------------------------------------------------------
# preprocessing


def preprocess(raw: bytes, size: int | None = None) -> ImageTensor:
    """Decode image bytes to a C x H x W float32 tensor in [0, 1], RGB order,
    optionally resized to ``size`` x ``size`` (bilinear)."""
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise ValidationError(f"cannot decode image: {exc}") from exc
    img = img.convert("RGB")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return ImageTensor(arr.transpose(2, 0, 1))


def load_image(path: str | os.PathLike, size: int | None = None) -> ImageTensor:
    with open(path, "rb") as fh:
        return preprocess(fh.read(), size=size)


def samples_from_manifest(
    entries: list[ManifestEntry],
    manifest_path: str | os.PathLike,
    size: int | None = None,
    data_root: str | os.PathLike | None = None,
) -> list[Sample]:
    root = resolve_data_root(Path(manifest_path), data_root)
    samples = []
    for e in entries:
        img = load_image(_resolve_image(e.image_path, root), size=size)
        source = "dataset" if e.caption else "none"
        cap = CaptionRecord(e.caption, source)
        samples.append(Sample(img, cap, 0 if e.label == LABEL_REAL else 1, e.image_path))
    return samples


# ---------------------------------------------------------------------------
# perturbations


@dataclass(frozen=True)
class PerturbationSpec:
    """Evaluation-time degradation: none, baseline-JPEG re-encoding at a
    given quality, or Gaussian blur with a given sigma (pixels)."""

    kind: str = "none"
    param: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in PERTURBATION_KINDS:
            raise ValidationError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "none" and self.param is not None:
            raise ValidationError("'none' takes no parameter")
        if self.kind == "jpeg":
            if self.param is None or not float(self.param).is_integer() or not 1 <= self.param <= 100:
                raise ValidationError(f"jpeg quality must be an integer in 1..100, got {self.param}")
        if self.kind == "gaussian_blur":
            if self.param is None or self.param <= 0:
                raise ValidationError(f"blur sigma must be > 0, got {self.param}")


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the last two axes: normalized kernel of
    radius ceil(3*sigma), reflect padding about the edge sample."""
    kernel = _gaussian_kernel(sigma)
    out = np.asarray(data, dtype=np.float64)
    for axis in (-2, -1):
        out = _convolve_axis(out, kernel, axis)
    return out


def _convolve_axis(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(x, pad, mode="symmetric")
    out = np.zeros_like(x)
    n = x.shape[axis]
    for i, wk in enumerate(kernel):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(i, i + n)
        out += wk * padded[tuple(sl)]
    return out


def jpeg_roundtrip(data: np.ndarray, quality: int) -> np.ndarray:
    """Encode/decode a (C, H, W) float image through a baseline JPEG codec."""
    u8 = np.clip(np.round(np.asarray(data) * 255.0), 0, 255).astype(np.uint8)
    img = Image.fromarray(u8.transpose(1, 2, 0))
    buf = io.BytesIO()
    img.save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    back = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float32) / 255.0
    return back.transpose(2, 0, 1)


def perturb(img: ImageTensor, spec: PerturbationSpec) -> ImageTensor:
    if spec.kind == "none":
        return img
    if spec.kind == "jpeg":
        return ImageTensor(jpeg_roundtrip(img.data, int(spec.param)))
    return ImageTensor(gaussian_blur(img.data, float(spec.param)).astype(np.float32))


# ---------------------------------------------------------------------------
# toy dataset generator


@dataclass
class ToyGenConfig:
    """Synthetic dataset parameters.

    ``spectral_exponent`` is the beta of the 1/f^beta base texture;
    ``artifact`` selects how fakes are degraded (only 2x nearest-neighbor
    up-sampling for now); ``contrast`` and ``tint`` scale the texture and
    the per-image color cast that feeds the caption templates.
    """

    count: int = 1000
    size: int = 64
    spectral_exponent: float = 1.5
    artifact: str = "upsample2x"
    seed: int = 0
    contrast: float = 0.18
    tint: float = 0.08

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if self.size < 16:
            raise ConfigError(f"size must be >= 16, got {self.size}")
        if self.size % 2:
            raise ConfigError(f"size must be even for 2x up-sampling, got {self.size}")
        if self.artifact != "upsample2x":
            raise ConfigError(f"unknown artifact mode {self.artifact!r}")
        if self.spectral_exponent <= 0:
            raise ConfigError("spectral_exponent must be > 0")


def _power_law_texture(rng: np.random.Generator, size: int, beta: float) -> np.ndarray:
    """Zero-centered 1/f^beta filtered Gaussian noise, unit variance by
    construction (analytic filter norm, no per-image standardization so the
    DC content stays random)."""
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    filt = np.maximum(np.hypot(fy, fx), 1.0 / size) ** (-beta / 2.0)
    white = rng.standard_normal((size, size))
    g = np.fft.irfft2(np.fft.rfft2(white) * filt, s=(size, size))
    full = np.maximum(
        np.hypot(np.fft.fftfreq(size)[:, None], np.fft.fftfreq(size)[None, :]), 1.0 / size
    ) ** (-beta / 2.0)
    return g / np.sqrt(np.mean(full**2))


def _render_toy_image(rng: np.random.Generator, cfg: ToyGenConfig, fake: bool) -> np.ndarray:
    size = cfg.size // 2 if fake else cfg.size
    tint = rng.uniform(-cfg.tint, cfg.tint, size=3)
    g = _power_law_texture(rng, size, cfg.spectral_exponent)
    chans = [np.clip(0.5 + cfg.contrast * g + tint[c], 0.0, 1.0) for c in range(3)]
    x = np.stack(chans)
    if fake:
        x = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
    return x


def generate_toy_dataset(cfg: ToyGenConfig, out_dir: str | os.PathLike) -> Path:
    """Write ``count`` real + ``count`` fake PNGs plus a manifest.jsonl.

    Returns the manifest path.  Fully deterministic in ``cfg.seed``,
    including file bytes.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {images_dir}: {exc}") from exc

    captioner = TemplateCaptionProvider()
    rng = np.random.default_rng(cfg.seed)
    entries: list[ManifestEntry] = []
    for fake, prefix, generator in ((False, "real", "toy-real"), (True, "fake", "toy")):
        for i in range(cfg.count):
            arr = _render_toy_image(rng, cfg, fake)
            u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
            rel = f"images/{prefix}_{i:05d}.png"
            Image.fromarray(u8.transpose(1, 2, 0)).save(out_dir / rel, format="PNG")
            tensor = ImageTensor(u8.astype(np.float32) / 255.0)
            caption = captioner(tensor).text
            entries.append(
                ManifestEntry(rel, caption, LABEL_FAKE if fake else LABEL_REAL, generator)
            )

    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, entries)
    return manifest


# ---------------------------------------------------------------------------
# frequency-energy threshold oracle


def highband_energy_ratio(img: ImageTensor | np.ndarray) -> float:
    """Fraction of AC spectral energy in the upper half-band (u >= H/2 or
    v >= W/2) of the orthonormal DCT of the grayscale plane.

    This is the hand-built statistic the toy classes are separable by; the
    one-parameter threshold on it is the independent baseline for every
    learned result on the toy dataset.
    """
    arr = img.data if isinstance(img, ImageTensor) else np.asarray(img)
    gray = arr.mean(axis=0) if arr.ndim == 3 else arr
    f = spectral.dct2(gray).data
    e = f**2
    h, w = e.shape
    mask = (np.arange(h)[:, None] >= h // 2) | (np.arange(w)[None, :] >= w // 2)
    total_ac = e.sum() - e[0, 0]
    if total_ac <= 0:
        return 0.0
    return float(e[mask].sum() / total_ac)


@dataclass
class FrequencyThresholdOracle:
    """Decision stump on a scalar frequency statistic: predicts fake when
    the statistic falls on the configured side of the threshold."""

    threshold: float
    fake_below: bool

    @classmethod
    def fit(cls, values: np.ndarray, labels: np.ndarray) -> "FrequencyThresholdOracle":
        """Brute-force the threshold/direction with the best training
        accuracy over all midpoints of the sorted statistic."""
        values = np.asarray(values, dtype=np.float64)
        labels = np.asarray(labels, dtype=int)
        order = np.argsort(values)
        s = values[order]
        cuts = np.concatenate([[s[0] - 1.0], (s[1:] + s[:-1]) / 2.0, [s[-1] + 1.0]])
        best = (-1.0, 0.0, True)
        for cut in cuts:
            below = values < cut
            acc_below = float(np.mean(below == (labels == 1)))
            acc_above = float(np.mean(~below == (labels == 1)))
            if acc_below > best[0]:
                best = (acc_below, cut, True)
            if acc_above > best[0]:
                best = (acc_above, cut, False)
        return cls(threshold=float(best[1]), fake_below=best[2])

    def predict(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        below = values < self.threshold
        return (below if self.fake_below else ~below).astype(int)

    def accuracy(self, values: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(values) == np.asarray(labels, dtype=int)))


def oracle_accuracy_on_samples(samples: list[Sample]) -> float:
    """Fit the threshold oracle on the given samples and report its
    accuracy: the dataset-validity gate for end-to-end experiments."""
    values = np.array([highband_energy_ratio(s.image) for s in samples])
    labels = np.array([s.label for s in samples])
    return FrequencyThresholdOracle.fit(values, labels).accuracy(values, labels)
