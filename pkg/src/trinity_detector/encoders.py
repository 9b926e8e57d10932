"""Pluggable text and image encoders plus caption providers.

The stub encoders make the whole pipeline hermetic: they are pure
functions of (seed, input bytes) with no model downloads.  The image stub
projects coarse pooled pixel statistics through a fixed seeded Gaussian
matrix; the text stub sums seeded per-token vectors.  Both emit unit-norm
embeddings, mirroring a CLIP-style shared space at dimension 64.

A production backend plugs in through :class:`ExternalEncoderAdapter`
(config key ``encoder.backend = "external"`` with ``encoder.model_ref``
naming the model); requesting it without a loader raises
:class:`EncoderUnavailableError` rather than silently degrading to the
stub.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import ConfigError, EncoderUnavailableError, ValidationError

STUB_DIM = 64
CAPTION_SOURCES = ("dataset", "generated", "none")
EMBED_PROVENANCES = ("stub", "external", "absent")


@dataclass(frozen=True)
class CaptionRecord:
    """A caption and where it came from.  ``source="none"`` is the
    caption-ablation convention and forces an empty text."""

    text: str = ""
    source: str = "none"

    def __post_init__(self) -> None:
        if self.source not in CAPTION_SOURCES:
            raise ValidationError(f"unknown caption source {self.source!r}")
        if self.source == "none" and self.text:
            raise ValidationError("source='none' requires an empty caption")


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray
    provenance: str = "stub"


@dataclass(frozen=True)
class ImageEmbedding:
    vector: np.ndarray
    provenance: str = "stub"


def _image_array(img) -> np.ndarray:
    arr = getattr(img, "data", img)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"expected a C x H x W image, got shape {arr.shape}")
    return arr


def _pool_grid(plane: np.ndarray, grid: int) -> np.ndarray:
    """Average-pool a 2D plane onto a grid x grid mesh of near-equal cells."""
    rows = np.array_split(plane, grid, axis=0)
    return np.array([[cell.mean() for cell in np.array_split(r, grid, axis=1)] for r in rows])


class StubImageEncoder:
    """Deterministic stand-in for a pretrained vision encoder.

    Embedding = unit-normalized fixed Gaussian projection of pooled pixel
    statistics (a grid of cell means per channel, plus channel means/stds
    and a constant bias component).  Input-sensitive: any pixel change
    moves at least one pooled cell.
    """

    provenance = "stub"

    def __init__(self, dim: int = STUB_DIM, seed: int = 0, pool_grid: int = 4):
        self.dim = dim
        self.seed = seed
        self.pool = pool_grid
        n_stats = 3 * pool_grid * pool_grid + 6 + 1
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((dim, n_stats))

    def _statistics(self, arr: np.ndarray) -> np.ndarray:
        pooled = np.concatenate([_pool_grid(arr[c], self.pool).ravel() for c in range(3)])
        return np.concatenate(
            [pooled, arr.mean(axis=(1, 2)), arr.std(axis=(1, 2)), [1.0]]
        )

    def encode(self, img) -> ImageEmbedding:
        arr = _image_array(img)
        if arr.shape[0] != 3:
            raise ValidationError(f"stub image encoder expects 3 channels, got {arr.shape[0]}")
        v = self._projection @ self._statistics(arr)
        return ImageEmbedding(v / np.linalg.norm(v), self.provenance)


class StubTextEncoder:
    """Deterministic bag-of-words text encoder: per-token vectors seeded
    from a keyed blake2b digest, summed and unit-normalized."""

    provenance = "stub"

    def __init__(self, dim: int = STUB_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(f"{self.seed}:{token}".encode(), digest_size=8).digest()
        return np.random.default_rng(int.from_bytes(digest, "big")).standard_normal(self.dim)

    def encode(self, cap: CaptionRecord) -> TextEmbedding:
        if cap.source == "none":
            return TextEmbedding(np.zeros(self.dim), "absent")
        tokens = cap.text.lower().split() or ["<empty>"]
        v = np.sum([self._token_vector(t) for t in tokens], axis=0)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            v = self._token_vector("<degenerate>")
            norm = np.linalg.norm(v)
        return TextEmbedding(v / norm, self.provenance)


class ExternalBackend(Protocol):
    """What a production encoder backend must provide."""

    text_dim: int
    image_dim: int

    def encode_image(self, img) -> np.ndarray: ...

    def encode_text(self, text: str) -> np.ndarray: ...


class ExternalEncoderAdapter:
    """Adapter around a user-supplied pretrained text/image encoder.

    ``loader(model_ref)`` must return an :class:`ExternalBackend`.  The
    shared-space contract (text_dim == image_dim) is enforced at load.
    Without a loader every encode call fails loudly.
    """

    provenance = "external"

    def __init__(self, model_ref: str, loader: Callable[[str], ExternalBackend] | None = None):
        self.model_ref = model_ref
        self._backend: ExternalBackend | None = None
        if loader is not None:
            backend = loader(model_ref)
            if backend.text_dim != backend.image_dim:
                raise ConfigError(
                    "external encoder must share one embedding space: "
                    f"text_dim={backend.text_dim} != image_dim={backend.image_dim}"
                )
            self._backend = backend

    def _require_backend(self) -> ExternalBackend:
        if self._backend is None:
            raise EncoderUnavailableError(
                f"external encoder {self.model_ref!r} is not available; "
                "supply a loader or switch encoder.backend to 'stub'"
            )
        return self._backend

    @property
    def dim(self) -> int:
        return self._require_backend().image_dim

    def encode(self, item) -> ImageEmbedding | TextEmbedding:
        backend = self._require_backend()
        if isinstance(item, CaptionRecord):
            if item.source == "none":
                return TextEmbedding(np.zeros(backend.text_dim), "absent")
            v = np.asarray(backend.encode_text(item.text), dtype=np.float64)
            return TextEmbedding(v / np.linalg.norm(v), self.provenance)
        v = np.asarray(backend.encode_image(_image_array(item)), dtype=np.float64)
        return ImageEmbedding(v / np.linalg.norm(v), self.provenance)


def build_encoders(
    backend: str = "stub",
    model_ref: str = "",
    seed: int = 0,
    text_dim: int = STUB_DIM,
    image_dim: int = STUB_DIM,
    loader: Callable[[str], ExternalBackend] | None = None,
):
    """Construct the (text, image) encoder pair from configuration."""
    if backend == "stub":
        return StubTextEncoder(text_dim, seed), StubImageEncoder(image_dim, seed)
    if backend == "external":
        adapter = ExternalEncoderAdapter(model_ref, loader)
        return adapter, adapter
    raise ConfigError(f"unknown encoder backend {backend!r}")


# ---------------------------------------------------------------------------
# caption providers


class TemplateCaptionProvider:
    """Toy caption generator: a deterministic template keyed on the image's
    dominant hue bucket."""

    def __init__(self, n_buckets: int = 8):
        self.n_buckets = n_buckets

    def __call__(self, img) -> CaptionRecord:
        k = dominant_hue_bucket(img, self.n_buckets)
        return CaptionRecord(f"synthetic texture class {k}", "generated")


class NoCaptionProvider:
    """Caption-ablation provider: always the empty record."""

    def __call__(self, img) -> CaptionRecord:
        return CaptionRecord("", "none")


class ExternalCaptionProvider:
    """Hook for a captioning model; unavailable unless a loader is given."""

    def __init__(self, model_ref: str, loader: Callable[[str], Callable] | None = None):
        self.model_ref = model_ref
        self._impl = loader(model_ref) if loader is not None else None

    def __call__(self, img) -> CaptionRecord:
        if self._impl is None:
            raise EncoderUnavailableError(
                f"caption model {self.model_ref!r} is not available"
            )
        return CaptionRecord(str(self._impl(img)), "generated")


def dominant_hue_bucket(img, n_buckets: int = 8) -> int:
    """Hue bucket of the mean color, via the standard max/min hue formula."""
    arr = _image_array(img)
    r, g, b = (float(c) for c in arr.mean(axis=(1, 2)))
    mx, mn = max(r, g, b), min(r, g, b)
    if mx == mn:
        hue = 0.0
    elif mx == r:
        hue = ((g - b) / (mx - mn)) % 6.0
    elif mx == g:
        hue = (b - r) / (mx - mn) + 2.0
    else:
        hue = (r - g) / (mx - mn) + 4.0
    return int(hue / 6.0 * n_buckets) % n_buckets
