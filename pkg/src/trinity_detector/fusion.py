"""The end-to-end detector: a shallow pixel feature extractor feeding the
frequency channel-attention branch, frozen text/image embeddings, tri-modal
concatenation [text | image | frequency], and a small MLP head producing a
single real-vs-fake logit.  Includes the seeded training loop.

Only the fusion pieces train (extractor, attention unit, frequency
projection, head, and NAS logits when enabled); encoders stay frozen.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint as ckpt
from . import mcaf, spectral
from .data import ImageTensor, Sample
from .encoders import CaptionRecord, TemplateCaptionProvider, build_encoders
from .errors import ConfigError, ValidationError

FREQUENCY_SOURCES = ("feature", "raw")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class DetectorConfig:
    """Architecture, encoder wiring, and ablation switches.

    The three ablation flags mirror the ablation table rows:
    ``disable_frequency`` zeroes the frequency slot, ``disable_caption``
    zeroes the text slot, ``caption_generated`` swaps dataset captions for
    machine-generated template captions.
    """

    channels: int = 32
    d_f: int = 64
    head_hidden: int = 128
    n_parts: int | None = None
    reduction: int = 4
    criterion: str = mcaf.TWO_STEP
    dct_plane: tuple[int, int] = (7, 7)
    fc_layers: int = 2
    convention: str = spectral.ORTHONORMAL
    frequency_source: str = "feature"
    text_dim: int = 64
    image_dim: int = 64
    encoder_backend: str = "stub"
    encoder_model_ref: str = ""
    encoder_seed: int = 0
    disable_frequency: bool = False
    disable_caption: bool = False
    caption_generated: bool = False
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.frequency_source not in FREQUENCY_SOURCES:
            raise ConfigError(f"unknown frequency_source {self.frequency_source!r}")
        for name in ("channels", "d_f", "head_hidden", "text_dim", "image_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")

    @property
    def feature_dim(self) -> int:
        return self.text_dim + self.image_dim + self.d_f

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        if "dct_plane" in d and d["dct_plane"] is not None:
            d["dct_plane"] = tuple(d["dct_plane"])
        return cls(**d)


@dataclass
class TrainConfig:
    """Optimization hyperparameters, all seeded for reproducibility.

    Plain SGD with momentum is the default optimizer; the toy experiment
    configs switch to Adam, which converges far faster on that task."""

    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    optimizer: str = "sgd"
    model: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self) -> None:
        if isinstance(self.model, dict):
            self.model = DetectorConfig.from_dict(self.model)
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("lr, batch_size and epochs must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "model" in d:
            d["model"] = DetectorConfig.from_dict(d["model"])
        return cls(**d)


class DetectorModel(nn.Module):
    """Trainable core.  ``forward`` takes the image batch plus precomputed
    text/image embedding batches and returns logits."""

    def __init__(self, cfg: DetectorConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.frequency_source == "feature":
            mid = max(cfg.channels // 2, 1)
            self.conv1 = nn.Conv2d(3, mid, kernel_size=3, stride=2, padding=1)
            self.conv2 = nn.Conv2d(mid, cfg.channels, kernel_size=3, stride=2, padding=1)
            attn_channels = cfg.channels
        else:
            # raw-RGB ablation mode: attention runs on the pixel channels
            attn_channels = 3
        self.attention = mcaf.MultiSpectralAttention(
            mcaf.MCAFConfig(
                channels=attn_channels,
                n_parts=cfg.n_parts if cfg.frequency_source == "feature" else None,
                dct_plane=cfg.dct_plane,
                reduction=cfg.reduction,
                criterion=cfg.criterion,
                fc_layers=cfg.fc_layers,
                convention=cfg.convention,
            )
        )
        self.freq_proj = nn.Linear(attn_channels, cfg.d_f)
        self.head1 = nn.Linear(cfg.feature_dim, cfg.head_hidden)
        self.head2 = nn.Linear(cfg.head_hidden, 1)

    def frequency_feature(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) -> (B, d_f): attended, pooled, projected frequency
        branch output."""
        if self.cfg.frequency_source == "feature":
            fmap = F.relu(self.conv2(F.relu(self.conv1(images))))
        else:
            fmap = images
        gates = self.attention(fmap)
        attended = mcaf.apply_channel_attention(fmap, gates)
        return self.freq_proj(attended.mean(dim=(2, 3)))

    def forward(
        self, images: torch.Tensor, text_vecs: torch.Tensor, image_vecs: torch.Tensor
    ) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 3:
            raise ValidationError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        b = images.shape[0]
        if text_vecs.shape != (b, self.cfg.text_dim) or image_vecs.shape != (b, self.cfg.image_dim):
            raise ValidationError("embedding batch shapes do not match the configuration")
        if self.cfg.disable_frequency:
            freq = images.new_zeros((b, self.cfg.d_f))
        else:
            freq = self.frequency_feature(images)
        if self.cfg.disable_caption:
            text_vecs = torch.zeros_like(text_vecs)
        fused = torch.cat([text_vecs, image_vecs, freq], dim=1)
        return self.head2(F.relu(self.head1(fused))).squeeze(1)


def detection_loss(logit: torch.Tensor | float, label: torch.Tensor | int) -> torch.Tensor:
    """Binary cross-entropy with logits; label 0 = real, 1 = fake.

    Plain Python numbers are promoted to float64."""
    if not torch.is_tensor(logit):
        logit = torch.tensor(float(logit), dtype=torch.float64)
    elif not logit.is_floating_point():
        logit = logit.double()
    label = torch.as_tensor(label, dtype=logit.dtype)
    return F.binary_cross_entropy_with_logits(logit, label)


@dataclass(frozen=True)
class Prediction:
    label: str
    score: float


class Detector:
    """Model plus frozen encoders: the full image+caption -> verdict path."""

    def __init__(self, model: DetectorModel, cfg: DetectorConfig):
        self.model = model
        self.cfg = cfg
        self.stored_config: dict = {"model": cfg.to_dict()}
        self.text_encoder, self.image_encoder = build_encoders(
            backend=cfg.encoder_backend,
            model_ref=cfg.encoder_model_ref,
            seed=cfg.encoder_seed,
            text_dim=cfg.text_dim,
            image_dim=cfg.image_dim,
        )
        self.caption_provider = TemplateCaptionProvider() if cfg.caption_generated else None

    @classmethod
    def build(cls, cfg: DetectorConfig) -> "Detector":
        return cls(DetectorModel(cfg), cfg)

    def effective_caption(self, img: ImageTensor, cap: CaptionRecord) -> CaptionRecord:
        if self.caption_provider is not None:
            return self.caption_provider(img)
        return cap

    def embed(self, img: ImageTensor, cap: CaptionRecord) -> tuple[np.ndarray, np.ndarray]:
        cap = self.effective_caption(img, cap)
        text = self.text_encoder.encode(cap).vector
        image = self.image_encoder.encode(img).vector
        return text, image

    def _tensors(self, img: ImageTensor, cap: CaptionRecord):
        dtype = next(self.model.parameters()).dtype
        text, image = self.embed(img, cap)
        return (
            torch.from_numpy(img.data).to(dtype).unsqueeze(0),
            torch.from_numpy(np.ascontiguousarray(text)).to(dtype).unsqueeze(0),
            torch.from_numpy(np.ascontiguousarray(image)).to(dtype).unsqueeze(0),
        )

    def forward_logit(self, img: ImageTensor, cap: CaptionRecord) -> float:
        self.model.eval()
        with torch.no_grad():
            return float(self.model(*self._tensors(img, cap)).item())

    def predict(self, img: ImageTensor, cap: CaptionRecord) -> Prediction:
        score = 1.0 / (1.0 + np.exp(-self.forward_logit(img, cap)))
        label = "fake" if score >= self.cfg.threshold else "real"
        return Prediction(label, float(score))

    def predict_batch(self, samples: list[Sample], chunk: int = 64) -> list[Prediction]:
        self.model.eval()
        dtype = next(self.model.parameters()).dtype
        out: list[Prediction] = []
        for start in range(0, len(samples), chunk):
            batch = samples[start : start + chunk]
            embeds = [self.embed(s.image, s.caption) for s in batch]
            imgs = torch.from_numpy(np.stack([s.image.data for s in batch])).to(dtype)
            txt = torch.from_numpy(np.stack([e[0] for e in embeds])).to(dtype)
            emb = torch.from_numpy(np.stack([e[1] for e in embeds])).to(dtype)
            with torch.no_grad():
                logits = self.model(imgs, txt, emb).numpy()
            for z in logits:
                score = float(1.0 / (1.0 + np.exp(-z)))
                out.append(Prediction("fake" if score >= self.cfg.threshold else "real", score))
        return out

    # -- persistence --------------------------------------------------------

    def save(self, path, train_config: TrainConfig | None = None) -> None:
        params = {k: v.detach().numpy() for k, v in self.model.state_dict().items()}
        config = {"model": self.cfg.to_dict()}
        if train_config is not None:
            config["train"] = train_config.to_dict()
        ckpt.save_checkpoint(path, params, config)

    @classmethod
    def load(cls, path) -> "Detector":
        params, config = ckpt.load_checkpoint(path)
        cfg = DetectorConfig.from_dict(config["model"])
        detector = cls.build(cfg)
        detector.stored_config = config
        state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in params.items()}
        detector.model.load_state_dict(state)
        detector.model.eval()
        return detector


@dataclass
class TrainResult:
    detector: Detector
    initial_probe_loss: float
    final_probe_loss: float
    seed: int


def _prepare_arrays(detector: Detector, samples: list[Sample]):
    imgs = np.stack([s.image.data for s in samples])
    embeds = [detector.embed(s.image, s.caption) for s in samples]
    txt = np.stack([e[0] for e in embeds]).astype(np.float32)
    emb = np.stack([e[1] for e in embeds]).astype(np.float32)
    labels = np.array([s.label for s in samples], dtype=np.float32)
    return imgs, txt, emb, labels


def train(samples: list[Sample], cfg: TrainConfig) -> TrainResult:
    """Train a detector from scratch on the given samples.

    Deterministic in ``cfg.seed``: parameter init, shuffling, and the
    optimizer trajectory are all seeded, so identical runs produce
    bit-identical parameters.
    """
    if not samples:
        raise ConfigError("training set is empty")
    labels = {s.label for s in samples}
    if labels != {0, 1}:
        raise ConfigError("training set must contain both real and fake samples")

    torch.manual_seed(cfg.seed)
    detector = Detector.build(cfg.model)
    model = detector.model
    imgs, txt, emb, y = _prepare_arrays(detector, samples)
    imgs_t = torch.from_numpy(imgs)
    txt_t = torch.from_numpy(txt)
    emb_t = torch.from_numpy(emb)
    y_t = torch.from_numpy(y)

    n_probe = min(cfg.batch_size, len(samples))
    probe = (imgs_t[:n_probe], txt_t[:n_probe], emb_t[:n_probe], y_t[:n_probe])

    def probe_loss() -> float:
        model.eval()
        with torch.no_grad():
            return float(F.binary_cross_entropy_with_logits(model(*probe[:3]), probe[3]))

    initial = probe_loss()

    if cfg.optimizer == "sgd":
        opt = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)
    else:
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    shuffler = np.random.default_rng(cfg.seed)
    model.train()
    for _ in range(cfg.epochs):
        order = shuffler.permutation(len(samples))
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size])
            opt.zero_grad()
            loss = F.binary_cross_entropy_with_logits(
                model(imgs_t[idx], txt_t[idx], emb_t[idx]), y_t[idx]
            )
            loss.backward()
            opt.step()

    final = probe_loss()
    model.eval()
    return TrainResult(detector, initial, final, cfg.seed)
