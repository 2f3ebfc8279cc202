"""Small spectrogram classifier that stands in for pretrained audio judges.

One trunk serves three roles: its softmax head provides class posteriors
(for KL and accuracy), its penultimate activations provide features for the
distribution distance, and a second head projects audio into the image
embedding space (trained contrastively on matched pairs) for clip scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from im2wav.audio import Waveform, peak_normalize
from im2wav.codec.losses import _magnitude
from im2wav.conditioning import EMBEDDING_DIM, EmbeddingClip
from im2wav.errors import ValidationError
from im2wav.metrics.gaussian import FeatureExtractor


@dataclass(frozen=True)
class ToyClassifierConfig:
    sample_rate: int = 16_000
    n_fft: int = 256
    hop: int = 64
    hidden: tuple[int, int] = (128, 64)
    emb_dim: int = EMBEDDING_DIM
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    contrastive_weight: float = 1.0
    contrastive_temperature: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_fft < 8 or self.hop < 1:
            raise ValidationError("n_fft must be >= 8 and hop >= 1")
        if self.steps < 1 or self.batch_size < 2:
            raise ValidationError("steps >= 1 and batch_size >= 2 required")


class _Net(nn.Module):
    def __init__(self, n_features: int, n_classes: int, cfg: ToyClassifierConfig):
        super().__init__()
        h1, h2 = cfg.hidden
        self.trunk = nn.Sequential(
            nn.Linear(n_features, h1), nn.ReLU(), nn.Linear(h1, h2), nn.ReLU()
        )
        self.class_head = nn.Linear(h2, n_classes)
        self.embed_head = nn.Linear(h2, cfg.emb_dim)

    def forward(self, feats: torch.Tensor):
        h = self.trunk(feats)
        return self.class_head(h), self.embed_head(h), h


def _spectral_summary(samples: np.ndarray, cfg: ToyClassifierConfig) -> np.ndarray:
    """Length-invariant clip features: per-bin mean and std of log magnitude."""
    x = torch.from_numpy(samples).unsqueeze(0)
    mag = torch.log1p(_magnitude(x, cfg.n_fft, cfg.hop)).squeeze(0)  # (bins, frames)
    mean = mag.mean(dim=1)
    std = mag.std(dim=1, unbiased=False)
    return torch.cat([mean, std]).numpy().astype(np.float64)


class ToyJudge:
    """Frozen trained classifier exposing the three judging surfaces."""

    def __init__(self, net: _Net, cfg: ToyClassifierConfig, n_classes: int):
        self.net = net.eval()
        self.config = cfg
        self.n_classes = n_classes
        self.feature_dim = cfg.hidden[1]

    def _check(self, w: Waveform) -> np.ndarray:
        if w.sample_rate != self.config.sample_rate:
            raise ValidationError(
                f"waveform rate {w.sample_rate} does not match judge rate "
                f"{self.config.sample_rate}"
            )
        return _spectral_summary(peak_normalize(w).samples, self.config)

    def _heads(self, ws: list[Waveform]):
        feats = torch.from_numpy(np.stack([self._check(w) for w in ws])).to(torch.float32)
        with torch.no_grad():
            logits, emb, penult = self.net(feats)
        return logits, emb, penult

    def posteriors(self, ws: list[Waveform]) -> np.ndarray:
        """(n, C) softmax class posteriors."""
        if not ws:
            raise ValidationError("no waveforms")
        logits, _, _ = self._heads(ws)
        return torch.softmax(logits.to(torch.float64), dim=-1).numpy()

    def features(self, w: Waveform) -> np.ndarray:
        """Penultimate activations: the distribution-distance feature vector."""
        _, _, penult = self._heads([w])
        return penult.squeeze(0).to(torch.float64).numpy()

    def audio_embedding(self, w: Waveform) -> np.ndarray:
        """Unit-norm projection of the clip into the image-embedding space."""
        _, emb, _ = self._heads([w])
        v = emb.squeeze(0).to(torch.float64).numpy()
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValidationError("audio embedding collapsed to zero")
        return v / norm

    def feature_extractor(self) -> FeatureExtractor:
        return FeatureExtractor(
            name="toy-spectrogram-classifier",
            dimension=self.feature_dim,
            extract=self.features,
        )


def train_toy_classifier(
    waveforms: list[Waveform],
    labels: list[int] | np.ndarray,
    clips: list[EmbeddingClip],
    cfg: ToyClassifierConfig,
) -> ToyJudge:
    """Joint objective: class cross-entropy plus a symmetric contrastive
    loss pulling each clip's audio embedding toward its image embedding.
    Deterministic given cfg.seed."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if not (len(waveforms) == len(labels) == len(clips)):
        raise ValidationError(
            f"got {len(waveforms)} waveforms, {len(labels)} labels, {len(clips)} clips"
        )
    if len(waveforms) < 2:
        raise ValidationError("training needs at least 2 clips")
    # Contrastive pairing is within-batch, so a batch never exceeds the corpus.
    batch_size = min(cfg.batch_size, len(waveforms))
    n_classes = int(labels.max()) + 1
    if np.unique(labels).size < 2:
        raise ValidationError("training needs at least 2 distinct classes")
    for i, w in enumerate(waveforms):
        if w.sample_rate != cfg.sample_rate:
            raise ValidationError(
                f"clip {i}: rate {w.sample_rate} != configured {cfg.sample_rate}"
            )

    feats = np.stack([_spectral_summary(peak_normalize(w).samples, cfg) for w in waveforms])
    targets = np.stack([c.frames.mean(axis=0) for c in clips]).astype(np.float64)
    norms = np.linalg.norm(targets, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValidationError("a clip's frame mean has zero norm")
    targets = targets / norms

    net = _Net(feats.shape[1], n_classes, cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.no_grad():
        for p in net.parameters():
            if p.ndim >= 2:
                std = (1.0 / p.shape[-1]) ** 0.5
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)
            else:
                p.zero_()

    feats_t = torch.from_numpy(feats).to(torch.float32)
    labels_t = torch.from_numpy(labels)
    targets_t = torch.from_numpy(targets).to(torch.float32)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)

    net.train()
    for _ in range(cfg.steps):
        idx = torch.from_numpy(rng.integers(0, len(waveforms), size=batch_size))
        logits, emb, _ = net(feats_t[idx])
        loss = F.cross_entropy(logits, labels_t[idx])
        if cfg.contrastive_weight > 0:
            a = F.normalize(emb, dim=1)
            sim = (a @ targets_t[idx].T) / cfg.contrastive_temperature
            pair = torch.arange(batch_size)
            loss = loss + cfg.contrastive_weight * 0.5 * (
                F.cross_entropy(sim, pair) + F.cross_entropy(sim.T, pair)
            )
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    return ToyJudge(net, cfg, n_classes)
