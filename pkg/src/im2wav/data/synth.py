"""Synthetic audio classes with paired image-embedding stand-ins.

Each class couples an audio generator family (tone, chirp, noise band, or
amplitude-modulated tone; classes differ in both spectral and temporal
structure) with a fixed near-orthogonal 512-d anchor vector. A clip's
embedding frames are the class anchor plus per-frame Gaussian jitter,
renormalized to unit length, so real exported embeddings and synthetic
ones flow through the same pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from im2wav.audio import Waveform
from im2wav.conditioning import EMBEDDING_DIM, EmbeddingClip, write_embedding_clip
from im2wav.data.manifest import DatasetManifest, ManifestEntry, save_manifest
from im2wav.data.wavio import write_wav
from im2wav.errors import ValidationError

GENERATOR_KINDS = ("tone", "chirp", "noise-band", "am-tone")

_MAX_ANCHOR_COS = 0.2
_FADE_S = 0.005  # edge fade to avoid clicks at clip boundaries

# Frequency ranges are kept under 1 kHz so every kind stays below Nyquist
# at the smallest supported rate (2 kHz toy preset).
_DEFAULT_PARAMS = {
    "tone": {"freq_lo": 380.0, "freq_hi": 520.0},
    "chirp": {"freq_lo": 150.0, "freq_hi": 300.0, "end_lo": 600.0, "end_hi": 900.0},
    "noise-band": {"band_lo": 100.0, "band_hi": 350.0},
    "am-tone": {"freq_lo": 600.0, "freq_hi": 850.0, "mod_lo": 5.0, "mod_hi": 15.0},
}


@dataclass(frozen=True)
class SynthClassSpec:
    class_id: int
    generator_kind: str
    embedding_anchor: np.ndarray  # (512,) unit vector
    anchor_jitter: float = 0.05
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.generator_kind not in GENERATOR_KINDS:
            raise ValidationError(
                f"unknown generator kind {self.generator_kind!r}; "
                f"expected one of {GENERATOR_KINDS}"
            )
        anchor = np.asarray(self.embedding_anchor, dtype=np.float32)
        if anchor.shape != (EMBEDDING_DIM,):
            raise ValidationError(
                f"anchor must have shape ({EMBEDDING_DIM},), got {anchor.shape}"
            )
        norm = float(np.linalg.norm(anchor))
        if not 0.99 < norm < 1.01:
            raise ValidationError(f"anchor must be unit-norm, got |a| = {norm:.4f}")
        if self.anchor_jitter < 0:
            raise ValidationError("anchor_jitter must be >= 0")
        object.__setattr__(self, "embedding_anchor", anchor)

    def param(self, key: str) -> float:
        defaults = _DEFAULT_PARAMS[self.generator_kind]
        return float(self.params.get(key, defaults[key]))


def default_class_specs(n_classes: int = 3, seed: int = 0) -> list[SynthClassSpec]:
    """Generator kinds cycled over classes; anchors exactly orthogonal (QR)."""
    if n_classes < 1:
        raise ValidationError("need at least one class")
    if n_classes > EMBEDDING_DIM:
        raise ValidationError("cannot make that many orthogonal anchors")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xA11C])))
    gauss = rng.standard_normal((EMBEDDING_DIM, n_classes))
    q, _ = np.linalg.qr(gauss)
    specs = []
    for c in range(n_classes):
        anchor = (q[:, c] / np.linalg.norm(q[:, c])).astype(np.float32)
        specs.append(
            SynthClassSpec(
                class_id=c,
                generator_kind=GENERATOR_KINDS[c % len(GENERATOR_KINDS)],
                embedding_anchor=anchor,
            )
        )
    cosines = np.abs(q.T @ q - np.eye(n_classes)).max()
    assert cosines < _MAX_ANCHOR_COS  # QR gives ~0; guards future edits
    return specs


def _fade(samples: np.ndarray, sample_rate: int) -> np.ndarray:
    n = min(int(_FADE_S * sample_rate), len(samples) // 4)
    if n > 0:
        ramp = np.linspace(0.0, 1.0, n, dtype=np.float32)
        samples[:n] *= ramp
        samples[-n:] *= ramp[::-1]
    return samples


def _render(spec: SynthClassSpec, t: np.ndarray, rng: np.random.Generator, sr: int) -> np.ndarray:
    amp = rng.uniform(0.5, 0.9)
    kind = spec.generator_kind
    if kind == "tone":
        f = rng.uniform(spec.param("freq_lo"), spec.param("freq_hi"))
        phase = rng.uniform(0, 2 * np.pi)
        x = amp * np.sin(2 * np.pi * f * t + phase)
    elif kind == "chirp":
        f0 = rng.uniform(spec.param("freq_lo"), spec.param("freq_hi"))
        f1 = rng.uniform(spec.param("end_lo"), spec.param("end_hi"))
        dur = t[-1] + (t[1] - t[0])
        x = amp * np.sin(2 * np.pi * (f0 * t + (f1 - f0) * t * t / (2 * dur)))
    elif kind == "noise-band":
        white = rng.standard_normal(len(t))
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(len(t), d=1.0 / sr)
        mask = (freqs >= spec.param("band_lo")) & (freqs <= spec.param("band_hi"))
        band = np.fft.irfft(spectrum * mask, n=len(t))
        peak = np.abs(band).max()
        x = amp * band / peak if peak > 0 else band
    else:  # am-tone
        fc = rng.uniform(spec.param("freq_lo"), spec.param("freq_hi"))
        fm = rng.uniform(spec.param("mod_lo"), spec.param("mod_hi"))
        pc, pm = rng.uniform(0, 2 * np.pi, size=2)
        envelope = 0.5 + 0.5 * np.sin(2 * np.pi * fm * t + pm)
        x = amp * envelope * np.sin(2 * np.pi * fc * t + pc)
    return x.astype(np.float32)


def synth_pair(
    spec: SynthClassSpec,
    duration: float,
    rng: np.random.Generator,
    sample_rate: int = 16_000,
    frame_count: int = 5,
) -> tuple[Waveform, EmbeddingClip, int]:
    """One clip: randomized-parameter audio plus jittered anchor embeddings."""
    if duration <= 0:
        raise ValidationError(f"duration must be positive, got {duration}")
    if frame_count < 1:
        raise ValidationError("frame_count must be >= 1")
    n = int(round(duration * sample_rate))
    t = np.arange(n, dtype=np.float64) / sample_rate
    samples = _fade(_render(spec, t, rng, sample_rate), sample_rate)

    frames = spec.embedding_anchor[None, :] + spec.anchor_jitter * rng.standard_normal(
        (frame_count, EMBEDDING_DIM)
    ).astype(np.float32)
    frames /= np.linalg.norm(frames, axis=1, keepdims=True)
    clip = EmbeddingClip(frames=frames.astype(np.float32), source_id=f"synth-class-{spec.class_id}")
    return Waveform(samples, sample_rate), clip, spec.class_id


def generate_corpus(
    specs: list[SynthClassSpec],
    out_dir,
    n_per_class: int = 200,
    duration_s: float = 1.0,
    sample_rate: int = 16_000,
    base_seed: int = 0,
    frame_count: int = 5,
    test_fraction: float = 0.2,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Write WAVs, embedding files, and train/test manifests under out_dir.

    Every entry's randomness derives from (base_seed, its global index), so
    regeneration with the same seed reproduces every file byte for byte and
    entries are independent of generation order.
    """
    if not specs:
        raise ValidationError("no class specs given")
    if not 0.0 <= test_fraction < 1.0:
        raise ValidationError("test_fraction must be in [0, 1)")
    out_dir = Path(out_dir)
    (out_dir / "wav").mkdir(parents=True, exist_ok=True)
    (out_dir / "emb").mkdir(parents=True, exist_ok=True)

    n_test = int(round(n_per_class * test_fraction))
    train_entries, test_entries = [], []
    index = 0
    for spec in specs:
        for j in range(n_per_class):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([base_seed, index])))
            w, clip, cid = synth_pair(spec, duration_s, rng, sample_rate, frame_count)
            stem = f"c{cid}_{j:04d}"
            wav_rel, emb_rel = f"wav/{stem}.wav", f"emb/{stem}.emb"
            write_wav(w, out_dir / wav_rel)
            write_embedding_clip(clip, out_dir / emb_rel)
            entry = ManifestEntry(
                wav_path=wav_rel, emb_path=emb_rel, class_id=cid, duration=duration_s
            )
            (test_entries if j < n_test else train_entries).append(entry)
            index += 1

    train = DatasetManifest(entries=train_entries, sample_rate=sample_rate, split="train")
    test = DatasetManifest(entries=test_entries, sample_rate=sample_rate, split="test")
    save_manifest(train, out_dir / "train.json")
    save_manifest(test, out_dir / "test.json")
    return train, test
