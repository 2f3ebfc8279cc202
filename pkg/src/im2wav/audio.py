"""Waveform domain type and basic amplitude utilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from im2wav.errors import ValidationError

DEFAULT_SAMPLE_RATE = 16_000

# Inputs are rescaled so their peak never exceeds this before encoding;
# keeps the reconstruction target bounded away from clipping.
PEAK_NORM_TARGET = 0.95


@dataclass
class Waveform:
    """Mono audio signal: float samples (nominally in [-1, 1]) at a fixed rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.samples.size == 0:
            raise ValidationError("waveform must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def peak_normalize(w: Waveform, target: float = PEAK_NORM_TARGET) -> Waveform:
    """Scale down so the absolute peak is at most `target`. Quiet signals pass through."""
    peak = float(np.max(np.abs(w.samples)))
    if peak <= target or peak == 0.0:
        return w
    return Waveform(w.samples * (target / peak), w.sample_rate)


def pad_to_multiple(samples: np.ndarray, multiple: int) -> np.ndarray:
    """Right-pad with zeros to the next multiple of `multiple` (audio-neutral)."""
    n = samples.shape[-1]
    rem = n % multiple
    if rem == 0:
        return samples
    pad = multiple - rem
    return np.concatenate([samples, np.zeros(pad, dtype=samples.dtype)])


@dataclass
class SnrReport:
    """Signal-to-noise ratio of a reconstruction against its reference."""

    snr_db: float
    signal_power: float
    noise_power: float = field(repr=False, default=0.0)


def reconstruction_snr(reference: Waveform, estimate: Waveform) -> SnrReport:
    if len(reference) != len(estimate):
        raise ValidationError(
            f"length mismatch: reference {len(reference)} vs estimate {len(estimate)}"
        )
    ref = reference.samples.astype(np.float64)
    err = ref - estimate.samples.astype(np.float64)
    sig = float(np.mean(ref**2))
    noise = float(np.mean(err**2))
    if noise == 0.0:
        return SnrReport(snr_db=float("inf"), signal_power=sig, noise_power=0.0)
    return SnrReport(
        snr_db=10.0 * float(np.log10(max(sig, 1e-30) / noise)),
        signal_power=sig,
        noise_power=noise,
    )
