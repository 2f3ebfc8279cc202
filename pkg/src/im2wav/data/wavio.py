"""RIFF/WAV I/O: 16-bit PCM mono only, no silent conversion of anything.

Unsupported variants (stereo, non-16-bit, compressed/float encodings, or a
rate that differs from an expected one) are rejected with descriptive
errors rather than converted.
"""

from __future__ import annotations

import os
import wave
from pathlib import Path

import numpy as np

from im2wav.audio import Waveform
from im2wav.errors import FormatError, ValidationError

_PCM16_SCALE = 32767.0


def write_wav(w: Waveform, path) -> None:
    """Write mono 16-bit PCM. Samples must already be within [-1, 1]."""
    peak = float(np.abs(w.samples).max())
    if peak > 1.0:
        raise ValidationError(
            f"samples exceed [-1, 1] (peak {peak:.6f}); normalize before writing"
        )
    pcm = np.round(w.samples.astype(np.float64) * _PCM16_SCALE).astype("<i2")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with wave.open(str(tmp), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(w.sample_rate)
            f.writeframes(pcm.tobytes())
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def read_wav(path, expected_rate: int | None = None) -> Waveform:
    """Read mono 16-bit PCM; never resamples.

    expected_rate, when given, turns a header-rate mismatch into an error
    instead of silently returning audio at a different rate.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such WAV file: {path}")
    try:
        with wave.open(str(path), "rb") as f:
            channels = f.getnchannels()
            width = f.getsampwidth()
            rate = f.getframerate()
            n = f.getnframes()
            raw = f.readframes(n)
    except wave.Error as e:
        # Covers compressed and float encodings the stdlib reader rejects.
        raise FormatError(f"unsupported WAV encoding in {path}: {e}") from e
    if channels != 1:
        raise FormatError(f"{path}: {channels} channels; only mono is supported")
    if width != 2:
        raise FormatError(
            f"{path}: {8 * width}-bit samples; only 16-bit PCM is supported"
        )
    if expected_rate is not None and rate != expected_rate:
        raise FormatError(
            f"{path}: sample rate {rate} does not match expected {expected_rate}; "
            "resampling is not performed"
        )
    if n == 0:
        raise FormatError(f"{path}: empty WAV file")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / _PCM16_SCALE
    return Waveform(samples, rate)
