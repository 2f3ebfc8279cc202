"""Corpus-level evaluation: all four metrics over one generated set."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from im2wav.audio import Waveform
from im2wav.conditioning import EmbeddingClip
from im2wav.errors import ValidationError
from im2wav.metrics.gaussian import fad
from im2wav.metrics.scores import DEFAULT_GAMMA, accuracy, clip_score, paired_kl
from im2wav.metrics.toy_classifier import ToyJudge


def evaluate_sets(
    judge: ToyJudge,
    real: list[Waveform],
    generated: list[Waveform],
    gen_conditioning: list[EmbeddingClip],
    gen_labels,
    paired_real: list[Waveform] | None = None,
    gamma: float = DEFAULT_GAMMA,
) -> dict:
    """Metric values for one generated set against a real reference set.

    The distribution distance compares `real` vs `generated` as sets; the
    relevance metrics walk the generated samples with the conditioning that
    produced them. paired_real (default: `real`, aligned by index) pairs each
    generated sample with a real clip of the same conditioning for the KL.
    """
    gen_labels = np.asarray(gen_labels, dtype=np.int64).reshape(-1)
    if not (len(generated) == len(gen_conditioning) == len(gen_labels)):
        raise ValidationError("generated set, conditioning, and labels must align")
    if paired_real is None:
        paired_real = real
    if len(paired_real) != len(generated):
        raise ValidationError(
            f"{len(paired_real)} paired real clips vs {len(generated)} generated"
        )

    fad_value = fad(real, generated, judge.feature_extractor())
    gen_posteriors = judge.posteriors(generated)
    cs = float(
        np.mean(
            [
                clip_score(clip, judge.audio_embedding(w), gamma)
                for clip, w in zip(gen_conditioning, generated)
            ]
        )
    )
    kl = paired_kl(judge.posteriors(paired_real), gen_posteriors)
    acc = accuracy(gen_posteriors, gen_labels)
    return {"fad": fad_value, "clip_score": cs, "kl": kl, "accuracy": acc}


def build_report(
    values: dict,
    n_real: int,
    n_generated: int,
    extractor_name: str,
    config: dict,
) -> dict:
    """Self-describing result document with a hash of the exact config."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return {
        "metrics": dict(values),
        "n_real": n_real,
        "n_generated": n_generated,
        "extractor": extractor_name,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
    }


def write_report(report: dict, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
