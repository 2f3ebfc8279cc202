"""Autoregressive generation with classifier-free guidance.

Coarse tokens are sampled with guidance: at each step the model is
evaluated under the real and the learned-null conditioning, and the two
logit vectors are combined as uncond + eta * (cond - uncond). Fine tokens
are then sampled without guidance, conditioned on the coarse stream, and
both streams decode to a waveform through the codec.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from im2wav.audio import Waveform
from im2wav.codec.model import LEVEL_FACTORS, MAX_DOWNSAMPLE, CodecModel, decode
from im2wav.codec.quantizer import TokenSequence
from im2wav.conditioning import EmbeddingClip
from im2wav.data.wavio import write_wav
from im2wav.errors import Im2WavError, ValidationError
from im2wav.lm.model import TokenLM

_UP_RATIO = LEVEL_FACTORS[1] // LEVEL_FACTORS[0]


@dataclass(frozen=True)
class GuidanceConfig:
    eta: float = 3.0
    temperature: float = 1.0
    top_k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise ValidationError(f"eta must be >= 0, got {self.eta}")
        if self.temperature < 0:
            raise ValidationError(
                f"temperature must be positive (or 0 for argmax decoding), "
                f"got {self.temperature}"
            )
        if self.top_k is not None and self.top_k < 1:
            raise ValidationError(f"top_k must be >= 1, got {self.top_k}")


@dataclass(frozen=True)
class GuidedLogits:
    scores: torch.Tensor

    def __post_init__(self):
        if not torch.isfinite(self.scores).all():
            raise ValidationError("guided scores must be finite")


class GenerationError(Im2WavError):
    """A pipeline stage failed; .stage names it, __cause__ keeps the original."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"generate stage {stage!r}: {message}")
        self.stage = stage


def guide(cond_logits: torch.Tensor, uncond_logits: torch.Tensor, eta: float) -> GuidedLogits:
    """uncond + eta * (cond - uncond), elementwise.

    eta == 1 and eta == 0 return the conditional / unconditional scores
    as-is, so those reductions hold exactly rather than to float tolerance.
    """
    if cond_logits.shape != uncond_logits.shape:
        raise ValidationError(
            f"logit shapes differ: {tuple(cond_logits.shape)} vs {tuple(uncond_logits.shape)}"
        )
    if not torch.isfinite(cond_logits).all() or not torch.isfinite(uncond_logits).all():
        raise ValidationError("guidance inputs must be finite")
    if eta == 1.0:
        return GuidedLogits(cond_logits.clone())
    if eta == 0.0:
        return GuidedLogits(uncond_logits.clone())
    return GuidedLogits(uncond_logits + eta * (cond_logits - uncond_logits))


def _draw(
    scores: torch.Tensor, g: GuidanceConfig, generators: list[torch.Generator]
) -> torch.Tensor:
    """One token per row from softmax(scores / temperature), top_k-limited.

    Draw-order contract: exactly one categorical draw per row per step, rows
    in batch order, each row from its own generator; argmax mode consumes no
    randomness.
    """
    k = scores.shape[-1]
    if g.top_k is not None and g.top_k > k:
        raise ValidationError(f"top_k {g.top_k} exceeds vocabulary {k}")
    if g.temperature == 0.0:
        return torch.argmax(scores, dim=-1)
    if g.top_k is not None and g.top_k < k:
        kth = torch.topk(scores, g.top_k, dim=-1).values[..., -1:]
        scores = scores.masked_fill(scores < kth, float("-inf"))
    probs = torch.softmax(scores / g.temperature, dim=-1)
    # Renormalize defensively; multinomial tolerates unnormalized rows but the
    # sampled distribution must be exactly the softmax.
    probs = probs / probs.sum(dim=-1, keepdim=True)
    out = torch.empty(scores.shape[0], dtype=torch.long)
    for b in range(scores.shape[0]):
        out[b] = torch.multinomial(probs[b], 1, generator=generators[b])
    return out


def _per_sample_generators(base_seed: int, count: int) -> list[torch.Generator]:
    seeds = np.random.SeedSequence([int(base_seed)]).generate_state(max(count, 1), np.uint64)
    gens = []
    for i in range(count):
        gen = torch.Generator()
        gen.manual_seed(int(seeds[i] % (1 << 63)))
        gens.append(gen)
    return gens


def _aligned(frames: torch.Tensor, n_tokens: int) -> torch.Tensor:
    m = frames.shape[1]
    idx = np.minimum((np.arange(n_tokens) * m) // n_tokens, m - 1)
    return frames[:, idx]


def sample_low_tokens(
    model: TokenLM,
    frames: torch.Tensor,
    n_tokens: int,
    g: GuidanceConfig,
) -> np.ndarray:
    """Guided coarse sampling for a batch of clips; frames: (B, M, frame_dim).

    At eta exactly 1 (or 0) only the conditional (or unconditional) branch is
    evaluated, with an unchanged draw order, so those settings are bitwise
    identical to single-branch sampling rather than merely close.
    """
    if model.config.level != "low":
        raise ValidationError("sample_low_tokens requires the coarse-level model")
    if model.null is None:
        raise ValidationError("model has no null embedding; cannot run guidance")
    if n_tokens < 1:
        raise ValidationError("n_tokens must be >= 1")
    b = frames.shape[0]
    dtype = next(model.parameters()).dtype
    frames = frames.to(dtype)
    gens = _per_sample_generators(g.seed, b)

    with torch.no_grad():
        y_cond = model.condition_from_means(frames.mean(dim=1))
        per_tok = _aligned(frames, n_tokens) if model.config.use_every_token_frames else None

        both = g.eta != 0.0 and g.eta != 1.0
        if g.eta == 0.0:
            y_in = model.null.null_y.unsqueeze(0).expand(b, -1).to(dtype)
            pt_in = None
            if per_tok is not None:
                pt_in = model.null.null_f.view(1, 1, -1).expand(b, n_tokens, -1).to(dtype)
        elif both:
            y_null = model.null.null_y.unsqueeze(0).expand(b, -1).to(dtype)
            y_in = torch.cat([y_cond, y_null], dim=0)
            pt_in = None
            if per_tok is not None:
                pt_null = model.null.null_f.view(1, 1, -1).expand(b, n_tokens, -1).to(dtype)
                pt_in = torch.cat([per_tok, pt_null], dim=0)
        else:  # eta == 1: conditional branch only
            y_in, pt_in = y_cond, per_tok

        sess = model.start_session(
            2 * b if both else b, y_in, n_tokens, per_token_frames=pt_in
        )
        out = torch.empty(b, n_tokens, dtype=torch.long)
        prev: torch.Tensor | None = None
        for s in range(n_tokens):
            logits = sess.step(prev)
            scored = (
                guide(logits[:b], logits[b:], g.eta).scores if both else logits
            )
            ids = _draw(scored, g, gens)
            out[:, s] = ids
            prev = torch.cat([ids, ids]) if both else ids
    return out.numpy()


def sample_up_tokens(
    model: TokenLM,
    frames: torch.Tensor,
    low_ids: np.ndarray,
    g: GuidanceConfig,
) -> np.ndarray:
    """Fine-level sampling conditioned on coarse tokens; no guidance here.

    low_ids: (B, S_low); output (B, 4 * S_low).
    """
    if model.config.level != "up":
        raise ValidationError("sample_up_tokens requires the fine-level model")
    if low_ids.ndim != 2 or low_ids.shape[0] != frames.shape[0]:
        raise ValidationError(
            f"low token batch {low_ids.shape} does not match frames batch {frames.shape[0]}"
        )
    b, s_low = low_ids.shape
    n_tokens = _UP_RATIO * s_low
    dtype = next(model.parameters()).dtype
    frames = frames.to(dtype)
    gens = _per_sample_generators(g.seed + 1, b)

    with torch.no_grad():
        y = model.condition_from_means(frames.mean(dim=1))
        low_aligned = torch.from_numpy(np.repeat(low_ids, _UP_RATIO, axis=1))
        sess = model.start_session(b, y, n_tokens, low_tokens=low_aligned)
        out = torch.empty(b, n_tokens, dtype=torch.long)
        prev: torch.Tensor | None = None
        for s in range(n_tokens):
            ids = _draw(sess.step(prev), g, gens)
            out[:, s] = ids
            prev = ids
    return out.numpy()


def token_counts(duration_s: float, sample_rate: int) -> tuple[int, int, int]:
    """(padded sample count, coarse tokens, fine tokens) for a duration."""
    if duration_s <= 0:
        raise ValidationError(f"duration must be positive, got {duration_s}")
    n = int(round(duration_s * sample_rate))
    padded = ((n + MAX_DOWNSAMPLE - 1) // MAX_DOWNSAMPLE) * MAX_DOWNSAMPLE
    return padded, padded // LEVEL_FACTORS[1], padded // LEVEL_FACTORS[0]


@dataclass
class GenerationResult:
    waveform: Waveform
    low: TokenSequence
    up: TokenSequence | None
    seed: int
    config: GuidanceConfig


def generate_batch(
    clips: list[EmbeddingClip],
    codec: CodecModel,
    low_model: TokenLM,
    up_model: TokenLM | None,
    g: GuidanceConfig,
    duration_s: float,
    use_up: bool = True,
    max_batch: int = 64,
) -> list[GenerationResult]:
    """Full pipeline over a batch of clips: one result per clip.

    Every sample draws tokens from its own generator derived from
    (g.seed, its chunk), so a rerun with the same seed, clips, and settings
    reproduces every output byte for byte. up_model may be omitted (or
    use_up=False) to decode the coarse stream alone through the codec's
    coarse-only path.
    """
    if not clips:
        raise ValidationError("no clips given")
    if any(c.dim != clips[0].dim for c in clips):
        raise ValidationError("clips must share one embedding dimension")
    if any(c.frame_count != clips[0].frame_count for c in clips):
        raise ValidationError("batched generation requires a uniform frame count")
    if use_up and up_model is None:
        raise ValidationError("use_up=True requires an up model")

    n_samples = int(round(duration_s * codec.config.sample_rate))
    _, s_low, s_up = token_counts(duration_s, codec.config.sample_rate)
    if s_low > low_model.config.context_len:
        raise ValidationError(
            f"{s_low} coarse tokens exceed the model context {low_model.config.context_len}"
        )
    if use_up and s_up > up_model.config.context_len:
        raise ValidationError(
            f"{s_up} fine tokens exceed the model context {up_model.config.context_len}"
        )

    results: list[GenerationResult] = []
    for start in range(0, len(clips), max_batch):
        chunk = clips[start : start + max_batch]
        frames = torch.from_numpy(np.stack([c.frames for c in chunk]))
        chunk_g = GuidanceConfig(
            eta=g.eta, temperature=g.temperature, top_k=g.top_k,
            seed=g.seed + start,  # keeps per-sample streams chunk-invariant
        )
        try:
            low_ids = sample_low_tokens(low_model, frames, s_low, chunk_g)
        except Im2WavError as e:
            raise GenerationError("sample_low", str(e)) from e
        up_ids = None
        if use_up:
            try:
                up_ids = sample_up_tokens(up_model, frames, low_ids, chunk_g)
            except Im2WavError as e:
                raise GenerationError("sample_up", str(e)) from e
        for i in range(len(chunk)):
            low_seq = TokenSequence(
                level=2, ids=low_ids[i], downsample_factor=LEVEL_FACTORS[1]
            )
            up_seq = None
            tokens = [low_seq]
            if up_ids is not None:
                up_seq = TokenSequence(
                    level=1, ids=up_ids[i], downsample_factor=LEVEL_FACTORS[0]
                )
                tokens.append(up_seq)
            try:
                w = decode(tokens, codec, trim_to=n_samples)
            except Im2WavError as e:
                raise GenerationError("decode", str(e)) from e
            w = Waveform(np.clip(w.samples, -1.0, 1.0), w.sample_rate)
            results.append(
                GenerationResult(
                    waveform=w, low=low_seq, up=up_seq, seed=g.seed + start, config=g
                )
            )
    return results


def generate(
    clip: EmbeddingClip,
    codec: CodecModel,
    low_model: TokenLM,
    up_model: TokenLM | None,
    g: GuidanceConfig,
    duration_s: float,
) -> Waveform:
    """Single-clip pipeline; defined as the batch pipeline at batch size 1."""
    return generate_batch([clip], codec, low_model, up_model, g, duration_s)[0].waveform


def write_generation(
    result: GenerationResult, wav_path, sidecar_path=None, extra: dict | None = None
) -> None:
    """Emit the WAV plus an optional JSON sidecar for reproducibility audits."""
    write_wav(result.waveform, wav_path)
    if sidecar_path is None:
        return
    doc = {
        "seed": result.seed,
        "eta": result.config.eta,
        "temperature": result.config.temperature,
        "top_k": result.config.top_k,
        "sample_rate": result.waveform.sample_rate,
        "duration_s": result.waveform.duration,
        "tokens": {
            "low": result.low.ids.tolist(),
            "up": result.up.ids.tolist() if result.up is not None else None,
        },
    }
    if extra:
        doc.update(extra)
    sidecar_path = Path(sidecar_path)
    tmp = sidecar_path.with_name(sidecar_path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, sidecar_path)
