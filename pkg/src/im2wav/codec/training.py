"""Training loop for the waveform codec.

One optimizer step per batch of random fixed-length crops. Codebooks are
not touched by the optimizer; they follow their own EMA updates after each
step. Non-finite losses abort with the last finite-state snapshot attached.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from im2wav.audio import Waveform, peak_normalize
from im2wav.codec.losses import CodecLossReport, assemble_report, spectral_loss_t
from im2wav.codec.model import MAX_DOWNSAMPLE, CodecModel
from im2wav.codec.quantizer import Codebook
from im2wav.errors import TrainingDiverged, ValidationError


@dataclass(frozen=True)
class CodecTrainConfig:
    steps: int = 600
    batch_size: int = 8
    crop_samples: int = 16_384
    lr: float = 3e-4
    grad_clip: float = 1.0
    seed: int = 0
    drop_up_prob: float | None = None  # None: use the model's configured rate

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch_size must be >= 1")
        if self.crop_samples % MAX_DOWNSAMPLE != 0:
            raise ValidationError(
                f"crop_samples must be a multiple of {MAX_DOWNSAMPLE}, got {self.crop_samples}"
            )


@dataclass
class CodecTrainResult:
    curves: list[CodecLossReport]
    utilization: dict[str, float]  # level name -> fraction of codes in use
    steps_run: int


def _crop_batch(
    samples: list[np.ndarray], cfg: CodecTrainConfig, rng: np.random.Generator
) -> torch.Tensor:
    idx = rng.integers(0, len(samples), size=cfg.batch_size)
    rows = []
    for i in idx:
        s = samples[int(i)]
        start = int(rng.integers(0, len(s) - cfg.crop_samples + 1))
        rows.append(s[start : start + cfg.crop_samples])
    return torch.from_numpy(np.stack(rows))


def train_codec(
    waveforms: list[Waveform],
    codec: CodecModel,
    cfg: CodecTrainConfig,
) -> CodecTrainResult:
    """Train in place; returns per-step loss curves and final code usage.

    All randomness (crop selection, up-path dropout, codebook reseeding)
    comes from generators derived from cfg.seed, so a fixed seed gives a
    bitwise-identical run.
    """
    if not waveforms:
        raise ValidationError("training corpus is empty")
    mcfg = codec.config
    for w in waveforms:
        if w.sample_rate != mcfg.sample_rate:
            raise ValidationError(
                f"corpus rate {w.sample_rate} does not match codec rate {mcfg.sample_rate}"
            )
        if len(w) < cfg.crop_samples:
            raise ValidationError(
                f"clip of {len(w)} samples is shorter than crop_samples={cfg.crop_samples}"
            )
    samples = [peak_normalize(w).samples for w in waveforms]

    ss = np.random.SeedSequence(cfg.seed)
    rng_data, rng_ema, rng_drop = [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3)]

    drop_prob = mcfg.up_dropout if cfg.drop_up_prob is None else cfg.drop_up_prob
    weights = mcfg.loss_weights
    stft = mcfg.stft
    params = [p for p in codec.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr)

    curves: list[CodecLossReport] = []
    last_good: dict | None = None
    codebooks_seeded = False

    for step in range(cfg.steps):
        x = _crop_batch(samples, cfg, rng_data).to(codec.dtype)
        if not codebooks_seeded:
            with torch.no_grad():
                for h, cb in zip(codec.encode_latents(x), codec.codebooks):
                    cb.init_from_latents(h.reshape(-1, cb.dim), rng_ema)
            codebooks_seeded = True

        drop_up = None
        if drop_prob > 0:
            drop_up = torch.from_numpy(rng_drop.random(cfg.batch_size) < drop_prob)

        out = codec(x, drop_up=drop_up)
        recon_t = (out.x_hat - x).pow(2).mean()
        spec_t = spectral_loss_t(x, out.x_hat, stft)
        commit_t = torch.stack(out.commitments).mean()
        total_t = (
            weights.reconstruction * recon_t
            + weights.spectral * spec_t
            + weights.commitment_beta * commit_t
        )

        if not torch.isfinite(total_t):
            raise TrainingDiverged(
                f"codec loss became non-finite at step {step}",
                step=step,
                last_good_state=last_good,
            )
        # Snapshot the parameters that produced this finite loss, before the
        # optimizer mutates them.
        last_good = copy.deepcopy(codec.state_dict())

        opt.zero_grad(set_to_none=True)
        total_t.backward()
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        opt.step()

        with torch.no_grad():
            for h, ids, cb in zip(out.latents, out.ids, codec.codebooks):
                cb.ema_step(h.reshape(-1, cb.dim), ids.reshape(-1), mcfg.ema_decay, rng_ema)

        curves.append(
            assemble_report(
                recon=float(recon_t.detach().to(torch.float64)),
                spec=float(spec_t.detach().to(torch.float64)),
                commit_raw=float(commit_t.detach().to(torch.float64)),
                weights=weights,
            )
        )

    return CodecTrainResult(
        curves=curves,
        utilization=codebook_utilization(codec, waveforms),
        steps_run=cfg.steps,
    )


def codebook_utilization(codec: CodecModel, waveforms: list[Waveform]) -> dict[str, float]:
    """Fraction of each codebook assigned at least once over the given clips."""
    from im2wav.codec.model import LEVEL_NAMES, tokenize

    if not waveforms:
        raise ValidationError("utilization needs at least one clip")
    used: list[set[int]] = [set() for _ in codec.codebooks]
    for w in waveforms:
        for i, tok in enumerate(tokenize(w, codec)):
            used[i].update(int(t) for t in np.unique(tok.ids))
    return {
        LEVEL_NAMES[i]: len(used[i]) / cb.n_codes for i, cb in enumerate(codec.codebooks)
    }
