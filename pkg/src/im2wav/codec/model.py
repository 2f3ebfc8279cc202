"""Hierarchical one-dimensional VQ-VAE over waveforms.

A single encoder of five stride-2 convolution blocks produces latents at
two taps: after block 3 (fine level, 8x downsampling) and after block 5
(coarse level, 32x downsampling). Each tap has its own EMA codebook. A
single decoder mirrors the encoder; the fine-level quantized latents enter
as an additive skip at the 8x resolution, and that skip can be dropped to
decode from the coarse tokens alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from im2wav.audio import Waveform, pad_to_multiple, peak_normalize
from im2wav.checkpoint import CODEC_MAGIC, load_checkpoint, save_checkpoint
from im2wav.codec.losses import LossWeights, STFTConfig
from im2wav.codec.quantizer import Codebook, LatentSequence, TokenSequence
from im2wav.errors import ValidationError

LEVEL_FACTORS = (8, 32)
LEVEL_NAMES = ("up", "low")
MAX_DOWNSAMPLE = 32

_N_BLOCKS = 5
_TAP_BLOCKS = (3, 5)  # codebooks attach after these encoder blocks


@dataclass(frozen=True)
class CodecConfig:
    sample_rate: int = 16_000
    channels: int = 64
    n_res_blocks: int = 2
    codebook_size: int = 2048
    code_dim: int = 128
    commitment_beta: float = 0.25
    recon_weight: float = 1.0
    spectral_weight: float = 1.0
    ema_decay: float = 0.99
    ema_eps: float = 1e-5
    dead_code_steps: int = 256
    stft_window_sizes: tuple[int, ...] = (256, 512, 1024)
    stft_hop_fraction: float = 0.25
    up_dropout: float = 0.25

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.channels < 1 or self.code_dim < 1:
            raise ValidationError("channels and code_dim must be >= 1")
        if self.codebook_size < 2:
            raise ValidationError("codebook_size must be >= 2")
        if not 0.0 <= self.up_dropout < 1.0:
            raise ValidationError(f"up_dropout must be in [0, 1), got {self.up_dropout}")

    @property
    def stft(self) -> STFTConfig:
        return STFTConfig(tuple(self.stft_window_sizes), self.stft_hop_fraction)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.recon_weight, self.spectral_weight, self.commitment_beta)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stft_window_sizes"] = list(self.stft_window_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown codec config keys: {sorted(unknown)}")
        d = dict(d)
        if "stft_window_sizes" in d:
            d["stft_window_sizes"] = tuple(d["stft_window_sizes"])
        return cls(**d)


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv3 = nn.Conv1d(channels, channels, 3, padding=1)
        self.conv1 = nn.Conv1d(channels, channels, 1)

    def forward(self, x):
        return x + self.conv1(torch.relu(self.conv3(torch.relu(x))))


def _res_stack(channels: int, n: int) -> nn.Sequential:
    return nn.Sequential(*[ResBlock(channels) for _ in range(n)])


@dataclass
class CodecForward:
    """Training-path outputs for one batch."""

    x_hat: torch.Tensor  # (B, T)
    ids: list[torch.Tensor]  # per level, (B, S_l)
    latents: list[torch.Tensor]  # per level, (B, S_l, d), pre-quantization
    commitments: list[torch.Tensor]  # per level, scalar raw commitment


@dataclass
class FrozenQuantization:
    """Constant quantization offsets/targets captured at a base point.

    Substituting these for the live quantizer turns the straight-through
    estimator into an ordinary differentiable computation with the same
    value and the same gradient at the capture point, which is what a
    finite-difference check can probe.
    """

    offsets: list[torch.Tensor]  # per level, (B, S_l, d): code - latent at capture
    targets: list[torch.Tensor]  # per level, (B, S_l, d): code vectors at capture


class CodecModel(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        c, d, r = config.channels, config.code_dim, config.n_res_blocks

        self.enc_blocks = nn.ModuleList()
        in_ch = 1
        for _ in range(_N_BLOCKS):
            self.enc_blocks.append(
                nn.Sequential(nn.Conv1d(in_ch, c, 4, stride=2, padding=1), _res_stack(c, r))
            )
            in_ch = c
        self.tap_up = nn.Conv1d(c, d, 1)
        self.tap_low = nn.Conv1d(c, d, 1)

        self.codebooks = nn.ModuleList(
            [
                Codebook(
                    level=i + 1,
                    n_codes=config.codebook_size,
                    dim=d,
                    decay=config.ema_decay,
                    eps=config.ema_eps,
                    dead_code_steps=config.dead_code_steps,
                    downsample_factor=LEVEL_FACTORS[i],
                )
                for i in range(len(LEVEL_FACTORS))
            ]
        )

        self.dec_in_low = nn.Conv1d(d, c, 1)
        self.dec_in_up = nn.Conv1d(d, c, 1)
        self.dec_blocks = nn.ModuleList(
            [
                nn.Sequential(_res_stack(c, r), nn.ConvTranspose1d(c, c, 4, stride=2, padding=1))
                for _ in range(_N_BLOCKS)
            ]
        )
        self.dec_out = nn.Conv1d(c, 1, 3, padding=1)

    def reset_parameters(self, generator: torch.Generator | None = None):
        """Deterministic re-initialization from an explicit generator."""
        with torch.no_grad():
            for name, p in self.named_parameters():
                if p.ndim >= 2:
                    fan_in = p.shape[1] * (p.shape[2] if p.ndim == 3 else 1)
                    std = (1.0 / max(fan_in, 1)) ** 0.5
                    p.copy_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * std)
                else:
                    p.zero_()
        for cb in self.codebooks:
            cb.reset(generator)

    @property
    def dtype(self) -> torch.dtype:
        return self.dec_out.weight.dtype

    def encode_latents(self, x: torch.Tensor) -> list[torch.Tensor]:
        """x: (B, T) padded to a multiple of 32 -> [(B, T/8, d), (B, T/32, d)]."""
        if x.shape[-1] % MAX_DOWNSAMPLE != 0:
            raise ValidationError(
                f"input length {x.shape[-1]} is not a multiple of {MAX_DOWNSAMPLE}"
            )
        h = x.unsqueeze(1)
        latents = []
        for i, block in enumerate(self.enc_blocks, start=1):
            h = block(h)
            if i == _TAP_BLOCKS[0]:
                latents.append(self.tap_up(h).transpose(1, 2))
        latents.append(self.tap_low(h).transpose(1, 2))
        return latents

    def decode_latents(
        self,
        zq_up: torch.Tensor | None,
        zq_low: torch.Tensor,
        drop_up: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Quantized latents -> waveform (B, T). zq_up=None decodes coarse-only."""
        h = self.dec_in_low(zq_low.transpose(1, 2))
        h = self.dec_blocks[0](h)
        h = self.dec_blocks[1](h)
        if zq_up is not None:
            skip = self.dec_in_up(zq_up.transpose(1, 2))
            if drop_up is not None:
                skip = skip * (~drop_up).to(skip.dtype).view(-1, 1, 1)
            h = h + skip
        for block in self.dec_blocks[2:]:
            h = block(h)
        return torch.tanh(self.dec_out(h)).squeeze(1)

    def capture_frozen(self, x: torch.Tensor) -> FrozenQuantization:
        """Snapshot quantization offsets/targets at x for derivative checks."""
        with torch.no_grad():
            latents = self.encode_latents(x)
            offsets, targets = [], []
            for h, cb in zip(latents, self.codebooks):
                ids = cb.nearest(h.reshape(-1, cb.dim))
                codes = cb.codes.to(h.dtype)[ids].reshape(h.shape)
                offsets.append(codes - h)
                targets.append(codes)
        return FrozenQuantization(offsets=offsets, targets=targets)

    def forward(
        self,
        x: torch.Tensor,
        frozen: FrozenQuantization | None = None,
        drop_up: torch.Tensor | None = None,
    ) -> CodecForward:
        latents = self.encode_latents(x)
        ids_out, zqs, commits = [], [], []
        if frozen is None:
            for h, cb in zip(latents, self.codebooks):
                ids, zq, commit = cb.quantize_ste(h)
                ids_out.append(ids)
                zqs.append(zq)
                commits.append(commit)
        else:
            for h, off, tgt in zip(latents, frozen.offsets, frozen.targets):
                ids_out.append(torch.zeros(h.shape[:-1], dtype=torch.long))
                zqs.append(h + off)
                commits.append((h - tgt).pow(2).sum(dim=-1).mean())
        x_hat = self.decode_latents(zqs[0], zqs[1], drop_up=drop_up)
        return CodecForward(x_hat=x_hat, ids=ids_out, latents=latents, commitments=commits)


def _prepare(w: Waveform, codec: CodecModel) -> tuple[torch.Tensor, int]:
    if w.sample_rate != codec.config.sample_rate:
        raise ValidationError(
            f"waveform rate {w.sample_rate} does not match codec rate {codec.config.sample_rate}"
        )
    norm = peak_normalize(w)
    padded = pad_to_multiple(norm.samples, MAX_DOWNSAMPLE)
    return torch.from_numpy(padded).to(codec.dtype).unsqueeze(0), len(w)


def encode(w: Waveform, codec: CodecModel) -> list[LatentSequence]:
    """Waveform -> per-level latent sequences (padded to a multiple of 32)."""
    x, _ = _prepare(w, codec)
    with torch.no_grad():
        latents = codec.encode_latents(x)
    return [
        LatentSequence(level=i + 1, vectors=h.squeeze(0).to(torch.float32).numpy())
        for i, h in enumerate(latents)
    ]


def tokenize(w: Waveform, codec: CodecModel) -> list[TokenSequence]:
    """Waveform -> per-level token sequences through the codec's codebooks."""
    x, _ = _prepare(w, codec)
    with torch.no_grad():
        latents = codec.encode_latents(x)
        out = []
        for i, (h, cb) in enumerate(zip(latents, codec.codebooks)):
            ids = cb.nearest(h.reshape(-1, cb.dim))
            out.append(
                TokenSequence(
                    level=i + 1,
                    ids=ids.numpy(),
                    downsample_factor=LEVEL_FACTORS[i],
                )
            )
    return out


def decode(
    tokens: list[TokenSequence], codec: CodecModel, trim_to: int | None = None
) -> Waveform:
    """Tokens -> waveform. Accepts both levels, or only the coarse level.

    With both levels present the fine stream must be exactly 4x the coarse
    length; a coarse-only decode goes through the decoder with the fine skip
    dropped.
    """
    by_factor = {t.downsample_factor: t for t in tokens}
    if len(by_factor) != len(tokens):
        raise ValidationError("duplicate levels in token list")
    low = by_factor.get(LEVEL_FACTORS[1])
    if low is None:
        raise ValidationError(f"decode requires the coarse level (factor {LEVEL_FACTORS[1]})")
    up = by_factor.get(LEVEL_FACTORS[0])
    if up is not None and len(up) != 4 * len(low):
        raise ValidationError(
            f"inconsistent level lengths: fine {len(up)} != 4 x coarse {len(low)}"
        )
    with torch.no_grad():
        zq_low = codec.codebooks[1].lookup(torch.from_numpy(low.ids)).unsqueeze(0).to(codec.dtype)
        zq_up = None
        if up is not None:
            zq_up = codec.codebooks[0].lookup(torch.from_numpy(up.ids)).unsqueeze(0).to(codec.dtype)
        x_hat = codec.decode_latents(zq_up, zq_low).squeeze(0).to(torch.float32).numpy()
    if trim_to is not None:
        if trim_to > x_hat.shape[0]:
            raise ValidationError(f"trim_to={trim_to} exceeds decoded length {x_hat.shape[0]}")
        x_hat = x_hat[:trim_to]
    return Waveform(x_hat, codec.config.sample_rate)


def reconstruct(w: Waveform, codec: CodecModel) -> Waveform:
    """encode -> quantize -> decode, trimmed back to the input length."""
    return decode(tokenize(w, codec), codec, trim_to=len(w))


def tokens_to_json(tokens: list[TokenSequence]) -> dict:
    """Debug export: per-level id arrays as plain lists."""
    return {
        LEVEL_NAMES[t.level - 1]: {
            "downsample_factor": t.downsample_factor,
            "ids": t.ids.tolist(),
        }
        for t in tokens
    }


def save_codec(codec: CodecModel, path) -> None:
    sections = {
        name: tensor.detach().cpu().to(torch.float32).numpy()
        for name, tensor in codec.state_dict().items()
    }
    save_checkpoint(path, CODEC_MAGIC, codec.config.to_dict(), sections)


def load_codec(path) -> CodecModel:
    config, sections = load_checkpoint(path, CODEC_MAGIC)
    codec = CodecModel(CodecConfig.from_dict(config))
    state = {name: torch.from_numpy(arr) for name, arr in sections.items()}
    codec.load_state_dict(state)
    return codec
