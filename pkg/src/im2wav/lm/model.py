"""Autoregressive Transformer decoders over discrete audio tokens.

Two instances are used: a coarse-level model conditioned on the aggregated
clip vector (optionally plus a per-token aligned frame feature), and a
fine-level model conditioned on the clip vector plus the coarse tokens at
the same temporal positions. Both are dense-attention, pre-norm decoders
trained by teacher forcing with a dedicated BOS token.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from im2wav.checkpoint import LM_MAGIC, load_checkpoint, save_checkpoint
from im2wav.codec.quantizer import TokenSequence
from im2wav.conditioning import EMBEDDING_DIM, AggregatorMLP, NullCondition
from im2wav.errors import ValidationError

BOS_OFFSET = 0  # BOS id is vocab_size + BOS_OFFSET, i.e. one past the real vocab

_UP_RATIO = 4  # fine tokens per coarse token (downsample factors 32 / 8)


@dataclass(frozen=True)
class LMConfig:
    level: str = "low"  # "low" (coarse) or "up" (fine)
    context_len: int = 256
    n_layers: int = 4
    hidden_dim: int = 256
    n_heads: int = 4
    vocab_size: int = 2048
    conditioning_dim: int = 256
    frame_dim: int = EMBEDDING_DIM
    use_every_token_frames: bool = True
    low_vocab_size: int = 0  # fine level only: coarse codebook size
    low_code_dim: int = 0  # fine level only: coarse code vector width

    def __post_init__(self):
        if self.level not in ("low", "up"):
            raise ValidationError(f"level must be 'low' or 'up', got {self.level!r}")
        if self.context_len < 1:
            raise ValidationError("context_len must be >= 1")
        if self.vocab_size < 2:
            raise ValidationError("vocab_size must be >= 2")
        if self.hidden_dim % self.n_heads != 0:
            raise ValidationError(
                f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.level == "up":
            if self.use_every_token_frames:
                raise ValidationError(
                    "the fine-level model conditions on clip vector and coarse tokens, "
                    "not per-token frames"
                )
            if self.low_vocab_size < 2 or self.low_code_dim < 1:
                raise ValidationError(
                    "fine-level model needs low_vocab_size >= 2 and low_code_dim >= 1"
                )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LMConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown LM config keys: {sorted(unknown)}")
        return cls(**d)


class CausalSelfAttention(nn.Module):
    def __init__(self, hidden_dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = hidden_dim // n_heads
        self.qkv = nn.Linear(hidden_dim, 3 * hidden_dim)
        self.proj = nn.Linear(hidden_dim, hidden_dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, s, _ = x.shape
        return x.view(b, s, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q, k, v = self._split(q), self._split(k), self._split(v)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        s = x.shape[1]
        mask = torch.ones(s, s, dtype=torch.bool, device=x.device).tril()
        att = att.masked_fill(~mask, float("-inf"))
        out = torch.softmax(att, dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(x.shape))

    def forward_step(self, x: torch.Tensor, cache: dict) -> torch.Tensor:
        """x: (B, 1, H); writes into the session's preallocated KV cache."""
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q, k, v = self._split(q), self._split(k), self._split(v)
        i = cache["len"]
        cache["k"][:, :, i : i + 1] = k
        cache["v"][:, :, i : i + 1] = v
        cache["len"] = i + 1
        ks = cache["k"][:, :, : i + 1]
        vs = cache["v"][:, :, : i + 1]
        att = (q @ ks.transpose(-2, -1)) / math.sqrt(self.head_dim)
        out = torch.softmax(att, dim=-1) @ vs
        return self.proj(out.transpose(1, 2).reshape(x.shape))


class Block(nn.Module):
    def __init__(self, hidden_dim: int, n_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(hidden_dim)
        self.attn = CausalSelfAttention(hidden_dim, n_heads)
        self.ln2 = nn.LayerNorm(hidden_dim)
        self.mlp = nn.Sequential(
            nn.Linear(hidden_dim, 4 * hidden_dim),
            nn.GELU(),
            nn.Linear(4 * hidden_dim, hidden_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))

    def forward_step(self, x: torch.Tensor, cache: dict) -> torch.Tensor:
        x = x + self.attn.forward_step(self.ln1(x), cache)
        return x + self.mlp(self.ln2(x))


class TokenLM(nn.Module):
    """Decoder LM over one token level, with additive conditioning.

    Every position receives the sum of: token embedding (BOS at position 0),
    learned positional embedding of the token offset, projected aggregated
    clip vector, and, depending on the level, a projected aligned frame
    vector or the projected coarse-code vector at the same position.
    """

    def __init__(self, config: LMConfig, low_codes: np.ndarray | None = None):
        super().__init__()
        self.config = config
        c = config
        self.tok_emb = nn.Embedding(c.vocab_size + 1, c.hidden_dim)  # +1: BOS
        self.pos_emb = nn.Embedding(c.context_len, c.hidden_dim)
        self.blocks = nn.ModuleList(
            [Block(c.hidden_dim, c.n_heads) for _ in range(c.n_layers)]
        )
        self.ln_f = nn.LayerNorm(c.hidden_dim)
        self.head = nn.Linear(c.hidden_dim, c.vocab_size)

        self.aggregator = AggregatorMLP(c.frame_dim, c.conditioning_dim)
        self.cond_proj = nn.Linear(c.conditioning_dim, c.hidden_dim)

        if c.level == "low":
            self.null = NullCondition(emb_dim=c.frame_dim, cond_dim=c.conditioning_dim)
        else:
            self.null = None
        if c.use_every_token_frames:
            self.frame_proj = nn.Linear(c.frame_dim, c.hidden_dim)
        else:
            self.frame_proj = None
        if c.level == "up":
            if low_codes is None:
                low_codes = np.zeros((c.low_vocab_size, c.low_code_dim), dtype=np.float32)
            if low_codes.shape != (c.low_vocab_size, c.low_code_dim):
                raise ValidationError(
                    f"low code matrix shape {low_codes.shape} does not match config "
                    f"({c.low_vocab_size}, {c.low_code_dim})"
                )
            # Frozen codec codebook: the conditioning lookup table, not a parameter.
            self.register_buffer("low_codes", torch.from_numpy(np.ascontiguousarray(low_codes)))
            self.low_proj = nn.Linear(c.low_code_dim, c.hidden_dim)
        else:
            self.low_codes = None
            self.low_proj = None

    @property
    def bos_id(self) -> int:
        return self.config.vocab_size + BOS_OFFSET

    def reset_parameters(self, generator: torch.Generator | None = None):
        """Deterministic init from an explicit generator (iteration order is
        the registration order of named_parameters, which is fixed)."""
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.startswith("null."):
                    continue  # NullCondition.reset handles its own scale
                if "ln" in name or name.endswith(".bias"):
                    if name.endswith(".weight"):
                        p.fill_(1.0)
                    else:
                        p.zero_()
                elif p.ndim >= 2:
                    std = (1.0 / p.shape[-1]) ** 0.5
                    p.copy_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * std)
                else:
                    p.zero_()
        if self.null is not None:
            self.null.reset(generator)

    # -- conditioning assembly -------------------------------------------

    def condition_from_means(
        self, frame_mean: torch.Tensor, null_mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """(B, frame_dim) clip-mean vectors -> (B, conditioning_dim) y-tilde.

        Rows flagged by null_mask bypass the aggregator entirely and take the
        learned null vector, so gradients reach the null embedding exactly on
        the steps where dropout fired.
        """
        if frame_mean.ndim != 2 or frame_mean.shape[1] != self.config.frame_dim:
            raise ValidationError(
                f"frame_mean shape {tuple(frame_mean.shape)} does not match "
                f"frame_dim {self.config.frame_dim}"
            )
        y = self.aggregator.from_mean(frame_mean)
        if null_mask is not None:
            if self.null is None:
                raise ValidationError("model has no null embedding; cannot drop conditioning")
            y = torch.where(null_mask.view(-1, 1), self.null.null_y.to(y.dtype), y)
        return y

    def frames_with_null(
        self, frames: torch.Tensor, null_mask: torch.Tensor | None
    ) -> torch.Tensor:
        """Replace per-token frame rows of dropped samples by the null frame."""
        if null_mask is None:
            return frames
        if self.null is None:
            raise ValidationError("model has no null embedding; cannot drop conditioning")
        return torch.where(
            null_mask.view(-1, 1, 1), self.null.null_f.to(frames.dtype), frames
        )

    def _cond_track(
        self,
        batch: int,
        length: int,
        y_tilde: torch.Tensor,
        per_token_frames: torch.Tensor | None,
        low_tokens: torch.Tensor | None,
    ) -> torch.Tensor:
        """Additive (B, S, H) conditioning stream shared by both decode paths."""
        c = self.config
        if length > c.context_len:
            raise ValidationError(
                f"sequence length {length} exceeds context_len {c.context_len}"
            )
        if y_tilde.shape != (batch, c.conditioning_dim):
            raise ValidationError(
                f"y_tilde shape {tuple(y_tilde.shape)} != ({batch}, {c.conditioning_dim})"
            )
        pos = torch.arange(length, device=y_tilde.device)
        track = self.pos_emb(pos).unsqueeze(0) + self.cond_proj(y_tilde).unsqueeze(1)
        if c.use_every_token_frames:
            if per_token_frames is None:
                raise ValidationError("config requires per-token frames, none given")
            if per_token_frames.shape != (batch, length, c.frame_dim):
                raise ValidationError(
                    f"per-token frames shape {tuple(per_token_frames.shape)} != "
                    f"({batch}, {length}, {c.frame_dim})"
                )
            track = track + self.frame_proj(per_token_frames)
        elif per_token_frames is not None:
            raise ValidationError("per-token frames given but config does not use them")
        if c.level == "up":
            if low_tokens is None:
                raise ValidationError("fine-level model requires aligned coarse tokens")
            if low_tokens.shape != (batch, length):
                raise ValidationError(
                    f"coarse token shape {tuple(low_tokens.shape)} != ({batch}, {length})"
                )
            if low_tokens.numel() and (
                low_tokens.min() < 0 or low_tokens.max() >= c.low_vocab_size
            ):
                raise ValidationError("coarse conditioning token out of range")
            track = track + self.low_proj(self.low_codes.to(track.dtype)[low_tokens])
        elif low_tokens is not None:
            raise ValidationError("coarse tokens given but model is coarse-level")
        return track

    # -- decode paths ------------------------------------------------------

    def forward(
        self,
        tokens: torch.Tensor,
        y_tilde: torch.Tensor,
        per_token_frames: torch.Tensor | None = None,
        low_tokens: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Teacher forcing: (B, S) target tokens -> (B, S, K) logits.

        Position s predicts tokens[:, s] from BOS plus tokens[:, :s], so the
        input stream is the target stream shifted right through BOS.
        """
        if tokens.ndim != 2:
            raise ValidationError(f"tokens must be (B, S), got {tuple(tokens.shape)}")
        b, s = tokens.shape
        if s < 1:
            raise ValidationError("empty token sequence")
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise ValidationError(
                f"token id outside [0, {self.config.vocab_size})"
            )
        bos = torch.full((b, 1), self.bos_id, dtype=tokens.dtype, device=tokens.device)
        inputs = torch.cat([bos, tokens[:, :-1]], dim=1)
        track = self._cond_track(b, s, y_tilde, per_token_frames, low_tokens)
        h = self.tok_emb(inputs) + track
        for block in self.blocks:
            h = block(h)
        return self.head(self.ln_f(h))

    def start_session(
        self,
        batch: int,
        y_tilde: torch.Tensor,
        total_len: int,
        per_token_frames: torch.Tensor | None = None,
        low_tokens: torch.Tensor | None = None,
    ) -> "DecodingSession":
        track = self._cond_track(batch, total_len, y_tilde, per_token_frames, low_tokens)
        return DecodingSession(self, track)


class DecodingSession:
    """Incremental decoding state: per-layer KV caches plus the precomputed
    conditioning track. One session is exclusive to one decode; the model
    itself stays immutable and shareable."""

    def __init__(self, model: TokenLM, cond_track: torch.Tensor):
        self.model = model
        self.cond_track = cond_track
        b, s, _ = cond_track.shape
        c = model.config
        head_dim = c.hidden_dim // c.n_heads
        self.caches: list[dict] = [
            {
                "k": torch.zeros(b, c.n_heads, s, head_dim, dtype=cond_track.dtype),
                "v": torch.zeros(b, c.n_heads, s, head_dim, dtype=cond_track.dtype),
                "len": 0,
            }
            for _ in model.blocks
        ]
        self.pos = 0

    @property
    def remaining(self) -> int:
        return self.cond_track.shape[1] - self.pos

    def step(self, prev_tokens: torch.Tensor | None) -> torch.Tensor:
        """Advance one position; prev_tokens is None exactly at the start.

        Returns (B, K) logits for the token at the current position.
        """
        m = self.model
        b = self.cond_track.shape[0]
        if self.remaining <= 0:
            raise ValidationError("decoding session exhausted its conditioning track")
        if prev_tokens is None:
            if self.pos != 0:
                raise ValidationError("BOS step only valid at position 0")
            ids = torch.full((b,), m.bos_id, dtype=torch.long, device=self.cond_track.device)
        else:
            if prev_tokens.shape != (b,):
                raise ValidationError(
                    f"prev_tokens shape {tuple(prev_tokens.shape)} != ({b},)"
                )
            if self.pos == 0:
                raise ValidationError("first step must be the BOS step (prev_tokens=None)")
            ids = prev_tokens
        h = m.tok_emb(ids).unsqueeze(1) + self.cond_track[:, self.pos : self.pos + 1]
        for block, cache in zip(m.blocks, self.caches):
            h = block.forward_step(h, cache)
        self.pos += 1
        return m.head(m.ln_f(h)).squeeze(1)


def nll(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood over all positions.

    logits: (..., K); targets: same leading shape, integer ids in [0, K).
    """
    if logits.shape[:-1] != targets.shape:
        raise ValidationError(
            f"logits {tuple(logits.shape)} do not align with targets {tuple(targets.shape)}"
        )
    k = logits.shape[-1]
    if targets.numel() == 0:
        raise ValidationError("empty target sequence")
    if targets.min() < 0 or targets.max() >= k:
        raise ValidationError(f"target id outside [0, {k})")
    logp = F.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -picked.mean()


def align_low_for_up(z: TokenSequence, up_len: int) -> np.ndarray:
    """Repeat each coarse token 4x so fine position s sees the coarse token
    covering the same time span. up_len must equal 4x the coarse length."""
    if z.downsample_factor != 32:
        raise ValidationError(
            f"expected the coarse level (factor 32), got factor {z.downsample_factor}"
        )
    if up_len != _UP_RATIO * len(z):
        raise ValidationError(
            f"fine length {up_len} != {_UP_RATIO} x coarse length {len(z)}"
        )
    return np.repeat(z.ids, _UP_RATIO)


def save_lm(model: TokenLM, path) -> None:
    sections = {
        name: t.detach().cpu().to(torch.float32).numpy()
        for name, t in model.state_dict().items()
    }
    save_checkpoint(path, LM_MAGIC, model.config.to_dict(), sections)


def load_lm(path) -> TokenLM:
    config, sections = load_checkpoint(path, LM_MAGIC)
    cfg = LMConfig.from_dict(config)
    model = TokenLM(cfg)
    state = {name: torch.from_numpy(arr) for name, arr in sections.items()}
    model.load_state_dict(state)
    return model
