"""Training loops for the coarse and fine token models.

Teacher forcing over full token sequences of uniform length, AdamW with
linear warmup, global-norm gradient clipping. The coarse model trains with
conditioning dropout for guidance; the fine model always sees real
conditioning and never needs an unconditional branch.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from im2wav.errors import TrainingDiverged, ValidationError
from im2wav.lm.model import LMConfig, TokenLM, align_low_for_up, nll

from im2wav.codec.quantizer import TokenSequence


@dataclass(frozen=True)
class LMTrainConfig:
    steps: int = 600
    batch_size: int = 16
    lr: float = 3e-4
    warmup_steps: int = 500
    grad_clip: float = 1.0
    weight_decay: float = 0.01
    cfg_dropout_p: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch_size must be >= 1")
        if not 0.0 <= self.cfg_dropout_p <= 1.0:
            raise ValidationError(f"cfg_dropout_p must be in [0, 1], got {self.cfg_dropout_p}")
        if self.warmup_steps < 1:
            raise ValidationError("warmup_steps must be >= 1")


@dataclass
class LMExample:
    """One training clip: its token streams plus the image-embedding frames."""

    low_ids: np.ndarray  # (S_low,) int64
    up_ids: np.ndarray | None  # (S_up,) int64, S_up = 4 * S_low
    frames: np.ndarray  # (M, frame_dim) float32

    def __post_init__(self):
        self.low_ids = np.asarray(self.low_ids, dtype=np.int64)
        if self.up_ids is not None:
            self.up_ids = np.asarray(self.up_ids, dtype=np.int64)
            if len(self.up_ids) != 4 * len(self.low_ids):
                raise ValidationError(
                    f"fine stream length {len(self.up_ids)} != 4 x coarse {len(self.low_ids)}"
                )
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValidationError("frames must be a nonempty (M, d) matrix")


@dataclass
class LMTrainResult:
    curves: list[float]  # per-step mean nll
    steps_run: int
    final_nll: float


def _align_indices(tokens_total: int, frame_count: int) -> np.ndarray:
    # floor(s * M / S), clamped: same map as the single-token alignment op.
    idx = (np.arange(tokens_total) * frame_count) // tokens_total
    return np.minimum(idx, frame_count - 1)


def _validate_examples(
    examples: list[LMExample], model: TokenLM
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Uniform-length stacking: (targets, frames_all, low_aligned or None)."""
    cfg = model.config
    if not examples:
        raise ValidationError("empty training set")
    m_frames = examples[0].frames.shape[0]
    lengths = set()
    for i, ex in enumerate(examples):
        if ex.frames.shape != examples[0].frames.shape:
            raise ValidationError(f"example {i}: frame matrix shape differs from example 0")
        if cfg.level == "up" and ex.up_ids is None:
            raise ValidationError(f"example {i}: fine-level training needs up_ids")
        lengths.add(len(ex.up_ids) if cfg.level == "up" else len(ex.low_ids))
    if len(lengths) != 1:
        raise ValidationError(
            f"training requires uniform token lengths, got {sorted(lengths)}"
        )
    s = lengths.pop()
    if s > cfg.context_len:
        raise ValidationError(f"token length {s} exceeds context_len {cfg.context_len}")
    if cfg.level == "up":
        targets = np.stack([ex.up_ids for ex in examples])
        low_aligned = np.stack(
            [
                align_low_for_up(
                    TokenSequence(level=2, ids=ex.low_ids, downsample_factor=32), s
                )
                for ex in examples
            ]
        )
    else:
        targets = np.stack([ex.low_ids for ex in examples])
        low_aligned = None
    if targets.min() < 0 or targets.max() >= cfg.vocab_size:
        raise ValidationError("token id outside the model vocabulary")
    frames_all = np.stack([ex.frames for ex in examples])
    if frames_all.shape[-1] != cfg.frame_dim:
        raise ValidationError(
            f"frame dimension {frames_all.shape[-1]} != config frame_dim {cfg.frame_dim}"
        )
    del m_frames
    return targets, frames_all, low_aligned


def train_lm(
    model: TokenLM,
    examples: list[LMExample],
    cfg: LMTrainConfig,
) -> LMTrainResult:
    """Train in place; per-step nll curve returned. Seeded and reproducible.

    Conditioning dropout (coarse level only) independently replaces each
    sample's aggregated vector and per-token frames by the learned nulls.
    A non-finite loss aborts with the last finite parameter snapshot.
    """
    mcfg = model.config
    targets_all, frames_all, low_all = _validate_examples(examples, model)
    n, s = targets_all.shape
    m_frames = frames_all.shape[1]

    means_all = frames_all.mean(axis=1)  # (N, frame_dim)
    align_idx = _align_indices(s, m_frames)

    ss = np.random.SeedSequence(cfg.seed)
    rng_batch, rng_drop = [np.random.Generator(np.random.PCG64(q)) for q in ss.spawn(2)]

    dtype = next(model.parameters()).dtype
    targets_t = torch.from_numpy(targets_all)
    means_t = torch.from_numpy(means_all).to(dtype)
    frames_t = torch.from_numpy(frames_all).to(dtype)
    low_t = torch.from_numpy(low_all) if low_all is not None else None

    decay, no_decay = [], []
    for p in model.parameters():
        (decay if p.ndim >= 2 else no_decay).append(p)
    opt = torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.lr,
    )

    model.train()
    curves: list[float] = []
    last_good: dict | None = None
    use_dropout = mcfg.level == "low" and cfg.cfg_dropout_p > 0

    for step in range(cfg.steps):
        lr_now = cfg.lr * min(1.0, (step + 1) / cfg.warmup_steps)
        for group in opt.param_groups:
            group["lr"] = lr_now

        idx = torch.from_numpy(rng_batch.integers(0, n, size=cfg.batch_size))
        tokens = targets_t[idx]
        null_mask = None
        if use_dropout:
            null_mask = torch.from_numpy(
                rng_drop.random(cfg.batch_size) < cfg.cfg_dropout_p
            )
        y = model.condition_from_means(means_t[idx], null_mask)
        per_token = None
        if mcfg.use_every_token_frames:
            per_token = frames_t[idx][:, align_idx]
            per_token = model.frames_with_null(per_token, null_mask)
        low_tokens = low_t[idx] if low_t is not None else None

        logits = model(tokens, y, per_token_frames=per_token, low_tokens=low_tokens)
        loss = nll(logits, tokens)

        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"token-model loss became non-finite at step {step}",
                step=step,
                last_good_state=last_good,
            )
        # Snapshot the parameters that produced this finite loss, before the
        # optimizer mutates them.
        last_good = copy.deepcopy(model.state_dict())

        opt.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()

        curves.append(float(loss.detach()))

    model.eval()
    return LMTrainResult(curves=curves, steps_run=cfg.steps, final_nll=curves[-1])
