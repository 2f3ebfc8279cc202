"""Shared builders for small models and corpora used across the suite."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from im2wav.audio import Waveform
from im2wav.codec.model import CodecConfig, CodecModel
from im2wav.conditioning import EMBEDDING_DIM, EmbeddingClip
from im2wav.lm.model import LMConfig, TokenLM


def make_waveform(n: int, sr: int = 2000, seed: int = 0) -> Waveform:
    rng = np.random.Generator(np.random.PCG64(seed))
    return Waveform(rng.uniform(-0.8, 0.8, size=n).astype(np.float32), sr)


def make_clip(frame_count: int = 4, seed: int = 0, dim: int = EMBEDDING_DIM) -> EmbeddingClip:
    rng = np.random.Generator(np.random.PCG64(seed))
    frames = rng.standard_normal((frame_count, dim)).astype(np.float32)
    frames /= np.linalg.norm(frames, axis=1, keepdims=True)
    return EmbeddingClip(frames=frames, source_id=f"test-{seed}")


def tiny_codec(seed: int = 0, **overrides) -> CodecModel:
    kw = dict(
        sample_rate=2000,
        channels=8,
        n_res_blocks=1,
        codebook_size=16,
        code_dim=4,
        stft_window_sizes=(32, 64),
    )
    kw.update(overrides)
    codec = CodecModel(CodecConfig(**kw))
    codec.reset_parameters(torch.Generator().manual_seed(seed))
    return codec


def tiny_lm(level: str = "low", seed: int = 0, **overrides) -> TokenLM:
    kw = dict(
        level=level,
        context_len=16,
        n_layers=2,
        hidden_dim=16,
        n_heads=2,
        vocab_size=11,
        conditioning_dim=8,
        frame_dim=EMBEDDING_DIM,
    )
    if level == "up":
        kw.update(
            context_len=64,
            use_every_token_frames=False,
            low_vocab_size=11,
            low_code_dim=4,
        )
    kw.update(overrides)
    cfg = LMConfig(**kw)
    low_codes = None
    if level == "up":
        rng = np.random.Generator(np.random.PCG64(seed + 1))
        low_codes = rng.standard_normal(
            (cfg.low_vocab_size, cfg.low_code_dim)
        ).astype(np.float32)
    lm = TokenLM(cfg, low_codes=low_codes)
    lm.reset_parameters(torch.Generator().manual_seed(seed))
    return lm


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))
