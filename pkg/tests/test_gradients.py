"""Analytic gradients vs. central finite differences, in double precision.

The codec check freezes the quantization assignment (offsets and commitment
targets captured at the evaluation point) so the training loss becomes an
ordinary differentiable function of the parameters; within the capture
neighborhood the frozen forward equals the straight-through forward exactly.
"""

import numpy as np
import pytest
import torch

from conftest import make_clip
from im2wav.codec.losses import STFTConfig, spectral_loss_t
from im2wav.codec.model import CodecConfig, CodecModel
from im2wav.lm.model import LMConfig, TokenLM, nll

EPS = 1e-5
REL_TOL = 1e-4


def central_difference_check(params, loss_fn) -> float:
    """Max relative error between autograd and central differences.

    Relative error uses max(|fd|, |analytic|, 1) as the denominator, so the
    bound acts as an absolute tolerance for near-zero gradients.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + EPS
                hi = loss_fn().item()
                flat[i] = orig - EPS
                lo = loss_fn().item()
                flat[i] = orig
                fd = (hi - lo) / (2 * EPS)
                an = g.view(-1)[i].item()
                rel = abs(fd - an) / max(abs(fd), abs(an), 1.0)
                worst = max(worst, rel)
    return worst


def codec_fd_worst() -> tuple[float, int]:
    """(worst relative error, parameter count) for the small codec setup."""
    cfg = CodecConfig(
        sample_rate=2000,
        channels=1,
        n_res_blocks=0,
        codebook_size=2,
        code_dim=1,
        stft_window_sizes=(16, 32),
    )
    codec = CodecModel(cfg)
    codec.reset_parameters(torch.Generator().manual_seed(0))
    codec.double()
    n_params = sum(p.numel() for p in codec.parameters())

    x = torch.from_numpy(
        np.random.Generator(np.random.PCG64(1)).uniform(-0.8, 0.8, (1, 64))
    )
    frozen = codec.capture_frozen(x)
    stft = STFTConfig(window_sizes=cfg.stft_window_sizes)
    beta = cfg.commitment_beta

    def loss_fn():
        out = codec.forward(x, frozen=frozen)
        recon = (out.x_hat - x).pow(2).mean()
        spec = spectral_loss_t(x, out.x_hat, stft)
        commit = torch.stack(list(out.commitments)).mean()
        return recon + spec + beta * commit

    return central_difference_check(list(codec.parameters()), loss_fn), n_params


def lm_fd_worst() -> tuple[float, int]:
    """(worst relative error, parameter count) for the small token-model setup."""
    cfg = LMConfig(
        level="low",
        context_len=8,
        n_layers=1,
        hidden_dim=8,
        n_heads=2,
        vocab_size=5,
        conditioning_dim=4,
        frame_dim=6,
    )
    lm = TokenLM(cfg)
    lm.reset_parameters(torch.Generator().manual_seed(0))
    lm.double()
    n_params = sum(p.numel() for p in lm.parameters())

    rng = np.random.Generator(np.random.PCG64(2))
    targets = torch.from_numpy(rng.integers(0, 5, size=(2, 8)))
    clip_mean = torch.from_numpy(rng.standard_normal((2, 6)))
    per_token = torch.from_numpy(rng.standard_normal((2, 8, 6)))

    def loss_fn():
        y = lm.condition_from_means(clip_mean)
        logits = lm.forward(targets, y, per_token_frames=per_token)
        return nll(logits, targets)

    return central_difference_check(list(lm.parameters()), loss_fn), n_params


def test_codec_gradients_match_finite_differences():
    worst, n_params = codec_fd_worst()
    assert n_params <= 100, f"codec FD model has {n_params} params"
    assert worst < REL_TOL, f"worst relative error {worst:.3e}"


def test_lm_gradients_match_finite_differences():
    worst, n_params = lm_fd_worst()
    assert n_params <= 2000, f"LM FD model has {n_params} params"
    assert worst < REL_TOL, f"worst relative error {worst:.3e}"
