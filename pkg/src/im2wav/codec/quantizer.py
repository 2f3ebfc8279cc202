"""Vector quantization: nearest-neighbor codebooks with EMA learning.

Codebooks are learned by exponential moving averages of assignment counts
and assigned-latent sums rather than by a gradient loss term; dead codes
are reseeded from batch latents after going unused for a configured number
of steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from im2wav.errors import ValidationError


@dataclass
class LatentSequence:
    """Continuous encoder output at one hierarchy level."""

    level: int  # 1-based; lower levels are longer sequences
    vectors: np.ndarray  # (S, d)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ValidationError(f"latent vectors must be (S>=1, d), got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValidationError("latent sequence contains non-finite values")


@dataclass
class TokenSequence:
    """Discrete codebook indices at one hierarchy level."""

    level: int
    ids: np.ndarray  # (S,) int64
    downsample_factor: int

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if self.ids.size < 1:
            raise ValidationError("token sequence must be nonempty")
        if np.any(self.ids < 0):
            raise ValidationError("token ids must be nonnegative")
        if self.downsample_factor < 1:
            raise ValidationError(f"downsample_factor must be >= 1, got {self.downsample_factor}")

    def __len__(self) -> int:
        return int(self.ids.size)


@dataclass
class Assignments:
    """Latents and the ids they were quantized to, from one quantize call."""

    latents: np.ndarray  # (N, d)
    ids: np.ndarray  # (N,)


class Codebook(nn.Module):
    """One level's codebook plus its EMA statistics.

    Buffers:
      codes       (K, d)  current code vectors
      usage       (K,)    EMA of per-code assignment counts
      ema_sums    (K, d)  EMA of per-code assigned-latent sums
      unused_steps (K,)   consecutive update steps with zero assignments
    """

    def __init__(
        self,
        level: int,
        n_codes: int,
        dim: int,
        decay: float = 0.99,
        eps: float = 1e-5,
        dead_code_steps: int = 256,
        downsample_factor: int = 1,
    ):
        super().__init__()
        if n_codes < 2:
            raise ValidationError(f"codebook needs at least 2 codes, got {n_codes}")
        if dim < 1:
            raise ValidationError(f"code dimension must be >= 1, got {dim}")
        if not 0.0 < decay <= 1.0:
            raise ValidationError(f"decay must be in (0, 1], got {decay}")
        self.level = level
        self.n_codes = n_codes
        self.dim = dim
        self.downsample_factor = downsample_factor
        self.decay = decay
        self.eps = eps
        self.dead_code_steps = dead_code_steps
        self.register_buffer("codes", torch.zeros(n_codes, dim))
        self.register_buffer("usage", torch.ones(n_codes))
        self.register_buffer("ema_sums", torch.zeros(n_codes, dim))
        self.register_buffer("unused_steps", torch.zeros(n_codes))

    def reset(self, generator: torch.Generator | None = None):
        """Random init; EMA sums start consistent with unit usage so that
        an update with decay=1 leaves the codes bit-identical."""
        with torch.no_grad():
            self.codes.copy_(
                torch.randn(self.codes.shape, generator=generator, dtype=self.codes.dtype)
            )
            self.usage.fill_(1.0)
            self.ema_sums.copy_(self.codes)
            self.unused_steps.zero_()

    def init_from_latents(self, flat: torch.Tensor, rng: np.random.Generator):
        """Seed codes from observed latents (sampled with replacement).

        Starting the codebook inside the latent distribution instead of at
        random normals makes many more codes win assignments early, which
        EMA updates then refine.
        """
        if flat.ndim != 2 or flat.shape[1] != self.dim:
            raise ValidationError(
                f"latents have dimension {tuple(flat.shape)}, codebook expects (N, {self.dim})"
            )
        if flat.shape[0] == 0:
            raise ValidationError("cannot initialize a codebook from an empty batch")
        picks = rng.integers(0, flat.shape[0], size=self.n_codes)
        with torch.no_grad():
            seeds = flat.detach().to(self.codes.dtype)[torch.from_numpy(picks)]
            # Break exact duplicates when there are fewer latents than codes.
            noise = torch.from_numpy(
                rng.standard_normal(seeds.shape).astype(np.float32)
            ).to(seeds.dtype)
            self.codes.copy_(seeds + 1e-4 * noise)
            self.usage.fill_(1.0)
            self.ema_sums.copy_(self.codes)
            self.unused_steps.zero_()

    def nearest(self, h: torch.Tensor) -> torch.Tensor:
        """Nearest code id per row of h (N, d); ties break to the lowest index.

        Distances are computed directly as sum((h - c)^2) so that exact ties
        (e.g. duplicated codes) stay exact; chunked to bound memory.
        """
        if h.ndim != 2 or h.shape[1] != self.dim:
            raise ValidationError(
                f"latents have dimension {tuple(h.shape)}, codebook expects (N, {self.dim})"
            )
        if h.shape[0] == 0:
            raise ValidationError("cannot quantize an empty sequence")
        codes = self.codes.to(h.dtype)
        out = torch.empty(h.shape[0], dtype=torch.long, device=h.device)
        chunk = max(1, (1 << 24) // (self.n_codes * max(self.dim, 1)))
        for start in range(0, h.shape[0], chunk):
            block = h[start : start + chunk]
            d2 = (block.unsqueeze(1) - codes.unsqueeze(0)).pow(2).sum(dim=-1)
            out[start : start + block.shape[0]] = torch.argmin(d2, dim=1)
        return out

    def lookup(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.n_codes):
            raise ValidationError(
                f"token id outside [0, {self.n_codes}) for level {self.level}"
            )
        return self.codes[ids]

    def quantize_ste(self, h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Training path: (ids, straight-through quantized latents, raw commitment).

        The quantized output carries the encoder gradient unchanged; the
        commitment term is the mean squared L2 norm between latents and their
        (detached) codes, unweighted.
        """
        flat = h.reshape(-1, self.dim)
        ids = self.nearest(flat.detach())
        codes = self.codes.to(h.dtype)[ids].reshape(h.shape)
        zq = h + (codes - h).detach()
        commit = (h - codes.detach()).pow(2).sum(dim=-1).mean()
        return ids.reshape(h.shape[:-1]), zq, commit

    @torch.no_grad()
    def ema_step(
        self,
        latents: torch.Tensor,
        ids: torch.Tensor,
        decay: float | None = None,
        rng: np.random.Generator | None = None,
    ):
        """One EMA update from a batch of assignments, then dead-code reseeding."""
        decay = self.decay if decay is None else decay
        if not 0.0 < decay <= 1.0:
            raise ValidationError(f"decay must be in (0, 1], got {decay}")
        flat = latents.reshape(-1, self.dim).to(self.codes.dtype)
        flat_ids = ids.reshape(-1)
        if flat.shape[0] == 0:
            return
        counts = torch.bincount(flat_ids, minlength=self.n_codes).to(self.codes.dtype)
        sums = torch.zeros_like(self.ema_sums)
        sums.index_add_(0, flat_ids, flat)
        self.usage.mul_(decay).add_(counts, alpha=1.0 - decay)
        self.ema_sums.mul_(decay).add_(sums, alpha=1.0 - decay)
        self.codes.copy_(self.ema_sums / self.usage.clamp(min=self.eps).unsqueeze(1))
        used = counts > 0
        self.unused_steps[used] = 0.0
        self.unused_steps[~used] += 1.0
        dead = (self.unused_steps >= self.dead_code_steps).nonzero(as_tuple=True)[0]
        if dead.numel():
            rng = rng or np.random.default_rng(0)
            picks = rng.integers(0, flat.shape[0], size=dead.numel())
            seeds = flat[torch.from_numpy(picks)]
            self.codes[dead] = seeds
            self.ema_sums[dead] = seeds
            self.usage[dead] = 1.0
            self.unused_steps[dead] = 0.0


def quantize(h: LatentSequence, cb: Codebook) -> tuple[TokenSequence, LatentSequence]:
    """Snap a latent sequence to its nearest codes.

    Returns the token ids and the quantized vectors (codebook rows). During
    training the tensor-level path in `Codebook.quantize_ste` additionally
    carries the straight-through gradient; this functional form is the
    inference contract.
    """
    if h.vectors.shape[1] != cb.dim:
        raise ValidationError(
            f"latent dimension {h.vectors.shape[1]} does not match codebook dimension {cb.dim}"
        )
    with torch.no_grad():
        t = torch.from_numpy(h.vectors)
        ids = cb.nearest(t)
        vecs = cb.lookup(ids)
    tokens = TokenSequence(
        level=h.level, ids=ids.numpy(), downsample_factor=cb.downsample_factor
    )
    return tokens, LatentSequence(level=h.level, vectors=vecs.numpy())


def ema_update(
    cb: Codebook,
    assignments: Assignments,
    decay: float | None = None,
    rng: np.random.Generator | None = None,
) -> Codebook:
    """Apply one EMA update from recorded assignments; mutates and returns cb."""
    latents = torch.from_numpy(np.asarray(assignments.latents, dtype=np.float32))
    ids = torch.from_numpy(np.asarray(assignments.ids, dtype=np.int64))
    if latents.shape[0] != ids.shape[0]:
        raise ValidationError(
            f"assignments carry {latents.shape[0]} latents but {ids.shape[0]} ids"
        )
    cb.ema_step(latents, ids, decay=decay, rng=rng)
    return cb
