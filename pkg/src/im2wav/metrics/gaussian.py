"""Distribution distance between real and generated audio feature sets.

Both sets are modeled as multivariate Gaussians over features from a
pluggable extractor; the score is the Frechet distance
|mu_r - mu_g|^2 + tr(Sigma_r) + tr(Sigma_g) - 2 tr(sqrt(Sigma_r Sigma_g)),
with the matrix square root evaluated through the symmetric similarity
form sqrt(Sigma_r)^T Sigma_g sqrt(Sigma_r) for numerical stability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from im2wav.audio import Waveform
from im2wav.errors import ValidationError

_SYM_TOL = 1e-8
_EIG_REJECT = -1e-8  # eigenvalues below this mean genuinely non-PSD input
_REG_EPS = 1e-6  # ridge added when fewer samples than dimensions


@dataclass(frozen=True)
class FeatureExtractor:
    """Named deterministic map from a waveform to a fixed-width vector."""

    name: str
    dimension: int
    extract: Callable[[Waveform], np.ndarray]

    def __post_init__(self):
        if self.dimension < 1:
            raise ValidationError("extractor dimension must be >= 1")


@dataclass(frozen=True)
class GaussianStats:
    mu: np.ndarray  # (d,)
    sigma: np.ndarray  # (d, d), symmetric
    n: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != (mu.shape[0], mu.shape[0]):
            raise ValidationError(
                f"inconsistent Gaussian shapes: mu {mu.shape}, sigma {sigma.shape}"
            )
        if self.n < 2:
            raise ValidationError(f"need n >= 2 samples, got {self.n}")
        asym = float(np.abs(sigma - sigma.T).max()) if sigma.size else 0.0
        if asym > _SYM_TOL:
            raise ValidationError(f"covariance asymmetry {asym:.2e} exceeds {_SYM_TOL}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def fit_gaussian(features: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased covariance, symmetrized; ridge-regularized
    with 1e-6 I when there are fewer samples than dimensions."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"features must be (n, d), got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ValidationError(f"need at least 2 feature vectors, got {n}")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (n - 1)
    sigma = (sigma + sigma.T) / 2.0
    if d > n:
        sigma = sigma + _REG_EPS * np.eye(d)
    return GaussianStats(mu=mu, sigma=sigma, n=n)


def _psd_sqrt(sigma: np.ndarray, side: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sigma)
    if vals.min() < _EIG_REJECT:
        raise ValidationError(
            f"{side} covariance is not PSD: eigenvalue {vals.min():.3e} < {_EIG_REJECT}"
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(r: GaussianStats, g: GaussianStats) -> float:
    """Symmetric in its arguments; >= 0 up to float round-off."""
    if r.dim != g.dim:
        raise ValidationError(f"dimension mismatch: {r.dim} vs {g.dim}")
    sqrt_r = _psd_sqrt(r.sigma, "first")
    inner = sqrt_r @ g.sigma @ sqrt_r
    inner = (inner + inner.T) / 2.0
    vals = np.linalg.eigh(inner)[0]
    if vals.min() < _EIG_REJECT:
        raise ValidationError(
            f"second covariance is not PSD: inner eigenvalue {vals.min():.3e}"
        )
    trace_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    diff = r.mu - g.mu
    return float(diff @ diff + np.trace(r.sigma) + np.trace(g.sigma) - 2.0 * trace_sqrt)


def extract_features(waveforms: list[Waveform], fe: FeatureExtractor) -> np.ndarray:
    """(n, d) features in input order (fixed order keeps sums reproducible)."""
    if not waveforms:
        raise ValidationError("no waveforms to extract features from")
    rows = []
    for i, w in enumerate(waveforms):
        v = np.asarray(fe.extract(w), dtype=np.float64).reshape(-1)
        if v.shape != (fe.dimension,):
            raise ValidationError(
                f"extractor {fe.name!r} returned {v.shape} for clip {i}, "
                f"expected ({fe.dimension},)"
            )
        rows.append(v)
    return np.stack(rows)


def fad(
    real: list[Waveform], generated: list[Waveform], fe: FeatureExtractor
) -> float:
    """Frechet distance between Gaussians fitted to the two feature sets."""
    return frechet_distance(
        fit_gaussian(extract_features(real, fe)),
        fit_gaussian(extract_features(generated, fe)),
    )
