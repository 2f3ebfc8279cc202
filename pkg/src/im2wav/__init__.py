"""Image-conditioned audio generation at desk scale.

Pipeline: a hierarchical VQ-VAE turns waveforms into two streams of
discrete tokens (a coarse "low" stream and a fine "up" stream), two
autoregressive transformer language models generate those streams
conditioned on image embeddings, and classifier-free guidance steers
the low stream toward the conditioning. Everything trains and runs on
a single CPU against synthetic audio/embedding corpora.
"""

__version__ = "0.1.0"

from im2wav.audio import Waveform
from im2wav.conditioning import (
    EMBEDDING_DIM,
    EmbeddingClip,
    load_embedding_clip,
    write_embedding_clip,
)
from im2wav.errors import (
    DataMismatchError,
    FormatError,
    Im2WavError,
    MissingArtifactError,
    TrainingDiverged,
    ValidationError,
)
from im2wav.sampling import (
    GenerationError,
    GenerationResult,
    GuidanceConfig,
    generate,
    generate_batch,
    guide,
)

__all__ = [
    "Waveform",
    "EmbeddingClip",
    "EMBEDDING_DIM",
    "load_embedding_clip",
    "write_embedding_clip",
    "GuidanceConfig",
    "GenerationResult",
    "generate",
    "generate_batch",
    "guide",
    "Im2WavError",
    "ValidationError",
    "FormatError",
    "MissingArtifactError",
    "DataMismatchError",
    "TrainingDiverged",
    "GenerationError",
    "__version__",
]
