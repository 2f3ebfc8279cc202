from im2wav.codec.losses import CodecLossReport, LossWeights, STFTConfig, codec_loss, spectral_loss
from im2wav.codec.model import (
    LEVEL_FACTORS,
    LEVEL_NAMES,
    MAX_DOWNSAMPLE,
    CodecConfig,
    CodecModel,
    decode,
    encode,
    load_codec,
    reconstruct,
    save_codec,
    tokenize,
)
from im2wav.codec.quantizer import (
    Assignments,
    Codebook,
    LatentSequence,
    TokenSequence,
    ema_update,
    quantize,
)
from im2wav.codec.training import CodecTrainConfig, codebook_utilization, train_codec

__all__ = [
    "CodecConfig",
    "CodecModel",
    "CodecLossReport",
    "CodecTrainConfig",
    "LossWeights",
    "STFTConfig",
    "LatentSequence",
    "TokenSequence",
    "Codebook",
    "Assignments",
    "LEVEL_FACTORS",
    "LEVEL_NAMES",
    "MAX_DOWNSAMPLE",
    "encode",
    "decode",
    "quantize",
    "ema_update",
    "reconstruct",
    "spectral_loss",
    "codec_loss",
    "train_codec",
    "codebook_utilization",
    "save_codec",
    "load_codec",
]
