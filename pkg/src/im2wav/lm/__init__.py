from im2wav.lm.model import (
    BOS_OFFSET,
    DecodingSession,
    LMConfig,
    TokenLM,
    align_low_for_up,
    load_lm,
    nll,
    save_lm,
)
from im2wav.lm.training import LMExample, LMTrainConfig, LMTrainResult, train_lm

__all__ = [
    "BOS_OFFSET",
    "DecodingSession",
    "LMConfig",
    "TokenLM",
    "LMExample",
    "LMTrainConfig",
    "LMTrainResult",
    "align_low_for_up",
    "load_lm",
    "nll",
    "save_lm",
    "train_lm",
]
