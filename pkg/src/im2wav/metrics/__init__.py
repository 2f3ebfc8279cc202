from im2wav.metrics.evaluate import build_report, evaluate_sets, write_report
from im2wav.metrics.gaussian import (
    FeatureExtractor,
    GaussianStats,
    extract_features,
    fad,
    fit_gaussian,
    frechet_distance,
)
from im2wav.metrics.scores import ClassPosterior, accuracy, clip_score, paired_kl
from im2wav.metrics.toy_classifier import (
    ToyClassifierConfig,
    ToyJudge,
    train_toy_classifier,
)

__all__ = [
    "ClassPosterior",
    "FeatureExtractor",
    "GaussianStats",
    "ToyClassifierConfig",
    "ToyJudge",
    "accuracy",
    "build_report",
    "clip_score",
    "evaluate_sets",
    "extract_features",
    "fad",
    "fit_gaussian",
    "frechet_distance",
    "paired_kl",
    "train_toy_classifier",
    "write_report",
]
