"""Preset configurations and JSON config handling for the command line.

A run configuration is a plain dict of named sections. Resolution order:
preset defaults, then the --config file, then individual flag overrides.
Unknown sections or keys are rejected before any compute starts.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from im2wav.codec.model import CodecConfig
from im2wav.codec.training import CodecTrainConfig
from im2wav.errors import ValidationError
from im2wav.lm.model import LMConfig
from im2wav.lm.training import LMTrainConfig
from im2wav.metrics.toy_classifier import ToyClassifierConfig
from im2wav.sampling import GuidanceConfig

_PRESETS: dict[str, dict] = {
    # Desk-scale preset: minutes-scale end-to-end runs on one CPU core.
    "toy": {
        "dataset": {
            "n_classes": 3,
            "n_per_class": 200,
            "duration_s": 1.0,
            "sample_rate": 2000,
            "base_seed": 0,
            "frame_count": 5,
            "test_fraction": 0.2,
        },
        "codec": {
            "sample_rate": 2000,
            "channels": 32,
            "n_res_blocks": 1,
            "codebook_size": 128,
            "code_dim": 32,
            "stft_window_sizes": [64, 128, 256],
            "up_dropout": 0.25,
        },
        "codec_train": {"steps": 500, "batch_size": 8, "crop_samples": 1984, "seed": 0},
        "lm_low": {
            "level": "low",
            "context_len": 64,
            "n_layers": 3,
            "hidden_dim": 144,
            "n_heads": 4,
            "vocab_size": 128,
            "conditioning_dim": 144,
            "use_every_token_frames": True,
        },
        "lm_up": {
            "level": "up",
            "context_len": 256,
            "n_layers": 3,
            "hidden_dim": 128,
            "n_heads": 4,
            "vocab_size": 128,
            "conditioning_dim": 128,
            "use_every_token_frames": False,
            "low_vocab_size": 128,
            "low_code_dim": 32,
        },
        "lm_train_low": {"steps": 2500, "batch_size": 16, "warmup_steps": 150, "seed": 0},
        "lm_train_up": {
            "steps": 500,
            "batch_size": 8,
            "warmup_steps": 150,
            "cfg_dropout_p": 0.0,
            "seed": 0,
        },
        "classifier": {"sample_rate": 2000, "steps": 400, "seed": 0},
        "guidance": {"eta": 3.0, "temperature": 0.7, "top_k": None, "seed": 0},
        "generate": {"duration_s": 1.0, "n_samples": 8, "use_up": True},
        "evaluate": {"n_samples": 120, "gamma": 100.0, "max_batch": 64},
    },
    # Full-scale dimensions; config-reachable but far beyond desk budgets.
    "full": {
        "dataset": {
            "n_classes": 3,
            "n_per_class": 200,
            "duration_s": 4.0,
            "sample_rate": 16000,
            "base_seed": 0,
            "frame_count": 30,
            "test_fraction": 0.2,
        },
        "codec": {
            "sample_rate": 16000,
            "channels": 64,
            "n_res_blocks": 2,
            "codebook_size": 2048,
            "code_dim": 128,
            "stft_window_sizes": [256, 512, 1024],
            "up_dropout": 0.25,
        },
        "codec_train": {"steps": 20000, "batch_size": 8, "crop_samples": 16384, "seed": 0},
        "lm_low": {
            "level": "low",
            "context_len": 2000,
            "n_layers": 48,
            "hidden_dim": 1024,
            "n_heads": 8,
            "vocab_size": 2048,
            "conditioning_dim": 1024,
            "use_every_token_frames": True,
        },
        "lm_up": {
            "level": "up",
            "context_len": 8000,
            "n_layers": 48,
            "hidden_dim": 1024,
            "n_heads": 8,
            "vocab_size": 2048,
            "conditioning_dim": 1024,
            "use_every_token_frames": False,
            "low_vocab_size": 2048,
            "low_code_dim": 128,
        },
        "lm_train_low": {"steps": 100000, "batch_size": 16, "warmup_steps": 500, "seed": 0},
        "lm_train_up": {
            "steps": 100000,
            "batch_size": 16,
            "warmup_steps": 500,
            "cfg_dropout_p": 0.0,
            "seed": 0,
        },
        "classifier": {"sample_rate": 16000, "steps": 400, "seed": 0},
        "guidance": {"eta": 3.0, "temperature": 1.0, "top_k": None, "seed": 0},
        "generate": {"duration_s": 4.0, "n_samples": 8, "use_up": True},
        "evaluate": {"n_samples": 120, "gamma": 100.0, "max_batch": 64},
    },
}

_FREEFORM_SECTIONS = {
    "dataset": {
        "n_classes", "n_per_class", "duration_s", "sample_rate",
        "base_seed", "frame_count", "test_fraction",
    },
    "generate": {"duration_s", "n_samples", "use_up"},
    "evaluate": {"n_samples", "gamma", "max_batch"},
    "classifier": None,  # validated by ToyClassifierConfig
}


def preset(name: str = "toy") -> dict:
    if name not in _PRESETS:
        raise ValidationError(f"unknown preset {name!r}; available: {sorted(_PRESETS)}")
    return copy.deepcopy(_PRESETS[name])


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; override wins; returns a new dict."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such config file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config root must be a JSON object")
    return doc


def resolve(
    preset_name: str = "toy",
    file_config: dict | None = None,
    overrides: dict | None = None,
) -> dict:
    """Preset -> file -> overrides; validates every section and key."""
    cfg = preset(preset_name)
    unknown = set(file_config or {}) - set(cfg)
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    cfg = merge(cfg, file_config or {})
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in cfg or not key:
            raise ValidationError(f"unknown override {dotted!r}")
        cfg[section][key] = value
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    """Instantiate every typed section so bad values fail before compute."""
    codec_config(cfg)
    codec_train_config(cfg)
    lm_config(cfg, "low")
    lm_config(cfg, "up")
    lm_train_config(cfg, "low")
    lm_train_config(cfg, "up")
    classifier_config(cfg)
    guidance_config(cfg)
    for section, allowed in _FREEFORM_SECTIONS.items():
        if allowed is None:
            continue
        unknown = set(cfg.get(section, {})) - allowed
        if unknown:
            raise ValidationError(f"unknown {section} config keys: {sorted(unknown)}")


def codec_config(cfg: dict) -> CodecConfig:
    return CodecConfig.from_dict(cfg["codec"])


def _typed(cls, section: dict, name: str):
    import dataclasses

    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ValidationError(f"unknown {name} config keys: {sorted(unknown)}")
    return cls(**section)


def codec_train_config(cfg: dict) -> CodecTrainConfig:
    return _typed(CodecTrainConfig, cfg["codec_train"], "codec_train")


def lm_config(cfg: dict, level: str) -> LMConfig:
    if level not in ("low", "up"):
        raise ValidationError(f"level must be 'low' or 'up', got {level!r}")
    return LMConfig.from_dict(cfg[f"lm_{level}"])


def lm_train_config(cfg: dict, level: str) -> LMTrainConfig:
    return _typed(LMTrainConfig, cfg[f"lm_train_{level}"], f"lm_train_{level}")


def classifier_config(cfg: dict) -> ToyClassifierConfig:
    return _typed(ToyClassifierConfig, cfg["classifier"], "classifier")


def guidance_config(cfg: dict) -> GuidanceConfig:
    section = dict(cfg["guidance"])
    return _typed(GuidanceConfig, section, "guidance")
