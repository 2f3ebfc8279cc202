"""Command-line entry points: synth, train-codec, train-lm, generate,
evaluate, ablate.

Every command validates its full configuration before any compute, writes
all outputs under --out-dir with the resolved config echoed alongside, and
exits 0 on success or a distinct nonzero code with a single-line JSON error
on stderr: 2 bad config, 3 missing artifact, 4 dataset/model mismatch,
5 training divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from im2wav import config as cfgmod
from im2wav.audio import Waveform
from im2wav.codec.model import CodecModel, load_codec, save_codec, tokenize
from im2wav.codec.training import train_codec
from im2wav.conditioning import EmbeddingClip, load_embedding_clip
from im2wav.data.manifest import DatasetManifest, load_manifest
from im2wav.data.synth import default_class_specs, generate_corpus
from im2wav.data.wavio import read_wav
from im2wav.errors import (
    DataMismatchError,
    Im2WavError,
    MissingArtifactError,
    TrainingDiverged,
    ValidationError,
)
from im2wav.lm.model import TokenLM, load_lm, save_lm
from im2wav.lm.training import LMExample, train_lm
from im2wav.metrics.evaluate import build_report, evaluate_sets, write_report
from im2wav.metrics.scores import accuracy
from im2wav.metrics.toy_classifier import train_toy_classifier
from im2wav.sampling import GuidanceConfig, generate_batch, write_generation

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_DATA_MISMATCH = 4
EXIT_DIVERGED = 5

_EXIT_BY_ERROR = [
    (TrainingDiverged, EXIT_DIVERGED),
    (MissingArtifactError, EXIT_MISSING_ARTIFACT),
    (DataMismatchError, EXIT_DATA_MISMATCH),
    (ValidationError, EXIT_BAD_CONFIG),
]


def _fail(e: BaseException) -> int:
    code = EXIT_INTERNAL
    for cls, c in _EXIT_BY_ERROR:
        if isinstance(e, cls):
            code = c
            break
    line = json.dumps(
        {"error": type(e).__name__, "message": str(e), "exit_code": code}
    )
    print(line, file=sys.stderr)
    return code


def _resolve_args_config(args) -> dict:
    file_cfg = cfgmod.load_config_file(args.config) if args.config else None
    return cfgmod.resolve(args.preset, file_cfg)


def _echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(cfg, indent=2, sort_keys=True) + "\n"
    )


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {what}: {path}")
    return path


def _load_split(data_dir: Path, split: str) -> DatasetManifest:
    return load_manifest(_require(data_dir / f"{split}.json", f"{split} manifest"))


def _load_corpus(
    data_dir: Path, manifest: DatasetManifest, expected_rate: int
) -> tuple[list[Waveform], list[EmbeddingClip], np.ndarray]:
    if manifest.sample_rate != expected_rate:
        raise DataMismatchError(
            f"dataset rate {manifest.sample_rate} does not match configured "
            f"rate {expected_rate}"
        )
    waveforms, clips, labels = [], [], []
    for e in manifest.entries:
        waveforms.append(read_wav(data_dir / e.wav_path, expected_rate=expected_rate))
        clips.append(load_embedding_clip(data_dir / e.emb_path))
        labels.append(e.class_id)
    return waveforms, clips, np.array(labels, dtype=np.int64)


def _save_curves(values, path: Path) -> None:
    path.write_text(json.dumps(values, indent=2) + "\n")


# -- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _resolve_args_config(args)
    ds = cfg["dataset"]
    if args.seed is not None:
        ds["base_seed"] = args.seed
    out_dir = Path(args.out_dir)
    _echo_config(cfg, out_dir)
    specs = default_class_specs(ds["n_classes"], seed=ds["base_seed"])
    train, test = generate_corpus(
        specs,
        out_dir / "dataset",
        n_per_class=ds["n_per_class"],
        duration_s=ds["duration_s"],
        sample_rate=ds["sample_rate"],
        base_seed=ds["base_seed"],
        frame_count=ds["frame_count"],
        test_fraction=ds["test_fraction"],
    )
    print(
        f"wrote {len(train.entries)} train / {len(test.entries)} test clips "
        f"({ds['n_classes']} classes) under {out_dir / 'dataset'}"
    )
    return EXIT_OK


def _dataset_dir(args, out_dir: Path) -> Path:
    return Path(args.data) if args.data else out_dir / "dataset"


def cmd_train_codec(args) -> int:
    cfg = _resolve_args_config(args)
    if args.seed is not None:
        cfg["codec_train"]["seed"] = args.seed
    if args.steps is not None:
        cfg["codec_train"]["steps"] = args.steps
    ccfg = cfgmod.codec_config(cfg)
    tcfg = cfgmod.codec_train_config(cfg)
    out_dir = Path(args.out_dir)
    _echo_config(cfg, out_dir)
    data_dir = _dataset_dir(args, out_dir)
    manifest = _load_split(data_dir, "train")
    waveforms, _, _ = _load_corpus(data_dir, manifest, ccfg.sample_rate)

    codec = CodecModel(ccfg)
    codec.reset_parameters(torch.Generator().manual_seed(tcfg.seed))
    try:
        result = train_codec(waveforms, codec, tcfg)
    except TrainingDiverged as e:
        if e.last_good_state is not None:
            codec.load_state_dict(e.last_good_state)
            save_codec(codec, out_dir / "codec.diverged.bin")
        raise
    save_codec(codec, out_dir / "codec.bin")
    _save_curves([r.__dict__ for r in result.curves], out_dir / "codec_curves.json")
    print(
        f"codec trained {result.steps_run} steps; final total loss "
        f"{result.curves[-1].total:.4f}; utilization {result.utilization}"
    )
    return EXIT_OK


def _build_examples(
    data_dir: Path,
    manifest: DatasetManifest,
    codec: CodecModel,
) -> list[LMExample]:
    waveforms, clips, _ = _load_corpus(data_dir, manifest, codec.config.sample_rate)
    examples = []
    for w, c in zip(waveforms, clips):
        toks = tokenize(w, codec)
        examples.append(
            LMExample(low_ids=toks[1].ids, up_ids=toks[0].ids, frames=c.frames)
        )
    return examples


def cmd_train_lm(args) -> int:
    cfg = _resolve_args_config(args)
    level = args.level
    if args.seed is not None:
        cfg[f"lm_train_{level}"]["seed"] = args.seed
    if args.steps is not None:
        cfg[f"lm_train_{level}"]["steps"] = args.steps
    if args.no_every_token_frames and level == "low":
        cfg["lm_low"]["use_every_token_frames"] = False
    mcfg = cfgmod.lm_config(cfg, level)
    tcfg = cfgmod.lm_train_config(cfg, level)
    out_dir = Path(args.out_dir)
    _echo_config(cfg, out_dir)
    codec = load_codec(_require(out_dir / "codec.bin", "codec checkpoint"))
    if mcfg.vocab_size != codec.config.codebook_size:
        raise DataMismatchError(
            f"LM vocab {mcfg.vocab_size} != codec codebook {codec.config.codebook_size}"
        )
    if level == "up" and (
        mcfg.low_vocab_size != codec.config.codebook_size
        or mcfg.low_code_dim != codec.config.code_dim
    ):
        raise DataMismatchError(
            "up-model coarse conditioning dims do not match the codec codebook"
        )
    data_dir = _dataset_dir(args, out_dir)
    manifest = _load_split(data_dir, "train")
    examples = _build_examples(data_dir, manifest, codec)

    low_codes = None
    if level == "up":
        low_codes = codec.codebooks[1].codes.detach().numpy()
    model = TokenLM(mcfg, low_codes=low_codes)
    model.reset_parameters(torch.Generator().manual_seed(tcfg.seed))
    suffix = "" if mcfg.use_every_token_frames or level == "up" else "_noframes"
    try:
        result = train_lm(model, examples, tcfg)
    except TrainingDiverged as e:
        if e.last_good_state is not None:
            model.load_state_dict(e.last_good_state)
            save_lm(model, out_dir / f"lm_{level}{suffix}.diverged.bin")
        raise
    save_lm(model, out_dir / f"lm_{level}{suffix}.bin")
    _save_curves(result.curves, out_dir / f"lm_{level}{suffix}_curves.json")
    print(
        f"{level} model trained {result.steps_run} steps; final nll {result.final_nll:.4f}"
    )
    return EXIT_OK


def _load_models(out_dir: Path, use_up: bool, every: bool = True):
    codec = load_codec(_require(out_dir / "codec.bin", "codec checkpoint"))
    low_name = "lm_low.bin" if every else "lm_low_noframes.bin"
    low = load_lm(_require(out_dir / low_name, "coarse model checkpoint"))
    up = None
    if use_up:
        up = load_lm(_require(out_dir / "lm_up.bin", "fine model checkpoint"))
    return codec, low, up


def _conditioning_clips(args, cfg, out_dir: Path, n: int):
    """(clips, labels or None). Source: --emb files, or the dataset test split."""
    if args.emb:
        clips = [load_embedding_clip(p) for p in args.emb]
        return [clips[i % len(clips)] for i in range(n)], None
    data_dir = _dataset_dir(args, out_dir)
    manifest = _load_split(data_dir, "test")
    clips = [load_embedding_clip(data_dir / e.emb_path) for e in manifest.entries]
    labels = np.array([e.class_id for e in manifest.entries], dtype=np.int64)
    idx = [i % len(clips) for i in range(n)]
    return [clips[i] for i in idx], labels[idx]


def cmd_generate(args) -> int:
    cfg = _resolve_args_config(args)
    g = cfg["guidance"]
    if args.seed is not None:
        g["seed"] = args.seed
    if args.eta is not None:
        g["eta"] = args.eta
    if args.temperature is not None:
        g["temperature"] = args.temperature
    if args.top_k is not None:
        g["top_k"] = args.top_k
    if args.n is not None:
        cfg["generate"]["n_samples"] = args.n
    if args.duration is not None:
        cfg["generate"]["duration_s"] = args.duration
    if args.no_up:
        cfg["generate"]["use_up"] = False
    gcfg = cfgmod.guidance_config(cfg)
    gen = cfg["generate"]
    out_dir = Path(args.out_dir)
    _echo_config(cfg, out_dir)
    codec, low, up = _load_models(out_dir, gen["use_up"])
    clips, _ = _conditioning_clips(args, cfg, out_dir, gen["n_samples"])

    results = generate_batch(
        clips, codec, low, up, gcfg, gen["duration_s"], use_up=gen["use_up"]
    )
    gen_dir = out_dir / "gen"
    gen_dir.mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(results):
        write_generation(
            r,
            gen_dir / f"gen_{i:04d}.wav",
            gen_dir / f"gen_{i:04d}.json",
            extra={"clip_source": clips[i].source_id, "index": i},
        )
    print(f"wrote {len(results)} clips to {gen_dir} (eta={gcfg.eta})")
    return EXIT_OK


def _train_judge(cfg, data_dir: Path):
    jcfg = cfgmod.classifier_config(cfg)
    train_manifest = _load_split(data_dir, "train")
    ws, clips, labels = _load_corpus(data_dir, train_manifest, jcfg.sample_rate)
    return train_toy_classifier(ws, labels, clips, jcfg)


def cmd_evaluate(args) -> int:
    cfg = _resolve_args_config(args)
    if args.seed is not None:
        cfg["guidance"]["seed"] = args.seed
    if args.n is not None:
        cfg["evaluate"]["n_samples"] = args.n
    if args.eta is not None:
        cfg["guidance"]["eta"] = args.eta
    gcfg = cfgmod.guidance_config(cfg)
    out_dir = Path(args.out_dir)
    _echo_config(cfg, out_dir)
    data_dir = _dataset_dir(args, out_dir)
    codec, low, up = _load_models(out_dir, use_up=True)

    judge = _train_judge(cfg, data_dir)
    test_manifest = _load_split(data_dir, "test")
    test_ws, test_clips, test_labels = _load_corpus(
        data_dir, test_manifest, codec.config.sample_rate
    )
    held_out = accuracy(judge.posteriors(test_ws), test_labels)

    n = cfg["evaluate"]["n_samples"]
    idx = [i % len(test_clips) for i in range(n)]
    clips = [test_clips[i] for i in idx]
    labels = test_labels[idx]
    paired = [test_ws[i] for i in idx]

    results = generate_batch(
        clips, codec, low, up, gcfg, cfg["generate"]["duration_s"],
        max_batch=cfg["evaluate"]["max_batch"],
    )
    values = evaluate_sets(
        judge,
        real=test_ws,
        generated=[r.waveform for r in results],
        gen_conditioning=clips,
        gen_labels=labels,
        paired_real=paired,
        gamma=cfg["evaluate"]["gamma"],
    )
    values["judge_held_out_accuracy"] = held_out
    report = build_report(
        values,
        n_real=len(test_ws),
        n_generated=n,
        extractor_name=judge.feature_extractor().name,
        config=cfg,
    )
    write_report(report, out_dir / "report.json")
    print(json.dumps(values, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _resolve_args_config(args)
    if args.seed is not None:
        cfg["guidance"]["seed"] = args.seed
    if args.n is not None:
        cfg["evaluate"]["n_samples"] = args.n
    out_dir = Path(args.out_dir)
    _echo_config(cfg, out_dir)
    data_dir = _dataset_dir(args, out_dir)
    codec, low_every, up = _load_models(out_dir, use_up=True)
    low_no = load_lm(
        _require(
            out_dir / "lm_low_noframes.bin",
            "coarse model without per-token frames (train-lm --level low "
            "--no-every-token-frames)",
        )
    )

    judge = _train_judge(cfg, data_dir)
    test_manifest = _load_split(data_dir, "test")
    test_ws, test_clips, test_labels = _load_corpus(
        data_dir, test_manifest, codec.config.sample_rate
    )
    n = cfg["evaluate"]["n_samples"]
    idx = [i % len(test_clips) for i in range(n)]
    clips = [test_clips[i] for i in idx]
    labels = test_labels[idx]
    paired = [test_ws[i] for i in idx]
    base_eta = cfg["guidance"]["eta"]

    rows = []
    for cfg_on in (True, False):
        for up_on in (True, False):
            for every_on in (True, False):
                g = GuidanceConfig(
                    eta=base_eta if cfg_on else 1.0,
                    temperature=cfg["guidance"]["temperature"],
                    top_k=cfg["guidance"]["top_k"],
                    seed=cfg["guidance"]["seed"],
                )
                low = low_every if every_on else low_no
                results = generate_batch(
                    clips, codec, low, up if up_on else None, g,
                    cfg["generate"]["duration_s"], use_up=up_on,
                    max_batch=cfg["evaluate"]["max_batch"],
                )
                values = evaluate_sets(
                    judge,
                    real=test_ws,
                    generated=[r.waveform for r in results],
                    gen_conditioning=clips,
                    gen_labels=labels,
                    paired_real=paired,
                    gamma=cfg["evaluate"]["gamma"],
                )
                rows.append(
                    {"cfg": cfg_on, "up": up_on, "every": every_on, "metrics": values}
                )
    doc = {"rows": rows, "n_samples": n, "config": cfg}
    (out_dir / "ablation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for r in rows:
        m = r["metrics"]
        print(
            f"cfg={int(r['cfg'])} up={int(r['up'])} every={int(r['every'])}  "
            f"fad={m['fad']:.4f} cs={m['clip_score']:.2f} "
            f"kl={m['kl']:.4f} acc={m['accuracy']:.3f}"
        )
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="toy", help="configuration preset name")
    p.add_argument("--config", default=None, help="JSON config file overriding the preset")
    p.add_argument("--out-dir", required=True, help="run directory for all outputs")
    p.add_argument("--seed", type=int, default=None, help="override the command's seed")
    p.add_argument(
        "--data",
        default=None,
        help="dataset directory (default: <out-dir>/dataset)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="im2wav",
        description="Train and run the image-conditioned audio generation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic paired dataset")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-codec", help="train the waveform codec")
    _add_common(p)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train-lm", help="train a token model")
    _add_common(p)
    p.add_argument("--level", choices=("low", "up"), required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument(
        "--no-every-token-frames",
        action="store_true",
        help="coarse level only: drop the per-token aligned frame conditioning",
    )
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("generate", help="sample audio from trained checkpoints")
    _add_common(p)
    p.add_argument("--emb", nargs="*", default=None, help="embedding interchange files")
    p.add_argument("--n", type=int, default=None, help="number of clips")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--eta", type=float, default=None, help="guidance scale")
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--no-up", action="store_true", help="decode the coarse level only")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated audio against the test split")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="generated sample count")
    p.add_argument("--eta", type=float, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="8-row sweep over {CFG, Up, Every}")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="samples per row")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("IM2WAV_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(
                json.dumps(
                    {
                        "error": "ValidationError",
                        "message": f"IM2WAV_THREADS must be an integer, got {threads!r}",
                        "exit_code": EXIT_BAD_CONFIG,
                    }
                ),
                file=sys.stderr,
            )
            return EXIT_BAD_CONFIG
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Im2WavError as e:
        return _fail(e)
    except Exception as e:  # noqa: BLE001 -- CLI boundary: report, don't crash
        return _fail(e)


if __name__ == "__main__":
    sys.exit(main())
