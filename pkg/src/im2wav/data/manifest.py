"""Dataset manifests: JSON descriptions of paired WAV/embedding corpora.

Loading validates the whole document and reports every schema violation at
once (not just the first), each tagged with its entry index; all referenced
files must exist relative to the manifest's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

from im2wav.errors import ValidationError

SCHEMA_VERSION = 1
_SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestEntry:
    wav_path: str
    emb_path: str
    class_id: int
    duration: float


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    sample_rate: int
    split: str

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.split not in _SPLITS:
            raise ValidationError(f"split must be one of {_SPLITS}, got {self.split!r}")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.entries)


def save_manifest(m: DatasetManifest, path) -> None:
    path = Path(path)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "sample_rate": m.sample_rate,
        "split": m.split,
        "entries": [asdict(e) for e in m.entries],
    }
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate; collects all violations before raising."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such manifest: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON: {e}") from e

    problems: list[str] = []
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: manifest must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        problems.append(f"schema_version is {version!r}, expected {SCHEMA_VERSION}")
    rate = doc.get("sample_rate")
    if not isinstance(rate, int) or rate <= 0:
        problems.append(f"sample_rate must be a positive integer, got {rate!r}")
    split = doc.get("split")
    if split not in _SPLITS:
        problems.append(f"split must be one of {_SPLITS}, got {split!r}")
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list):
        problems.append(f"entries must be a list, got {type(raw_entries).__name__}")
        raw_entries = []

    required = {"wav_path": str, "emb_path": str, "class_id": int, "duration": (int, float)}
    entries: list[ManifestEntry] = []
    base = path.parent
    for i, raw in enumerate(raw_entries):
        if not isinstance(raw, dict):
            problems.append(f"entry {i}: must be an object")
            continue
        entry_ok = True
        for key, typ in required.items():
            if key not in raw:
                problems.append(f"entry {i}: missing field {key!r}")
                entry_ok = False
            elif not isinstance(raw[key], typ) or isinstance(raw[key], bool):
                problems.append(
                    f"entry {i}: field {key!r} has type {type(raw[key]).__name__}"
                )
                entry_ok = False
        unknown = set(raw) - set(required)
        if unknown:
            problems.append(f"entry {i}: unknown fields {sorted(unknown)}")
            entry_ok = False
        if not entry_ok:
            continue
        if check_files:
            if not (base / raw["wav_path"]).exists():
                problems.append(f"entry {i}: missing wav file {raw['wav_path']!r}")
                entry_ok = False
            if not (base / raw["emb_path"]).exists():
                problems.append(f"entry {i}: missing embedding file {raw['emb_path']!r}")
                entry_ok = False
        if entry_ok:
            entries.append(
                ManifestEntry(
                    wav_path=raw["wav_path"],
                    emb_path=raw["emb_path"],
                    class_id=raw["class_id"],
                    duration=float(raw["duration"]),
                )
            )

    if problems:
        raise ValidationError(
            f"{path}: {len(problems)} manifest violation(s):\n  " + "\n  ".join(problems)
        )
    return DatasetManifest(entries=tuple(entries), sample_rate=rate, split=split)
