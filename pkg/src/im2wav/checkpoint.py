"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic            8 bytes  (b"IM2WCODC" for codecs, b"IM2WLMDL" for LMs)
    format version   u32
    config length    u32, followed by that many bytes of UTF-8 JSON
    section count    u32
    per section:
        name length  u16, followed by UTF-8 name
        ndim         u8, followed by ndim u32 dims
        data         prod(dims) float32 values

Sections are float32 blobs; integer state is cast on the way in and
restored by the owning module on the way out.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from im2wav.errors import FormatError

FORMAT_VERSION = 1

CODEC_MAGIC = b"IM2WCODC"
LM_MAGIC = b"IM2WLMDL"


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated checkpoint: expected {n} bytes for {what}, got {len(data)}")
    return data


def save_checkpoint(
    path: str | Path,
    magic: bytes,
    config: dict,
    sections: dict[str, np.ndarray],
) -> None:
    if len(magic) != 8:
        raise ValueError(f"magic must be 8 bytes, got {magic!r}")
    buf = io.BytesIO()
    buf.write(magic)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(config_bytes)))
    buf.write(config_bytes)
    buf.write(struct.pack("<I", len(sections)))
    for name, arr in sections.items():
        name_bytes = name.encode("utf-8")
        if len(name_bytes) > 0xFFFF:
            raise ValueError(f"section name too long: {name!r}")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path: str | Path, expected_magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with path.open("rb") as f:
        magic = _read_exact(f, 8, "magic")
        if magic != expected_magic:
            raise FormatError(
                f"bad magic in {path}: expected {expected_magic!r}, found {magic!r}"
            )
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version} in {path}")
        (config_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        try:
            config = json.loads(_read_exact(f, config_len, "config").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"unreadable config block in {path}: {e}") from e
        (n_sections,) = struct.unpack("<I", _read_exact(f, 4, "section count"))
        sections: dict[str, np.ndarray] = {}
        for _ in range(n_sections):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "section name length"))
            name = _read_exact(f, name_len, "section name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, "section ndim"))
            shape = tuple(
                struct.unpack("<I", _read_exact(f, 4, f"dim of {name}"))[0] for _ in range(ndim)
            )
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(f, 4 * count, f"data of {name}")
            sections[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        trailing = f.read(1)
        if trailing:
            raise FormatError(f"trailing bytes after last section in {path}")
    return config, sections
