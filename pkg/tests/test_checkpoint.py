"""Binary checkpoint container: layout round-trips and corruption rejection."""

import struct

import numpy as np
import pytest

from im2wav.checkpoint import (
    CODEC_MAGIC,
    FORMAT_VERSION,
    LM_MAGIC,
    load_checkpoint,
    save_checkpoint,
)
from im2wav.errors import FormatError


def write_sample(path):
    config = {"width": 3, "name": "demo", "nested": {"lr": 0.001}}
    sections = {
        "weights": np.arange(12, dtype=np.float32).reshape(3, 4),
        "bias": np.array([1.5, -2.5, 3.5], dtype=np.float32),
        "scalar": np.float32(7.0),
    }
    save_checkpoint(path, CODEC_MAGIC, config, sections)
    return config, sections


def test_roundtrip_preserves_config_and_arrays(tmp_path):
    path = tmp_path / "m.bin"
    config, sections = write_sample(path)
    got_config, got_sections = load_checkpoint(path, CODEC_MAGIC)
    assert got_config == config
    assert set(got_sections) == set(sections)
    np.testing.assert_array_equal(got_sections["weights"], sections["weights"])
    assert got_sections["weights"].shape == (3, 4)
    # ascontiguousarray promotes 0-d scalars to 1-d on the way in.
    assert got_sections["scalar"].shape == (1,)
    assert float(got_sections["scalar"][0]) == 7.0


def test_save_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write_sample(a)
    write_sample(b)
    assert a.read_bytes() == b.read_bytes()


def test_integer_state_survives_float32_cast(tmp_path):
    # Token ids live in float32 sections; values this small are exact.
    path = tmp_path / "m.bin"
    ids = np.array([0, 1, 4095, 65536], dtype=np.int64)
    save_checkpoint(path, LM_MAGIC, {}, {"ids": ids.astype(np.float32)})
    _, sections = load_checkpoint(path, LM_MAGIC)
    np.testing.assert_array_equal(sections["ids"].astype(np.int64), ids)


def test_wrong_magic_rejected(tmp_path):
    path = tmp_path / "m.bin"
    write_sample(path)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path, LM_MAGIC)


def test_wrong_version_rejected(tmp_path):
    path = tmp_path / "m.bin"
    write_sample(path)
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", FORMAT_VERSION + 1)
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(path, CODEC_MAGIC)


@pytest.mark.parametrize("cut", [4, 11, 20, -6, -1])
def test_truncation_rejected_at_any_point(tmp_path, cut):
    path = tmp_path / "m.bin"
    write_sample(path)
    blob = path.read_bytes()
    path.write_bytes(blob[:cut] if cut > 0 else blob[: len(blob) + cut])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(path, CODEC_MAGIC)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.bin"
    write_sample(path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(path, CODEC_MAGIC)


def test_corrupt_config_json_rejected(tmp_path):
    path = tmp_path / "m.bin"
    save_checkpoint(path, CODEC_MAGIC, {"k": 1}, {})
    blob = bytearray(path.read_bytes())
    # The config block starts right after magic + version + length.
    blob[16] = ord("!")
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="config"):
        load_checkpoint(path, CODEC_MAGIC)


def test_empty_sections_allowed(tmp_path):
    path = tmp_path / "m.bin"
    save_checkpoint(path, LM_MAGIC, {"only": "config"}, {})
    config, sections = load_checkpoint(path, LM_MAGIC)
    assert config == {"only": "config"}
    assert sections == {}


def test_bad_magic_length_rejected_on_save(tmp_path):
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "m.bin", b"SHORT", {}, {})


def test_atomic_write_leaves_no_tmp_file(tmp_path):
    path = tmp_path / "m.bin"
    write_sample(path)
    assert not (tmp_path / "m.bin.tmp").exists()
    assert path.exists()
