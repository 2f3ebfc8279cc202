"""Unit coverage: sampling math, the format writer, backends, media errors."""

import json
import struct

import numpy as np
import pytest
from export_test_helpers import make_image
from PIL import Image

from clip_export import (
    EMBED_DIM,
    MAGIC,
    HashProjectionBackend,
    MediaDecodeError,
    even_indices,
    load_frames,
    make_backend,
    write_interchange,
)


class TestEvenIndices:
    def test_midpoint_sampling(self):
        assert even_indices(12, 3) == [2, 6, 10]

    def test_full_coverage_when_counts_match(self):
        assert even_indices(5, 5) == [0, 1, 2, 3, 4]

    def test_short_source_repeats(self):
        assert even_indices(1, 3) == [0, 0, 0]
        assert even_indices(2, 4) == [0, 0, 1, 1]

    def test_single_pick_is_middle(self):
        assert even_indices(11, 1) == [5]

    def test_monotone_and_in_range(self):
        for n in (1, 3, 7, 24, 100):
            for m in (1, 2, 5, 30):
                picks = even_indices(n, m)
                assert len(picks) == m
                assert all(0 <= i < n for i in picks)
                assert picks == sorted(picks)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            even_indices(0, 1)
        with pytest.raises(ValueError):
            even_indices(4, 0)


class TestWriter:
    def test_layout(self, tmp_path):
        rows = np.arange(6, dtype=np.float32).reshape(2, 3)
        out = tmp_path / "x.emb"
        write_interchange(rows, out)
        data = out.read_bytes()
        assert data[:8] == MAGIC
        assert struct.unpack("<II", data[8:16]) == (2, 3)
        assert data[16:] == rows.tobytes()

    def test_metadata_trailer_is_json(self, tmp_path):
        out = tmp_path / "x.emb"
        write_interchange(np.ones((1, 4), np.float32), out, {"source_id": "s"})
        data = out.read_bytes()
        assert json.loads(data[16 + 16 :].decode()) == {"source_id": "s"}

    def test_no_temp_file_left(self, tmp_path):
        out = tmp_path / "x.emb"
        write_interchange(np.ones((1, 4), np.float32), out)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["x.emb"]

    def test_rejects_bad_shapes(self, tmp_path):
        with pytest.raises(ValueError):
            write_interchange(np.ones(4, np.float32), tmp_path / "a")
        with pytest.raises(ValueError):
            write_interchange(np.ones((0, 4), np.float32), tmp_path / "b")

    def test_rejects_non_finite(self, tmp_path):
        rows = np.ones((2, 2), np.float32)
        rows[1, 1] = np.nan
        with pytest.raises(ValueError):
            write_interchange(rows, tmp_path / "c")


class TestHashBackend:
    def test_shape_and_dtype(self, tmp_path):
        make_image(tmp_path / "a.png", seed=1)
        img = Image.open(tmp_path / "a.png").convert("RGB")
        rows = HashProjectionBackend().embed([img, img])
        assert rows.shape == (2, EMBED_DIM)
        assert rows.dtype == np.float32

    def test_deterministic_per_content(self, tmp_path):
        make_image(tmp_path / "a.png", seed=2)
        img = Image.open(tmp_path / "a.png").convert("RGB")
        b = HashProjectionBackend()
        assert np.array_equal(b.embed([img]), b.embed([img]))

    def test_distinct_images_differ(self, tmp_path):
        make_image(tmp_path / "a.png", seed=3)
        make_image(tmp_path / "b.png", seed=4)
        imgs = [Image.open(tmp_path / n).convert("RGB") for n in ("a.png", "b.png")]
        rows = HashProjectionBackend().embed(imgs)
        assert not np.array_equal(rows[0], rows[1])

    def test_encoding_independent(self, tmp_path):
        # Same pixels through two lossless encodings hash identically.
        rng = np.random.default_rng(5)
        arr = rng.integers(0, 256, size=(32, 48, 3), dtype=np.uint8)
        Image.fromarray(arr, "RGB").save(tmp_path / "a.png")
        Image.fromarray(arr, "RGB").save(tmp_path / "a.bmp")
        imgs = [Image.open(tmp_path / n).convert("RGB") for n in ("a.png", "a.bmp")]
        rows = HashProjectionBackend().embed(imgs)
        assert np.array_equal(rows[0], rows[1])


class TestMakeBackend:
    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown backend"):
            make_backend("resnet")

    def test_hash_takes_no_weights(self):
        with pytest.raises(ValueError, match="no weights"):
            make_backend("hash", weights="/some/path")


class TestMediaErrors:
    def test_missing_path(self, tmp_path):
        with pytest.raises(MediaDecodeError, match="no such file"):
            load_frames(tmp_path / "absent.png", 1)

    def test_undecodable_image(self, tmp_path):
        bad = tmp_path / "fake.png"
        bad.write_text("not an image")
        with pytest.raises(MediaDecodeError, match="cannot decode"):
            load_frames(bad, 1)

    def test_unknown_suffix_garbage(self, tmp_path):
        bad = tmp_path / "blob.xyz"
        bad.write_bytes(b"\x00\x01\x02\x03" * 64)
        with pytest.raises(MediaDecodeError, match="not decodable"):
            load_frames(bad, 1)

    def test_empty_directory(self, tmp_path):
        d = tmp_path / "frames"
        d.mkdir()
        (d / "notes.txt").write_text("no stills here")
        with pytest.raises(MediaDecodeError, match="no image files"):
            load_frames(d, 1)


class TestDirectoryFrames:
    def test_name_order_and_sampling(self, tmp_path):
        d = tmp_path / "frames"
        d.mkdir()
        # Created out of name order on purpose; the loader must sort.
        for name, seed in (("c.png", 3), ("a.png", 1), ("b.png", 2)):
            make_image(d / name, seed=seed)
        fs = load_frames(d, 3)
        assert fs.source_len == 3
        assert fs.source_indices == [0, 1, 2]
        assert fs.timestamps_s is None
        ref = [Image.open(d / n).convert("RGB") for n in ("a.png", "b.png", "c.png")]
        for got, want in zip(fs.images, ref):
            assert got.tobytes() == want.tobytes()

    def test_still_repeats(self, tmp_path):
        make_image(tmp_path / "one.png", seed=7)
        fs = load_frames(tmp_path / "one.png", 4)
        assert fs.source_len == 1
        assert fs.source_indices == [0, 0, 0, 0]
        assert len(fs.images) == 4
