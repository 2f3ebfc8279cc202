"""End-to-end coverage through the CLI, including the integration contract:
exported files must load in the consumer package's embedding loader.
"""

import json
import shutil
import struct
from pathlib import Path

import numpy as np
import pytest
from export_test_helpers import make_image, make_video

import im2wav
from clip_export import cli, write_interchange

UNIT_NORM_TOL = 1e-5


def run_cli(*args):
    return cli.main([str(a) for a in args])


def read_trailer(path):
    data = Path(path).read_bytes()
    m, d = struct.unpack("<II", data[8:16])
    return json.loads(data[16 + 4 * m * d :].decode())


def assert_unit_rows(frames):
    norms = np.linalg.norm(frames.astype(np.float64), axis=1)
    assert np.max(np.abs(norms - 1.0)) < UNIT_NORM_TOL


class TestRoundTrip:
    def test_single_image_loads_in_consumer(self, tmp_path, capsys):
        img = tmp_path / "scene.png"
        make_image(img, seed=11)
        out = tmp_path / "scene.emb"
        rc = run_cli("--input", img, "--out", out, "--backend", "hash")
        assert rc == 0
        clip = im2wav.load_embedding_clip(out)
        assert clip.frame_count == 1
        assert clip.dim == 512
        assert_unit_rows(clip.frames)
        assert clip.source_id == str(img)
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["frames"] == 1
        assert summary["dim"] == 512

    def test_duplicate_image_rows_identical(self, tmp_path):
        d = tmp_path / "frames"
        d.mkdir()
        make_image(d / "a.png", seed=12)
        shutil.copyfile(d / "a.png", d / "b.png")
        out = tmp_path / "dup.emb"
        assert run_cli("--input", d, "--frames", 2, "--out", out, "--backend", "hash") == 0
        clip = im2wav.load_embedding_clip(out)
        assert clip.frame_count == 2
        assert np.array_equal(clip.frames[0], clip.frames[1])
        assert_unit_rows(clip.frames)

    def test_still_sampled_to_many_frames_repeats(self, tmp_path):
        img = tmp_path / "one.png"
        make_image(img, seed=13)
        out = tmp_path / "one.emb"
        assert run_cli("--input", img, "--frames", 3, "--out", out, "--backend", "hash") == 0
        clip = im2wav.load_embedding_clip(out)
        assert clip.frame_count == 3
        assert np.array_equal(clip.frames[0], clip.frames[1])
        assert np.array_equal(clip.frames[0], clip.frames[2])

    def test_export_is_deterministic(self, tmp_path):
        img = tmp_path / "scene.png"
        make_image(img, seed=14)
        out1, out2 = tmp_path / "r1.emb", tmp_path / "r2.emb"
        assert run_cli("--input", img, "--out", out1, "--backend", "hash") == 0
        assert run_cli("--input", img, "--out", out2, "--backend", "hash") == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_directory_of_distinct_stills(self, tmp_path):
        d = tmp_path / "frames"
        d.mkdir()
        for i in range(4):
            make_image(d / f"f{i}.png", seed=20 + i)
        out = tmp_path / "dir.emb"
        assert run_cli("--input", d, "--frames", 4, "--out", out, "--backend", "hash") == 0
        clip = im2wav.load_embedding_clip(out)
        assert clip.frame_count == 4
        assert_unit_rows(clip.frames)
        for i in range(3):
            assert not np.array_equal(clip.frames[i], clip.frames[i + 1])
        assert read_trailer(out)["frame_indices"] == [0, 1, 2, 3]

    def test_writer_payload_survives_consumer_load(self, tmp_path):
        rng = np.random.default_rng(99)
        rows = rng.standard_normal((5, 512)).astype(np.float32)
        out = tmp_path / "raw.emb"
        write_interchange(rows, out, {"source_id": "synthetic"})
        clip = im2wav.load_embedding_clip(out)
        assert np.array_equal(clip.frames, rows)
        assert clip.source_id == "synthetic"


class TestVideo:
    def test_even_sampling_with_timestamps(self, tmp_path):
        vid = tmp_path / "clip.avi"
        if not make_video(vid, n_frames=12, fps=8.0):
            pytest.skip("OpenCV build cannot encode test video")
        out = tmp_path / "clip.emb"
        assert run_cli("--input", vid, "--frames", 3, "--out", out, "--backend", "hash") == 0
        clip = im2wav.load_embedding_clip(out)
        assert clip.frame_count == 3
        assert clip.dim == 512
        assert_unit_rows(clip.frames)
        # Frames carry distinct solid colors, so rows must differ.
        assert not np.array_equal(clip.frames[0], clip.frames[1])
        assert not np.array_equal(clip.frames[1], clip.frames[2])
        meta = read_trailer(out)
        assert meta["frame_indices"] == [2, 6, 10]
        assert meta["frame_timestamps"] == [2 / 8.0, 6 / 8.0, 10 / 8.0]
        assert meta["source_id"] == str(vid)

    def test_video_export_is_deterministic(self, tmp_path):
        vid = tmp_path / "clip.avi"
        if not make_video(vid, n_frames=10, fps=5.0):
            pytest.skip("OpenCV build cannot encode test video")
        out1, out2 = tmp_path / "v1.emb", tmp_path / "v2.emb"
        assert run_cli("--input", vid, "--frames", 4, "--out", out1, "--backend", "hash") == 0
        assert run_cli("--input", vid, "--frames", 4, "--out", out2, "--backend", "hash") == 0
        assert out1.read_bytes() == out2.read_bytes()


class TestFailures:
    def test_undecodable_input(self, tmp_path, capsys):
        bad = tmp_path / "fake.png"
        bad.write_text("not an image")
        rc = run_cli("--input", bad, "--out", tmp_path / "x.emb", "--backend", "hash")
        assert rc == 1
        err = capsys.readouterr().err
        assert "cannot decode" in err
        assert not (tmp_path / "x.emb").exists()

    def test_missing_input(self, tmp_path, capsys):
        rc = run_cli("--input", tmp_path / "gone.png", "--out", tmp_path / "x.emb",
                     "--backend", "hash")
        assert rc == 1
        assert "no such file" in capsys.readouterr().err

    def test_nonpositive_frames(self, tmp_path, capsys):
        img = tmp_path / "a.png"
        make_image(img)
        rc = run_cli("--input", img, "--frames", 0, "--out", tmp_path / "x.emb",
                     "--backend", "hash")
        assert rc == 1
        assert "frames must be >= 1" in capsys.readouterr().err

    def test_missing_weights_is_descriptive(self, tmp_path, capsys):
        img = tmp_path / "a.png"
        make_image(img)
        rc = run_cli("--input", img, "--out", tmp_path / "x.emb",
                     "--backend", "clip", "--weights", str(tmp_path / "no_ckpt"))
        assert rc == 1
        err = capsys.readouterr().err
        assert "weights" in err
        assert "no_ckpt" in err
