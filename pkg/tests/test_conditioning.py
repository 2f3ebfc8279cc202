"""Frame-token alignment, conditioning dropout statistics, the aggregator,
null embeddings, and the embedding interchange file format."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_clip
from im2wav.conditioning import (
    EMBEDDING_DIM,
    EMBEDDING_MAGIC,
    AggregatorMLP,
    EmbeddingClip,
    NullCondition,
    align_frame,
    align_index,
    aligned_frame_matrix,
    cfg_dropout,
    load_embedding_clip,
    write_embedding_clip,
)
from im2wav.errors import FormatError, ValidationError


# -- alignment -------------------------------------------------------------------


def test_align_index_example_8_tokens_3_frames():
    got = [align_index(s, 8, 3) for s in range(8)]
    assert got == [0, 0, 0, 1, 1, 1, 2, 2]


def test_align_index_identity_when_counts_match():
    assert [align_index(s, 5, 5) for s in range(5)] == [0, 1, 2, 3, 4]


def test_align_index_clamps_to_last_frame():
    # More frames than tokens: the map stays within range.
    got = [align_index(s, 3, 7) for s in range(3)]
    assert got == [0, 2, 4]
    assert all(0 <= i < 7 for i in got)


@settings(max_examples=200, deadline=None)
@given(
    tokens_total=st.integers(min_value=1, max_value=500),
    frame_count=st.integers(min_value=1, max_value=64),
)
def test_align_index_monotone_and_covering(tokens_total, frame_count):
    seq = [align_index(s, tokens_total, frame_count) for s in range(tokens_total)]
    assert all(0 <= i < frame_count for i in seq)
    assert all(a <= b for a, b in zip(seq, seq[1:]))
    assert seq[0] == 0
    if frame_count <= tokens_total:
        assert set(seq) == set(range(frame_count))  # every frame appears


def test_align_index_validation():
    with pytest.raises(ValidationError):
        align_index(5, 5, 3)
    with pytest.raises(ValidationError):
        align_index(-1, 5, 3)
    with pytest.raises(ValidationError):
        align_index(0, 0, 3)


def test_aligned_frame_matrix_matches_per_index():
    clip = make_clip(3, seed=0)
    mat = aligned_frame_matrix(clip, 8)
    assert mat.shape == (8, EMBEDDING_DIM)
    for s in range(8):
        np.testing.assert_array_equal(mat[s], align_frame(s, 8, clip))


# -- conditioning dropout -----------------------------------------------------------


def test_cfg_dropout_p_zero_never_drops():
    clips = [make_clip(2, seed=i) for i in range(64)]
    _, mask = cfg_dropout(clips, 0.0, np.random.Generator(np.random.PCG64(0)))
    assert mask.dtype == np.bool_
    assert not mask.any()


def test_cfg_dropout_p_one_always_drops():
    clips = [make_clip(2, seed=i) for i in range(64)]
    _, mask = cfg_dropout(clips, 1.0, np.random.Generator(np.random.PCG64(0)))
    assert mask.all()


def test_cfg_dropout_fraction_close_to_half():
    clips = [make_clip(1, seed=0)] * 10_000
    _, mask = cfg_dropout(clips, 0.5, np.random.Generator(np.random.PCG64(1)))
    assert 0.47 <= mask.mean() <= 0.53


def test_cfg_dropout_deterministic_given_rng():
    clips = [make_clip(1, seed=0)] * 100
    _, a = cfg_dropout(clips, 0.5, np.random.Generator(np.random.PCG64(5)))
    _, b = cfg_dropout(clips, 0.5, np.random.Generator(np.random.PCG64(5)))
    np.testing.assert_array_equal(a, b)


def test_cfg_dropout_validates_p():
    with pytest.raises(ValidationError):
        cfg_dropout([make_clip(1)], -0.1, np.random.Generator(np.random.PCG64(0)))
    with pytest.raises(ValidationError):
        cfg_dropout([make_clip(1)], 1.5, np.random.Generator(np.random.PCG64(0)))


# -- aggregator and nulls -------------------------------------------------------------


def test_aggregator_means_over_frame_axis():
    mlp = AggregatorMLP(emb_dim=6, cond_dim=4)
    frames = torch.randn(5, 6, generator=torch.Generator().manual_seed(0))
    out_full = mlp(frames)
    out_mean = mlp.from_mean(frames.mean(dim=0))
    assert torch.allclose(out_full, out_mean, atol=1e-6)


def test_aggregator_batched_shape():
    mlp = AggregatorMLP(emb_dim=6, cond_dim=4)
    frames = torch.randn(3, 5, 6)
    assert mlp(frames).shape == (3, 4)
    assert mlp.from_mean(frames.mean(dim=1)).shape == (3, 4)


def test_aggregator_rejects_wrong_width():
    mlp = AggregatorMLP(emb_dim=6, cond_dim=4)
    with pytest.raises(ValidationError):
        mlp(torch.randn(5, 7))


def test_null_condition_init_scale_and_determinism():
    a = NullCondition(emb_dim=512, cond_dim=32)
    a.reset(torch.Generator().manual_seed(4))
    b = NullCondition(emb_dim=512, cond_dim=32)
    b.reset(torch.Generator().manual_seed(4))
    assert torch.equal(a.null_y, b.null_y)
    assert torch.equal(a.null_f, b.null_f)
    assert a.null_y.shape == (32,)
    assert a.null_f.shape == (512,)
    # Small-variance init: comfortably below 10 sigma of INIT_STD.
    assert a.null_y.abs().max() < 10 * NullCondition.INIT_STD


# -- embedding interchange files -------------------------------------------------------


def test_embedding_roundtrip_bitwise(tmp_path):
    clip = make_clip(5, seed=9)
    path = tmp_path / "clip.emb"
    write_embedding_clip(clip, path, metadata={"image": "a.png"})
    back = load_embedding_clip(path)
    np.testing.assert_array_equal(back.frames, clip.frames)
    assert back.frames.dtype == np.float32
    assert back.source_id == clip.source_id


def test_embedding_file_starts_with_magic(tmp_path):
    clip = make_clip(2, seed=0)
    path = tmp_path / "clip.emb"
    write_embedding_clip(clip, path)
    assert path.read_bytes()[:8] == EMBEDDING_MAGIC


def test_embedding_rejects_truncation(tmp_path):
    clip = make_clip(4, seed=1)
    path = tmp_path / "clip.emb"
    write_embedding_clip(clip, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 7])
    with pytest.raises(FormatError):
        load_embedding_clip(path)


def test_embedding_rejects_bad_magic(tmp_path):
    clip = make_clip(2, seed=2)
    path = tmp_path / "clip.emb"
    write_embedding_clip(clip, path)
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_embedding_clip(path)


def test_embedding_clip_validation():
    with pytest.raises(ValidationError):
        EmbeddingClip(frames=np.zeros((0, 4), dtype=np.float32))
    with pytest.raises(ValidationError):
        EmbeddingClip(frames=np.zeros(7, dtype=np.float32))
    with pytest.raises(ValidationError):
        EmbeddingClip(frames=np.full((2, 3), np.nan, dtype=np.float32))
