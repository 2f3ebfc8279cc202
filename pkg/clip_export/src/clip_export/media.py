"""Frame extraction from stills, directories of stills, and video files.

Everything is normalized to PIL RGB images. A still image behaves like a
one-frame sequence, a directory of stills like a frame sequence ordered by
file name, and a video like its decoded frame sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .errors import MediaDecodeError

IMAGE_SUFFIXES = {".bmp", ".gif", ".jpeg", ".jpg", ".png", ".tif", ".tiff", ".webp"}
VIDEO_SUFFIXES = {".avi", ".mkv", ".mov", ".mp4", ".webm"}


@dataclass
class FrameSet:
    """Decoded RGB frames plus where in the source they came from."""

    images: list[Image.Image]
    source_indices: list[int]
    timestamps_s: list[float] | None  # present only when the source has a clock
    source_len: int


def even_indices(n_source: int, m: int) -> list[int]:
    """Midpoints of m equal bins over [0, n_source): even coverage, no endpoint bias.

    Monotone nondecreasing; repeats indices when m exceeds the source length.
    """
    if n_source < 1:
        raise ValueError(f"n_source must be >= 1, got {n_source}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return [min(int((i + 0.5) * n_source / m), n_source - 1) for i in range(m)]


def load_frames(input_path: str | Path, m: int) -> FrameSet:
    """Decode the input and evenly sample m frames from it."""
    path = Path(input_path)
    if path.is_dir():
        return _from_directory(path, m)
    if not path.is_file():
        raise MediaDecodeError(f"{path}: no such file or directory")
    suffix = path.suffix.lower()
    if suffix in VIDEO_SUFFIXES:
        return _from_video(path, m)
    if suffix in IMAGE_SUFFIXES:
        return _from_still(path, m)
    # Unfamiliar suffix: attempt both decoders before giving up.
    try:
        return _from_still(path, m)
    except MediaDecodeError:
        pass
    try:
        return _from_video(path, m)
    except MediaDecodeError:
        pass
    raise MediaDecodeError(f"{path}: not decodable as an image or a video")


def _load_image(path: Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise MediaDecodeError(f"{path}: cannot decode as an image: {e}") from e


def _from_still(path: Path, m: int) -> FrameSet:
    # A still is a one-frame sequence; sampling m frames repeats it.
    img = _load_image(path)
    return FrameSet(
        images=[img] * m, source_indices=[0] * m, timestamps_s=None, source_len=1
    )


def _from_directory(path: Path, m: int) -> FrameSet:
    stills = sorted(
        p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not stills:
        raise MediaDecodeError(f"{path}: directory contains no image files")
    picks = even_indices(len(stills), m)
    images = [_load_image(stills[i]) for i in picks]
    return FrameSet(
        images=images, source_indices=picks, timestamps_s=None, source_len=len(stills)
    )


def _from_video(path: Path, m: int) -> FrameSet:
    import cv2  # deferred so image-only runs never pay the OpenCV import

    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise MediaDecodeError(f"{path}: video container could not be opened")
        fps = float(cap.get(cv2.CAP_PROP_FPS))
        declared = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        frames = None
        n_source = 0
        if declared > 0:
            # Fast path: trust the declared count, keep only the picked
            # frames during one sequential pass. Sequential reads are
            # deterministic everywhere; seeking is codec-dependent.
            picks = even_indices(declared, m)
            kept, actual = _read_selected(cap, set(picks))
            if actual == declared:
                frames = [kept[i] for i in picks]
                n_source = declared
        if frames is None:
            # Declared count absent or wrong: decode everything, then pick.
            cap.release()
            cap = cv2.VideoCapture(str(path))
            buffered = _read_all(cap)
            if not buffered:
                raise MediaDecodeError(f"{path}: no decodable video frames")
            n_source = len(buffered)
            picks = even_indices(n_source, m)
            frames = [buffered[i] for i in picks]
        images = [
            Image.fromarray(cv2.cvtColor(f, cv2.COLOR_BGR2RGB)) for f in frames
        ]
        ts = [i / fps for i in picks] if fps > 0 else None
        return FrameSet(
            images=images, source_indices=picks, timestamps_s=ts, source_len=n_source
        )
    finally:
        cap.release()


def _read_selected(cap, wanted: set[int]):
    """One pass over the stream; returns (index -> frame for wanted, total read)."""
    kept, idx = {}, 0
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        if idx in wanted:
            kept[idx] = frame
        idx += 1
    return kept, idx


def _read_all(cap) -> list:
    out = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        out.append(frame)
    return out
