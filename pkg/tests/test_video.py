from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from instacodec.models import gop_plan
from instacodec.synthetic import KINDS, make_clip
from instacodec.video import (
    VideoClip,
    VideoFormatError,
    crop,
    ingest_video,
    pad_to_multiple,
    read_frame_dir,
    read_ppm,
    read_y4m,
    rgb_to_yuv,
    write_frame_dir,
    write_ppm,
    write_y4m,
)

# BT.709 full-range YCbCr -> RGB, written out by hand
BT709 = np.array(
    [
        [1.0, 0.0, 1.5748],
        [1.0, -0.1873, -0.4681],
        [1.0, 1.8556, 0.0],
    ]
)


def _y4m_bytes(w, h, frames, tag="C420jpeg"):
    out = f"YUV4MPEG2 W{w} H{h} F25:1 Ip A1:1 {tag}\n".encode()
    for y, u, v in frames:
        out += b"FRAME\n" + y.tobytes() + u.tobytes() + v.tobytes()
    return out


def test_y4m_420_hand_conversion(tmp_path):
    rng = np.random.default_rng(0)
    w, h = 4, 2
    frames = []
    for _ in range(2):
        y = rng.integers(16, 240, (h, w), dtype=np.uint8)
        u = rng.integers(16, 240, (h // 2, w // 2), dtype=np.uint8)
        v = rng.integers(16, 240, (h // 2, w // 2), dtype=np.uint8)
        frames.append((y, u, v))
    path = tmp_path / "a.y4m"
    path.write_bytes(_y4m_bytes(w, h, frames))
    clip = read_y4m(path)
    assert clip.frames.shape == (2, 3, h, w)
    assert clip.fps == Fraction(25)
    for f, (y, u, v) in enumerate(frames):
        for i in range(h):
            for j in range(w):
                ycc = np.array([y[i, j], u[i // 2, j // 2] - 128.0, v[i // 2, j // 2] - 128.0]) / 255.0
                rgb = np.clip(BT709 @ ycc, 0, 1)
                assert np.abs(clip.frames[f, :, i, j] - rgb).max() <= 1 / 255


def test_y4m_444_roundtrip(tmp_path):
    clip = make_clip("blobs", 3, 16, seed=1)
    write_y4m(clip, tmp_path / "b.y4m")
    back = read_y4m(tmp_path / "b.y4m")
    assert back.frames.shape == clip.frames.shape
    assert np.abs(back.frames - clip.frames).max() < 2.5 / 255  # two 8-bit roundings
    assert back.fps == clip.fps


def test_y4m_errors(tmp_path):
    bad = tmp_path / "c.y4m"
    bad.write_bytes(_y4m_bytes(2, 2, [], tag="C422"))
    with pytest.raises(VideoFormatError, match="C422"):
        read_y4m(bad)
    empty = tmp_path / "d.y4m"
    empty.write_bytes(_y4m_bytes(2, 2, []))
    with pytest.raises(VideoFormatError, match="no frames"):
        read_y4m(empty)
    trunc = tmp_path / "e.y4m"
    y = np.zeros((2, 2), np.uint8)
    u = np.zeros((1, 1), np.uint8)
    trunc.write_bytes(_y4m_bytes(2, 2, [(y, u, u)])[:-1])
    with pytest.raises(VideoFormatError, match="truncated"):
        read_y4m(trunc)
    junk = tmp_path / "f.y4m"
    junk.write_bytes(b"P6 1 1 255\n")
    with pytest.raises(VideoFormatError):
        read_y4m(junk)


def test_rgb_yuv_gray_is_neutral():
    gray = np.full((3, 2, 2), 0.5, np.float32)
    y, u, v = rgb_to_yuv(gray)
    assert (y == 128).all() and (u == 128).all() and (v == 128).all()


def test_ppm_roundtrip_8_and_16_bit(tmp_path):
    frame = make_clip("checker", 1, 8, seed=2).frames[0]
    write_ppm(frame, tmp_path / "a.ppm")
    assert np.abs(read_ppm(tmp_path / "a.ppm") - frame).max() <= 0.5 / 255 + 1e-7
    deep = (np.arange(2 * 3 * 3) * 1000).astype(">u2").reshape(2, 3, 3)
    (tmp_path / "b.ppm").write_bytes(b"P6\n# comment\n3 2\n65535\n" + deep.tobytes())
    got = read_ppm(tmp_path / "b.ppm")
    assert np.allclose(got, deep.transpose(2, 0, 1) / 65535)


def test_frame_dir(tmp_path):
    clip = make_clip("stripes", 3, 8, seed=0)
    names = write_frame_dir(clip.frames, tmp_path / "d")
    assert [n.name for n in names] == ["frame_00000.ppm", "frame_00001.ppm", "frame_00002.ppm"]
    back = ingest_video(tmp_path / "d")
    assert back.num_frames == 3
    with pytest.raises(VideoFormatError, match="no frames found"):
        read_frame_dir(tmp_path)
    write_ppm(np.zeros((3, 4, 4), np.float32), tmp_path / "d" / "frame_00003.ppm")
    with pytest.raises(VideoFormatError, match="differ"):
        read_frame_dir(tmp_path / "d")


def test_ingest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_video(tmp_path / "nope.y4m")
    (tmp_path / "x.y4m").write_bytes(b"")
    with pytest.raises(ValueError):
        ingest_video(tmp_path / "x.y4m", fmt="mp4")


def test_single_frame_clip(tmp_path):
    clip = make_clip("blobs", 1, 8)
    write_y4m(clip, tmp_path / "one.y4m")
    back = ingest_video(tmp_path / "one.y4m")
    assert back.num_frames == 1
    assert [e.kind for e in gop_plan(back.num_frames, 0)] == ["I"]


def test_subsample():
    clip = make_clip("blobs", 16, 8)
    sub = clip.subsample(4)
    assert sub.num_frames == 4
    assert np.array_equal(sub.frames, clip.frames[[0, 4, 8, 12]])
    assert sub.fps == clip.fps / 4
    assert clip.subsample(1).num_frames == 16
    with pytest.raises(VideoFormatError):
        VideoClip(np.zeros((2, 1, 4, 4), np.float32))


class TestPadding:
    def test_aligned_unchanged(self):
        x = np.random.default_rng(0).random((2, 3, 64, 64)).astype(np.float32)
        padded, size = pad_to_multiple(x)
        assert padded is x and size == (64, 64)

    def test_100x60(self):
        x = np.random.default_rng(1).random((1, 3, 60, 100)).astype(np.float32)
        padded, size = pad_to_multiple(x)
        assert padded.shape == (1, 3, 64, 128)
        assert np.array_equal(crop(padded, size), x)

    @given(st.integers(2, 70), st.integers(2, 70))
    def test_mirror_index_map(self, h, w):
        x = np.arange(h * w, dtype=np.float32).reshape(1, h, w)
        padded, _ = pad_to_multiple(x, 64)
        H, W = padded.shape[1:]

        def mirror(i, n):
            # reflect about the end samples without repeating them; wide pads bounce back and forth
            k = i % (2 * (n - 1))
            return k if k < n else 2 * (n - 1) - k

        for i in range(H):
            for j in range(W):
                assert padded[0, i, j] == x[0, mirror(i, h), mirror(j, w)]

    def test_single_row_uses_edge(self):
        x = np.arange(5, dtype=np.float32).reshape(1, 1, 5)
        padded, _ = pad_to_multiple(x, 4)
        assert padded.shape == (1, 4, 8)
        assert (padded[0, :, :5] == x[0]).all()


@pytest.mark.parametrize("kind", KINDS)
def test_synthetic_clips(kind):
    a = make_clip(kind, 4, (32, 48), seed=3)
    b = make_clip(kind, 4, (32, 48), seed=3)
    assert a.frames.shape == (4, 3, 32, 48) and a.frames.dtype == np.float32
    assert np.array_equal(a.frames, b.frames)
    assert 0 <= a.frames.min() and a.frames.max() <= 1
    assert not np.array_equal(a.frames[0], a.frames[1])  # content moves
    with pytest.raises(ValueError):
        make_clip("noise")
