import numpy as np
import pytest

from sketchvid.codec import (
    LatentVideo,
    PixelVideo,
    decode,
    encode,
    latent_shape,
    load_frames,
    parse_codec_id,
    save_frames,
)
from sketchvid.errors import CodecError, DataError


def _video(t=2, h=8, w=8, fps=8.0, seed=0):
    rng = np.random.default_rng(seed)
    return PixelVideo(frames=rng.random((t, h, w, 3)), fps=fps)


def test_identity_midpoint_maps_to_zero():
    v = PixelVideo(frames=np.full((1, 4, 4, 3), 0.5))
    z = encode(v, "identity")
    assert z.shape == (1, 3, 4, 4)
    np.testing.assert_array_equal(z.data, 0.0)


def test_identity_round_trip_exact():
    v = _video()
    z = encode(v, "identity")
    back = decode(z)
    np.testing.assert_array_equal(back.frames, v.frames)


def test_patchify_round_trip_exact():
    v = _video(t=3, h=8, w=12)
    z = encode(v, "patchify:2")
    assert z.codec_id == "patchify:2"
    back = decode(z)
    np.testing.assert_array_equal(back.frames, v.frames)


def test_patchify_shape_arithmetic():
    v = _video(t=1, h=64, w=64)
    z = encode(v, "patchify:2")
    assert z.shape == (1, 12, 32, 32)
    assert latent_shape(1, 64, 64, "patchify:2") == (1, 12, 32, 32)
    assert latent_shape(5, 32, 48, "patchify:4") == (5, 48, 8, 12)


def test_patchify_rejects_indivisible_size():
    v = _video(t=1, h=9, w=8)
    with pytest.raises(CodecError):
        encode(v, "patchify:2")
    with pytest.raises(CodecError):
        latent_shape(1, 9, 8, "patchify:2")


def test_decode_rejects_codec_mismatch():
    z = encode(_video(), "identity")
    with pytest.raises(CodecError):
        decode(z, "patchify:2")


def test_unknown_codec_rejected():
    with pytest.raises(CodecError):
        parse_codec_id("vae9000")
    with pytest.raises(CodecError):
        parse_codec_id("patchify:x")


def test_decode_clamps_out_of_range_latent():
    z = LatentVideo(np.full((1, 3, 2, 2), 3.0), codec_id="identity")
    out = decode(z)
    np.testing.assert_array_equal(out.frames, 1.0)


def test_latent_rejects_nonfinite():
    with pytest.raises(DataError):
        LatentVideo(np.full((1, 1, 2, 2), np.nan))


def test_pixel_video_validation():
    with pytest.raises(DataError):
        PixelVideo(frames=np.zeros((2, 4, 4)))
    with pytest.raises(DataError):
        PixelVideo(frames=np.zeros((0, 4, 4, 3)))
    with pytest.raises(DataError):
        PixelVideo(frames=np.zeros((1, 4, 4, 3)), fps=0.0)


def test_frame_io_round_trip(tmp_path):
    v = _video(t=3, h=6, w=5, fps=12.0)
    paths = save_frames(v, tmp_path / "frames")
    assert [p.name for p in paths] == [
        "frame_00000.png", "frame_00001.png", "frame_00002.png"
    ]
    back = load_frames(tmp_path / "frames")
    assert back.fps == 12.0
    assert back.frame_count == 3
    # 8-bit quantization bound
    assert np.max(np.abs(back.frames - v.frames)) <= 0.5 / 255.0 + 1e-12


def test_frame_io_missing_index(tmp_path):
    with pytest.raises(DataError):
        load_frames(tmp_path)
