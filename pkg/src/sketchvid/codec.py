"""Pixel/latent conversion: the stand-in for a neural video autoencoder.

Latents are per-frame ``(T, C, H', W')`` float tensors. Two local codecs are
provided:

- ``identity``: per-pixel affine map ``[0, 1] -> [-1, 1]``, channels-first.
- ``patchify:p``: the same affine map followed by a space-to-depth reshape
  with factor ``p`` (``C = 3 p**2``, ``H' = H / p``, ``W' = W / p``).

Both are exact bijections (up to the final ``[0, 1]`` clamp on decode), so
every diffusion-math test runs without any neural model. A ``remote`` codec
delegates to an external autoencoder service through an injected gateway
client.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import CodecError, DataError

FRAME_PATTERN = "frame_%05d.png"
INDEX_NAME = "index.json"


@dataclass
class PixelVideo:
    """An ordered stack of RGB frames with values in [0, 1].

    ``frames`` has shape (T, H, W, 3); all frames share dimensions by
    construction.
    """

    frames: np.ndarray
    fps: float = 8.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise DataError(
                f"PixelVideo frames must be (T, H, W, 3), got {self.frames.shape}"
            )
        if self.frames.shape[0] < 1:
            raise DataError("PixelVideo needs at least one frame")
        if self.fps <= 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        self.frames = np.clip(self.frames, 0.0, 1.0)

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])


@dataclass
class LatentVideo:
    """The diffusion state: a (T, C, H', W') real tensor plus codec identity."""

    data: np.ndarray
    codec_id: str = "identity"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise DataError(f"LatentVideo data must be 4-D, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("LatentVideo data contains non-finite values")

    @property
    def frame_count(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> tuple:
        return tuple(self.data.shape)


def parse_codec_id(codec: str) -> tuple[str, int]:
    """Split a codec identifier into (name, patch factor).

    Accepted forms: ``identity``, ``patchify:p`` with integer p >= 1,
    ``remote``.
    """
    if codec == "identity" or codec == "remote":
        return codec, 1
    m = re.fullmatch(r"patchify:(\d+)", codec)
    if m:
        p = int(m.group(1))
        if p < 1:
            raise CodecError(f"patchify factor must be >= 1, got {p}")
        return "patchify", p
    raise CodecError(f"unknown codec {codec!r}")


def encode(video: PixelVideo, codec: str = "identity", gateway=None) -> LatentVideo:
    """Map pixel frames into latent space.

    ``gateway`` is only consulted for the ``remote`` codec and must expose
    ``vae_encode(video) -> LatentVideo``.
    """
    name, p = parse_codec_id(codec)
    if name == "remote":
        if gateway is None:
            raise CodecError("remote codec requires a gateway client")
        return gateway.vae_encode(video)

    latent = np.transpose(video.frames * 2.0 - 1.0, (0, 3, 1, 2))  # (T, 3, H, W)
    if name == "patchify":
        t, c, h, w = latent.shape
        if h % p != 0 or w % p != 0:
            raise CodecError(
                f"frame size {h}x{w} not divisible by patch factor {p}"
            )
        latent = latent.reshape(t, c, h // p, p, w // p, p)
        latent = np.transpose(latent, (0, 1, 3, 5, 2, 4)).reshape(
            t, c * p * p, h // p, w // p
        )
    return LatentVideo(data=latent, codec_id=codec)


def decode(z: LatentVideo, codec: str | None = None, gateway=None,
           fps: float = 8.0) -> PixelVideo:
    """Invert :func:`encode`; output is clamped to [0, 1].

    ``codec`` defaults to the latent's own ``codec_id`` and must match it
    when given.
    """
    codec = codec or z.codec_id
    if codec != z.codec_id:
        raise CodecError(
            f"latent was encoded with {z.codec_id!r}, cannot decode as {codec!r}"
        )
    name, p = parse_codec_id(codec)
    if name == "remote":
        if gateway is None:
            raise CodecError("remote codec requires a gateway client")
        return gateway.vae_decode(z)

    data = z.data
    if name == "patchify":
        t, cpp, hp, wp = data.shape
        if cpp % (p * p) != 0:
            raise CodecError(
                f"latent channel count {cpp} inconsistent with patch factor {p}"
            )
        c = cpp // (p * p)
        data = data.reshape(t, c, p, p, hp, wp)
        data = np.transpose(data, (0, 1, 4, 2, 5, 3)).reshape(t, c, hp * p, wp * p)
    frames = np.transpose((data + 1.0) / 2.0, (0, 2, 3, 1))
    return PixelVideo(frames=np.clip(frames, 0.0, 1.0), fps=fps)


def latent_shape(frame_count: int, height: int, width: int,
                 codec: str) -> tuple[int, int, int, int]:
    """Output latent dimensions as a pure function of input dims and codec."""
    name, p = parse_codec_id(codec)
    if name == "remote":
        raise CodecError("remote codec shape is service-defined")
    if height % p != 0 or width % p != 0:
        raise CodecError(f"frame size {height}x{width} not divisible by {p}")
    return (frame_count, 3 * p * p, height // p, width // p)


# ---------------------------------------------------------------------------
# Frame directory I/O: PNG per frame plus an index.json with fps and count.
# ---------------------------------------------------------------------------

def save_frames(video: PixelVideo, directory: str | Path) -> list[Path]:
    """Write frames as 8-bit PNGs (``frame_%05d.png``) plus ``index.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(video.frame_count):
        arr = np.clip(np.round(video.frames[i] * 255.0), 0, 255).astype(np.uint8)
        path = directory / (FRAME_PATTERN % i)
        PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")
        paths.append(path)
    index = {"fps": video.fps, "count": video.frame_count}
    (directory / INDEX_NAME).write_text(json.dumps(index, indent=2))
    return paths


def load_frames(directory: str | Path) -> PixelVideo:
    """Read a frame directory written by :func:`save_frames`."""
    directory = Path(directory)
    index_path = directory / INDEX_NAME
    if not index_path.exists():
        raise DataError(f"missing {INDEX_NAME} in {directory}")
    index = json.loads(index_path.read_text())
    count = int(index["count"])
    frames = []
    for i in range(count):
        path = directory / (FRAME_PATTERN % i)
        if not path.exists():
            raise DataError(f"missing frame file {path}")
        arr = np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64)
        frames.append(arr / 255.0)
    return PixelVideo(frames=np.stack(frames, axis=0), fps=float(index["fps"]))
