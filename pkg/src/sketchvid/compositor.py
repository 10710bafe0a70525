"""Video sketch assembly: sprite extraction, resizing, alpha compositing.

Images are (H, W, 3) float arrays in [0, 1]; masks are (H, W) floats in
[0, 1]. A sprite is extracted once per object from a generated object image
and reused across frames. Placement maps a normalized box to pixels (floor
for the origin, ceil for the extent, clamped to the frame), resizes the
sprite with corner-aligned bilinear sampling, and blends

    out = alpha * fg + (1 - alpha) * bg

inside the rounded box only; every pixel outside it is left bit-exact.
Placements composite in listing order, later entries over earlier ones.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import PixelVideo, load_frames, save_frames
from .errors import AssemblyError, DataError, ExtractionError, PlacementError
from .planner import BBox, LayoutPlan

logger = logging.getLogger(__name__)

MASK_THRESHOLD = 0.5
SKETCH_META_NAME = "sketch.json"


@dataclass
class Sprite:
    """A foreground cutout: color patch plus matching alpha matte."""

    color: np.ndarray
    alpha: np.ndarray
    source_prompt: str = ""

    def __post_init__(self):
        self.color = np.asarray(self.color, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.color.ndim != 3 or self.color.shape[-1] != 3:
            raise DataError(f"sprite color must be (h, w, 3), got {self.color.shape}")
        if self.alpha.shape != self.color.shape[:2]:
            raise DataError(
                f"sprite alpha {self.alpha.shape} does not match color "
                f"{self.color.shape[:2]}"
            )


@dataclass
class VideoSketch:
    """Draft frames plus the per-frame placements that produced them."""

    frames: PixelVideo
    placements: list[list[tuple[str, BBox]]]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.placements) != self.frames.frame_count:
            raise DataError(
                f"{len(self.placements)} placement lists for "
                f"{self.frames.frame_count} frames"
            )


def _check_image(image: np.ndarray, name: str) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[-1] != 3 or min(image.shape[:2]) < 1:
        raise DataError(f"{name} must be (H, W, 3) with H, W >= 1, got {image.shape}")
    return image


def extract_sprite(object_image: np.ndarray, mask: np.ndarray,
                   source_prompt: str = "") -> Sprite:
    """Crop the object to the mask's bounding box and keep the matte.

    The extent is the tight box of mask values >= 0.5; an all-below-threshold
    mask is an extraction error.
    """
    object_image = _check_image(object_image, "object image")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != object_image.shape[:2]:
        raise DataError(
            f"mask {mask.shape} does not match image {object_image.shape[:2]}"
        )
    solid = mask >= MASK_THRESHOLD
    if not solid.any():
        raise ExtractionError("mask selects no pixels at threshold 0.5")
    rows = np.flatnonzero(solid.any(axis=1))
    cols = np.flatnonzero(solid.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    return Sprite(
        color=object_image[r0:r1, c0:c1].copy(),
        alpha=mask[r0:r1, c0:c1].copy(),
        source_prompt=source_prompt,
    )


def box_to_pixels(box: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Rounded pixel rect (x0, y0, x1, y1): floor origin, ceil extent, clamped."""
    x0 = max(math.floor(box.x1 * width), 0)
    y0 = max(math.floor(box.y1 * height), 0)
    x1 = min(math.ceil(box.x2 * width), width)
    y1 = min(math.ceil(box.y2 * height), height)
    return x0, y0, x1, y1


def resize_bilinear(source: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an (h, w[, c]) array.

    Output sample i maps to source coordinate ``i * (src - 1) / (out - 1)``;
    a single-sample axis collapses to coordinate 0.
    """
    if out_h < 1 or out_w < 1:
        raise DataError(f"target size {out_h}x{out_w} must be >= 1")
    src_h, src_w = source.shape[:2]
    ys = np.linspace(0.0, src_h - 1.0, out_h)
    xs = np.linspace(0.0, src_w - 1.0, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = (ys - y0).reshape(-1, 1)
    wx = (xs - x0).reshape(1, -1)
    if source.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = source[y0][:, x0] * (1 - wx) + source[y0][:, x1] * wx
    bottom = source[y1][:, x0] * (1 - wx) + source[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def place_sprite(frame: np.ndarray, sprite: Sprite, box: BBox) -> np.ndarray:
    """Composite one sprite into the box; returns a new frame array.

    Floor/ceil rounding gives every valid normalized box at least one
    pixel, so the degenerate-rect error below can only fire on a box that
    bypassed validation.
    """
    frame = _check_image(frame, "frame")
    height, width = frame.shape[:2]
    x0, y0, x1, y1 = box_to_pixels(box, width, height)
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise PlacementError(
            f"box {box} degenerates to {x1 - x0}x{y1 - y0} pixels "
            f"in a {width}x{height} frame"
        )
    fg = resize_bilinear(sprite.color, y1 - y0, x1 - x0)
    alpha = np.clip(resize_bilinear(sprite.alpha, y1 - y0, x1 - x0), 0.0, 1.0)
    out = frame.copy()
    region = out[y0:y1, x0:x1]
    out[y0:y1, x0:x1] = alpha[..., None] * fg + (1.0 - alpha[..., None]) * region
    np.clip(out[y0:y1, x0:x1], 0.0, 1.0, out=out[y0:y1, x0:x1])
    return out


def _sha256_array(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def resample_nearest(video: PixelVideo, frame_count: int) -> PixelVideo:
    """Resample a video to ``frame_count`` frames by nearest source index.

    Used when a background's length disagrees with the requested sketch
    length; the remapping is logged.
    """
    if frame_count < 1:
        raise DataError(f"frame count must be >= 1, got {frame_count}")
    if video.frame_count == frame_count:
        return video
    src = np.round(np.linspace(0, video.frame_count - 1,
                               frame_count)).astype(int)
    logger.warning(
        "resampling background from %d to %d frames (nearest index)",
        video.frame_count, frame_count,
    )
    return PixelVideo(frames=video.frames[src].copy(), fps=video.fps)


def assemble_sketch(background: PixelVideo, sprites: dict[str, Sprite],
                    plan: LayoutPlan) -> VideoSketch:
    """Composite every planned placement onto the background, in plan order.

    The plan must already be interpolated to the background frame count;
    a placement naming an unknown sprite is an assembly error.
    """
    if len(plan.frames) != background.frame_count:
        raise AssemblyError(
            f"plan has {len(plan.frames)} frames, background has "
            f"{background.frame_count}"
        )
    frames = []
    placements: list[list[tuple[str, BBox]]] = []
    for frame_plan in sorted(plan.frames, key=lambda fp: fp.index):
        frame = background.frames[frame_plan.index]
        for name, box in frame_plan.placements:
            if name not in sprites:
                raise AssemblyError(
                    f"plan places {name!r} at frame {frame_plan.index} "
                    "but no such sprite exists"
                )
            frame = place_sprite(frame, sprites[name], box)
        frames.append(frame)
        placements.append(list(frame_plan.placements))
    provenance = {
        "background_sha256": _sha256_array(background.frames),
        "sprites": {name: _sha256_array(np.concatenate(
            [s.color.ravel(), s.alpha.ravel()])) for name, s in sprites.items()},
    }
    return VideoSketch(
        frames=PixelVideo(frames=np.stack(frames), fps=background.fps),
        placements=placements,
        provenance=provenance,
    )


def save_sketch(sketch: VideoSketch, directory: str | Path) -> Path:
    """Persist frames plus a ``sketch.json`` with placements and provenance."""
    directory = Path(directory)
    save_frames(sketch.frames, directory)
    meta = {
        "placements": [
            [{"name": name, "box": [box.x1, box.y1, box.x2, box.y2]}
             for name, box in per_frame]
            for per_frame in sketch.placements
        ],
        "provenance": sketch.provenance,
    }
    path = directory / SKETCH_META_NAME
    path.write_text(json.dumps(meta, indent=2))
    return path


def load_sketch(directory: str | Path) -> VideoSketch:
    directory = Path(directory)
    frames = load_frames(directory)
    meta = json.loads((directory / SKETCH_META_NAME).read_text())
    placements = [
        [(entry["name"], BBox(*entry["box"])) for entry in per_frame]
        for per_frame in meta["placements"]
    ]
    return VideoSketch(frames=frames, placements=placements,
                       provenance=meta.get("provenance", {}))
