"""Layout and trajectory planning protocol for the multimodal model.

Three prompt templates (versioned text assets under ``templates/``) drive
the planning conversation: one asks for a background-only description, one
asks for per-frame foreground bounding boxes conditioned on detected
background boxes, and one asks for the noising ratio. Template rendering
uses literal ``<<MARKER>>`` substitution, so user prompts with braces or
quotes pass through verbatim.

Model responses are chatty; :func:`parse_layout_plan` extracts the first
JSON block (fenced or bare), tolerates a small coordinate margin (0.02)
before rejecting a box, and normalizes pixel coordinates when the plan
declares a frame size. :func:`validate_plan` enforces spatial coherence:
per-object center displacement between consecutive planned frames is capped
(Euclidean distance in normalized coordinates, default 0.25) and objects
may not vanish and reappear. Sparse keyframe plans are densified by
:func:`interpolate_trajectory`.

A deterministic :func:`fallback_plan` places objects on a horizontal band
and translates them by a fixed per-frame delta, so the whole pipeline runs
without any language model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .errors import (
    ConfigError,
    DataError,
    LayoutError,
    PlanContinuityError,
    PlanParseError,
    PlanSchemaError,
)

logger = logging.getLogger(__name__)

COORD_MARGIN = 0.02  # tolerated rounding slop outside [0, 1] before rejection
DEFAULT_MAX_STEP = 0.25

DIRECTIONS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
    "none": (0.0, 0.0),
}

_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized frame coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 < self.x2 <= 1.0
                and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise DataError(
                f"invalid box ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class DetectedObject:
    """A detector hit: label, box, confidence."""

    label: str
    box: BBox
    confidence: float = 1.0

    def __post_init__(self):
        if not self.label:
            raise DataError("detected object label must be nonempty")
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class FramePlan:
    """Placements for one frame: caption plus ordered (name, box) pairs."""

    index: int
    caption: str = ""
    placements: list[tuple[str, BBox]] = field(default_factory=list)


@dataclass
class LayoutPlan:
    """Ordered frame plans, the model's reasoning, and the object roster."""

    frames: list[FramePlan]
    reasoning: str = ""
    objects: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.frames:
            raise PlanSchemaError("a layout plan needs at least one frame")
        if not self.objects:
            self.objects = _roster(self.frames)
        else:
            placed = set(_roster(self.frames))
            missing = placed - set(self.objects)
            if missing:
                raise PlanSchemaError(
                    f"placements name objects missing from roster: {sorted(missing)}"
                )


def _roster(frames: Sequence[FramePlan]) -> list[str]:
    names: list[str] = []
    for fp in frames:
        for name, _ in fp.placements:
            if name not in names:
                names.append(name)
    return names


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

def _template_text(name: str) -> str:
    return resources.files("sketchvid.templates").joinpath(f"{name}.txt").read_text()


def template_id(name: str) -> str:
    """Stable identifier of a shipped template: ``name@<sha256 prefix>``."""
    digest = hashlib.sha256(_template_text(name).encode("utf-8")).hexdigest()
    return f"{name}@{digest[:8]}"


def _render(name: str, substitutions: dict[str, str]) -> str:
    text = _template_text(name)
    for marker, value in substitutions.items():
        text = text.replace(f"<<{marker}>>", value)
    return text


def build_background_prompt(video_prompt: str) -> str:
    """Prompt asking for a background-only scene description."""
    if not video_prompt.strip():
        raise ConfigError("video prompt must be nonempty")
    return _render("background", {"VIDEO_PROMPT": video_prompt})


def serialize_background_boxes(boxes: Sequence[DetectedObject]) -> str:
    if not boxes:
        return "(no detected objects)"
    lines = []
    for obj in boxes:
        entry = {"label": obj.label,
                 "box": [round(v, 4) for v in obj.box.as_list()]}
        lines.append(json.dumps(entry))
    return "\n".join(lines)


def build_plan_prompt(video_prompt: str, background_boxes: Sequence[DetectedObject],
                      frame_count: int) -> str:
    """Prompt asking for per-frame placements conditioned on background boxes."""
    if not video_prompt.strip():
        raise ConfigError("video prompt must be nonempty")
    if frame_count < 2:
        raise ConfigError(f"frame count must be >= 2, got {frame_count}")
    return _render("plan", {
        "VIDEO_PROMPT": video_prompt,
        "FRAME_COUNT": str(frame_count),
        "BACKGROUND_BOXES": serialize_background_boxes(background_boxes),
    })


def build_alpha_prompt(video_prompt: str, backend_range: tuple[float, float]) -> str:
    lo, hi = backend_range
    return _render("alpha", {
        "VIDEO_PROMPT": video_prompt,
        "RANGE_LO": f"{lo:g}",
        "RANGE_HI": f"{hi:g}",
    })


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _extract_json_block(text: str) -> str | None:
    """First JSON object in the text: fenced ```json block, else brace matching."""
    fence = re.search(r"```(?:json)?\s*(\{.*?\})\s*```", text, flags=re.DOTALL)
    if fence:
        return fence.group(1)
    start = text.find("{")
    if start == -1:
        return None
    depth = 0
    in_string = False
    escape = False
    for idx in range(start, len(text)):
        ch = text[idx]
        if escape:
            escape = False
            continue
        if ch == "\\":
            escape = True
            continue
        if ch == '"':
            in_string = not in_string
        if in_string:
            continue
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start:idx + 1]
    return None


def _coerce_box(raw, frame_label: str, object_name: str,
                size: tuple[float, float] | None) -> BBox:
    if (not isinstance(raw, (list, tuple)) or len(raw) != 4
            or not all(isinstance(v, (int, float)) for v in raw)):
        raise PlanSchemaError(
            f"box must be four numbers at frame {frame_label}, "
            f"object {object_name}: {raw!r}"
        )
    x1, y1, x2, y2 = (float(v) for v in raw)
    if size is not None:
        w, h = size
        x1, x2 = x1 / w, x2 / w
        y1, y2 = y1 / h, y2 / h
    coords = [x1, y1, x2, y2]
    for v in coords:
        if v < -COORD_MARGIN or v > 1.0 + COORD_MARGIN:
            raise PlanSchemaError(
                f"coordinate {v} outside [0, 1] at frame {frame_label}, "
                f"object {object_name}"
            )
    x1, y1, x2, y2 = (min(max(v, 0.0), 1.0) for v in coords)
    if x1 >= x2:
        raise PlanSchemaError(
            f"x1 >= x2 at frame {frame_label}, object {object_name}"
        )
    if y1 >= y2:
        raise PlanSchemaError(
            f"y1 >= y2 at frame {frame_label}, object {object_name}"
        )
    return BBox(x1, y1, x2, y2)


def _coerce_placement(raw, frame_label: str,
                      size: tuple[float, float] | None) -> tuple[str, BBox]:
    if isinstance(raw, dict) and "name" in raw and "box" in raw:
        name, box = str(raw["name"]), raw["box"]
    elif isinstance(raw, (list, tuple)) and len(raw) == 2:
        name, box = str(raw[0]), raw[1]
    else:
        raise PlanSchemaError(
            f"placement must be [name, box] or {{name, box}} at frame "
            f"{frame_label}: {raw!r}"
        )
    return name, _coerce_box(box, frame_label, name, size)


def parse_layout_plan(llm_text: str, frame_count: int) -> LayoutPlan:
    """Extract and validate the first JSON plan from a model response.

    Prose before or after the JSON block is ignored. Boxes beyond the 0.02
    margin, inverted boxes, and structural damage are schema errors naming
    the frame and object; a response without any JSON block is a parse
    error.
    """
    block = _extract_json_block(llm_text)
    if block is None:
        raise PlanParseError("response contains no JSON block")
    try:
        doc = json.loads(block)
    except json.JSONDecodeError as exc:
        raise PlanParseError(f"extracted block is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise PlanSchemaError(f"plan root must be an object, got {type(doc).__name__}")

    size = None
    if "size" in doc:
        raw = doc["size"]
        if (not isinstance(raw, (list, tuple)) or len(raw) != 2
                or any(not isinstance(v, (int, float)) or v <= 0 for v in raw)):
            raise PlanSchemaError(f"size header must be [width, height]: {raw!r}")
        size = (float(raw[0]), float(raw[1]))

    raw_frames = doc.get("frames")
    if not isinstance(raw_frames, list) or not raw_frames:
        raise PlanSchemaError("plan must contain a nonempty 'frames' list")
    if len(raw_frames) > frame_count:
        raise PlanSchemaError(
            f"plan has {len(raw_frames)} frames but only {frame_count} requested"
        )

    frames = []
    for pos, raw in enumerate(raw_frames):
        if not isinstance(raw, dict):
            raise PlanSchemaError(f"frame {pos} must be an object: {raw!r}")
        index = raw.get("index", pos)
        if not isinstance(index, int) or index < 0:
            raise PlanSchemaError(f"frame {pos} has invalid index {index!r}")
        caption = str(raw.get("caption", ""))
        placements = [
            _coerce_placement(p, str(index), size)
            for p in raw.get("placements", [])
        ]
        frames.append(FramePlan(index=index, caption=caption,
                                placements=placements))
    return LayoutPlan(frames=frames, reasoning=str(doc.get("reasoning", "")))


# ---------------------------------------------------------------------------
# Validation and densification
# ---------------------------------------------------------------------------

def _instances(fp: FramePlan) -> list[tuple[tuple[str, int], BBox]]:
    """Placements keyed by (name, occurrence) so duplicate names track apart."""
    seen: dict[str, int] = {}
    out = []
    for name, box in fp.placements:
        k = seen.get(name, 0)
        seen[name] = k + 1
        out.append(((name, k), box))
    return out


def validate_plan(plan: LayoutPlan, frame_count: int,
                  max_step: float = DEFAULT_MAX_STEP) -> LayoutPlan:
    """Check spatial coherence and return the normalized plan.

    Frame indices must be unique and increasing. A full-length plan is
    renumbered 0..frame_count-1 by rank (absorbing 1-based numbering);
    sparse keyframe plans keep their indices, shifted down when uniformly
    1-based. Validating a validated plan is a no-op.
    """
    if frame_count < 1:
        raise ConfigError(f"frame count must be >= 1, got {frame_count}")
    if len(plan.frames) > frame_count:
        raise PlanSchemaError(
            f"plan has {len(plan.frames)} frames but only {frame_count} requested"
        )
    ordered = sorted(plan.frames, key=lambda fp: fp.index)
    indices = [fp.index for fp in ordered]
    if len(set(indices)) != len(indices):
        raise PlanSchemaError(f"duplicate frame indices: {indices}")

    if len(ordered) == frame_count:
        indices = list(range(frame_count))
    else:
        if indices and indices[-1] > frame_count - 1:
            if indices[0] >= 1 and indices[-1] <= frame_count:
                indices = [i - 1 for i in indices]  # uniformly 1-based
            else:
                raise PlanSchemaError(
                    f"keyframe index {indices[-1]} exceeds frame count {frame_count}"
                )

    frames = [
        FramePlan(index=idx, caption=fp.caption, placements=list(fp.placements))
        for idx, fp in zip(indices, ordered)
    ]

    # Presence runs and per-step displacement, per object instance.
    presence: dict[tuple[str, int], list[int]] = {}
    boxes: dict[tuple[str, int], dict[int, BBox]] = {}
    for rank, fp in enumerate(frames):
        for key, box in _instances(fp):
            presence.setdefault(key, []).append(rank)
            boxes.setdefault(key, {})[rank] = box

    for (name, occurrence), ranks in presence.items():
        label = name if occurrence == 0 else f"{name}#{occurrence + 1}"
        if ranks != list(range(ranks[0], ranks[-1] + 1)):
            missing = sorted(set(range(ranks[0], ranks[-1] + 1)) - set(ranks))
            raise PlanContinuityError(
                f"object {label!r} vanishes at frame(s) "
                f"{[frames[r].index for r in missing]} and reappears"
            )
        for prev, cur in zip(ranks[:-1], ranks[1:]):
            (ax, ay) = boxes[(name, occurrence)][prev].center
            (bx, by) = boxes[(name, occurrence)][cur].center
            disp = ((bx - ax) ** 2 + (by - ay) ** 2) ** 0.5
            if disp > max_step:
                raise PlanContinuityError(
                    f"object {label!r} jumps {disp:.3f} (> {max_step}) between "
                    f"frames {frames[prev].index} and {frames[cur].index}"
                )
    return LayoutPlan(frames=frames, reasoning=plan.reasoning,
                      objects=list(plan.objects))


def interpolate_trajectory(plan: LayoutPlan, frame_count: int) -> LayoutPlan:
    """Densify keyframes to one plan entry per frame.

    Box coordinates interpolate linearly between surrounding keyframes;
    before the first and after the last keyframe the box is held constant.
    Interpolated frames inherit the caption of the previous keyframe. A
    plan that is already full length is returned unchanged.
    """
    if len(plan.frames) > frame_count:
        raise PlanSchemaError(
            f"plan has {len(plan.frames)} keyframes for {frame_count} frames"
        )
    if len(plan.frames) == frame_count:
        return plan

    keys = sorted(plan.frames, key=lambda fp: fp.index)
    if any(fp.index > frame_count - 1 for fp in keys):
        raise PlanSchemaError("keyframe index beyond target frame count")

    key_indices = [fp.index for fp in keys]
    tracks: dict[tuple[str, int], dict[int, BBox]] = {}
    order: list[tuple[str, int]] = []
    for fp in keys:
        for key, box in _instances(fp):
            if key not in tracks:
                tracks[key] = {}
                order.append(key)
            tracks[key][fp.index] = box

    def box_at(key: tuple[str, int], frame: int) -> BBox:
        known = tracks[key]
        present = sorted(known)
        if frame <= present[0]:
            return known[present[0]]
        if frame >= present[-1]:
            return known[present[-1]]
        if frame in known:
            return known[frame]
        lo = max(i for i in present if i < frame)
        hi = min(i for i in present if i > frame)
        w = (frame - lo) / (hi - lo)
        a, b = known[lo], known[hi]
        return BBox(
            x1=a.x1 + (b.x1 - a.x1) * w,
            y1=a.y1 + (b.y1 - a.y1) * w,
            x2=a.x2 + (b.x2 - a.x2) * w,
            y2=a.y2 + (b.y2 - a.y2) * w,
        )

    captions: list[str] = []
    last = keys[0].caption
    by_index = {fp.index: fp.caption for fp in keys}
    for i in range(frame_count):
        if i in by_index:
            last = by_index[i]
        captions.append(last)

    frames = []
    for i in range(frame_count):
        placements = [(key[0], box_at(key, i)) for key in order]
        frames.append(FramePlan(index=i, caption=captions[i],
                                placements=placements))
    return LayoutPlan(frames=frames, reasoning=plan.reasoning,
                      objects=list(plan.objects))


# ---------------------------------------------------------------------------
# Noising-ratio selection
# ---------------------------------------------------------------------------

def select_alpha(video_prompt: str, backend_range: tuple[float, float],
                 llm: Callable[[str], str]) -> float:
    """Ask the model for a noising ratio, parse it, clamp it into range.

    The first numeric literal in the response wins; an unparseable response
    falls back to the range midpoint (logged).
    """
    lo, hi = backend_range
    if not (0.0 < lo <= hi < 1.0):
        raise ConfigError(f"backend range must lie inside (0, 1), got [{lo}, {hi}]")
    response = llm(build_alpha_prompt(video_prompt, backend_range))
    match = _NUMBER_RE.search(response or "")
    if match is None:
        value = (lo + hi) / 2.0
        logger.warning(
            "unparseable noising-ratio response %r; using range midpoint %.3f",
            response, value,
        )
        return value
    return min(max(float(match.group(0)), lo), hi)


# ---------------------------------------------------------------------------
# Deterministic fallback planner
# ---------------------------------------------------------------------------

def fallback_plan(video_prompt: str, frame_count: int,
                  object_specs: Sequence[tuple[str, int, str]]) -> LayoutPlan:
    """Rule-based plan: equal boxes on a horizontal band, fixed per-frame drift.

    ``object_specs`` entries are (name, count, direction) with direction in
    {left, right, up, down, none}. Box size shrinks with the instance count;
    when the band cannot hold all instances without overlap this raises a
    layout error.
    """
    if frame_count < 1:
        raise ConfigError(f"frame count must be >= 1, got {frame_count}")
    if not object_specs:
        raise LayoutError("at least one object spec is required")
    for name, count, direction in object_specs:
        if not name:
            raise LayoutError("object name must be nonempty")
        if count < 1:
            raise LayoutError(f"count for {name!r} must be >= 1, got {count}")
        if direction not in DIRECTIONS:
            raise LayoutError(
                f"direction for {name!r} must be one of {sorted(DIRECTIONS)}"
            )

    margin, gap, travel = 0.02, 0.02, 0.35
    n = sum(count for _, count, _ in object_specs)
    moves_x = any(d in ("left", "right") for _, _, d in object_specs)
    span = 1.0 - 2.0 * margin - (travel if moves_x else 0.0)
    size = min(0.18, (span - (n - 1) * gap) / n if n > 0 else span)
    if size < 0.04:
        raise LayoutError(
            f"cannot fit {n} non-overlapping boxes on one band"
        )

    specs_flat = [(name, direction)
                  for name, count, direction in object_specs
                  for _ in range(count)]
    step = 0.0 if frame_count == 1 else travel / (frame_count - 1)

    frames = []
    for i in range(frame_count):
        placements = []
        for slot, (name, direction) in enumerate(specs_flat):
            dx, dy = DIRECTIONS[direction]
            base_x = margin + (travel if dx < 0 else 0.0) \
                + size / 2.0 + slot * (size + gap)
            base_y = 0.75 if dy < 0 else (0.35 if dy > 0 else 0.55)
            cx = base_x + dx * step * i
            cy = base_y + dy * step * i
            cx = min(max(cx, size / 2.0), 1.0 - size / 2.0)
            cy = min(max(cy, size / 2.0), 1.0 - size / 2.0)
            placements.append((name, BBox(
                x1=cx - size / 2.0, y1=cy - size / 2.0,
                x2=cx + size / 2.0, y2=cy + size / 2.0,
            )))
        frames.append(FramePlan(
            index=i,
            caption=f"{video_prompt} - frame {i}",
            placements=placements,
        ))
    return LayoutPlan(
        frames=frames,
        reasoning="deterministic band layout with fixed per-frame drift",
    )


_STOPWORDS = {
    "a", "an", "the", "of", "in", "on", "at", "to", "with", "and", "is",
    "are", "its", "it", "then", "while", "across", "over", "under", "into",
    "moving", "moves", "runs", "running", "walks", "walking", "drifts",
    "drifting", "flies", "flying", "goes", "going", "slowly", "quickly",
}

_VERB_DIRECTIONS = {
    "rising": "up", "ascending": "up", "ascends": "up", "climbing": "up",
    "falling": "down", "descending": "down", "descends": "down",
    "sinking": "down", "dropping": "down",
}

_NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}


def derive_object_specs(video_prompt: str) -> list[tuple[str, int, str]]:
    """Tiny deterministic heuristic mapping a prompt to fallback specs.

    Explicit direction words win over motion verbs; the first count word or
    digit sets the instance count; the first contentful token names the
    object. Demo/test plumbing, not planning logic - pin specs explicitly
    in the run config for anything beyond smoke runs.
    """
    tokens = re.findall(r"[a-z]+|\d+", video_prompt.lower())
    direction = next((t for t in tokens if t in DIRECTIONS and t != "none"), None)
    if direction is None:
        direction = next(
            (_VERB_DIRECTIONS[t] for t in tokens if t in _VERB_DIRECTIONS),
            "none",
        )
    count = 1
    for t in tokens:
        if t.isdigit():
            count = max(1, int(t))
            break
        if t in _NUMBER_WORDS:
            count = _NUMBER_WORDS[t]
            break
    skip = _STOPWORDS | set(DIRECTIONS) | set(_VERB_DIRECTIONS) | set(_NUMBER_WORDS)
    name = next(
        (t for t in tokens if t not in skip and not t.isdigit()), "object"
    )
    return [(name, count, direction)]


# ---------------------------------------------------------------------------
# Plan file format
# ---------------------------------------------------------------------------

def serialize_plan(plan: LayoutPlan, alpha: float | None = None) -> dict:
    doc = {
        "frames": [
            {
                "index": fp.index,
                "caption": fp.caption,
                "placements": [
                    {"name": name, "box": box.as_list()}
                    for name, box in fp.placements
                ],
            }
            for fp in plan.frames
        ],
        "reasoning": plan.reasoning,
    }
    if alpha is not None:
        doc["alpha"] = alpha
    return doc


def save_plan(plan: LayoutPlan, path: str | Path,
              alpha: float | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(serialize_plan(plan, alpha), indent=2))
    return path


def load_plan(path: str | Path) -> tuple[LayoutPlan, float | None]:
    doc = json.loads(Path(path).read_text())
    frames = [
        FramePlan(
            index=int(fp["index"]),
            caption=str(fp.get("caption", "")),
            placements=[(p["name"], BBox(*p["box"]))
                        for p in fp.get("placements", [])],
        )
        for fp in doc["frames"]
    ]
    plan = LayoutPlan(frames=frames, reasoning=str(doc.get("reasoning", "")))
    alpha = doc.get("alpha")
    return plan, (float(alpha) if alpha is not None else None)
