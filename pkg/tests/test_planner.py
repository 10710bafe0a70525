import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchvid.errors import (
    ConfigError,
    DataError,
    LayoutError,
    PlanContinuityError,
    PlanParseError,
    PlanSchemaError,
)
from sketchvid.planner import (
    BBox,
    DetectedObject,
    FramePlan,
    LayoutPlan,
    build_background_prompt,
    build_plan_prompt,
    fallback_plan,
    interpolate_trajectory,
    load_plan,
    parse_layout_plan,
    save_plan,
    select_alpha,
    serialize_plan,
    template_id,
    validate_plan,
)

from plan_cases import CASES


# ---------------------------------------------------------------------------
# prompt rendering
# ---------------------------------------------------------------------------

def test_background_prompt_contains_instruction_and_prompt():
    prompt = "A cat sinking to the left in the living room"
    rendered = build_background_prompt(prompt)
    assert prompt in rendered
    assert "only the background" in rendered
    assert "static camera" in rendered.lower()


def test_background_prompt_rejects_empty():
    with pytest.raises(ConfigError):
        build_background_prompt("")
    with pytest.raises(ConfigError):
        build_background_prompt("   ")


def test_background_prompt_preserves_template_breaking_characters():
    tricky = 'a {weird} "prompt" with ${brace} soup \\ and {{double}}'
    rendered = build_background_prompt(tricky)
    assert tricky in rendered


def test_plan_prompt_box_serialization_matches_wire_format():
    boxes = [DetectedObject(label="path", box=BBox(0.44, 0.57, 0.99, 0.99))]
    rendered = build_plan_prompt("a dog running", boxes, 16)
    assert '{"label": "path", "box": [0.44, 0.57, 0.99, 0.99]}' in rendered
    assert "16" in rendered


def test_plan_prompt_empty_boxes_marker():
    rendered = build_plan_prompt("a dog running", [], 8)
    assert "(no detected objects)" in rendered


def test_plan_prompt_rejects_tiny_frame_count():
    with pytest.raises(ConfigError):
        build_plan_prompt("a dog", [], 1)


def test_template_ids_are_stable_and_distinct():
    ids = {template_id(n) for n in ("background", "plan", "alpha")}
    assert len(ids) == 3
    assert template_id("plan") == template_id("plan")
    assert all("@" in i for i in ids)


# ---------------------------------------------------------------------------
# corpus: parse + validate outcomes
# ---------------------------------------------------------------------------

def run_case(case):
    """Parse and validate one corpus case; returns the plan on success."""
    plan = parse_layout_plan(case["text"], case["frame_count"])
    return validate_plan(plan, case["frame_count"])


@pytest.mark.parametrize("case", CASES, ids=[c["name"] for c in CASES])
def test_corpus_outcomes(case):
    expect = case["expect"]
    if expect == "ok":
        plan = run_case(case)
        assert len(plan.frames) >= 1
        for fp in plan.frames:
            for _, box in fp.placements:
                assert 0.0 <= box.x1 < box.x2 <= 1.0
                assert 0.0 <= box.y1 < box.y2 <= 1.0
    elif expect == "parse":
        with pytest.raises(PlanParseError):
            run_case(case)
    elif expect == "schema":
        with pytest.raises(PlanSchemaError):
            run_case(case)
    elif expect == "continuity":
        with pytest.raises(PlanContinuityError):
            run_case(case)
    else:  # pragma: no cover
        raise AssertionError(expect)


def test_schema_error_names_frame_and_object():
    case = next(c for c in CASES if c["name"] == "inverted_box_x")
    with pytest.raises(PlanSchemaError) as err:
        run_case(case)
    msg = str(err.value)
    assert "x1 >= x2" in msg and "0" in msg and "cup" in msg


def test_pixel_coordinates_are_normalized():
    case = next(c for c in CASES if c["name"] == "pixel_coordinates_with_size_header")
    plan = parse_layout_plan(case["text"], 2)
    box = plan.frames[0].placements[0][1]
    assert box == BBox(0.1, 0.25, 0.3, 0.5)


def test_prose_wrapping_is_transparent():
    bare = next(c for c in CASES if c["name"] == "well_formed_two_frames")
    wrapped = "preamble " + bare["text"] + " postamble"
    assert parse_layout_plan(wrapped, 2) == parse_layout_plan(bare["text"], 2)


# ---------------------------------------------------------------------------
# validate_plan details
# ---------------------------------------------------------------------------

def _plan(entries, reasoning="r"):
    return LayoutPlan(
        frames=[FramePlan(index=i, caption=c, placements=p) for i, c, p in entries],
        reasoning=reasoning,
    )


def test_validate_jump_displacement_hand_arithmetic():
    # centers (0.5, 0.5) -> (0.95, 0.95): hypot(0.45, 0.45) ~ 0.636 > 0.25
    plan = _plan([
        (0, "", [("cat", BBox(0.4, 0.4, 0.6, 0.6))]),
        (1, "", [("cat", BBox(0.9, 0.9, 1.0, 1.0))]),
    ])
    with pytest.raises(PlanContinuityError) as err:
        validate_plan(plan, 2)
    assert "0.636" in str(err.value)


def test_validate_straight_line_passes_unchanged():
    plan = _plan([
        (0, "a", [("cat", BBox(0.1, 0.4, 0.3, 0.6))]),
        (1, "b", [("cat", BBox(0.2, 0.4, 0.4, 0.6))]),
        (2, "c", [("cat", BBox(0.3, 0.4, 0.5, 0.6))]),
    ])
    out = validate_plan(plan, 3)
    assert out == plan


def test_validate_is_idempotent():
    plan = _plan([
        (1, "a", [("cat", BBox(0.1, 0.4, 0.3, 0.6))]),
        (2, "b", [("cat", BBox(0.2, 0.4, 0.4, 0.6))]),
    ])
    once = validate_plan(plan, 2)
    twice = validate_plan(once, 2)
    assert [fp.index for fp in once.frames] == [0, 1]
    assert once == twice


def test_validate_custom_max_step():
    plan = _plan([
        (0, "", [("cat", BBox(0.0, 0.4, 0.2, 0.6))]),
        (1, "", [("cat", BBox(0.3, 0.4, 0.5, 0.6))]),
    ])
    validate_plan(plan, 2, max_step=0.35)
    with pytest.raises(PlanContinuityError):
        validate_plan(plan, 2, max_step=0.2)


def test_validate_duplicate_indices_rejected():
    plan = _plan([
        (0, "", []),
        (0, "", []),
    ])
    with pytest.raises(PlanSchemaError):
        validate_plan(plan, 2)


def test_validate_duplicate_names_tracked_per_instance():
    plan = _plan([
        (0, "", [("egg", BBox(0.1, 0.4, 0.2, 0.5)),
                 ("egg", BBox(0.7, 0.4, 0.8, 0.5))]),
        (1, "", [("egg", BBox(0.15, 0.4, 0.25, 0.5)),
                 ("egg", BBox(0.75, 0.4, 0.85, 0.5))]),
    ])
    validate_plan(plan, 2)  # both instances move < max_step


# ---------------------------------------------------------------------------
# interpolate_trajectory
# ---------------------------------------------------------------------------

def test_interpolate_linear_midpoint():
    plan = _plan([
        (0, "start", [("egg", BBox(0.0, 0.4, 0.2, 0.6))]),
        (2, "end", [("egg", BBox(0.4, 0.4, 0.6, 0.6))]),
    ])
    dense = interpolate_trajectory(plan, 3)
    assert len(dense.frames) == 3
    mid = dense.frames[1].placements[0][1]
    assert mid.x1 == pytest.approx(0.2)
    assert mid.x2 == pytest.approx(0.4)
    # keyframes preserved exactly
    assert dense.frames[0].placements[0][1] == BBox(0.0, 0.4, 0.2, 0.6)
    assert dense.frames[2].placements[0][1] == BBox(0.4, 0.4, 0.6, 0.6)


def test_interpolate_identity_when_full_length():
    plan = _plan([
        (0, "", [("cat", BBox(0.1, 0.1, 0.2, 0.2))]),
        (1, "", [("cat", BBox(0.2, 0.1, 0.3, 0.2))]),
    ])
    assert interpolate_trajectory(plan, 2) is plan


def test_interpolate_single_keyframe_constant():
    plan = _plan([(3, "only", [("rock", BBox(0.4, 0.6, 0.6, 0.8))])])
    dense = interpolate_trajectory(plan, 6)
    assert len(dense.frames) == 6
    for fp in dense.frames:
        assert fp.placements == [("rock", BBox(0.4, 0.6, 0.6, 0.8))]


def test_interpolate_endpoint_hold():
    plan = _plan([
        (2, "a", [("kite", BBox(0.1, 0.2, 0.3, 0.4))]),
        (4, "b", [("kite", BBox(0.5, 0.2, 0.7, 0.4))]),
    ])
    dense = interpolate_trajectory(plan, 7)
    assert dense.frames[0].placements[0][1] == BBox(0.1, 0.2, 0.3, 0.4)
    assert dense.frames[1].placements[0][1] == BBox(0.1, 0.2, 0.3, 0.4)
    assert dense.frames[5].placements[0][1] == BBox(0.5, 0.2, 0.7, 0.4)
    assert dense.frames[6].placements[0][1] == BBox(0.5, 0.2, 0.7, 0.4)
    assert dense.frames[3].placements[0][1].x1 == pytest.approx(0.3)


def test_interpolated_boxes_stay_in_unit_square():
    plan = _plan([
        (0, "", [("bird", BBox(0.0, 0.0, 0.2, 0.2))]),
        (5, "", [("bird", BBox(0.8, 0.8, 1.0, 1.0))]),
    ])
    dense = interpolate_trajectory(plan, 6)
    for fp in dense.frames:
        box = fp.placements[0][1]
        assert 0.0 <= box.x1 < box.x2 <= 1.0
        assert 0.0 <= box.y1 < box.y2 <= 1.0


def test_interpolate_caption_hold():
    plan = _plan([
        (0, "opening", [("cat", BBox(0.1, 0.1, 0.2, 0.2))]),
        (3, "closing", [("cat", BBox(0.2, 0.1, 0.3, 0.2))]),
    ])
    dense = interpolate_trajectory(plan, 4)
    assert [fp.caption for fp in dense.frames] == [
        "opening", "opening", "opening", "closing"
    ]


# ---------------------------------------------------------------------------
# select_alpha
# ---------------------------------------------------------------------------

def test_select_alpha_parses_plain_number():
    assert select_alpha("p", (0.5, 0.8), lambda _: "0.7") == 0.7


def test_select_alpha_clamps_to_range():
    assert select_alpha("p", (0.7, 0.9), lambda _: "0.95") == 0.9
    assert select_alpha("p", (0.7, 0.9), lambda _: "0.1") == 0.7


def test_select_alpha_midpoint_fallback(caplog):
    import logging

    with caplog.at_level(logging.WARNING, logger="sketchvid.planner"):
        value = select_alpha("p", (0.7, 0.9), lambda _: "I think medium")
    assert value == pytest.approx(0.8)
    assert any("midpoint" in rec.message for rec in caplog.records)


def test_select_alpha_prompt_carries_range_and_prior():
    seen = {}

    def llm(prompt):
        seen["prompt"] = prompt
        return "0.6"

    select_alpha("a bouncing ball", (0.5, 0.8), llm)
    assert "0.5" in seen["prompt"] and "0.8" in seen["prompt"]
    assert "a bouncing ball" in seen["prompt"]
    assert "lower" in seen["prompt"] and "higher" in seen["prompt"]


def test_select_alpha_rejects_bad_range():
    with pytest.raises(ConfigError):
        select_alpha("p", (0.0, 0.9), lambda _: "0.5")


# ---------------------------------------------------------------------------
# fallback planner
# ---------------------------------------------------------------------------

def test_fallback_single_object_moves_left_monotonically():
    plan = fallback_plan("an egg moving left", 8, [("egg", 1, "left")])
    assert len(plan.frames) == 8
    centers = [fp.placements[0][1].center[0] for fp in plan.frames]
    assert all(a > b for a, b in zip(centers, centers[1:]))


def test_fallback_three_static_nonoverlapping():
    plan = fallback_plan("three cups", 4, [("cup", 3, "none")])
    first = plan.frames[0].placements
    assert len(first) == 3
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = first[i][1], first[j][1]
            assert a.x2 <= b.x1 or b.x2 <= a.x1  # disjoint horizontally
    # static: same boxes in every frame
    for fp in plan.frames[1:]:
        assert fp.placements == first


def test_fallback_overflow_errors():
    with pytest.raises(LayoutError):
        fallback_plan("crowd", 4, [("person", 50, "none")])


def test_fallback_is_deterministic_and_validates():
    a = fallback_plan("two boats drifting right", 6, [("boat", 2, "right")])
    b = fallback_plan("two boats drifting right", 6, [("boat", 2, "right")])
    assert a == b
    validate_plan(a, 6)


def test_fallback_vertical_motion():
    plan = fallback_plan("a balloon rising", 5, [("balloon", 1, "up")])
    ys = [fp.placements[0][1].center[1] for fp in plan.frames]
    assert all(a > b for a, b in zip(ys, ys[1:]))


def test_fallback_rejects_bad_specs():
    with pytest.raises(LayoutError):
        fallback_plan("p", 4, [])
    with pytest.raises(LayoutError):
        fallback_plan("p", 4, [("cat", 0, "left")])
    with pytest.raises(LayoutError):
        fallback_plan("p", 4, [("cat", 1, "sideways")])


# ---------------------------------------------------------------------------
# round-trip
# ---------------------------------------------------------------------------

def test_parse_serialize_round_trip_on_corpus():
    for case in CASES:
        if case["expect"] != "ok":
            continue
        plan = parse_layout_plan(case["text"], case["frame_count"])
        rebuilt = parse_layout_plan(json.dumps(serialize_plan(plan)),
                                    case["frame_count"])
        assert rebuilt == plan, case["name"]


_names = st.sampled_from(["cat", "dog", "boat", "egg", "kite"])


@st.composite
def _boxes(draw):
    x1 = draw(st.floats(0.0, 0.8))
    y1 = draw(st.floats(0.0, 0.8))
    x2 = draw(st.floats(min(x1 + 0.05, 1.0), 1.0))
    y2 = draw(st.floats(min(y1 + 0.05, 1.0), 1.0))
    return BBox(x1, y1, x2, y2)


@st.composite
def _plans(draw):
    n = draw(st.integers(1, 5))
    frames = []
    for i in range(n):
        placements = draw(st.lists(st.tuples(_names, _boxes()), max_size=3))
        caption = draw(st.text(max_size=20))
        frames.append(FramePlan(index=i, caption=caption,
                                placements=placements))
    return LayoutPlan(frames=frames, reasoning=draw(st.text(max_size=30)))


@settings(max_examples=60, deadline=None)
@given(plan=_plans())
def test_round_trip_property(plan):
    rebuilt = parse_layout_plan(json.dumps(serialize_plan(plan)),
                                len(plan.frames))
    assert rebuilt == plan


def test_plan_file_round_trip(tmp_path):
    plan = _plan([
        (0, "a", [("cat", BBox(0.1, 0.2, 0.3, 0.4))]),
        (1, "b", [("cat", BBox(0.2, 0.2, 0.4, 0.4))]),
    ])
    path = save_plan(plan, tmp_path / "plan.json", alpha=0.75)
    loaded, alpha = load_plan(path)
    assert loaded == plan
    assert alpha == 0.75
    doc = json.loads(path.read_text())
    assert set(doc) == {"frames", "reasoning", "alpha"}
    assert set(doc["frames"][0]) == {"index", "caption", "placements"}
    assert set(doc["frames"][0]["placements"][0]) == {"name", "box"}


# ---------------------------------------------------------------------------
# type invariants
# ---------------------------------------------------------------------------

def test_bbox_validation():
    with pytest.raises(DataError):
        BBox(0.5, 0.1, 0.4, 0.2)
    with pytest.raises(DataError):
        BBox(-0.1, 0.1, 0.4, 0.2)
    with pytest.raises(DataError):
        BBox(0.1, 0.1, 0.4, 1.2)


def test_detected_object_validation():
    with pytest.raises(DataError):
        DetectedObject(label="", box=BBox(0.1, 0.1, 0.2, 0.2))
    with pytest.raises(DataError):
        DetectedObject(label="x", box=BBox(0.1, 0.1, 0.2, 0.2), confidence=1.5)


def test_layout_plan_roster_consistency():
    with pytest.raises(PlanSchemaError):
        LayoutPlan(frames=[], reasoning="")
    plan = LayoutPlan(
        frames=[FramePlan(index=0, placements=[("cat", BBox(0.1, 0.1, 0.2, 0.2))])],
    )
    assert plan.objects == ["cat"]
    with pytest.raises(PlanSchemaError):
        LayoutPlan(
            frames=[FramePlan(index=0,
                              placements=[("cat", BBox(0.1, 0.1, 0.2, 0.2))])],
            objects=["dog"],
        )
