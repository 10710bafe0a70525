"""Shared 20-case corpus of model plan responses and their required outcomes.

``expect`` is one of:
    ok          parse + validate succeed
    parse       PlanParseError from parse_layout_plan
    schema      PlanSchemaError from parse_layout_plan or validate_plan
    continuity  PlanContinuityError from validate_plan
"""

import json


def _plan_json(frames, reasoning="planned", **extra):
    doc = {"frames": frames, "reasoning": reasoning}
    doc.update(extra)
    return json.dumps(doc)


def _frame(index, placements, caption="a frame"):
    return {"index": index, "caption": caption, "placements": placements}


CASES = [
    {
        "name": "well_formed_two_frames",
        "frame_count": 2,
        "expect": "ok",
        "text": _plan_json([
            _frame(0, [["cat", [0.1, 0.5, 0.3, 0.8]]]),
            _frame(1, [["cat", [0.15, 0.5, 0.35, 0.8]]]),
        ]),
    },
    {
        "name": "chatty_prose_wrapped",
        "frame_count": 2,
        "expect": "ok",
        "text": (
            "Sure! Here is the plan you asked for.\n\n"
            + _plan_json([
                _frame(0, [["dog", [0.2, 0.6, 0.4, 0.9]]]),
                _frame(1, [["dog", [0.25, 0.6, 0.45, 0.9]]]),
            ])
            + "\n\nLet me know if you would like adjustments."
        ),
    },
    {
        "name": "fenced_json_block",
        "frame_count": 2,
        "expect": "ok",
        "text": "```json\n" + _plan_json([
            _frame(0, [["boat", [0.4, 0.4, 0.6, 0.6]]]),
            _frame(1, [["boat", [0.45, 0.4, 0.65, 0.6]]]),
        ]) + "\n```",
    },
    {
        "name": "dict_style_placements",
        "frame_count": 2,
        "expect": "ok",
        "text": _plan_json([
            _frame(0, [{"name": "ball", "box": [0.1, 0.1, 0.2, 0.2]}]),
            _frame(1, [{"name": "ball", "box": [0.15, 0.1, 0.25, 0.2]}]),
        ]),
    },
    {
        "name": "pixel_coordinates_with_size_header",
        "frame_count": 2,
        "expect": "ok",
        "text": _plan_json([
            _frame(0, [["car", [64, 120, 192, 240]]]),
            _frame(1, [["car", [96, 120, 224, 240]]]),
        ], size=[640, 480]),
    },
    {
        "name": "one_based_full_length",
        "frame_count": 3,
        "expect": "ok",
        "text": _plan_json([
            _frame(1, [["bee", [0.1, 0.1, 0.2, 0.2]]]),
            _frame(2, [["bee", [0.2, 0.1, 0.3, 0.2]]]),
            _frame(3, [["bee", [0.3, 0.1, 0.4, 0.2]]]),
        ]),
    },
    {
        "name": "sparse_keyframes",
        "frame_count": 8,
        "expect": "ok",
        "text": _plan_json([
            _frame(0, [["kite", [0.1, 0.2, 0.3, 0.4]]]),
            _frame(4, [["kite", [0.2, 0.2, 0.4, 0.4]]]),
            _frame(7, [["kite", [0.3, 0.2, 0.5, 0.4]]]),
        ]),
    },
    {
        "name": "rounding_slop_within_margin",
        "frame_count": 2,
        "expect": "ok",
        "text": _plan_json([
            _frame(0, [["sun", [-0.01, 0.0, 0.3, 1.015]]]),
            _frame(1, [["sun", [0.0, 0.0, 0.32, 1.0]]]),
        ]),
    },
    {
        "name": "two_objects_moving",
        "frame_count": 2,
        "expect": "ok",
        "text": _plan_json([
            _frame(0, [["hen", [0.1, 0.5, 0.25, 0.7]],
                       ["chick", [0.3, 0.55, 0.4, 0.7]]]),
            _frame(1, [["hen", [0.2, 0.5, 0.35, 0.7]],
                       ["chick", [0.4, 0.55, 0.5, 0.7]]]),
        ]),
    },
    {
        "name": "single_keyframe",
        "frame_count": 6,
        "expect": "ok",
        "text": _plan_json([
            _frame(2, [["rock", [0.4, 0.6, 0.6, 0.8]]]),
        ]),
    },
    {
        "name": "no_json_at_all",
        "frame_count": 2,
        "expect": "parse",
        "text": "I would place the cat on the left and move it slowly right.",
    },
    {
        "name": "unbalanced_json",
        "frame_count": 2,
        "expect": "parse",
        "text": 'Here: {"frames": [{"index": 0, "placements": [',
    },
    {
        "name": "inverted_box_x",
        "frame_count": 2,
        "expect": "schema",
        "text": _plan_json([
            _frame(0, [["cup", [0.5, 0.5, 0.4, 0.9]]]),
            _frame(1, [["cup", [0.5, 0.5, 0.6, 0.9]]]),
        ]),
    },
    {
        "name": "coordinate_out_of_range",
        "frame_count": 2,
        "expect": "schema",
        "text": _plan_json([
            _frame(0, [["kite", [0.5, 0.5, 1.4, 0.9]]]),
            _frame(1, [["kite", [0.5, 0.5, 0.9, 0.9]]]),
        ]),
    },
    {
        "name": "wrong_box_arity",
        "frame_count": 2,
        "expect": "schema",
        "text": _plan_json([
            _frame(0, [["pot", [0.1, 0.2, 0.3]]]),
            _frame(1, [["pot", [0.1, 0.2, 0.3, 0.4]]]),
        ]),
    },
    {
        "name": "frames_not_a_list",
        "frame_count": 2,
        "expect": "schema",
        "text": '{"frames": {"index": 0}, "reasoning": "nope"}',
    },
    {
        "name": "more_frames_than_requested",
        "frame_count": 2,
        "expect": "schema",
        "text": _plan_json([
            _frame(i, [["ant", [0.1 + 0.02 * i, 0.1, 0.2 + 0.02 * i, 0.2]]])
            for i in range(4)
        ]),
    },
    {
        "name": "non_integer_index",
        "frame_count": 2,
        "expect": "schema",
        "text": _plan_json([
            {"index": "two", "caption": "", "placements": []},
            _frame(1, []),
        ]),
    },
    {
        "name": "teleporting_object",
        "frame_count": 2,
        "expect": "continuity",
        "text": _plan_json([
            _frame(0, [["owl", [0.45, 0.45, 0.55, 0.55]]]),
            _frame(1, [["owl", [0.9, 0.9, 1.0, 1.0]]]),
        ]),
    },
    {
        "name": "vanish_and_reappear",
        "frame_count": 3,
        "expect": "continuity",
        "text": _plan_json([
            _frame(0, [["fox", [0.1, 0.5, 0.3, 0.7]]]),
            _frame(1, []),
            _frame(2, [["fox", [0.2, 0.5, 0.4, 0.7]]]),
        ]),
    },
]

assert len(CASES) == 20
