"""
Unit tests for the turn grammar of the vision agent.

Turn Parsing:
   - <think> / <tool_call> / <answer> extraction
   - Tool payload decoding (JSON, string arguments, Python-literal fallback)
   - Violation flags and their format classes
   - Canonical rendering of parsed turns
   - Robustness against mutated tag soup
"""

import random
import unittest

from app.backend.tool_parser import (
    FinalAnswer,
    LookbackReuse,
    Malformed,
    ParsedTurn,
    ViolationClass,
    ViolationFlag,
    ZoomIn,
    corrective_notice,
    parse_tool_payload,
    parse_turn,
    render_turn,
    serialize_tool_result,
    violation_classes,
)
from app.backend.visual_tools import ToolResult, ToolStatus

ZOOM_CALL = (
    '<tool_call>{"name": "zoom_in", "arguments": '
    '{"image_index": 0, "bbox": [10, 20, 110, 220], "label": "clock"}}</tool_call>'
)


class TestParseTurn(unittest.TestCase):
    """
    Test suite for turn parsing.

    Validates:
    - Exactly one action per turn
    - Thinking text extraction
    - Flags raised for every format violation
    - Malformed diagnostics instead of exceptions
    """

    # Positive Test Cases
    def test_answer_turn(self):
        """Test a compliant answer turn."""

        turn = parse_turn("<think>The clock shows noon.</think><answer>B</answer>")

        self.assertEqual(turn.thinking, "The clock shows noon.")
        self.assertEqual(turn.action, FinalAnswer("B"))
        self.assertEqual(turn.violation_flags, frozenset())
        self.assertTrue(turn.is_answer)

    def test_zoom_in_turn(self):
        """Test a compliant zoom_in call."""

        turn = parse_turn(f"<think>Too small to read.</think>{ZOOM_CALL}")

        self.assertEqual(turn.action, ZoomIn(image_index=0, bbox=(10, 20, 110, 220), label="clock"))
        self.assertTrue(turn.is_tool_call)
        self.assertEqual(turn.violation_flags, frozenset())

    def test_lookback_reuse_turn(self):
        """Test a compliant lookback_reuse call."""

        text = (
            "<think>Check the first image again.</think>"
            '<tool_call>{"name": "lookback_reuse", "arguments": '
            '{"image_index": 1, "reason": "compare colors"}}</tool_call>'
        )
        turn = parse_turn(text)

        self.assertEqual(turn.action, LookbackReuse(image_index=1, reason="compare colors"))

    def test_whitespace_between_blocks_is_allowed(self):
        """Test that newlines around blocks are not stray text."""

        turn = parse_turn("\n<think>ok</think>\n\n<answer> 42 </answer>\n")

        self.assertEqual(turn.action, FinalAnswer("42"))
        self.assertEqual(turn.violation_flags, frozenset())

    def test_arguments_as_json_string(self):
        """Test arguments given as a JSON-encoded string."""

        call = parse_tool_payload(
            '{"name": "lookback_reuse", "arguments": "{\\"image_index\\": 0, \\"reason\\": \\"x\\"}"}'
        )

        self.assertEqual(call, LookbackReuse(image_index=0, reason="x"))

    def test_python_literal_fallback(self):
        """Test a single-quoted Python dict payload."""

        call = parse_tool_payload(
            "{'name': 'zoom_in', 'arguments': {'image_index': 0, 'bbox': [0, 0, 5, 5], 'label': 'a'}}"
        )

        self.assertEqual(call, ZoomIn(image_index=0, bbox=(0, 0, 5, 5), label="a"))

    def test_integral_float_coordinates(self):
        """Test that 10.0 is accepted as the integer 10."""

        call = parse_tool_payload(
            '{"name": "zoom_in", "arguments": {"image_index": 0.0, "bbox": [10.0, 0, 20, 30], "label": "a"}}'
        )

        self.assertEqual(call.bbox, (10, 0, 20, 30))
        self.assertEqual(call.image_index, 0)

    def test_extra_argument_keys_are_ignored(self):
        """Test that unknown argument keys do not fail the call."""

        call = parse_tool_payload(
            '{"name": "lookback_reuse", "arguments": {"image_index": 0, "reason": "r", "zoom": 2}}'
        )

        self.assertEqual(call, LookbackReuse(image_index=0, reason="r"))

    def test_nested_tag_inside_think(self):
        """Test that an answer inside the think block is flagged but not taken."""

        turn = parse_turn("<think>maybe <answer>A</answer></think><answer>C</answer>")

        self.assertEqual(turn.action, FinalAnswer("C"))
        self.assertIn(ViolationFlag.NESTED_TAGS, turn.violation_flags)

    # Flags on otherwise parseable turns
    def test_missing_think(self):
        """Test an answer without a think block."""

        turn = parse_turn("<answer>B</answer>")

        self.assertEqual(turn.action, FinalAnswer("B"))
        self.assertEqual(turn.violation_flags, frozenset({ViolationFlag.MISSING_THINK}))

    def test_text_after_answer(self):
        """Test trailing text after the answer block."""

        turn = parse_turn("<think>x</think><answer>B</answer> I am sure.")

        self.assertEqual(turn.action, FinalAnswer("B"))
        self.assertIn(ViolationFlag.TEXT_AFTER_ANSWER, turn.violation_flags)

    def test_stray_text_before_action(self):
        """Test text between the think block and the action."""

        turn = parse_turn("<think>x</think> so <answer>B</answer>")

        self.assertIn(ViolationFlag.STRAY_TEXT, turn.violation_flags)

    def test_unbalanced_think(self):
        """Test a closing think tag without an opening one."""

        turn = parse_turn("reasoning</think><answer>B</answer>")

        self.assertEqual(turn.action, FinalAnswer("B"))
        self.assertIn(ViolationFlag.UNBALANCED_THINK, turn.violation_flags)
        self.assertNotIn(ViolationFlag.MISSING_THINK, turn.violation_flags)

    # Negative Test Cases
    def test_no_action_block(self):
        """Test a turn with thinking only."""

        turn = parse_turn("<think>hmm</think>")

        self.assertEqual(turn.action, Malformed("no action block"))
        self.assertIn(ViolationFlag.MISSING_ANSWER, turn.violation_flags)

    def test_multiple_tool_calls(self):
        """Test two tool calls in one turn."""

        turn = parse_turn(f"<think>x</think>{ZOOM_CALL}{ZOOM_CALL}")

        self.assertTrue(turn.is_malformed)
        self.assertIn(ViolationFlag.MULTIPLE_TOOL_CALLS, turn.violation_flags)

    def test_multiple_answers(self):
        """Test two answer blocks in one turn."""

        turn = parse_turn("<think>x</think><answer>A</answer><answer>B</answer>")

        self.assertEqual(turn.action, Malformed("multiple answer blocks"))
        self.assertIn(ViolationFlag.MULTIPLE_ANSWERS, turn.violation_flags)

    def test_tool_call_and_answer(self):
        """Test a turn with both a tool call and an answer."""

        turn = parse_turn(f"<think>x</think>{ZOOM_CALL}<answer>B</answer>")

        self.assertTrue(turn.is_malformed)

    def test_unclosed_answer(self):
        """Test an answer block that never closes."""

        turn = parse_turn("<think>x</think><answer>B")

        self.assertEqual(turn.action, Malformed("unclosed answer tag"))
        self.assertIn(ViolationFlag.UNCLOSED_TAG, turn.violation_flags)

    def test_overlapping_tags(self):
        """Test interleaved closing tags."""

        turn = parse_turn("<think>a<answer>b</think></answer>")

        self.assertEqual(turn.action, Malformed("overlapping tags"))
        self.assertIn(ViolationFlag.OVERLAPPING_TAGS, turn.violation_flags)

    def test_nested_action_tags(self):
        """Test an answer nested inside a tool call."""

        turn = parse_turn("<think>x</think><tool_call><answer>B</answer></tool_call>")

        self.assertEqual(turn.action, Malformed("nested action tags"))

    def test_unparseable_payload(self):
        """Test a tool call body that is neither JSON nor a literal."""

        turn = parse_turn("<think>x</think><tool_call>zoom please</tool_call>")

        self.assertEqual(turn.action, Malformed("unparseable tool arguments"))
        self.assertEqual(turn.violation_flags, frozenset({ViolationFlag.MALFORMED_TOOL_BLOCK}))

    def test_fractional_bbox(self):
        """Test that non-integral coordinates are rejected."""

        turn = parse_turn(
            '<think>x</think><tool_call>{"name": "zoom_in", "arguments": '
            '{"image_index": 0, "bbox": [1.5, 0, 20, 30], "label": "a"}}</tool_call>'
        )

        self.assertTrue(turn.is_malformed)
        self.assertTrue(turn.action.diagnostic.startswith("invalid tool call"))
        self.assertIn(ViolationFlag.MALFORMED_TOOL_BLOCK, turn.violation_flags)

    def test_inverted_bbox(self):
        """Test a bbox with x1 >= x2."""

        with self.assertRaises(ValueError) as context:
            parse_tool_payload(
                '{"name": "zoom_in", "arguments": {"image_index": 0, "bbox": [50, 0, 20, 30], "label": "a"}}'
            )

        self.assertIn("x1 < x2", str(context.exception))

    def test_unknown_tool(self):
        """Test a tool name outside the catalog."""

        with self.assertRaises(ValueError) as context:
            parse_tool_payload('{"name": "rotate", "arguments": {}}')

        self.assertIn("unknown tool", str(context.exception))

    def test_empty_label(self):
        """Test a zoom_in call with a blank label."""

        with self.assertRaises(ValueError):
            parse_tool_payload(
                '{"name": "zoom_in", "arguments": {"image_index": 0, "bbox": [0, 0, 5, 5], "label": " "}}'
            )

    def test_non_text_input(self):
        """Test that None is parsed as an empty turn."""

        turn = parse_turn(None)

        self.assertTrue(turn.is_malformed)
        self.assertEqual(turn.raw, "")


class TestViolationClasses(unittest.TestCase):
    """
    Test suite for the mapping of flags onto the four format classes.
    """

    def test_flags_collapse_into_classes(self):
        """Test that flags of one class count once."""

        classes = violation_classes(
            {ViolationFlag.MISSING_THINK, ViolationFlag.UNBALANCED_THINK, ViolationFlag.STRAY_TEXT}
        )

        self.assertEqual(classes, {ViolationClass.THINK_TAGS, ViolationClass.TAG_STRUCTURE})

    def test_every_flag_has_a_class(self):
        """Test that every flag maps onto a class."""

        self.assertEqual(len(violation_classes(set(ViolationFlag))), len(ViolationClass))


class TestRenderTurn(unittest.TestCase):
    """
    Test suite for canonical rendering.

    Validates:
    - Parsing a rendered turn gives back the same thinking and action
    - Malformed turns keep their raw text
    """

    def test_round_trip(self):
        """Test render then parse for the action kinds."""

        turns = [
            "<think>a</think><answer>B</answer>",
            f"<think>zoom</think>{ZOOM_CALL}",
            '<think>b</think><tool_call>{"name": "lookback_reuse", "arguments": '
            '{"image_index": 2, "reason": "compare"}}</tool_call>',
            "<answer>no think</answer>",
        ]

        for text in turns:
            with self.subTest(text=text):
                parsed = parse_turn(text)
                again = parse_turn(render_turn(parsed))

                self.assertEqual(again.thinking, parsed.thinking)
                self.assertEqual(again.action, parsed.action)

    def test_malformed_keeps_raw(self):
        """Test that a malformed turn renders as its raw text."""

        parsed = parse_turn("<think>x</think>")

        self.assertEqual(render_turn(parsed), "<think>x</think>")


class TestToolResultText(unittest.TestCase):
    """
    Test suite for tool results and corrective notices as message content.
    """

    def test_zoom_in_result_echoes_effective_region(self):
        """Test that the cropped region, not the requested one, is reported."""

        call = ZoomIn(image_index=0, bbox=(10, 10, 20, 20), label="sign")
        result = ToolResult(status=ToolStatus.OK, message="", source_call=call, region=(1, 1, 29, 29))

        segments = serialize_tool_result(result)

        self.assertEqual(
            segments,
            [{"type": "text", "text": "Tool zoom_in succeeded on image 0, region [1,1,29,29] (sign):"}],
        )

    def test_failure_line(self):
        """Test the failure text of a tool."""

        call = LookbackReuse(image_index=3, reason="r")
        result = ToolResult(
            status=ToolStatus.ERROR,
            message="image_index 3 out of range (1 images provided)",
            source_call=call,
        )

        self.assertEqual(
            serialize_tool_result(result)[0]["text"],
            "Tool lookback_reuse failed: image_index 3 out of range (1 images provided).",
        )

    def test_corrective_notice_names_diagnostic(self):
        """Test that the notice names why the turn failed."""

        notice = corrective_notice(parse_turn("<think>x</think>"))

        self.assertIn("no action block", notice)


class TestParserFuzz(unittest.TestCase):
    """
    Robustness run over mutated tag soup: the parser never raises and every
    input yields exactly one parsed turn.
    """

    PIECES = [
        "<think>",
        "</think>",
        "<tool_call>",
        "</tool_call>",
        "<answer>",
        "</answer>",
        "B",
        " ",
        "\n",
        "{",
        "}",
        '"name": "zoom_in"',
        '"arguments": {"image_index": 0, "bbox": [0, 0, 5, 5], "label": "x"}',
        '"name": "lookback_reuse"',
        ",",
        "[",
        "]",
        "<thin",
        "k>",
        "'",
        "1e309",
        "\x00",
        "é",
    ]

    SEEDS = [
        "<think>a</think><answer>B</answer>",
        f"<think>zoom</think>{ZOOM_CALL}",
    ]

    def test_fuzz_never_raises(self):
        """Test 100,000 mutated inputs."""

        rng = random.Random(0)
        parsed_count = 0
        malformed_count = 0
        total = 100_000

        for _ in range(total):
            if rng.random() < 0.5:
                text = "".join(rng.choice(self.PIECES) for _ in range(rng.randint(0, 12)))
            else:
                text = list(rng.choice(self.SEEDS))
                for _ in range(rng.randint(1, 4)):
                    position = rng.randrange(len(text) + 1)
                    operation = rng.random()
                    if operation < 0.4 and text:
                        del text[min(position, len(text) - 1)]
                    elif operation < 0.8:
                        text.insert(position, rng.choice(self.PIECES))
                    else:
                        text = text[:position]
                text = "".join(text)

            turn = parse_turn(text)

            self.assertIsInstance(turn, ParsedTurn)
            if turn.is_malformed:
                malformed_count += 1
            else:
                parsed_count += 1

        self.assertEqual(parsed_count + malformed_count, total)


if __name__ == "__main__":
    unittest.main()
