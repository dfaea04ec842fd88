"""
Turn grammar of the vision agent: parsing and rendering of model turns.

A model turn is

    <think>free reasoning</think>
    <tool_call>{"name": "zoom_in", "arguments": {...}}</tool_call>

or

    <think>free reasoning</think>
    <answer>final answer</answer>

parse_turn never raises: every failure is reported as a Malformed action
with a diagnostic and a set of format-violation flags, which the format
reward later turns into score deductions.
"""

# Python
import ast
import enum
import json
import re
from dataclasses import dataclass, field
from typing import Optional, Union

THINK_TAG = "think"
TOOL_CALL_TAG = "tool_call"
ANSWER_TAG = "answer"
ACTION_TAGS = (TOOL_CALL_TAG, ANSWER_TAG)

ZOOM_IN = "zoom_in"
LOOKBACK_REUSE = "lookback_reuse"

TAG_PATTERN = re.compile(r"<(/?)(think|tool_call|answer)>")

# Python-literal fallback is only attempted on short payloads
LITERAL_FALLBACK_LIMIT = 64 * 1024


class ViolationFlag(str, enum.Enum):
    MISSING_THINK = "missing_think"
    UNBALANCED_THINK = "unbalanced_think"
    MALFORMED_TOOL_BLOCK = "malformed_tool_block"
    OVERLAPPING_TAGS = "overlapping_tags"
    NESTED_TAGS = "nested_tags"
    UNCLOSED_TAG = "unclosed_tag"
    MULTIPLE_TOOL_CALLS = "multiple_tool_calls"
    STRAY_TEXT = "stray_text"
    MISSING_ANSWER = "missing_answer"
    MULTIPLE_ANSWERS = "multiple_answers"
    TEXT_AFTER_ANSWER = "text_after_answer"


class ViolationClass(str, enum.Enum):
    THINK_TAGS = "think_tags"
    TOOL_BLOCK = "tool_block"
    TAG_STRUCTURE = "tag_structure"
    ANSWER = "answer"


VIOLATION_CLASSES = {
    ViolationFlag.MISSING_THINK: ViolationClass.THINK_TAGS,
    ViolationFlag.UNBALANCED_THINK: ViolationClass.THINK_TAGS,
    ViolationFlag.MALFORMED_TOOL_BLOCK: ViolationClass.TOOL_BLOCK,
    ViolationFlag.OVERLAPPING_TAGS: ViolationClass.TAG_STRUCTURE,
    ViolationFlag.NESTED_TAGS: ViolationClass.TAG_STRUCTURE,
    ViolationFlag.UNCLOSED_TAG: ViolationClass.TAG_STRUCTURE,
    ViolationFlag.MULTIPLE_TOOL_CALLS: ViolationClass.TAG_STRUCTURE,
    ViolationFlag.STRAY_TEXT: ViolationClass.TAG_STRUCTURE,
    ViolationFlag.MISSING_ANSWER: ViolationClass.ANSWER,
    ViolationFlag.MULTIPLE_ANSWERS: ViolationClass.ANSWER,
    ViolationFlag.TEXT_AFTER_ANSWER: ViolationClass.ANSWER,
}


@dataclass(frozen=True)
class ZoomIn:
    """Visual confirmation: crop `bbox` of image `image_index`."""

    image_index: int
    bbox: tuple
    label: str

    name = ZOOM_IN

    def arguments(self) -> dict:
        return {
            "image_index": self.image_index,
            "bbox": list(self.bbox),
            "label": self.label,
        }


@dataclass(frozen=True)
class LookbackReuse:
    """Visual reflection: re-emit image `image_index` for the stated reason."""

    image_index: int
    reason: str

    name = LOOKBACK_REUSE

    def arguments(self) -> dict:
        return {"image_index": self.image_index, "reason": self.reason}


ToolCall = Union[ZoomIn, LookbackReuse]


@dataclass(frozen=True)
class FinalAnswer:
    text: str


@dataclass(frozen=True)
class Malformed:
    diagnostic: str


Action = Union[ZoomIn, LookbackReuse, FinalAnswer, Malformed]


@dataclass(frozen=True)
class ParsedTurn:
    thinking: str
    action: Action
    raw: str
    violation_flags: frozenset = field(default_factory=frozenset)

    @property
    def is_tool_call(self) -> bool:
        return isinstance(self.action, (ZoomIn, LookbackReuse))

    @property
    def is_answer(self) -> bool:
        return isinstance(self.action, FinalAnswer)

    @property
    def is_malformed(self) -> bool:
        return isinstance(self.action, Malformed)


@dataclass
class _Block:
    tag: str
    content: str
    start: int
    end: int


def parse_turn(text: str) -> ParsedTurn:
    """Parse one raw model turn into thinking, exactly one action and violation flags."""

    if not isinstance(text, str):
        text = "" if text is None else str(text)

    flags = set()
    blocks, structure_error = _scan_blocks(text, flags)
    _flag_outside_text(text, blocks, flags)

    think_blocks = [block for block in blocks if block.tag == THINK_TAG]
    tool_blocks = [block for block in blocks if block.tag == TOOL_CALL_TAG]
    answer_blocks = [block for block in blocks if block.tag == ANSWER_TAG]

    if not think_blocks and ViolationFlag.UNBALANCED_THINK not in flags:
        flags.add(ViolationFlag.MISSING_THINK)

    thinking = "\n".join(block.content.strip() for block in think_blocks)
    action = _select_action(structure_error, tool_blocks, answer_blocks, flags)

    return ParsedTurn(
        thinking=thinking,
        action=action,
        raw=text,
        violation_flags=frozenset(flags),
    )


def parse_tool_payload(payload: str) -> ToolCall:
    """
    Decode the body of a <tool_call> block.

    Raises:
        ValueError: with a short diagnostic when the payload is not a valid call.
    """

    data = _load_object(payload.strip())

    name = data.get("name")
    arguments = data.get("arguments", {})

    if isinstance(arguments, str):
        arguments = _load_object(arguments)

    if not isinstance(arguments, dict):
        raise ValueError("tool arguments must be an object")

    if name == ZOOM_IN:
        return ZoomIn(
            image_index=_image_index(arguments),
            bbox=_bbox(arguments),
            label=_non_empty_text(arguments, "label"),
        )

    if name == LOOKBACK_REUSE:
        return LookbackReuse(
            image_index=_image_index(arguments),
            reason=_non_empty_text(arguments, "reason"),
        )

    raise ValueError(f"unknown tool {name!r}")


def render_tool_call(call: ToolCall) -> str:
    """Canonical JSON body of a tool call."""

    return json.dumps(
        {"name": call.name, "arguments": call.arguments()}, ensure_ascii=False
    )


def render_turn(turn: ParsedTurn) -> str:
    """
    Canonical text of a parsed turn.

    Parsing the rendered text yields the same thinking and action.
    """

    thinking = f"<think>{turn.thinking}</think>"
    action = turn.action

    if isinstance(action, FinalAnswer):
        return f"{thinking}<answer>{action.text}</answer>"

    if isinstance(action, (ZoomIn, LookbackReuse)):
        return f"{thinking}<tool_call>{render_tool_call(action)}</tool_call>"

    # Malformed turns have no canonical form
    return turn.raw


def violation_classes(flags) -> set:
    """Format-violation classes touched by a set of flags."""
    return {VIOLATION_CLASSES[ViolationFlag(flag)] for flag in flags}


def _scan_blocks(text: str, flags: set) -> tuple:
    """
    Walk the tag tokens with a stack and collect the top-level blocks.

    Returns the blocks and a diagnostic when the structure makes the action
    ambiguous (None otherwise).
    """

    blocks = []
    stack = []  # (tag, content_start, open_start)
    open_counts = {THINK_TAG: 0, TOOL_CALL_TAG: 0, ANSWER_TAG: 0}
    structure_error = None

    for match in TAG_PATTERN.finditer(text):
        closing, tag = match.group(1) == "/", match.group(2)

        if not closing:
            if stack:
                flags.add(ViolationFlag.NESTED_TAGS)
                if tag in ACTION_TAGS and stack[0][0] in ACTION_TAGS:
                    structure_error = structure_error or "nested action tags"
            stack.append((tag, match.end(), match.start()))
            open_counts[tag] += 1
            continue

        if not open_counts[tag]:
            if tag == THINK_TAG:
                flags.add(ViolationFlag.UNBALANCED_THINK)
            else:
                flags.add(ViolationFlag.UNCLOSED_TAG)
            continue

        if stack[-1][0] != tag:
            flags.add(ViolationFlag.OVERLAPPING_TAGS)
            structure_error = structure_error or "overlapping tags"
            while stack[-1][0] != tag:
                open_counts[stack.pop()[0]] -= 1

        opened_tag, content_start, open_start = stack.pop()
        open_counts[opened_tag] -= 1
        if not stack:
            blocks.append(
                _Block(
                    tag=opened_tag,
                    content=text[content_start : match.start()],
                    start=open_start,
                    end=match.end(),
                )
            )

    for tag in (tag for tag, count in open_counts.items() if count):
        if tag == THINK_TAG:
            flags.add(ViolationFlag.UNBALANCED_THINK)
        else:
            flags.add(ViolationFlag.UNCLOSED_TAG)
            structure_error = structure_error or f"unclosed {tag} tag"

    return blocks, structure_error


def _flag_outside_text(text: str, blocks: list, flags: set) -> None:
    """Flag non-whitespace text between or around the top-level blocks."""

    answer_end = None
    for block in blocks:
        if block.tag == ANSWER_TAG:
            answer_end = block.end
            break

    cursor = 0
    for block in blocks + [_Block(tag="", content="", start=len(text), end=len(text))]:
        segment = text[cursor : block.start]
        if segment.strip():
            if answer_end is not None and cursor >= answer_end:
                flags.add(ViolationFlag.TEXT_AFTER_ANSWER)
            else:
                flags.add(ViolationFlag.STRAY_TEXT)
        cursor = max(cursor, block.end)


def _select_action(structure_error, tool_blocks, answer_blocks, flags) -> Action:
    """Resolve the single action of the turn."""

    if structure_error:
        return Malformed(structure_error)

    if len(answer_blocks) > 1:
        flags.add(ViolationFlag.MULTIPLE_ANSWERS)
        return Malformed("multiple answer blocks")

    if tool_blocks and answer_blocks:
        flags.add(ViolationFlag.OVERLAPPING_TAGS)
        return Malformed("both a tool call and an answer block")

    if len(tool_blocks) > 1:
        flags.add(ViolationFlag.MULTIPLE_TOOL_CALLS)
        return Malformed("multiple tool calls")

    if tool_blocks:
        try:
            return parse_tool_payload(tool_blocks[0].content)
        except _PayloadError as e:
            flags.add(ViolationFlag.MALFORMED_TOOL_BLOCK)
            return Malformed(str(e))
        except ValueError as e:
            flags.add(ViolationFlag.MALFORMED_TOOL_BLOCK)
            return Malformed(f"invalid tool call: {e}")

    if answer_blocks:
        return FinalAnswer(answer_blocks[0].content.strip())

    flags.add(ViolationFlag.MISSING_ANSWER)
    return Malformed("no action block")


class _PayloadError(ValueError):
    """The tool-call body could not be decoded at all."""


def _load_object(payload: str) -> dict:
    """Decode a JSON object, falling back to a Python literal for short payloads."""

    try:
        data = json.loads(payload)
    except (json.JSONDecodeError, RecursionError):
        data = None

        if len(payload) <= LITERAL_FALLBACK_LIMIT:
            try:
                data = ast.literal_eval(payload)
            except (SyntaxError, ValueError, TypeError, MemoryError, RecursionError):
                data = None

        if data is None:
            raise _PayloadError("unparseable tool arguments")

    if not isinstance(data, dict):
        raise _PayloadError("unparseable tool arguments")

    return data


def _image_index(arguments: dict) -> int:
    value = arguments.get("image_index")

    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError("image_index must be an integer")
    if isinstance(value, float) and not value.is_integer():
        raise ValueError("image_index must be an integer")
    if value < 0:
        raise ValueError("image_index must be non-negative")

    return int(value)


def _bbox(arguments: dict) -> tuple:
    value = arguments.get("bbox")

    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ValueError("bbox must be a list of 4 integers")

    coordinates = []
    for coordinate in value:
        if isinstance(coordinate, bool) or not isinstance(coordinate, (int, float)):
            raise ValueError("bbox must be a list of 4 integers")
        if isinstance(coordinate, float) and not coordinate.is_integer():
            raise ValueError("bbox must be a list of 4 integers")
        coordinates.append(int(coordinate))

    x1, y1, x2, y2 = coordinates
    if not (x1 < x2 and y1 < y2):
        raise ValueError(f"bbox must satisfy x1 < x2 and y1 < y2: {coordinates}")

    return tuple(coordinates)


def _non_empty_text(arguments: dict, key: str) -> str:
    value = arguments.get(key)

    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"{key} must be non-empty text")

    return value.strip()


def serialize_tool_result(result) -> list:
    """
    Render a tool result as message content: one status text segment,
    followed by the returned image when there is one.

    Identical results render to identical text.
    """

    call = result.source_call

    if not result.ok:
        return [{"type": "text", "text": f"Tool {call.name} failed: {result.message}."}]

    if isinstance(call, ZoomIn):
        region = result.region if result.region is not None else call.bbox
        region_text = ",".join(str(int(value)) for value in region)
        text = (
            f"Tool {ZOOM_IN} succeeded on image {call.image_index}, "
            f"region [{region_text}] ({call.label}):"
        )
    else:
        text = (
            f"Tool {LOOKBACK_REUSE} returned image {call.image_index} "
            f"(reason: {call.reason}):"
        )

    segments = [{"type": "text", "text": text}]
    if result.image is not None:
        segments.append({"type": "image", "image": result.image})

    return segments


def corrective_notice(turn: ParsedTurn) -> str:
    """Fixed notice appended after a malformed turn."""

    return (
        f"Your previous turn could not be parsed ({turn.action.diagnostic}). "
        "Reply with <think>...</think> followed by exactly one "
        "<tool_call>...</tool_call> or <answer>...</answer>."
    )
