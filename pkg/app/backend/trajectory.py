"""
Data types of one multi-turn episode (a trajectory).

A trajectory records every message exchanged with the model, the tool
events, token accounting and the validity status. Only assistant messages
are trainable; everything else (system prompt, question, tool results,
corrective notices) is context the policy update must not see as output.
"""

# Python
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

# Project
from app.backend.run_config import RunLimitsConfig

PATCH_SIZE = 28
TEXT_BYTES_PER_TOKEN = 4


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


class Validity(str, enum.Enum):
    VALID = "valid"
    INVALID_MAX_TURNS = "invalid_max_turns"
    INVALID_MAX_LENGTH = "invalid_max_length"
    INVALID_NO_ANSWER = "invalid_no_answer"
    ABORTED = "aborted"


@dataclass(frozen=True)
class Segment:
    """Either a text span or a reference to an image held by the trajectory."""

    text: Optional[str] = None
    image_ref: Optional[str] = None
    width: int = 0
    height: int = 0

    @property
    def is_image(self) -> bool:
        return self.image_ref is not None


@dataclass(frozen=True)
class Message:
    role: Role
    segments: tuple
    trainable: bool = False
    notice: bool = False

    @property
    def text(self) -> str:
        return "".join(segment.text for segment in self.segments if not segment.is_image)


@dataclass(frozen=True)
class ToolEvent:
    call: object
    result: object
    image_ref: Optional[str] = None


@dataclass(frozen=True)
class RunLimits:
    max_interactions: int = 5
    max_input_tokens: int = 10480
    max_response_tokens: int = 20480

    def __post_init__(self):
        for name in ("max_interactions", "max_input_tokens", "max_response_tokens"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"RunLimits.{name} must be a positive integer: {value!r}")

    @classmethod
    def from_config(cls, config: RunLimitsConfig) -> "RunLimits":
        return cls(
            max_interactions=config.max_interactions,
            max_input_tokens=config.max_input_tokens,
            max_response_tokens=config.max_response_tokens,
        )


@dataclass
class Trajectory:
    prompt_id: str
    question: str
    image_set: object
    messages: list = field(default_factory=list)
    tool_events: list = field(default_factory=list)
    turns: list = field(default_factory=list)
    images: dict = field(default_factory=dict)
    turn_count: int = 0
    interaction_count: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    truncated: bool = False
    final_answer: Optional[str] = None
    validity: Optional[Validity] = None
    error: Optional[str] = None
    seed: int = 0
    reward: object = None

    @property
    def assistant_messages(self) -> list:
        return [message for message in self.messages if message.role == Role.ASSISTANT]

    @property
    def tool_calls(self) -> int:
        return len(self.tool_events)

    @property
    def successful_tool_calls(self) -> int:
        return sum(1 for event in self.tool_events if event.result.ok)


def count_tokens(segments) -> int:
    """
    Fallback token estimate of a sequence of segments:
    ceil(utf-8 bytes / 4) per text span, one token per 28x28 patch per image.
    """

    total = 0
    for segment in segments:
        if segment.is_image:
            total += math.ceil(segment.width / PATCH_SIZE) * math.ceil(segment.height / PATCH_SIZE)
        elif segment.text:
            total += math.ceil(len(segment.text.encode("utf-8")) / TEXT_BYTES_PER_TOKEN)
    return total


def count_message_tokens(messages) -> int:
    return sum(count_tokens(message.segments) for message in messages)
