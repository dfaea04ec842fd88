"""
The think-act-iterate loop of the vision agent.

One trajectory:
1. the model reasons over the question and the indexed images,
2. optionally requests a visual tool (zoom_in or lookback_reuse),
3. the tool result is appended to the conversation as context,
4. repeat until an answer appears or a limit is hit.

In plain English,
the module keeps the conversation,
asks the model for the next turn,
runs whatever tool it asked for,
and stops with a trajectory that says why it stopped.
"""

# Python
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

# Project
from app.backend.llm_engine import EndpointError, ModelEndpoint, image_part, text_part
from app.backend.reward_masks import classify_validity
from app.backend.run_config import TOOL_NAMES
from app.backend.tool_parser import (
    corrective_notice,
    parse_turn,
    serialize_tool_result,
)
from app.backend.trajectory import (
    Message,
    Role,
    RunLimits,
    Segment,
    ToolEvent,
    Trajectory,
    Validity,
    count_message_tokens,
    count_tokens,
)
from app.backend.visual_tools import (
    MIN_CROP_SIDE,
    ImageSet,
    check_pixel_budget,
    disabled_tool_result,
    execute_tool,
)

TOOL_DESCRIPTIONS = {
    "zoom_in": (
        "zoom_in(image_index, bbox, label): crop the region bbox = [x1, y1, x2, y2] "
        "(absolute pixels, origin top-left) of image image_index and return it enlarged. "
        "label names the region you want to inspect."
    ),
    "lookback_reuse": (
        "lookback_reuse(image_index, reason): show image image_index again in full. "
        "reason states what you want to re-check."
    ),
}


class TrajectoryAbortedError(RuntimeError):
    """The endpoint failed; carries the partial trajectory marked Aborted."""

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


class GroupRolloutError(RuntimeError):
    """Every rollout of a group was aborted."""

    def __init__(self, message: str, trajectories: list):
        super().__init__(message)
        self.trajectories = trajectories


def build_system_prompt(enabled_tools: Sequence = TOOL_NAMES) -> str:
    """System prompt describing the turn grammar and the enabled tools."""

    enabled_tools = [tool for tool in TOOL_NAMES if tool in enabled_tools]

    if not enabled_tools:
        return (
            "You answer questions about one or more images, indexed from 0.\n"
            "Format every turn as <think>your reasoning</think> followed by "
            "<answer>your final answer</answer>."
        )

    tool_lines = "\n".join(f"- {TOOL_DESCRIPTIONS[tool]}" for tool in enabled_tools)
    example = (
        '<tool_call>{"name": "zoom_in", "arguments": {"image_index": 0, '
        '"bbox": [100, 50, 400, 300], "label": "wall clock"}}</tool_call>'
        if "zoom_in" in enabled_tools
        else '<tool_call>{"name": "lookback_reuse", "arguments": {"image_index": 0, '
        '"reason": "re-check the layout"}}</tool_call>'
    )

    return (
        "You answer questions about one or more images, indexed from 0.\n"
        "Look closely: use the visual tools whenever a detail is small, "
        "far away or needs to be compared across images.\n\n"
        f"Tools:\n{tool_lines}\n\n"
        "Format every turn as <think>your reasoning</think> followed by exactly one of\n"
        f"{example}\n"
        "<answer>your final answer</answer>\n"
        "Call at most one tool per turn. Tool results arrive in the next message."
    )


def build_prompt_messages(question: str, image_set: ImageSet, system_prompt: str) -> tuple:
    """System and user messages that open every trajectory, plus the image registry."""

    images = {}
    segments = []
    for index, served_image in enumerate(image_set.images):
        ref = f"input/{index}"
        images[ref] = served_image.served
        segments.append(Segment(text=f"Image {index}:"))
        segments.append(
            Segment(
                image_ref=ref,
                width=served_image.served_width,
                height=served_image.served_height,
            )
        )
    segments.append(Segment(text=question))

    messages = [
        Message(role=Role.SYSTEM, segments=(Segment(text=system_prompt),)),
        Message(role=Role.USER, segments=tuple(segments)),
    ]
    return messages, images


def to_wire_messages(trajectory: Trajectory, cache: Optional[dict] = None) -> list:
    """
    Chat-completions view of the conversation.

    Tool results and notices travel as user messages with typed content parts.
    """

    cache = {} if cache is None else cache
    wire = []

    for message in trajectory.messages:
        if message.role == Role.SYSTEM:
            wire.append({"role": "system", "content": message.text})
            continue

        if message.role == Role.ASSISTANT:
            wire.append({"role": "assistant", "content": message.text})
            continue

        parts = []
        for segment in message.segments:
            if segment.is_image:
                if segment.image_ref not in cache:
                    cache[segment.image_ref] = image_part(trajectory.images[segment.image_ref])
                parts.append(cache[segment.image_ref])
            else:
                parts.append(text_part(segment.text))
        wire.append({"role": "user", "content": parts})

    return wire


def run_trajectory(
    question: str,
    image_set: ImageSet,
    endpoint: ModelEndpoint,
    limits: RunLimits,
    system_prompt: Optional[str] = None,
    *,
    prompt_id: str = "",
    seed: int = 0,
    temperature: Optional[float] = None,
    enabled_tools: Sequence = TOOL_NAMES,
    pixel_budget: Optional[int] = None,
    min_crop_side: int = MIN_CROP_SIDE,
) -> Trajectory:
    """
    Run one episode until the model answers or a limit stops it.

    Raises:
        TrajectoryAbortedError: when the endpoint fails after its retries.
        PixelBudgetError: when an image in a request exceeds `pixel_budget`.
    """

    system_prompt = system_prompt or build_system_prompt(enabled_tools)
    pixel_budget = pixel_budget or image_set.per_image_max_pixels

    messages, images = build_prompt_messages(question, image_set, system_prompt)
    trajectory = Trajectory(
        prompt_id=prompt_id,
        question=question,
        image_set=image_set,
        messages=messages,
        images=images,
        seed=seed,
    )
    wire_cache = {}

    # Each pass appends one assistant turn; the loop ends by answer, limit or abort
    while True:
        request_tokens = count_message_tokens(trajectory.messages)
        if request_tokens > limits.max_input_tokens:
            trajectory.truncated = True
            logging.warning(
                "Prompt %s: request of %d tokens exceeds max_input_tokens=%d, stopping",
                prompt_id,
                request_tokens,
                limits.max_input_tokens,
            )
            break

        check_pixel_budget(trajectory.images.values(), pixel_budget)

        try:
            generation = endpoint.generate(
                to_wire_messages(trajectory, wire_cache), seed=seed, temperature=temperature
            )
        except EndpointError as e:
            trajectory.validity = Validity.ABORTED
            trajectory.error = str(e)
            raise TrajectoryAbortedError(
                f"Trajectory {prompt_id} (seed {seed}) aborted at turn "
                f"{trajectory.turn_count}:\n{e}",
                trajectory,
            ) from e

        turn = parse_turn(generation.text)
        trajectory.turns.append(turn)
        trajectory.messages.append(
            Message(role=Role.ASSISTANT, segments=(Segment(text=turn.raw),), trainable=True)
        )
        trajectory.turn_count += 1

        trajectory.prompt_tokens = (
            generation.prompt_tokens if generation.prompt_tokens is not None else request_tokens
        )
        trajectory.completion_tokens += (
            generation.completion_tokens
            if generation.completion_tokens is not None
            else count_tokens([Segment(text=turn.raw)])
        )

        if trajectory.completion_tokens > limits.max_response_tokens:
            break

        if turn.is_answer:
            trajectory.final_answer = turn.action.text
            break

        trajectory.interaction_count += 1
        if trajectory.interaction_count > limits.max_interactions:
            break

        if turn.is_tool_call:
            _append_tool_result(trajectory, turn.action, enabled_tools, min_crop_side)
        else:
            trajectory.messages.append(
                Message(
                    role=Role.USER,
                    segments=(Segment(text=corrective_notice(turn)),),
                    notice=True,
                )
            )

    trajectory.validity = classify_validity(trajectory, limits)
    return trajectory


def run_group(
    question: str,
    image_set: ImageSet,
    endpoint: ModelEndpoint,
    limits: RunLimits,
    n_rollouts: int,
    system_prompt: Optional[str] = None,
    *,
    prompt_id: str = "",
    seed: int = 0,
    concurrency: int = 1,
    **options,
) -> list:
    """
    Run `n_rollouts` independent trajectories; member i samples with seed + i.

    Aborted members come back with validity Aborted and their error text.

    Raises:
        ValueError: if n_rollouts < 1.
        GroupRolloutError: if every member was aborted.
    """

    if n_rollouts < 1:
        raise ValueError(f"n_rollouts must be at least 1: {n_rollouts}")

    def run_member(member_id: int) -> Trajectory:
        try:
            return run_trajectory(
                question,
                image_set,
                endpoint,
                limits,
                system_prompt,
                prompt_id=prompt_id,
                seed=seed + member_id,
                **options,
            )
        except TrajectoryAbortedError as e:
            logging.warning("Rollout %d of prompt %s aborted: %s", member_id, prompt_id, e)
            return e.trajectory

    workers = max(1, min(concurrency, n_rollouts))
    if workers == 1:
        trajectories = [run_member(member_id) for member_id in range(n_rollouts)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            trajectories = list(executor.map(run_member, range(n_rollouts)))

    if all(trajectory.validity == Validity.ABORTED for trajectory in trajectories):
        errors = "\n".join(sorted({trajectory.error or "" for trajectory in trajectories}))
        raise GroupRolloutError(
            f"All {n_rollouts} rollouts of prompt {prompt_id} failed:\n{errors}",
            trajectories,
        )

    return trajectories


def _append_tool_result(trajectory, call, enabled_tools, min_crop_side) -> None:
    if call.name in enabled_tools:
        result = execute_tool(trajectory.image_set, call, min_side=min_crop_side)
    else:
        result = disabled_tool_result(call)

    image_ref = None
    segments = []
    for part in serialize_tool_result(result):
        if part["type"] == "text":
            segments.append(Segment(text=part["text"]))
            continue

        image_ref = f"tool/{len(trajectory.tool_events)}"
        trajectory.images[image_ref] = part["image"]
        segments.append(
            Segment(
                image_ref=image_ref,
                width=part["image"].width,
                height=part["image"].height,
            )
        )

    trajectory.tool_events.append(ToolEvent(call=call, result=result, image_ref=image_ref))
    trajectory.messages.append(Message(role=Role.TOOL, segments=tuple(segments)))
