"""
Line-delimited export of rewarded trajectory groups for the trainer.

One JSON record per trajectory. A group is validated in full before the
first byte is written, and its records leave in a single write, so a
group is either exported completely or not at all.
"""

# Python
import json
import os
import threading
from datetime import datetime, timezone
from typing import Optional, TextIO

# Project
from app.backend.reward_masks import (
    MaskedGroup,
    RewardBreakdown,
    RewardCoefficients,
    build_action_mask,
    format_score_from_turns,
    group_statistics,
    judge_correct,
    reward_total,
)
from app.backend.tool_parser import parse_turn
from app.backend.trajectory import Role, Trajectory, Validity
from app.backend.visual_tools import ToolStatus, encode_png, image_digest

SCHEMA_VERSION = 1

RECORD_FIELDS = (
    "schema_version",
    "prompt_id",
    "group_id",
    "member_id",
    "seed",
    "question",
    "gold_answer",
    "image_manifest",
    "messages",
    "trainable_spans",
    "tool_events",
    "turn_count",
    "interaction_count",
    "prompt_tokens",
    "completion_tokens",
    "truncated",
    "final_answer",
    "reward",
    "advantage",
    "validity",
    "trajectory_masked",
    "error",
    "exported_at",
)

REWARD_FIELDS = ("r_acc", "r_format", "tool_gain", "a", "b", "c", "total")
MESSAGE_FIELDS = ("role", "segments", "trainable", "notice")
SEGMENT_FIELDS = {
    "text": ("type", "text"),
    "image": ("type", "image_ref", "width", "height", "sha256"),
}
SPAN_FIELDS = ("message_index", "start", "end")
TOOL_EVENT_FIELDS = (
    "name",
    "arguments",
    "status",
    "message",
    "region",
    "image_ref",
    "image_width",
    "image_height",
)
IMAGE_MANIFEST_FIELDS = (
    "index",
    "path",
    "original_width",
    "original_height",
    "served_width",
    "served_height",
    "scale",
)
TIMESTAMP_FIELDS = ("exported_at",)

_write_lock = threading.Lock()


class ExportSchemaError(ValueError):
    """A record does not follow the export schema."""


def trajectory_record(
    group: MaskedGroup,
    member_id: int,
    exported_at: str,
) -> dict:
    """Self-contained export record of one group member."""

    trajectory = group.trajectories[member_id]
    masked = not group.trajectory_mask[member_id]
    action_mask = build_action_mask(trajectory, trajectory_masked=masked)

    return {
        "schema_version": SCHEMA_VERSION,
        "prompt_id": group.prompt_id,
        "group_id": group.group_id,
        "member_id": member_id,
        "seed": trajectory.seed,
        "question": trajectory.question,
        "gold_answer": group.gold_answer,
        "image_manifest": trajectory.image_set.manifest(),
        "messages": [
            _message_record(trajectory, message, trainable)
            for message, trainable in zip(trajectory.messages, action_mask.trainable)
        ],
        "trainable_spans": [
            {"message_index": index, "start": start, "end": end}
            for index, start, end in action_mask.spans
        ],
        "tool_events": [_tool_event_record(event) for event in trajectory.tool_events],
        "turn_count": trajectory.turn_count,
        "interaction_count": trajectory.interaction_count,
        "prompt_tokens": trajectory.prompt_tokens,
        "completion_tokens": trajectory.completion_tokens,
        "truncated": trajectory.truncated,
        "final_answer": trajectory.final_answer,
        "reward": trajectory.reward.to_dict() if trajectory.reward is not None else None,
        "advantage": 0.0 if masked else group.advantages[member_id],
        "validity": trajectory.validity.value if trajectory.validity else None,
        "trajectory_masked": masked,
        "error": trajectory.error,
        "exported_at": exported_at,
    }


def validate_record(record: dict) -> dict:
    """
    Validate the structure and content of one export record.

    Raises:
        ExportSchemaError: naming the first rule the record breaks.
    """

    validity_values = {validity.value for validity in Validity}
    role_values = {role.value for role in Role}
    status_values = {status.value for status in ToolStatus}

    validation_rules = {
        "is_object": {
            "condition": lambda x: isinstance(x, dict),
            "error_message": lambda x: f"Record must be an object;\nReceived: {type(x)}",
        },
        "no_unknown_fields": {
            "condition": lambda x: set(x) <= set(RECORD_FIELDS),
            "error_message": lambda x: (
                f"Unknown record fields: {sorted(set(x) - set(RECORD_FIELDS))}"
            ),
        },
        "no_missing_fields": {
            "condition": lambda x: set(RECORD_FIELDS) <= set(x),
            "error_message": lambda x: (
                f"Missing record fields: {sorted(set(RECORD_FIELDS) - set(x))}"
            ),
        },
        "schema_version": {
            "condition": lambda x: x["schema_version"] == SCHEMA_VERSION,
            "error_message": lambda x: (
                f"Unsupported schema_version: {x['schema_version']!r} "
                f"(expected {SCHEMA_VERSION})"
            ),
        },
        "member_ids": {
            "condition": lambda x: all(
                isinstance(x[key], int) and not isinstance(x[key], bool) and x[key] >= 0
                for key in ("group_id", "member_id")
            ),
            "error_message": lambda x: (
                "group_id and member_id must be non-negative integers;\n"
                f"Received: {x['group_id']!r}, {x['member_id']!r}"
            ),
        },
        "validity": {
            "condition": lambda x: x["validity"] in validity_values,
            "error_message": lambda x: f"Unknown validity: {x['validity']!r}",
        },
        "messages": {
            "condition": lambda x: isinstance(x["messages"], list)
            and all(
                isinstance(message, dict)
                and message.get("role") in role_values
                and isinstance(message.get("segments"), list)
                for message in x["messages"]
            ),
            "error_message": lambda x: (
                "messages must be a list of {role, segments, trainable, notice} objects"
            ),
        },
        "message_fields": {
            "condition": lambda x: _field_mismatch(x["messages"], MESSAGE_FIELDS) is None,
            "error_message": lambda x: f"messages {_field_mismatch(x['messages'], MESSAGE_FIELDS)}",
        },
        "segment_fields": {
            "condition": lambda x: _segment_mismatch(x["messages"]) is None,
            "error_message": lambda x: f"segments {_segment_mismatch(x['messages'])}",
        },
        "image_manifest": {
            "condition": lambda x: isinstance(x["image_manifest"], list)
            and len(x["image_manifest"]) > 0
            and _field_mismatch(x["image_manifest"], IMAGE_MANIFEST_FIELDS) is None,
            "error_message": lambda x: (
                "image_manifest must be a non-empty list of image entries;\n"
                f"{_field_mismatch(x['image_manifest'] or [], IMAGE_MANIFEST_FIELDS) or ''}"
            ),
        },
        "tool_events": {
            "condition": lambda x: isinstance(x["tool_events"], list)
            and _field_mismatch(x["tool_events"], TOOL_EVENT_FIELDS) is None
            and all(event["status"] in status_values for event in x["tool_events"]),
            "error_message": lambda x: (
                "tool_events must be a list of tool event objects with a known status;\n"
                f"{_field_mismatch(x['tool_events'], TOOL_EVENT_FIELDS) or ''}"
            ),
        },
        "trainable_only_assistant": {
            "condition": lambda x: all(
                not message.get("trainable") or message["role"] == Role.ASSISTANT.value
                for message in x["messages"]
            ),
            "error_message": lambda _: "Only assistant messages may be trainable",
        },
        "masked_has_no_trainable": {
            "condition": lambda x: not x["trajectory_masked"]
            or not any(message.get("trainable") for message in x["messages"]),
            "error_message": lambda _: "A trajectory-masked record must have no trainable message",
        },
        "masked_has_zero_advantage": {
            "condition": lambda x: not x["trajectory_masked"] or x["advantage"] == 0,
            "error_message": lambda x: (
                f"A trajectory-masked record must have advantage 0;\nReceived: {x['advantage']!r}"
            ),
        },
        "valid_has_answer": {
            "condition": lambda x: x["validity"] != Validity.VALID.value
            or x["final_answer"] is not None,
            "error_message": lambda _: "A valid record must carry a final answer",
        },
        "reward": {
            "condition": lambda x: isinstance(x["reward"], dict)
            and set(x["reward"]) == set(REWARD_FIELDS),
            "error_message": lambda x: (
                f"reward must hold exactly {list(REWARD_FIELDS)};\nReceived: {x['reward']!r}"
            ),
        },
        "trainable_spans": {
            "condition": lambda x: _field_mismatch(x["trainable_spans"], SPAN_FIELDS) is None
            and all(
                0 <= span["message_index"] < len(x["messages"])
                and x["messages"][span["message_index"]].get("trainable")
                for span in x["trainable_spans"]
            ),
            "error_message": lambda x: (
                "trainable_spans must be {message_index, start, end} objects pointing at "
                f"trainable messages;\n{_field_mismatch(x['trainable_spans'], SPAN_FIELDS) or ''}"
            ),
        },
    }

    # Go through each rule
    # and raise an error if the condition is not met
    for rule_name, rule in validation_rules.items():
        try:
            passed = rule["condition"](record)
        except (KeyError, TypeError, AttributeError) as e:
            raise ExportSchemaError(f"Record fails rule {rule_name}:\n{e!r}") from e
        if not passed:
            raise ExportSchemaError(rule["error_message"](record))

    return record


def export_group(
    group: MaskedGroup,
    sink: TextIO,
    crops_dir: Optional[str] = None,
    exported_at: Optional[str] = None,
) -> int:
    """
    Write one record per member of a rewarded group.

    Returns:
        The number of records written.

    Raises:
        ValueError: on an empty group.
        ExportSchemaError: if any record is invalid; nothing is written then.
        OSError: on sink failures.
    """

    if not group.trajectories:
        raise ValueError(f"Group {group.group_id} of prompt {group.prompt_id} is empty.")

    exported_at = exported_at or datetime.now(timezone.utc).isoformat()

    records = [
        validate_record(trajectory_record(group, member_id, exported_at))
        for member_id in range(len(group.trajectories))
    ]
    payload = "".join(
        json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n" for record in records
    )

    with _write_lock:
        sink.write(payload)
        sink.flush()

    # Crops only for groups that made it into the sink
    if crops_dir:
        for member_id, trajectory in enumerate(group.trajectories):
            save_tool_crops(trajectory, crops_dir, f"{group.prompt_id}_{group.group_id}_{member_id}")

    return len(records)


def save_tool_crops(trajectory: Trajectory, crops_dir: str, prefix: str) -> list:
    """Write every tool-returned image as a PNG file; returns the written paths."""

    os.makedirs(crops_dir, exist_ok=True)

    paths = []
    for event in trajectory.tool_events:
        if event.image_ref is None:
            continue
        path = os.path.join(crops_dir, f"{prefix}_{event.image_ref.replace('/', '_')}.png")
        with open(path, "wb") as _file:
            _file.write(encode_png(trajectory.images[event.image_ref]))
        paths.append(path)

    return paths


def read_export(path: str) -> list:
    """
    Read and validate every record of an export file.

    Raises:
        ExportSchemaError: naming the first invalid line.
    """

    records = []
    with open(path, "r", encoding="utf-8") as _file:
        for line_number, line in enumerate(_file, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                records.append(validate_record(record))
            except (json.JSONDecodeError, ExportSchemaError) as e:
                raise ExportSchemaError(f"{path}, line {line_number}:\n{e}") from e

    return records


def strip_timestamps(record: dict) -> dict:
    return {key: value for key, value in record.items() if key not in TIMESTAMP_FIELDS}


def _field_mismatch(items: list, fields: tuple) -> Optional[str]:
    """Describe the first item whose keys differ from `fields`, or None."""

    for index, item in enumerate(items):
        if not isinstance(item, dict):
            return f"item {index} is not an object"
        unknown = sorted(set(item) - set(fields))
        missing = sorted(set(fields) - set(item))
        if unknown or missing:
            return f"item {index}: unknown fields {unknown}, missing fields {missing}"
    return None


def _segment_mismatch(messages: list) -> Optional[str]:
    for message_index, message in enumerate(messages):
        for index, segment in enumerate(message["segments"]):
            fields = SEGMENT_FIELDS.get(segment.get("type")) if isinstance(segment, dict) else None
            if fields is None:
                return f"of message {message_index}: segment {index} has no known type"
            unknown = sorted(set(segment) - set(fields))
            missing = sorted(set(fields) - set(segment))
            if unknown or missing:
                return (
                    f"of message {message_index}: segment {index}: "
                    f"unknown fields {unknown}, missing fields {missing}"
                )
    return None


def _message_record(trajectory: Trajectory, message, trainable: bool) -> dict:
    segments = []
    for segment in message.segments:
        if segment.is_image:
            segments.append(
                {
                    "type": "image",
                    "image_ref": segment.image_ref,
                    "width": segment.width,
                    "height": segment.height,
                    "sha256": image_digest(trajectory.images[segment.image_ref]),
                }
            )
        else:
            segments.append({"type": "text", "text": segment.text})

    return {
        "role": message.role.value,
        "segments": segments,
        "trainable": trainable,
        "notice": message.notice,
    }


def _tool_event_record(event) -> dict:
    result = event.result
    image = result.image

    return {
        "name": event.call.name,
        "arguments": event.call.arguments(),
        "status": result.status.value,
        "message": result.message,
        "region": list(result.region) if result.region is not None else None,
        "image_ref": event.image_ref,
        "image_width": image.width if image is not None else None,
        "image_height": image.height if image is not None else None,
    }


def rescore_records(
    records: list,
    coeffs: Optional[RewardCoefficients] = None,
    judge=None,
    use_trajectory_mask: bool = True,
) -> list:
    """
    Recompute rewards, masks and advantages of exported records under new
    coefficients, judge or mask setting. Turns are re-parsed from the stored
    assistant text; groups are the (prompt_id, group_id) pairs.
    """

    coeffs = coeffs or RewardCoefficients()
    groups = {}
    for record in records:
        groups.setdefault((record["prompt_id"], record["group_id"]), []).append(record)

    rescored = []
    for (prompt_id, group_id), members in groups.items():
        members = sorted(members, key=lambda record: record["member_id"])
        updated = [_rescore_record(record, coeffs, judge) for record in members]

        mask = []
        for record in updated:
            if record["validity"] == Validity.ABORTED.value:
                mask.append(False)
            elif use_trajectory_mask:
                mask.append(record["validity"] == Validity.VALID.value)
            else:
                mask.append(True)

        stats = group_statistics([record["reward"]["total"] for record in updated], mask)
        for record, keep, advantage in zip(updated, mask, stats.advantages):
            _apply_mask(record, masked=not keep)
            record["advantage"] = advantage if keep else 0.0
            rescored.append(validate_record(record))

    return rescored


def _rescore_record(record: dict, coeffs: RewardCoefficients, judge) -> dict:
    record = json.loads(json.dumps(record))

    turns = [
        parse_turn("".join(segment.get("text", "") for segment in message["segments"]))
        for message in record["messages"]
        if message["role"] == Role.ASSISTANT.value
    ]
    final_answer = record["final_answer"]

    r_acc = 0
    if final_answer is not None:
        r_acc = int(judge_correct(record["question"], final_answer, record["gold_answer"], judge))
    r_format = format_score_from_turns(turns, final_answer)
    gain = int(any(event["status"] == ToolStatus.OK.value for event in record["tool_events"]))

    record["reward"] = RewardBreakdown(
        r_acc=r_acc,
        r_format=r_format,
        tool_gain=gain,
        a=coeffs.a,
        b=coeffs.b,
        c=coeffs.c,
        total=reward_total(r_acc, gain, r_format, coeffs),
    ).to_dict()
    return record


def _apply_mask(record: dict, masked: bool) -> None:
    spans = []
    for index, message in enumerate(record["messages"]):
        trainable = message["role"] == Role.ASSISTANT.value and not masked
        message["trainable"] = trainable
        if trainable:
            text = "".join(segment.get("text", "") for segment in message["segments"])
            spans.append({"message_index": index, "start": 0, "end": len(text)})

    record["trainable_spans"] = spans
    record["trajectory_masked"] = masked


def write_records(path: str, records: list) -> None:
    """Write already-validated records, one key-sorted JSON line each."""

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(path, "w", encoding="utf-8") as _file:
        for record in records:
            _file.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
