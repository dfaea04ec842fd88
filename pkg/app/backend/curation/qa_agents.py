"""
Stage two of the QA construction: multi-agent generation, verification
and revision of fine-grained QA pairs.

The generator, the verifier and the reviser are prompt profiles over the
same ModelEndpoint interface. Replies are JSON payloads; a reply that does
not follow the schema is retried, and an ambiguous verifier reply counts
as a failure.
"""

# Python
import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

# Project
from app.backend.llm_engine import EndpointError, ModelEndpoint, ask, extract_json_object, text_part

# Curation
from app.backend.curation.consts import VERDICT_FAIL, VERDICT_PASS
from app.backend.curation.qa_candidate import (
    ConfidenceRegion,
    CurationStageError,
    QACandidate,
    QAStatus,
    ReasoningStep,
)
from app.backend.curation.qa_prompt_formatter import (
    GENERATOR_SYSTEM_PROMPT,
    REVISER_SYSTEM_PROMPT,
    VERIFIER_SYSTEM_PROMPT,
    format_generation_prompt,
    format_revision_prompt,
    format_verification_prompt,
    image_content,
)


@dataclass(frozen=True)
class Verdict:
    passed: bool
    reason: str = ""


def parse_qa_payload(text: str) -> tuple:
    """
    Decode a generator or reviser reply.

    Returns:
        (question, answer, reasoning_steps)

    Raises:
        ValueError: when the reply does not follow the payload schema.
    """

    payload = extract_json_object(text)

    question = payload.get("question")
    answer = payload.get("answer")
    steps = payload.get("reasoning_steps")

    if not isinstance(question, str) or not question.strip():
        raise ValueError("question must be non-empty text")
    if isinstance(answer, (int, float)) and not isinstance(answer, bool):
        answer = str(answer)
    if not isinstance(answer, str) or not answer.strip():
        raise ValueError("answer must be non-empty text")
    if not isinstance(steps, list) or not steps:
        raise ValueError("reasoning_steps must be a non-empty list")

    return question.strip(), answer.strip(), tuple(_reasoning_step(step) for step in steps)


def generate_qa(
    image_set,
    generator: ModelEndpoint,
    *,
    source_id: str,
    image_paths: tuple = (),
    kind: str = "natural",
    relationship: Optional[str] = None,
    max_attempts: int = 3,
    seed: int = 0,
) -> QACandidate:
    """
    Ask the generator for one QA pair; attempt k samples with seed + k.

    A reply that fails the schema `max_attempts` times gives a Rejected
    candidate with the last diagnostic. Endpoint failures propagate.
    """

    content = [text_part(format_generation_prompt(image_set, kind, relationship))]
    content += image_content(image_set)

    diagnostic = None
    for attempt in range(max_attempts):
        reply = ask(generator, GENERATOR_SYSTEM_PROMPT, content, seed=seed + attempt).text
        try:
            question, answer, steps = parse_qa_payload(reply)
        except ValueError as e:
            diagnostic = f"generator schema failure: {e}"
            logging.warning(
                "Source %s: generator attempt %d/%d failed the schema: %s",
                source_id,
                attempt + 1,
                max_attempts,
                e,
            )
            continue

        return QACandidate(
            source_id=source_id,
            image_paths=tuple(image_paths),
            question=question,
            answer=answer,
            reasoning_steps=steps,
            status=QAStatus.DRAFT,
            generation_round=attempt,
            kind=kind,
            relationship=relationship,
            image_set=image_set,
        )

    return QACandidate(
        source_id=source_id,
        image_paths=tuple(image_paths),
        question="",
        answer="",
        status=QAStatus.REJECTED,
        generation_round=max_attempts - 1,
        kind=kind,
        relationship=relationship,
        diagnostic=diagnostic,
        image_set=image_set,
    )


def verify_answer(qa: QACandidate, verifier: ModelEndpoint, *, seed: int = 0) -> Verdict:
    """
    Judge answer uniqueness and reasoning soundness; Pass needs both.

    Raises:
        ValueError: if `qa` is neither Draft nor Revised.
    """

    if qa.status not in (QAStatus.DRAFT, QAStatus.REVISED):
        raise ValueError(f"Only draft or revised candidates can be verified: {qa.status.value}")

    content = [text_part(format_verification_prompt(qa))] + image_content(qa.image_set)
    reply = ask(verifier, VERIFIER_SYSTEM_PROMPT, content, seed=seed, temperature=0.0).text
    return parse_verdict(reply)


def parse_verdict(reply: str) -> Verdict:
    """Verifier reply to a Verdict; anything but two clear pass/fail values is a Fail."""

    try:
        payload = extract_json_object(reply)
    except ValueError:
        payload = {}

    unique = str(payload.get("answer_unique", "")).strip().lower()
    sound = str(payload.get("reasoning_sound", "")).strip().lower()
    allowed = (VERDICT_PASS, VERDICT_FAIL)

    if unique not in allowed or sound not in allowed:
        logging.warning("Ambiguous verifier output counted as a failure: %r", reply[:200])
        return Verdict(passed=False, reason="ambiguous verifier output")

    if unique == VERDICT_PASS and sound == VERDICT_PASS:
        return Verdict(passed=True)

    reasons = []
    if unique == VERDICT_FAIL:
        reasons.append("answer not unique")
    if sound == VERDICT_FAIL:
        reasons.append("reasoning unsound")

    detail = str(payload.get("reason") or "").strip()
    reason = "; ".join(reasons)
    return Verdict(passed=False, reason=f"{reason}: {detail}" if detail else reason)


def revise_loop(
    qa: QACandidate,
    reviser: ModelEndpoint,
    verifier: ModelEndpoint,
    max_revisions: int = 3,
    *,
    verdict: Optional[Verdict] = None,
    seed: int = 0,
) -> QACandidate:
    """
    Alternate revise -> verify until a Pass or `max_revisions` rounds.

    Round k samples the reviser and the verifier with seed + k. Verified
    input comes back unchanged.

    Raises:
        CurationStageError: on endpoint failure, with the partial candidate
            and its revision history in `partial`.
    """

    if qa.status == QAStatus.VERIFIED:
        return qa

    reason = verdict.reason if verdict is not None else "failed verification"
    current = qa
    history = list(qa.history)

    for round_number in range(1, max_revisions + 1):
        content = [text_part(format_revision_prompt(current, reason))]
        content += image_content(qa.image_set)

        try:
            reply = ask(reviser, REVISER_SYSTEM_PROMPT, content, seed=seed + round_number).text
        except EndpointError as e:
            raise CurationStageError(
                "revise", str(e), partial=[dataclasses.replace(current, history=tuple(history))]
            ) from e

        try:
            question, answer, steps = parse_qa_payload(reply)
        except ValueError as e:
            reason = f"reviser schema failure: {e}"
            history.append({"round": round_number, "question": None, "verdict": reason})
            continue

        current = dataclasses.replace(
            current,
            question=question,
            answer=answer,
            reasoning_steps=steps,
            status=QAStatus.REVISED,
            revision_count=round_number,
        )

        try:
            verdict = verify_answer(current, verifier, seed=seed + round_number)
        except EndpointError as e:
            raise CurationStageError(
                "verify", str(e), partial=[dataclasses.replace(current, history=tuple(history))]
            ) from e

        history.append(
            {
                "round": round_number,
                "question": question,
                "verdict": VERDICT_PASS if verdict.passed else verdict.reason,
            }
        )

        if verdict.passed:
            return dataclasses.replace(
                current, status=QAStatus.VERIFIED, history=tuple(history), diagnostic=None
            )

        reason = verdict.reason

    return dataclasses.replace(
        current,
        status=QAStatus.REJECTED,
        revision_count=max_revisions,
        history=tuple(history),
        diagnostic=f"rejected after {max_revisions} revisions: {reason}",
    )


def _reasoning_step(step) -> ReasoningStep:
    if isinstance(step, str) and step.strip():
        return ReasoningStep(step=step.strip())

    if not isinstance(step, dict):
        raise ValueError("each reasoning step must be an object")

    text = step.get("step")
    if not isinstance(text, str) or not text.strip():
        raise ValueError("each reasoning step needs non-empty step text")

    region = step.get("confidence_region")
    if region is None:
        return ReasoningStep(step=text.strip())

    if not isinstance(region, dict):
        raise ValueError("confidence_region must be an object")

    image_index = region.get("image_index")
    bbox = region.get("bbox")

    if isinstance(image_index, bool) or not isinstance(image_index, int):
        raise ValueError("confidence_region.image_index must be an integer")
    if (
        not isinstance(bbox, list)
        or len(bbox) != 4
        or not all(isinstance(value, (int, float)) and not isinstance(value, bool) for value in bbox)
    ):
        raise ValueError("confidence_region.bbox must be a list of 4 numbers")

    return ReasoningStep(
        step=text.strip(),
        confidence_region=ConfidenceRegion(
            image_index=image_index, bbox=tuple(int(value) for value in bbox)
        ),
    )
