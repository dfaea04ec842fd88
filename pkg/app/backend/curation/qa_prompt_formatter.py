"""
Prompts of the three curation agents (question generator, answer verifier,
question reviser).

Key Features:
- Lists the images of the sample with their index and size.
- Asks for one structured JSON payload per reply.
- Carries the verifier's reason into the revision request.
"""

# Python
import json
from typing import Optional

# Project
from app.backend.llm_engine import image_part, text_part

# Curation
from app.backend.curation.qa_candidate import QACandidate

GENERATOR_SYSTEM_PROMPT = (
    "You write fine-grained visual questions. A good question can only be answered "
    "by inspecting small details of the images, has exactly one correct answer, "
    "and never states its answer."
)

VERIFIER_SYSTEM_PROMPT = (
    "You audit visual question-answer pairs. Judge strictly and reply with JSON only."
)

REVISER_SYSTEM_PROMPT = (
    "You repair visual question-answer pairs that failed an audit. Keep the question "
    "fine-grained and grounded in the images, and fix exactly what the audit criticised."
)

PAYLOAD_SCHEMA = """```json
{
  "question": "the question",
  "answer": "the single correct answer",
  "reasoning_steps": [
    {"step": "what to look at and what it shows",
     "confidence_region": {"image_index": 0, "bbox": [x1, y1, x2, y2]}}
  ]
}
```"""

RELATIONSHIP_INSTRUCTIONS = {
    "difference": "Ask about a detail that differs between the images.",
    "contrast": "Ask a question that requires contrasting a detail across the images.",
    "time": "Ask about the temporal order or change shown across the images.",
}


def format_image_overview(image_set) -> str:
    lines = ["## Images\n"]
    for index, image in enumerate(image_set.images):
        lines.append(f"- Image {index}: {image.served_width}x{image.served_height} px")
    return "\n".join(lines)


def image_content(image_set) -> list:
    """Typed content parts: an index label followed by each image."""

    parts = []
    for index, image in enumerate(image_set.images):
        parts.append(text_part(f"Image {index}:"))
        parts.append(image_part(image.served))
    return parts


def format_generation_prompt(image_set, kind: str, relationship: Optional[str] = None) -> str:
    """Instruction text of the question generator."""

    if kind == "poster":
        focus = (
            "The images are panels of one conference poster. Ask a question that needs "
            "a small detail from at least one panel, ideally combining two panels."
        )
    else:
        focus = "The images come from one group of natural photos."
        if relationship:
            focus += " " + RELATIONSHIP_INSTRUCTIONS[relationship]

    instructions = f"""## Instructions
1. **Pick the detail**: {focus}
2. **Write the question**: at least 8 words, never containing the answer.
3. **Explain the answer**: list the reasoning steps from question to answer. Each step
   names the confidence region (image index and pixel bbox [x1, y1, x2, y2]) it relies on.
4. **Reply** with this JSON object only:

{PAYLOAD_SCHEMA}"""

    return f"{format_image_overview(image_set)}\n\n{instructions}"


def format_verification_prompt(qa: QACandidate) -> str:
    """Instruction text of the verifier for one candidate."""

    steps = "\n".join(
        f"{number}. {step.step}" for number, step in enumerate(qa.reasoning_steps, start=1)
    )

    return f"""## Candidate
**Question**: {qa.question}
**Answer**: {qa.answer}
**Reasoning steps**:
{steps}

## Instructions
Judge two axes against the images:
1. **answer_unique**: the question has exactly one correct answer, and it is the given answer.
2. **reasoning_sound**: every reasoning step is correct and the steps lead to the answer.

Reply with this JSON object only:
```json
{{"answer_unique": "pass or fail", "reasoning_sound": "pass or fail", "reason": "short explanation"}}
```"""


def format_revision_prompt(qa: QACandidate, reason: str) -> str:
    """Instruction text of the reviser: the failed candidate plus the audit reason."""

    candidate = json.dumps(
        {
            "question": qa.question,
            "answer": qa.answer,
            "reasoning_steps": [step.to_dict() for step in qa.reasoning_steps],
        },
        ensure_ascii=False,
        indent=2,
    )

    return f"""## Failed candidate
```json
{candidate}
```

## Audit result
{reason}

## Instructions
Rewrite the question, answer and reasoning steps so the audit passes.
Reply with this JSON object only:

{PAYLOAD_SCHEMA}"""
