"""
Records flowing through the QA construction pipeline.

Records are immutable: every stage returns new records (dataclasses.replace)
and never edits the ones it received.
"""

# Python
import enum
import hashlib
from dataclasses import dataclass, field
from typing import Optional

# Curation
from app.backend.curation.consts import QA_ID_LENGTH


class QAStatus(str, enum.Enum):
    DRAFT = "draft"
    VERIFIED = "verified"
    REJECTED = "rejected"
    REVISED = "revised"


class CurationStageError(RuntimeError):
    """A pipeline stage failed; `partial` holds what the stage produced so far."""

    def __init__(self, stage: str, message: str, partial=None):
        super().__init__(f"Curation stage '{stage}' failed:\n{message}")
        self.stage = stage
        self.partial = partial if partial is not None else []


@dataclass(frozen=True)
class ConfidenceRegion:
    image_index: int
    bbox: tuple

    def to_dict(self) -> dict:
        return {"image_index": self.image_index, "bbox": list(self.bbox)}


@dataclass(frozen=True)
class ReasoningStep:
    step: str
    confidence_region: Optional[ConfidenceRegion] = None

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "confidence_region": (
                self.confidence_region.to_dict() if self.confidence_region else None
            ),
        }


@dataclass(frozen=True)
class QACandidate:
    source_id: str
    image_paths: tuple
    question: str
    answer: str
    reasoning_steps: tuple = ()
    status: QAStatus = QAStatus.DRAFT
    revision_count: int = 0
    generation_round: int = 0
    kind: str = "natural"
    relationship: Optional[str] = None
    history: tuple = ()
    diagnostic: Optional[str] = None
    image_set: object = field(default=None, compare=False, repr=False)

    @property
    def qa_id(self) -> str:
        return make_qa_id(self.source_id, self.question)

    def to_dict(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "source_id": self.source_id,
            "images": list(self.image_paths),
            "question": self.question,
            "answer": self.answer,
            "reasoning_steps": [step.to_dict() for step in self.reasoning_steps],
            "status": self.status.value,
            "revision_count": self.revision_count,
            "provenance": {
                "source_id": self.source_id,
                "kind": self.kind,
                "relationship": self.relationship,
                "generation_round": self.generation_round,
            },
            "history": list(self.history),
            "diagnostic": self.diagnostic,
        }


@dataclass(frozen=True)
class DifficultyRecord:
    qa_id: str
    rollouts: int
    correct_count: int
    kept: bool
    failed: bool = False

    def __post_init__(self):
        if not 0 <= self.correct_count <= self.rollouts:
            raise ValueError(
                f"correct_count must lie in [0, {self.rollouts}]: {self.correct_count}"
            )

    def to_dict(self) -> dict:
        return {
            "rollouts": self.rollouts,
            "correct_count": self.correct_count,
            "kept": self.kept,
            "failed": self.failed,
        }


def make_qa_id(source_id: str, question: str) -> str:
    """First 12 hex characters of sha1(source_id + newline + question)."""

    digest = hashlib.sha1(f"{source_id}\n{question}".encode("utf-8")).hexdigest()
    return digest[:QA_ID_LENGTH]
