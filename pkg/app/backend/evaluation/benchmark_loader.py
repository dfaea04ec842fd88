"""
Benchmark items for evaluation runs.

A dataset is a line-delimited manifest, one item per line:

    {"item_id": "vstar-001", "images": ["img/001.jpg"], "question": "...",
     "options": {"A": "red", "B": "blue"}, "gold": "B", "subset": "attribute"}

`options` makes the item multiple-choice; without it the item is free text.
Image paths are resolved relative to the manifest. QA manifests written by
the curation pipeline (`qa_id`, `answer`) load as free-text items as well.
"""

# Python
import enum
import json
import os
from dataclasses import dataclass, field
from typing import Optional

DEFAULT_SUBSET = "all"


class AnswerType(str, enum.Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    FREE_TEXT = "free_text"


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    images: tuple
    question: str
    gold: str
    answer_type: AnswerType = AnswerType.FREE_TEXT
    options: dict = field(default_factory=dict)
    subset: str = DEFAULT_SUBSET

    def __post_init__(self):
        if not self.images:
            raise ValueError(f"Item {self.item_id} has no images")
        if self.answer_type == AnswerType.MULTIPLE_CHOICE and self.gold not in self.options:
            raise ValueError(
                f"Item {self.item_id}: gold {self.gold!r} is not one of the options "
                f"{sorted(self.options)}"
            )

    @property
    def prompt(self) -> str:
        """Question text sent to the agent; options are listed for multiple-choice items."""

        if self.answer_type != AnswerType.MULTIPLE_CHOICE:
            return self.question

        lines = [self.question, "Options:"]
        lines += [f"({letter}) {text}" for letter, text in sorted(self.options.items())]
        lines.append("Answer with the option letter.")
        return "\n".join(lines)


def load_eval_dataset(path: str) -> list:
    """
    Read every item of a dataset manifest.

    Raises:
        ValueError: naming the first malformed line.
    """

    base_dir = os.path.dirname(os.path.abspath(path))
    items = []

    with open(path, "r", encoding="utf-8") as _file:
        for line_number, line in enumerate(_file, start=1):
            if not line.strip():
                continue
            try:
                items.append(eval_item_from_dict(json.loads(line), base_dir))
            except (json.JSONDecodeError, ValueError, TypeError) as e:
                raise ValueError(f"{path}, line {line_number}:\n{e}") from e

    return items


def eval_item_from_dict(data: dict, base_dir: Optional[str] = None) -> EvalItem:
    if not isinstance(data, dict):
        raise ValueError("item must be a JSON object")

    item_id = data.get("item_id") or data.get("qa_id")
    gold = data.get("gold", data.get("answer"))
    question = data.get("question")
    images = data.get("images")
    options = data.get("options") or {}

    if not item_id:
        raise ValueError("item_id is required")
    if not isinstance(question, str) or not question.strip():
        raise ValueError("question must be non-empty text")
    if gold is None or not str(gold).strip():
        raise ValueError("gold answer is required")
    if not isinstance(images, list) or not images:
        raise ValueError("images must be a non-empty list of paths")

    if isinstance(options, list):
        options = {chr(ord("A") + index): text for index, text in enumerate(options)}
    if not isinstance(options, dict):
        raise ValueError("options must be an object or a list")

    options = {str(letter).strip().upper(): str(text) for letter, text in options.items()}
    gold = str(gold).strip()
    answer_type = AnswerType.FREE_TEXT
    if options:
        answer_type = AnswerType.MULTIPLE_CHOICE
        gold = gold.strip("().").upper()

    if base_dir:
        images = [os.path.join(base_dir, image) for image in images]

    return EvalItem(
        item_id=str(item_id),
        images=tuple(images),
        question=question.strip(),
        gold=gold,
        answer_type=answer_type,
        options=options,
        subset=str(data.get("subset") or DEFAULT_SUBSET),
    )
