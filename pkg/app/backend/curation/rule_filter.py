"""
Rule-based screening of calibrated QA pairs, plus the sample handed to
human reviewers.

Rules (the first one that fires names the drop reason):
- answer_leak: the normalised answer appears as whole words in the question
- short_question: fewer than the minimum number of words
- region_out_of_range: a confidence region points at a missing image
- duplicate_question: same normalised question as an earlier pair
"""

# Python
import math
import random
import re
from dataclasses import dataclass, field
from typing import Sequence

# Project
from app.backend.reward_masks import is_option_letter, normalize_answer


@dataclass
class RuleFilterResult:
    survivors: list = field(default_factory=list)
    dropped: list = field(default_factory=list)  # (qa, reason)
    review: list = field(default_factory=list)


def answer_leaked(question: str, answer: str) -> bool:
    """Whole-word occurrence of the normalised answer in the normalised question."""

    if is_option_letter(answer):
        return False

    normalized_answer = normalize_answer(answer)
    if not normalized_answer:
        return False

    pattern = r"(?<!\w)" + re.escape(normalized_answer) + r"(?!\w)"
    return re.search(pattern, normalize_answer(question)) is not None


def regions_in_range(qa) -> bool:
    image_count = len(qa.image_paths)
    return all(
        step.confidence_region is None or 0 <= step.confidence_region.image_index < image_count
        for step in qa.reasoning_steps
    )


def rule_filter(
    qa_set: Sequence,
    min_question_words: int = 8,
    review_fraction: float = 0.1,
    seed: int = 0,
) -> RuleFilterResult:
    """Drop pairs breaking a rule; sample ceil(review_fraction x survivors) for review."""

    result = RuleFilterResult()
    seen_questions = set()

    for qa in qa_set:
        normalized_question = normalize_answer(qa.question)

        if answer_leaked(qa.question, qa.answer):
            reason = "answer_leak"
        elif len(qa.question.split()) < min_question_words:
            reason = "short_question"
        elif not regions_in_range(qa):
            reason = "region_out_of_range"
        elif normalized_question in seen_questions:
            reason = "duplicate_question"
        else:
            reason = None

        if reason:
            result.dropped.append((qa, reason))
            continue

        seen_questions.add(normalized_question)
        result.survivors.append(qa)

    sample_size = math.ceil(review_fraction * len(result.survivors))
    sampled = set(random.Random(seed).sample(range(len(result.survivors)), sample_size))
    result.review = [qa for index, qa in enumerate(result.survivors) if index in sampled]

    return result
