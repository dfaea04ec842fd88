"""
Stage three of the QA construction: rollout-based difficulty calibration.

Each verified QA pair is answered several times by the base agent. Pairs it
always solves are too simple, pairs it never solves are too difficult; only
the moderate band is kept.
"""

# Python
import logging
from collections import deque
from typing import Optional, Sequence

# Project
from app.backend.agent_runtime import GroupRolloutError, run_group
from app.backend.llm_engine import ModelEndpoint
from app.backend.reward_masks import JudgeUnavailableError, judge_correct
from app.backend.trajectory import RunLimits, Validity

# Curation
from app.backend.curation.qa_candidate import DifficultyRecord, QACandidate, QAStatus


def in_band(correct_count: int, band: Sequence) -> bool:
    low, high = band
    return low <= correct_count <= high


def difficulty_record(qa_id: str, correct_count: int, rollouts: int, band: Sequence) -> DifficultyRecord:
    return DifficultyRecord(
        qa_id=qa_id,
        rollouts=rollouts,
        correct_count=correct_count,
        kept=in_band(correct_count, band),
    )


def count_correct(qa: QACandidate, trajectories: list, judge: Optional[ModelEndpoint] = None) -> int:
    """Number of trajectories whose final answer matches the gold answer."""

    correct = 0
    for trajectory in trajectories:
        if trajectory.final_answer is None:
            continue
        if judge_correct(qa.question, trajectory.final_answer, qa.answer, judge):
            correct += 1
    return correct


def calibrate_difficulty(
    qa_set: Sequence,
    base: ModelEndpoint,
    limits: RunLimits,
    *,
    rollouts: int = 5,
    band: Sequence = (1, 4),
    seed: int = 0,
    judge: Optional[ModelEndpoint] = None,
    concurrency: int = 1,
    **run_options,
) -> list:
    """
    Answer every verified pair `rollouts` times and keep it iff the number of
    correct answers lies in `band`.

    A pair with any aborted rollout is re-queued once; a second failure
    excludes it with `failed = true`. Records come back in input order.

    Raises:
        ValueError: if a pair is not verified.
    """

    for qa in qa_set:
        if qa.status != QAStatus.VERIFIED:
            raise ValueError(f"Only verified pairs can be calibrated: {qa.qa_id} is {qa.status.value}")

    records = {}
    queue = deque((index, 0) for index in range(len(qa_set)))

    while queue:
        index, attempt = queue.popleft()
        qa = qa_set[index]

        try:
            trajectories = run_group(
                qa.question,
                qa.image_set,
                base,
                limits,
                rollouts,
                prompt_id=qa.qa_id,
                seed=seed,
                concurrency=concurrency,
                **run_options,
            )
            failed = any(trajectory.validity == Validity.ABORTED for trajectory in trajectories)
            correct = 0 if failed else count_correct(qa, trajectories, judge)
        except (GroupRolloutError, JudgeUnavailableError) as e:
            logging.warning("Calibration of %s failed: %s", qa.qa_id, e)
            failed = True

        if failed and attempt == 0:
            queue.append((index, 1))
            continue

        if failed:
            logging.warning("Calibration of %s failed twice; excluding it", qa.qa_id)
            records[index] = DifficultyRecord(
                qa_id=qa.qa_id, rollouts=rollouts, correct_count=0, kept=False, failed=True
            )
            continue

        records[index] = difficulty_record(qa.qa_id, correct, rollouts, band)

    return [records[index] for index in range(len(qa_set))]
