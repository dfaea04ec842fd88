"""
Unit tests for difficulty calibration and the rule filter.

Calibration:
   - Moderate-difficulty band
   - Re-queue and exclusion of pairs with aborted rollouts

Rule Filter:
   - Answer leaks, short questions, out-of-range regions, duplicates
   - Review sample size
"""

# Python
import dataclasses
import unittest
from unittest.mock import patch

# Third-party
from PIL import Image

# Project
from app.backend.llm_engine import ScriptedMockEndpoint
from app.backend.trajectory import RunLimits
from app.backend.visual_tools import prepare_image_set

# Curation
from app.backend.curation.difficulty_calibration import calibrate_difficulty, difficulty_record, in_band
from app.backend.curation.qa_candidate import (
    ConfidenceRegion,
    DifficultyRecord,
    QACandidate,
    QAStatus,
    ReasoningStep,
)
from app.backend.curation.rule_filter import answer_leaked, rule_filter

RIGHT = "<think>The label says Acme.</think><answer>Acme</answer>"
WRONG = "<think>The label says Zeta.</think><answer>Zeta</answer>"


def verified(question: str, answer: str = "Acme", **fields) -> QACandidate:
    return QACandidate(
        source_id=fields.pop("source_id", "s1"),
        image_paths=fields.pop("image_paths", ("a.png",)),
        question=question,
        answer=answer,
        status=QAStatus.VERIFIED,
        image_set=prepare_image_set([Image.new("RGB", (64, 64))], 4_000_000),
        **fields,
    )


class TestDifficultyBand(unittest.TestCase):
    """
    Test suite for the moderate-difficulty band.
    """

    def test_band_of_five_rollouts(self):
        """Test which correct counts are kept with band [1, 4]."""

        kept = {count for count in range(6) if difficulty_record("q", count, 5, (1, 4)).kept}

        self.assertEqual(kept, {1, 2, 3, 4})
        self.assertFalse(in_band(0, (1, 4)))
        self.assertFalse(in_band(5, (1, 4)))

    def test_count_out_of_range(self):
        """Test a correct count above the rollout count."""

        with self.assertRaises(ValueError):
            DifficultyRecord(qa_id="q", rollouts=5, correct_count=6, kept=False)


class TestCalibrateDifficulty(unittest.TestCase):
    """
    Test suite for rollout-based calibration.

    Validates:
    - Correct counts from scripted base agents
    - Records in input order
    - Exclusion after two failed attempts
    """

    def test_counts_and_band(self):
        """Test a moderate, a trivial and an unsolvable pair."""

        qa_set = [
            verified("Which brand is on the moderate label?"),
            verified("Which brand is on the trivial label?"),
            verified("Which brand is on the hopeless label?"),
        ]
        base = ScriptedMockEndpoint(
            default=[WRONG],
            scripts=[
                {"match": "moderate", "seeds": [0, 1], "turns": [RIGHT]},
                {"match": "trivial", "turns": [RIGHT]},
            ],
        )

        records = calibrate_difficulty(qa_set, base, RunLimits(), rollouts=5, band=(1, 4))

        self.assertEqual([r.correct_count for r in records], [2, 5, 0])
        self.assertEqual([r.kept for r in records], [True, False, False])
        self.assertEqual([r.qa_id for r in records], [qa.qa_id for qa in qa_set])

    @patch("logging.warning")
    def test_aborted_rollout_excludes_pair(self, mock_warning):
        """Test a pair whose rollouts keep aborting."""

        qa_set = [verified("Which brand is on the broken label?"), verified("Which brand is on the fine label?")]
        base = ScriptedMockEndpoint(
            default=[RIGHT],
            scripts=[
                {"match": "broken", "seeds": [3], "turns": []},
                {"match": "fine", "seeds": [0], "turns": [WRONG]},
            ],
        )

        records = calibrate_difficulty(qa_set, base, RunLimits(), rollouts=5, band=(1, 4))

        self.assertTrue(records[0].failed)
        self.assertFalse(records[0].kept)
        self.assertEqual((records[1].correct_count, records[1].kept), (4, True))

    def test_only_verified_pairs(self):
        """Test calibrating a draft."""

        draft = dataclasses.replace(verified("Which brand is on the label?"), status=QAStatus.DRAFT)

        with self.assertRaises(ValueError):
            calibrate_difficulty([draft], ScriptedMockEndpoint(default=[RIGHT]), RunLimits())


class TestRuleFilter(unittest.TestCase):
    """
    Test suite for the rule filter.
    """

    def test_drop_reasons(self):
        """Test that each rule names its drop reason."""

        good = verified("Which brand name is printed on the small red label?")
        leak = verified("Is the brand on the small label Acme or is it another one?")
        short = verified("Which brand is shown?")
        out_of_range = verified(
            "Which brand name is printed on the small blue label?",
            reasoning_steps=(ReasoningStep("Look", ConfidenceRegion(image_index=2, bbox=(0, 0, 5, 5))),),
        )
        duplicate = verified("Which brand name is printed on the small red label?", source_id="s2")

        result = rule_filter([good, leak, short, out_of_range, duplicate], min_question_words=8)

        self.assertEqual(result.survivors, [good])
        self.assertEqual(
            [reason for _, reason in result.dropped],
            ["answer_leak", "short_question", "region_out_of_range", "duplicate_question"],
        )

    def test_answer_leak(self):
        """Test whole-word matching of the answer."""

        self.assertTrue(answer_leaked("What colour is the red car parked here?", "Red"))
        self.assertFalse(answer_leaked("What colour is the redwood table here?", "red"))
        self.assertFalse(answer_leaked("Is the answer A or B in this picture here?", "A"))

    def test_review_sample(self):
        """Test the review sample size and its determinism."""

        qa_set = [verified(f"Which brand name is printed on label number {index} here?") for index in range(25)]

        first = rule_filter(qa_set, review_fraction=0.1, seed=3)
        second = rule_filter(qa_set, review_fraction=0.1, seed=3)

        self.assertEqual(len(first.survivors), 25)
        self.assertEqual(len(first.review), 3)
        self.assertEqual(first.review, second.review)


if __name__ == "__main__":
    unittest.main()
