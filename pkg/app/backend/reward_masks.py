"""
Rewards, validity and masks of finished trajectories.

- compute_reward: R = r_acc * (a + b * tool_gain) + c * r_format
- format_score: 1.0 minus 0.25 per format-violation class, floored at 0
- classify_validity: MaxTurns > MaxLength > NoAnswer > Valid
- build_action_mask: only assistant text is trainable
- group_advantages: GRPO group-relative advantages over the unmasked members

In plain English,
a trajectory earns its reward for being right, gets a bonus for having
actually looked at the image with a tool, and a small score for following
the turn format. Invalid trajectories are kept out of the update entirely.
"""

# Python
import logging
import re
import statistics
import unicodedata
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Optional, Sequence

# Project
from app.backend.llm_engine import EndpointError, ModelEndpoint, ask, text_part
from app.backend.run_config import RewardConfig
from app.backend.tool_parser import ViolationClass, violation_classes
from app.backend.trajectory import Role, RunLimits, Trajectory, Validity

FORMAT_DEDUCTION = Decimal("0.25")
ADVANTAGE_EPSILON = 1e-6
MAX_RULE_CHECKABLE_WORDS = 4

OPTION_PATTERN = re.compile(r"^(?:option\s*)?\(?([a-z])(?:\)|\.|:|$)")
NUMBER_PATTERN = re.compile(r"^[-+]?(?:\d+(?:\.\d*)?|\.\d+)$")
QUOTES_AND_BRACKETS = "\"'`“”‘’«»()[]{}"

JUDGE_SYSTEM_PROMPT = (
    "You grade answers to visual questions. Compare the candidate answer with the "
    "reference answer and decide whether they mean the same thing. "
    "Reply with a single word: yes or no."
)


class JudgeUnavailableError(RuntimeError):
    """The gold answer needs a judge and none could be consulted."""


@dataclass(frozen=True)
class RewardCoefficients:
    a: float = 1.0
    b: float = 0.5
    c: float = 0.1

    @classmethod
    def from_config(cls, config: RewardConfig) -> "RewardCoefficients":
        return cls(a=config.a, b=config.b, c=config.c)


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: int
    r_format: float
    tool_gain: int
    a: float
    b: float
    c: float
    total: float

    def to_dict(self) -> dict:
        return {
            "r_acc": self.r_acc,
            "r_format": self.r_format,
            "tool_gain": self.tool_gain,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "total": self.total,
        }


@dataclass(frozen=True)
class ActionMask:
    """Per-message trainable flags and the character spans they cover."""

    trainable: tuple
    spans: tuple  # (message_index, start, end) over Message.text


@dataclass(frozen=True)
class GroupStatistics:
    advantages: list
    mean: Optional[float]
    std: Optional[float]
    degenerate: bool


@dataclass
class MaskedGroup:
    prompt_id: str
    group_id: int
    trajectories: list
    gold_answer: str
    rewards: list = field(default_factory=list)
    advantages: list = field(default_factory=list)
    trajectory_mask: list = field(default_factory=list)
    mean: Optional[float] = None
    std: Optional[float] = None
    degenerate: bool = False


def reward_total(r_acc: int, tool_gain: int, r_format: float, coeffs: RewardCoefficients) -> float:
    """Composite reward, summed in decimal so table values come out exact."""

    a, b, c = (Decimal(repr(value)) for value in (coeffs.a, coeffs.b, coeffs.c))
    total = Decimal(r_acc) * (a + b * Decimal(tool_gain)) + c * Decimal(repr(r_format))
    return float(total)


def format_score(trajectory: Trajectory) -> float:
    """
    1.0 minus 0.25 per violation class present anywhere in the trajectory.

    A trajectory that ends without an answer counts the answer class as violated.
    """

    return format_score_from_turns(trajectory.turns, trajectory.final_answer)


def format_score_from_turns(turns: Sequence, final_answer: Optional[str]) -> float:
    classes = set()
    for turn in turns:
        classes |= violation_classes(turn.violation_flags)

    if final_answer is None:
        classes.add(ViolationClass.ANSWER)

    return float(max(Decimal(0), Decimal(1) - FORMAT_DEDUCTION * len(classes)))


def tool_gain(trajectory: Trajectory) -> int:
    return 1 if trajectory.successful_tool_calls > 0 else 0


def compute_reward(
    trajectory: Trajectory,
    gold_answer: str,
    judge: Optional[ModelEndpoint] = None,
    coeffs: Optional[RewardCoefficients] = None,
) -> RewardBreakdown:
    """
    Score a terminated trajectory against its gold answer.

    Raises:
        JudgeUnavailableError: if the gold needs a judge and there is none,
            or the judge endpoint failed.
    """

    coeffs = coeffs or RewardCoefficients()
    r_acc = 0
    if trajectory.final_answer is not None:
        r_acc = 1 if judge_correct(trajectory.question, trajectory.final_answer, gold_answer, judge) else 0

    r_format = format_score(trajectory)
    gain = tool_gain(trajectory)

    return RewardBreakdown(
        r_acc=r_acc,
        r_format=r_format,
        tool_gain=gain,
        a=coeffs.a,
        b=coeffs.b,
        c=coeffs.c,
        total=reward_total(r_acc, gain, r_format, coeffs),
    )


def judge_correct(
    question: str, answer: str, gold_answer: str, judge: Optional[ModelEndpoint] = None
) -> bool:
    """Rule-based match when the gold allows it, otherwise a yes/no judge verdict."""

    if is_rule_checkable(gold_answer):
        return answers_match(answer, gold_answer)

    if judge is None:
        raise JudgeUnavailableError(
            "Gold answer is not rule-checkable and no judge endpoint is configured:\n"
            f"Gold: {gold_answer}"
        )

    content = [
        text_part(
            f"Question: {question}\n"
            f"Reference answer: {gold_answer}\n"
            f"Candidate answer: {answer}\n"
            "Does the candidate answer match the reference answer? Reply yes or no."
        )
    ]

    try:
        verdict = ask(judge, JUDGE_SYSTEM_PROMPT, content, temperature=0.0).text
    except EndpointError as e:
        raise JudgeUnavailableError(f"Judge endpoint failed:\n{e}") from e

    normalized = normalize_answer(verdict)
    if normalized in ("yes", "no"):
        return normalized == "yes"

    logging.warning("Ambiguous judge verdict counted as incorrect: %r", verdict[:200])
    return False


def normalize_answer(text: str) -> str:
    """NFKC, case-fold, strip quotes, brackets and a trailing period, collapse whitespace."""

    text = unicodedata.normalize("NFKC", text or "").casefold()
    text = " ".join(text.split())

    previous = None
    while previous != text:
        previous = text
        text = text.strip()
        if text.endswith("."):
            text = text[:-1]
        if len(text) >= 2 and text[0] in QUOTES_AND_BRACKETS and text[-1] in QUOTES_AND_BRACKETS:
            text = text[1:-1]

    return " ".join(text.split())


def extract_option_letter(text: str) -> Optional[str]:
    """Option letter from `B`, `(B)`, `B.`, `B) text` or `Option B`; None otherwise."""

    text = unicodedata.normalize("NFKC", text or "").casefold().strip()
    match = OPTION_PATTERN.match(text)
    return match.group(1) if match else None


def is_option_letter(text: str) -> bool:
    normalized = normalize_answer(text)
    return len(normalized) == 1 and "a" <= normalized <= "z"


def is_rule_checkable(gold_answer: str) -> bool:
    """A single option letter, a number, or a short phrase of at most four words."""

    normalized = normalize_answer(gold_answer)
    if not normalized:
        return False
    if is_option_letter(normalized) or NUMBER_PATTERN.match(normalized):
        return True
    return len(normalized.split()) <= MAX_RULE_CHECKABLE_WORDS


def answers_match(answer: str, gold_answer: str) -> bool:
    """Option-letter match for letter golds, numeric or normalized exact match otherwise."""

    if is_option_letter(gold_answer):
        return extract_option_letter(answer) == normalize_answer(gold_answer)

    normalized_answer = normalize_answer(answer)
    normalized_gold = normalize_answer(gold_answer)

    if NUMBER_PATTERN.match(normalized_answer) and NUMBER_PATTERN.match(normalized_gold):
        return float(normalized_answer) == float(normalized_gold)

    return normalized_answer == normalized_gold


def classify_validity(trajectory: Trajectory, limits: RunLimits) -> Validity:
    """Validity of a terminated trajectory; Aborted is never reclassified."""

    if trajectory.validity == Validity.ABORTED:
        return Validity.ABORTED

    if trajectory.interaction_count > limits.max_interactions:
        return Validity.INVALID_MAX_TURNS

    if trajectory.truncated or trajectory.completion_tokens > limits.max_response_tokens:
        return Validity.INVALID_MAX_LENGTH

    if trajectory.final_answer is None:
        return Validity.INVALID_NO_ANSWER

    return Validity.VALID


def build_action_mask(trajectory: Trajectory, trajectory_masked: bool = False) -> ActionMask:
    """
    Trainable exactly on assistant-generated text.

    A trajectory-masked episode has no trainable message at all.
    """

    trainable = []
    spans = []
    for index, message in enumerate(trajectory.messages):
        flag = message.role == Role.ASSISTANT and not trajectory_masked
        trainable.append(flag)
        if flag:
            spans.append((index, 0, len(message.text)))

    return ActionMask(trainable=tuple(trainable), spans=tuple(spans))


def group_statistics(rewards: Sequence, trajectory_mask: Sequence) -> GroupStatistics:
    """
    Group-relative advantages A_i = (r_i - mean) / (std + 1e-6) over unmasked members.

    Masked members get 0 and stay out of the mean and the population std.
    """

    if len(rewards) != len(trajectory_mask):
        raise ValueError(
            f"Rewards and mask differ in length: {len(rewards)} != {len(trajectory_mask)}"
        )
    if not rewards:
        raise ValueError("Group needs at least one member.")

    unmasked = [float(reward) for reward, keep in zip(rewards, trajectory_mask) if keep]

    if not unmasked:
        logging.warning("Degenerate group: all %d members are masked", len(rewards))
        return GroupStatistics(
            advantages=[0.0] * len(rewards), mean=None, std=None, degenerate=True
        )

    mean = statistics.fmean(unmasked)
    std = statistics.pstdev(unmasked)

    if len(set(unmasked)) == 1:
        advantages = [0.0] * len(rewards)
    else:
        advantages = [
            (float(reward) - mean) / (std + ADVANTAGE_EPSILON) if keep else 0.0
            for reward, keep in zip(rewards, trajectory_mask)
        ]

    return GroupStatistics(advantages=advantages, mean=mean, std=std, degenerate=False)


def group_advantages(rewards: Sequence, trajectory_mask: Sequence) -> list:
    return group_statistics(rewards, trajectory_mask).advantages


def build_masked_group(
    trajectories: Sequence,
    gold_answer: str,
    *,
    prompt_id: str = "",
    group_id: int = 0,
    judge: Optional[ModelEndpoint] = None,
    coeffs: Optional[RewardCoefficients] = None,
    use_trajectory_mask: bool = True,
) -> MaskedGroup:
    """
    Reward every member and normalise the rewards inside the group.

    With `use_trajectory_mask` off, invalid members keep their reward and join
    the statistics; aborted members are always masked.
    """

    if not trajectories:
        raise ValueError(f"Group {group_id} of prompt {prompt_id} has no trajectories.")

    rewards = []
    trajectory_mask = []
    for trajectory in trajectories:
        trajectory.reward = compute_reward(trajectory, gold_answer, judge, coeffs)
        rewards.append(trajectory.reward.total)

        if trajectory.validity == Validity.ABORTED:
            trajectory_mask.append(False)
        elif use_trajectory_mask:
            trajectory_mask.append(trajectory.validity == Validity.VALID)
        else:
            trajectory_mask.append(True)

    stats = group_statistics(rewards, trajectory_mask)
    if stats.degenerate:
        logging.warning("Prompt %s: every rollout of group %d is masked", prompt_id, group_id)

    return MaskedGroup(
        prompt_id=prompt_id,
        group_id=group_id,
        trajectories=list(trajectories),
        gold_answer=gold_answer,
        rewards=rewards,
        advantages=stats.advantages,
        trajectory_mask=trajectory_mask,
        mean=stats.mean,
        std=stats.std,
        degenerate=stats.degenerate,
    )
