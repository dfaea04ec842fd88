"""
Benchmark evaluation of a vision agent.

Every item runs one trajectory per repeat at the evaluation temperature and
under the evaluation pixel budget. Multiple-choice items are scored by option
letter, free-text items by normalised exact match or, when enabled, by the
judge. A failing item counts as incorrect and the run continues.

In plain English,
the module asks every benchmark question,
checks every answer,
and reports accuracy per subset together with how the tools were used.
"""

# Python
import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

# Third-party
import pandas as pd
from PIL import UnidentifiedImageError

# Project
from app.backend.agent_runtime import TrajectoryAbortedError, build_system_prompt, run_trajectory
from app.backend.llm_engine import ModelEndpoint
from app.backend.reward_masks import (
    JudgeUnavailableError,
    answers_match,
    extract_option_letter,
    judge_correct,
)
from app.backend.run_config import TOOL_NAMES, RunConfig
from app.backend.trajectory import RunLimits
from app.backend.visual_tools import PixelBudgetError, load_image_set

# Evaluation
from app.backend.evaluation.benchmark_loader import AnswerType, EvalItem

ITEM_FAILURES = (
    TrajectoryAbortedError,
    PixelBudgetError,
    JudgeUnavailableError,
    UnidentifiedImageError,
    OSError,
    ValueError,
)


def score_answer(
    item: EvalItem,
    answer: Optional[str],
    judge: Optional[ModelEndpoint] = None,
    use_judge: bool = False,
) -> bool:
    """Whether `answer` is correct for `item`; a missing answer is incorrect."""

    if answer is None:
        return False

    if item.answer_type == AnswerType.MULTIPLE_CHOICE:
        letter = extract_option_letter(answer)
        return letter is not None and letter == item.gold.casefold()

    if use_judge and judge is not None:
        return judge_correct(item.question, answer, item.gold, judge)

    return answers_match(answer, item.gold)


def evaluate_item(
    item: EvalItem,
    endpoint: ModelEndpoint,
    config: RunConfig,
    *,
    repeat: int = 0,
    judge: Optional[ModelEndpoint] = None,
    pixel_budget: Optional[int] = None,
    enabled_tools=TOOL_NAMES,
) -> dict:
    """One scored run of one item, as a flat result row."""

    pixel_budget = pixel_budget or config.pixels.eval_total_budget
    per_image_max = min(config.pixels.per_image_max_pixels or pixel_budget, pixel_budget)

    limits = dataclasses.replace(
        RunLimits.from_config(config.limits),
        max_input_tokens=config.evaluation.max_input_tokens,
    )

    row = {
        "item_id": item.item_id,
        "subset": item.subset,
        "repeat": repeat,
        "correct": False,
        "failed": False,
        "answer": None,
        "validity": None,
        "tool_calls": 0,
    }
    row.update({tool: 0 for tool in TOOL_NAMES})

    try:
        image_set = load_image_set(item.images, pixel_budget, per_image_max)
        trajectory = run_trajectory(
            item.prompt,
            image_set,
            endpoint,
            limits,
            config.system_prompt or build_system_prompt(enabled_tools),
            prompt_id=item.item_id,
            seed=repeat,
            temperature=config.evaluation.temperature,
            enabled_tools=enabled_tools,
            pixel_budget=per_image_max,
            min_crop_side=config.pixels.min_crop_side,
        )
        row["answer"] = trajectory.final_answer
        row["validity"] = trajectory.validity.value
        row["tool_calls"] = trajectory.tool_calls
        for event in trajectory.tool_events:
            row[event.call.name] += 1
        row["correct"] = score_answer(item, trajectory.final_answer, judge, config.evaluation.use_judge)
    except ITEM_FAILURES as e:
        logging.error("Evaluation of item %s (repeat %d) failed: %s", item.item_id, repeat, e)
        row["failed"] = True
        row["correct"] = False

    return row


def evaluate(
    items: list,
    endpoint: ModelEndpoint,
    config: RunConfig,
    *,
    judge: Optional[ModelEndpoint] = None,
    pixel_budget: Optional[int] = None,
    no_tools: bool = False,
) -> tuple:
    """
    Evaluate every item `config.evaluation.repeats` times.

    Returns:
        (report dict, per-run results DataFrame)

    Raises:
        ValueError: if there are no items.
    """

    if not items:
        raise ValueError("Evaluation dataset has no items.")

    pixel_budget = pixel_budget or config.pixels.eval_total_budget
    enabled_tools = [] if no_tools else list(config.rollout.enabled_tools)
    runs = [(repeat, item) for repeat in range(config.evaluation.repeats) for item in items]

    def run(job):
        repeat, item = job
        return evaluate_item(
            item,
            endpoint,
            config,
            repeat=repeat,
            judge=judge,
            pixel_budget=pixel_budget,
            enabled_tools=enabled_tools,
        )

    workers = max(1, min(config.evaluation.concurrency, len(runs)))
    if workers == 1:
        rows = [run(job) for job in runs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(run, runs))

    results = pd.DataFrame(rows)
    report = build_report(results)
    report.update(
        {
            "pixel_budget": pixel_budget,
            "tools_enabled": enabled_tools,
            "temperature": config.evaluation.temperature,
            "repeats": config.evaluation.repeats,
        }
    )
    return report, results


def build_report(results: pd.DataFrame) -> dict:
    """
    Accuracy per subset and overall, averaged over repeats, with tool-use statistics.

    `accuracy` is rounded to one decimal for display; `accuracy_exact` keeps
    correct / total at full precision.
    """

    results = results.copy()
    results["correct"] = results["correct"].astype(bool)

    subsets = []
    for subset, group in results.groupby("subset", sort=True):
        subsets.append(_accuracy_entry(group, subset=subset))

    tool_mix = {tool: int(results[tool].sum()) for tool in TOOL_NAMES}
    total_calls = sum(tool_mix.values())

    return {
        "overall": _accuracy_entry(results),
        "subsets": subsets,
        "tools": {
            "mean_tool_calls": float(results["tool_calls"].mean()),
            "mix": tool_mix,
            "mix_fraction": {
                tool: (count / total_calls if total_calls else 0.0)
                for tool, count in tool_mix.items()
            },
        },
        "failures": int(results["failed"].sum()),
    }


def _accuracy_entry(group: pd.DataFrame, subset: Optional[str] = None) -> dict:
    runs = len(group)
    correct = int(group["correct"].sum())
    exact = 100.0 * correct / runs if runs else 0.0

    entry = {
        "items": int(group["item_id"].nunique()),
        "runs": runs,
        "correct": correct,
        "accuracy": round(exact, 1),
        "accuracy_exact": exact,
    }
    if subset is not None:
        entry = {"subset": subset, **entry}
    return entry
