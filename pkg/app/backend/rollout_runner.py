"""
Rollout runs: groups of trajectories per prompt, rewarded, normalised and
exported for the trainer.

For each prompt of the manifest:
run_group -> compute_reward per member -> validity -> masks
-> group_advantages -> export_group

A failing prompt is logged and counted; the run goes on with the next one.
"""

# Python
import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

# Third-party
import pandas as pd

# Project
from app.backend.agent_runtime import GroupRolloutError, build_system_prompt, run_group
from app.backend.llm_engine import ModelEndpoint, build_endpoint
from app.backend.report_plots import plot_bar, plot_histogram, write_html
from app.backend.reward_masks import JudgeUnavailableError, RewardCoefficients, build_masked_group
from app.backend.run_config import RunConfig
from app.backend.trajectory import RunLimits, Validity
from app.backend.trajectory_export import ExportSchemaError, export_group
from app.backend.visual_tools import PixelBudgetError, load_image, prepare_image_set

EXPORT_FILE = "trajectories.jsonl"
SUMMARY_FILE = "summary.json"
SUMMARY_HTML_FILE = "summary.html"
CROPS_DIR = "crops"

PROMPT_FAILURES = (
    GroupRolloutError,
    JudgeUnavailableError,
    ExportSchemaError,
    PixelBudgetError,
    OSError,
)


@dataclass(frozen=True)
class PromptItem:
    prompt_id: str
    images: tuple
    question: str
    gold: str


def load_prompt_manifest(path: str) -> list:
    """
    Read rollout prompts, one JSON object per line: {prompt_id, images, question, gold}.
    QA-manifest lines ({qa_id, images, question, answer}) are accepted too.
    Image paths stay as written; they are resolved against the manifest directory.

    Raises:
        ValueError: on the first malformed line.
    """

    prompts = []
    seen = set()

    with open(path, "r", encoding="utf-8") as _file:
        for line_number, line in enumerate(_file, start=1):
            if not line.strip():
                continue

            location = f"{path}, line {line_number}"
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{location}: not JSON\n{e}") from e
            if not isinstance(data, dict):
                raise ValueError(f"{location}: expected a JSON object")

            prompt_id = data.get("prompt_id") or data.get("qa_id")
            gold = data.get("gold", data.get("answer"))
            images = data.get("images")
            question = data.get("question")

            if not isinstance(prompt_id, str) or not prompt_id:
                raise ValueError(f"{location}: prompt_id must be non-empty text")
            if prompt_id in seen:
                raise ValueError(f"{location}: duplicate prompt_id {prompt_id!r}")
            if not isinstance(images, list) or not images or not all(isinstance(image, str) for image in images):
                raise ValueError(f"{location}: images must be a non-empty list of paths")
            if not isinstance(question, str) or not question.strip():
                raise ValueError(f"{location}: question must be non-empty text")
            if gold is None or not str(gold).strip():
                raise ValueError(f"{location}: gold answer is required")

            seen.add(prompt_id)
            prompts.append(
                PromptItem(
                    prompt_id=prompt_id,
                    images=tuple(images),
                    question=question.strip(),
                    gold=str(gold).strip(),
                )
            )

    return prompts


def run_rollout(
    manifest_path: str,
    config: RunConfig,
    output_dir: str,
    *,
    endpoint: Optional[ModelEndpoint] = None,
    judge: Optional[ModelEndpoint] = None,
    save_crops: Optional[bool] = None,
    exported_at: Optional[str] = None,
) -> dict:
    """
    Roll out every prompt of the manifest and export the rewarded groups.

    Writes `trajectories.jsonl`, `summary.json` and `summary.html` into `output_dir`.

    Returns:
        The summary dict.
    """

    prompts = load_prompt_manifest(manifest_path)
    base_dir = os.path.dirname(os.path.abspath(manifest_path))

    endpoint = endpoint or build_endpoint(config.endpoint)
    judge = judge if judge is not None else build_endpoint(config.judge)
    save_crops = config.rollout.save_crops if save_crops is None else save_crops

    limits = RunLimits.from_config(config.limits)
    coeffs = RewardCoefficients.from_config(config.reward)
    system_prompt = config.system_prompt or build_system_prompt(config.rollout.enabled_tools)
    per_image_max = config.pixels.per_image_max_pixels or config.pixels.train_total_budget
    crops_dir = os.path.join(output_dir, CROPS_DIR) if save_crops else None

    os.makedirs(output_dir, exist_ok=True)
    export_path = os.path.join(output_dir, EXPORT_FILE)

    rows = []
    failed_prompts = []
    degenerate_groups = 0
    records = 0

    with open(export_path, "w", encoding="utf-8") as sink:
        for group_id, prompt in enumerate(prompts):
            try:
                # Image manifests keep the paths as written in the prompt manifest
                image_set = prepare_image_set(
                    [load_image(os.path.join(base_dir, image)) for image in prompt.images],
                    config.pixels.train_total_budget,
                    per_image_max,
                    paths=prompt.images,
                )

                trajectories = run_group(
                    prompt.question,
                    image_set,
                    endpoint,
                    limits,
                    config.rollout.group_size,
                    system_prompt,
                    prompt_id=prompt.prompt_id,
                    seed=config.rollout.seed,
                    concurrency=config.rollout.concurrency,
                    enabled_tools=config.rollout.enabled_tools,
                    pixel_budget=per_image_max,
                    min_crop_side=config.pixels.min_crop_side,
                )
                group = build_masked_group(
                    trajectories,
                    prompt.gold,
                    prompt_id=prompt.prompt_id,
                    group_id=group_id,
                    judge=judge,
                    coeffs=coeffs,
                    use_trajectory_mask=config.rollout.trajectory_mask,
                )
                records += export_group(group, sink, crops_dir=crops_dir, exported_at=exported_at)
            except PROMPT_FAILURES as e:
                logging.error("Rollout of prompt %s failed: %s", prompt.prompt_id, e)
                failed_prompts.append(prompt.prompt_id)
                continue

            degenerate_groups += int(group.degenerate)
            for member_id, trajectory in enumerate(group.trajectories):
                rows.append(
                    {
                        "prompt_id": prompt.prompt_id,
                        "member_id": member_id,
                        "reward": trajectory.reward.total,
                        "advantage": group.advantages[member_id],
                        "valid": trajectory.validity == Validity.VALID,
                        "validity": trajectory.validity.value,
                        "tool_calls": trajectory.tool_calls,
                    }
                )

    summary = summarize_rollout(pd.DataFrame(rows))
    summary.update(
        {
            "prompts": len(prompts),
            "prompts_failed": len(failed_prompts),
            "failed_prompt_ids": failed_prompts,
            "records": records,
            "degenerate_groups": degenerate_groups,
            "export_path": EXPORT_FILE,
        }
    )

    with open(os.path.join(output_dir, SUMMARY_FILE), "w", encoding="utf-8") as _file:
        json.dump(summary, _file, indent=2, sort_keys=True)
        _file.write("\n")

    if rows:
        write_summary_html(pd.DataFrame(rows), os.path.join(output_dir, SUMMARY_HTML_FILE))

    return summary


def summarize_rollout(results: pd.DataFrame) -> dict:
    """Reward mean, valid fraction, mean tool calls per trajectory and validity counts."""

    if results.empty:
        return {
            "trajectories": 0,
            "reward_mean": None,
            "valid_fraction": None,
            "mean_tool_calls": None,
            "validity_counts": {},
        }

    validity_counts = results["validity"].value_counts().sort_index()

    return {
        "trajectories": int(len(results)),
        "reward_mean": float(results["reward"].mean()),
        "valid_fraction": float(results["valid"].mean()),
        "mean_tool_calls": float(results["tool_calls"].mean()),
        "validity_counts": {str(key): int(value) for key, value in validity_counts.items()},
    }


def write_summary_html(results: pd.DataFrame, path: str) -> None:
    counts = results["validity"].value_counts().sort_index().rename_axis("validity")
    counts = counts.reset_index(name="trajectories")

    plots = [
        plot_histogram(
            results["advantage"].tolist(),
            title="Group-relative advantages",
            axis_label="advantage",
        ),
        plot_bar(counts, "validity", "trajectories", title="Trajectory validity"),
    ]
    write_html(plots, path, "Rollout summary")

