"""
The three-stage QA construction pipeline.

1. select: drop low-resolution images, segment posters into panels
2. generate: generator -> verifier -> reviser loop per sample
3. calibrate + filter: keep pairs of moderate difficulty that pass the rules

Stages are barriers: each one finishes over the whole set before the next
starts. A failing stage writes what it produced so far to
`partial_<stage>.jsonl` and raises CurationStageError.
"""

# Python
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

# Third-party
import pandas as pd

# Project
from app.backend.llm_engine import EndpointError, build_endpoint
from app.backend.run_config import RunConfig
from app.backend.trajectory import RunLimits
from app.backend.visual_tools import prepare_image_set

# Curation
from app.backend.curation.consts import (
    QA_MANIFEST_FILE,
    REGIONS_DIR,
    REJECTED_FILE,
    REVIEW_MANIFEST_FILE,
    STATS_FILE,
)
from app.backend.curation.difficulty_calibration import calibrate_difficulty
from app.backend.curation.image_selection import load_sources, select_images
from app.backend.curation.poster_segmentation import segment_poster
from app.backend.curation.qa_agents import generate_qa, revise_loop, verify_answer
from app.backend.curation.qa_candidate import CurationStageError, QAStatus
from app.backend.curation.qa_manifest import qa_record, write_manifest
from app.backend.curation.rule_filter import rule_filter


@dataclass(frozen=True)
class Sample:
    source_id: str
    kind: str
    relationship: Optional[str]
    image_set: object
    image_paths: tuple


@dataclass
class CurationResult:
    manifest_path: str
    review_path: str
    records: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def build_agent_endpoints(config: RunConfig) -> dict:
    return {
        "generator": build_endpoint(config.agents.generator),
        "verifier": build_endpoint(config.agents.verifier),
        "reviser": build_endpoint(config.agents.reviser),
        "base": build_endpoint(config.agents.base),
        "judge": build_endpoint(config.judge),
    }


def run_curation(
    sources_path: str,
    config: RunConfig,
    output_dir: str,
    endpoints: Optional[dict] = None,
) -> CurationResult:
    """
    Run every stage and write the QA manifest, the review sample, the rejected
    pairs and the per-stage attrition statistics into `output_dir`.

    Raises:
        ValueError: on a malformed source manifest.
        CurationStageError: when a stage fails; partial output stays on disk.
    """

    endpoints = endpoints or build_agent_endpoints(config)
    curation = config.curation
    os.makedirs(output_dir, exist_ok=True)

    stage_rows = []
    rejected = []

    # Stage 1: selection and poster segmentation
    sources = load_sources(sources_path)
    samples, selection_stats, posters_rejected = select_samples(sources, config, output_dir)
    stage_rows.append({"stage": "select", "input": len(sources), "output": len(samples)})

    # Stage 2: generation, verification, revision
    verified = generate_stage(samples, endpoints, config, output_dir, rejected)
    stage_rows.append({"stage": "generate", "input": len(samples), "output": len(verified)})

    # Stage 3a: difficulty calibration
    try:
        difficulty = calibrate_difficulty(
            verified,
            endpoints["base"],
            RunLimits.from_config(config.limits),
            rollouts=curation.calibration_rollouts,
            band=curation.difficulty_band,
            seed=curation.seed,
            judge=endpoints.get("judge"),
            concurrency=config.rollout.concurrency,
            enabled_tools=config.rollout.enabled_tools,
            min_crop_side=config.pixels.min_crop_side,
        )
    except EndpointError as e:
        _write_partial(output_dir, "calibrate", verified)
        raise CurationStageError("calibrate", str(e), partial=verified) from e

    difficulty_by_id = {}
    calibrated = []
    for qa, record in zip(verified, difficulty):
        difficulty_by_id[qa.qa_id] = record
        if record.kept:
            calibrated.append(qa)
        else:
            reason = "calibration_failed" if record.failed else "difficulty_out_of_band"
            rejected.append(qa_record(qa, output_dir, record, reason))
    stage_rows.append({"stage": "calibrate", "input": len(verified), "output": len(calibrated)})

    # Stage 3b: rule filter and review sample
    filtered = rule_filter(
        calibrated,
        min_question_words=curation.min_question_words,
        review_fraction=curation.review_fraction,
        seed=curation.seed,
    )
    for qa, reason in filtered.dropped:
        rejected.append(qa_record(qa, output_dir, difficulty_by_id.get(qa.qa_id), reason))
    stage_rows.append(
        {"stage": "filter", "input": len(calibrated), "output": len(filtered.survivors)}
    )

    records = [
        qa_record(qa, output_dir, difficulty_by_id.get(qa.qa_id)) for qa in filtered.survivors
    ]
    review_records = [
        qa_record(qa, output_dir, difficulty_by_id.get(qa.qa_id)) for qa in filtered.review
    ]

    manifest_path = os.path.join(output_dir, QA_MANIFEST_FILE)
    review_path = os.path.join(output_dir, REVIEW_MANIFEST_FILE)
    write_manifest(manifest_path, records)
    write_manifest(review_path, review_records)
    write_manifest(os.path.join(output_dir, REJECTED_FILE), rejected)

    stats = {
        "stages": attrition_table(stage_rows),
        "selection": selection_stats.to_dict(),
        "posters_rejected": posters_rejected,
        "review_sample": len(review_records),
    }
    with open(os.path.join(output_dir, STATS_FILE), "w", encoding="utf-8") as _file:
        json.dump(stats, _file, indent=2, sort_keys=True)
        _file.write("\n")

    for row in stats["stages"]:
        logging.info(
            "Stage %s: %d -> %d (%.1f%% attrition)",
            row["stage"],
            row["input"],
            row["output"],
            row["attrition_pct"],
        )

    return CurationResult(
        manifest_path=manifest_path, review_path=review_path, records=records, stats=stats
    )


def select_samples(sources: list, config: RunConfig, output_dir: str) -> tuple:
    """Selected natural groups plus segmented posters, each as one Sample."""

    curation = config.curation
    pixels = config.pixels
    selection = select_images(
        sources, curation.min_pixels, pixels.train_total_budget, pixels.per_image_max_pixels
    )

    samples = []
    posters_rejected = 0
    for selected in selection.selected:
        source = selected.source

        if source.kind != "poster":
            samples.append(
                Sample(
                    source_id=source.source_id,
                    kind=source.kind,
                    relationship=source.relationship,
                    image_set=selected.image_set,
                    image_paths=selected.image_paths,
                )
            )
            continue

        segmentation = segment_poster(
            selected.image_set.images[0].original,
            min_region_pixels=curation.min_region_pixels,
            min_gutter_fraction=curation.min_gutter_fraction,
            max_regions=curation.max_regions,
        )
        if segmentation.rejected:
            logging.warning("Poster %s rejected: %s", source.source_id, segmentation.rejection)
            posters_rejected += 1
            continue

        region_paths = save_regions(segmentation.regions, output_dir, source.source_id)
        samples.append(
            Sample(
                source_id=source.source_id,
                kind=source.kind,
                relationship=None,
                image_set=prepare_image_set(
                    segmentation.regions,
                    pixels.train_total_budget,
                    pixels.per_image_max_pixels,
                    region_paths,
                ),
                image_paths=tuple(region_paths),
            )
        )

    return samples, selection.stats, posters_rejected


def save_regions(regions: list, output_dir: str, source_id: str) -> list:
    regions_dir = os.path.join(output_dir, REGIONS_DIR)
    os.makedirs(regions_dir, exist_ok=True)

    paths = []
    for index, region in enumerate(regions):
        path = os.path.join(regions_dir, f"{source_id}_{index:02d}.png")
        region.save(path, format="PNG")
        paths.append(path)
    return paths


def generate_stage(samples: list, endpoints: dict, config: RunConfig, output_dir: str, rejected: list) -> list:
    """Verified candidates of every sample; rejected ones are appended to `rejected`."""

    curation = config.curation
    verified = []
    finished = []

    for sample in samples:
        try:
            draft = generate_qa(
                sample.image_set,
                endpoints["generator"],
                source_id=sample.source_id,
                image_paths=sample.image_paths,
                kind=sample.kind,
                relationship=sample.relationship,
                max_attempts=curation.max_generation_attempts,
                seed=curation.seed,
            )
            if draft.status == QAStatus.REJECTED:
                rejected.append(qa_record(draft, output_dir, reason="generation_failed"))
                continue

            verdict = verify_answer(draft, endpoints["verifier"], seed=curation.seed)
            if verdict.passed:
                candidate = dataclasses.replace(draft, status=QAStatus.VERIFIED)
            else:
                candidate = revise_loop(
                    draft,
                    endpoints["reviser"],
                    endpoints["verifier"],
                    curation.max_revisions,
                    verdict=verdict,
                    seed=curation.seed,
                )
        except CurationStageError as e:
            partial = finished + list(e.partial)
            _write_partial(output_dir, "generate", partial)
            raise CurationStageError("generate", str(e), partial=partial) from e
        except EndpointError as e:
            _write_partial(output_dir, "generate", finished)
            raise CurationStageError("generate", str(e), partial=finished) from e

        finished.append(candidate)
        if candidate.status == QAStatus.VERIFIED:
            verified.append(candidate)
        else:
            rejected.append(qa_record(candidate, output_dir, reason="verification_failed"))

    return verified


def attrition_table(stage_rows: list) -> list:
    """Per-stage input, output and attrition percentage (0 when a stage saw no input)."""

    df = pd.DataFrame(stage_rows, columns=["stage", "input", "output"])
    survival = df["output"] / df["input"].where(df["input"] > 0)
    df["attrition_pct"] = ((1 - survival) * 100).fillna(0.0).round(1)
    return json.loads(df.to_json(orient="records"))


def _write_partial(output_dir: str, stage: str, candidates: list) -> None:
    path = os.path.join(output_dir, f"partial_{stage}.jsonl")
    write_manifest(path, [qa_record(qa, output_dir) for qa in candidates])
    logging.error("Stage %s failed; %d partial records kept in %s", stage, len(candidates), path)
