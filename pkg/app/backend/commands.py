"""
Command-line surface, registered on the Flask application's click group.

    flask --app app.app rollout      --manifest PATH [--config PATH] --output DIR [--save-crops]
    flask --app app.app evaluate     --dataset PATH [--config PATH] --output DIR [--max-pixels N] [--no-tools]
    flask --app app.app curate       --sources PATH [--config PATH] --output DIR
    flask --app app.app score        --export PATH [--config PATH] --output PATH
    flask --app app.app export-check --export PATH
    flask --app app.app init-config  --output PATH

Without --config every command runs on the built-in defaults.
"""

# Python
import json
import os

# Third-party
import click
import pandas as pd

# Flask configuration
from app.backend.flask_configuration import flask_app

# Project
from app.backend.curation.pipeline import run_curation
from app.backend.curation.qa_candidate import CurationStageError
from app.backend.evaluation.benchmark_loader import load_eval_dataset
from app.backend.evaluation.evaluator import evaluate
from app.backend.llm_engine import build_endpoint
from app.backend.report_plots import plot_bar, write_html
from app.backend.reward_masks import JudgeUnavailableError, RewardCoefficients
from app.backend.rollout_runner import run_rollout
from app.backend.run_config import RunConfig, load_run_config, save_run_config
from app.backend.trajectory_export import (
    ExportSchemaError,
    read_export,
    rescore_records,
    write_records,
)

REPORT_FILE = "report.json"
REPORT_HTML_FILE = "report.html"
RESULTS_FILE = "results.csv"


def _load_config(path) -> RunConfig:
    try:
        return load_run_config(path)
    except (OSError, ValueError) as e:
        raise click.ClickException(f"Invalid config:\n{e}") from e


@flask_app.cli.command("rollout")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--save-crops", is_flag=True, default=False, help="Write tool crops as PNG files.")
def rollout_command(manifest_path, config_path, output_dir, save_crops):
    """Roll out groups of trajectories per prompt and export them for training."""

    config = _load_config(config_path)

    try:
        summary = run_rollout(
            manifest_path,
            config,
            output_dir,
            save_crops=save_crops or config.rollout.save_crops,
        )
    except ValueError as e:
        raise click.ClickException(f"Invalid prompt manifest:\n{e}") from e

    click.echo(
        f"Exported {summary['records']} records for "
        f"{summary['prompts'] - summary['prompts_failed']}/{summary['prompts']} prompts "
        f"to {os.path.join(output_dir, summary['export_path'])}"
    )
    if summary["trajectories"]:
        click.echo(
            f"reward mean {summary['reward_mean']:.4f}, "
            f"valid fraction {summary['valid_fraction']:.4f}, "
            f"mean tool calls {summary['mean_tool_calls']:.2f}"
        )


@flask_app.cli.command("evaluate")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
@click.option("--max-pixels", type=click.IntRange(min=1), default=None, help="Override the evaluation pixel budget.")
@click.option("--no-tools", is_flag=True, default=False, help="Evaluate without visual tools.")
def evaluate_command(dataset_path, config_path, output_dir, max_pixels, no_tools):
    """Score the agent on a benchmark manifest, per subset and overall."""

    config = _load_config(config_path)

    try:
        items = load_eval_dataset(dataset_path)
        report, results = evaluate(
            items,
            build_endpoint(config.endpoint),
            config,
            judge=build_endpoint(config.judge),
            pixel_budget=max_pixels,
            no_tools=no_tools,
        )
    except ValueError as e:
        raise click.ClickException(str(e)) from e

    os.makedirs(output_dir, exist_ok=True)
    with open(os.path.join(output_dir, REPORT_FILE), "w", encoding="utf-8") as _file:
        json.dump(report, _file, indent=2, sort_keys=True)
        _file.write("\n")
    results.to_csv(os.path.join(output_dir, RESULTS_FILE), index=False)

    accuracy = pd.DataFrame(report["subsets"] + [{"subset": "overall", **report["overall"]}])
    write_html(
        [plot_bar(accuracy, "subset", "accuracy", title="Accuracy per subset (%)")],
        os.path.join(output_dir, REPORT_HTML_FILE),
        "Evaluation report",
    )

    for entry in report["subsets"]:
        click.echo(f"{entry['subset']}: {entry['accuracy']:.1f}% ({entry['correct']}/{entry['runs']})")
    overall = report["overall"]
    click.echo(f"overall: {overall['accuracy']:.1f}% ({overall['correct']}/{overall['runs']})")
    click.echo(f"mean tool calls: {report['tools']['mean_tool_calls']:.2f}")


@flask_app.cli.command("curate")
@click.option("--sources", "sources_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_dir", required=True, type=click.Path(file_okay=False))
def curate_command(sources_path, config_path, output_dir):
    """Build a verified, difficulty-calibrated QA manifest from source images."""

    config = _load_config(config_path)

    try:
        result = run_curation(sources_path, config, output_dir)
    except CurationStageError as e:
        raise click.ClickException(
            f"Curation stopped in stage {e.stage}; partial output kept in {output_dir}\n{e}"
        ) from e
    except ValueError as e:
        raise click.ClickException(f"Curation could not start:\n{e}") from e

    for row in result.stats["stages"]:
        click.echo(
            f"{row['stage']}: {row['input']} -> {row['output']} "
            f"({row['attrition_pct']:.1f}% attrition)"
        )
    click.echo(f"Wrote {len(result.records)} QA pairs to {result.manifest_path}")


@flask_app.cli.command("score")
@click.option("--export", "export_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
def score_command(export_path, config_path, output_path):
    """Re-score an existing trajectory export under the configured reward and masks."""

    config = _load_config(config_path)

    try:
        records = rescore_records(
            read_export(export_path),
            RewardCoefficients.from_config(config.reward),
            judge=build_endpoint(config.judge),
            use_trajectory_mask=config.rollout.trajectory_mask,
        )
    except (ExportSchemaError, JudgeUnavailableError) as e:
        raise click.ClickException(str(e)) from e

    write_records(output_path, records)

    if records:
        mean = sum(record["reward"]["total"] for record in records) / len(records)
        click.echo(f"Re-scored {len(records)} records, reward mean {mean:.4f}, written to {output_path}")
    else:
        click.echo(f"Export is empty; wrote {output_path}")


@flask_app.cli.command("export-check")
@click.option("--export", "export_path", required=True, type=click.Path(exists=True, dir_okay=False))
def export_check_command(export_path):
    """Validate every record of a trajectory export."""

    try:
        records = read_export(export_path)
    except ExportSchemaError as e:
        raise click.ClickException(str(e)) from e

    groups = {(record["prompt_id"], record["group_id"]) for record in records}
    click.echo(f"OK: {len(records)} records in {len(groups)} groups")


@flask_app.cli.command("init-config")
@click.option("--output", "output_path", required=True, type=click.Path(dir_okay=False))
def init_config_command(output_path):
    """Write the default configuration file."""

    save_run_config(RunConfig(), output_path)
    click.echo(f"Wrote default config to {output_path}")
