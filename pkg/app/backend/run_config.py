"""
Run configuration for rollouts, evaluation and curation.

The configuration is a tree of dataclasses stored as one JSON document.
Every training hyperparameter is a named key whose default is the value
used for the published training runs:
- 5 tool interactions, 10,480 input / 20,480 response tokens
- 8 rollouts per prompt
- 4,000,000 pixel budget for training, 16384x28x28 for evaluation

In plain English,
the module knows every knob of the system,
fills in the defaults,
refuses anything it does not recognise,
and writes the file back exactly as it read it.
"""

# Python
import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Optional

DEFAULT_TOKEN_ENV = "VISION_AGENT_API_TOKEN"

ENDPOINT_KINDS = ("remote_chat", "local_gguf", "scripted_mock")
TOOL_NAMES = ("zoom_in", "lookback_reuse")


@dataclass
class EndpointConfig:
    kind: str = "scripted_mock"
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "qwen2.5-vl-7b-instruct"
    token_env: str = DEFAULT_TOKEN_ENV
    temperature: float = 1.0
    max_new_tokens: int = 2048
    request_timeout: float = 120.0
    max_retries: int = 3
    backoff_seconds: float = 1.0
    script_path: Optional[str] = None
    model_path: Optional[str] = None
    clip_model_path: Optional[str] = None
    n_ctx: int = 32768


@dataclass
class RunLimitsConfig:
    max_interactions: int = 5
    max_input_tokens: int = 10480
    max_response_tokens: int = 20480


@dataclass
class RolloutConfig:
    group_size: int = 8
    seed: int = 0
    concurrency: int = 4
    batch_size: int = 256
    trajectory_mask: bool = True
    save_crops: bool = False
    enabled_tools: list = field(default_factory=lambda: list(TOOL_NAMES))


@dataclass
class RewardConfig:
    a: float = 1.0
    b: float = 0.5
    c: float = 0.1


@dataclass
class PixelConfig:
    train_total_budget: int = 4_000_000
    eval_total_budget: int = 16384 * 28 * 28
    per_image_max_pixels: Optional[int] = None
    patch_size: int = 28
    min_crop_side: int = 28


@dataclass
class EvaluationConfig:
    temperature: float = 0.0
    repeats: int = 1
    concurrency: int = 4
    use_judge: bool = False
    max_input_tokens: int = 32768


@dataclass
class CurationConfig:
    min_pixels: int = 1_000_000
    min_region_pixels: int = 250_000
    min_gutter_fraction: float = 0.02
    max_regions: int = 12
    max_generation_attempts: int = 3
    max_revisions: int = 3
    calibration_rollouts: int = 5
    difficulty_band: list = field(default_factory=lambda: [1, 4])
    review_fraction: float = 0.1
    min_question_words: int = 8
    seed: int = 0


@dataclass
class AgentsConfig:
    generator: EndpointConfig = field(default_factory=EndpointConfig)
    verifier: EndpointConfig = field(default_factory=EndpointConfig)
    reviser: EndpointConfig = field(default_factory=EndpointConfig)
    base: EndpointConfig = field(default_factory=EndpointConfig)


@dataclass
class RunConfig:
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    judge: Optional[EndpointConfig] = None
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    limits: RunLimitsConfig = field(default_factory=RunLimitsConfig)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    pixels: PixelConfig = field(default_factory=PixelConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    curation: CurationConfig = field(default_factory=CurationConfig)
    output_dir: str = "runs"
    system_prompt: Optional[str] = None


# Nested dataclass type for every field holding a sub-section
_SECTION_TYPES = {
    (RunConfig, "endpoint"): EndpointConfig,
    (RunConfig, "judge"): EndpointConfig,
    (RunConfig, "agents"): AgentsConfig,
    (RunConfig, "limits"): RunLimitsConfig,
    (RunConfig, "rollout"): RolloutConfig,
    (RunConfig, "reward"): RewardConfig,
    (RunConfig, "pixels"): PixelConfig,
    (RunConfig, "evaluation"): EvaluationConfig,
    (RunConfig, "curation"): CurationConfig,
    (AgentsConfig, "generator"): EndpointConfig,
    (AgentsConfig, "verifier"): EndpointConfig,
    (AgentsConfig, "reviser"): EndpointConfig,
    (AgentsConfig, "base"): EndpointConfig,
}

POSITIVE_KEYS = [
    "limits.max_interactions",
    "limits.max_input_tokens",
    "limits.max_response_tokens",
    "rollout.group_size",
    "rollout.concurrency",
    "rollout.batch_size",
    "pixels.train_total_budget",
    "pixels.eval_total_budget",
    "pixels.patch_size",
    "pixels.min_crop_side",
    "evaluation.repeats",
    "evaluation.concurrency",
    "evaluation.max_input_tokens",
    "curation.min_pixels",
    "curation.min_region_pixels",
    "curation.min_gutter_fraction",
    "curation.max_regions",
    "curation.max_generation_attempts",
    "curation.max_revisions",
    "curation.calibration_rollouts",
    "curation.review_fraction",
    "curation.min_question_words",
]


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON document, rejecting unknown keys."""

    config = _section_from_dict(RunConfig, data, "")
    validate_run_config(config)
    return config


def config_to_dict(config: RunConfig) -> dict:
    """Plain-dict view of the configuration, suitable for JSON."""
    return dataclasses.asdict(config)


def load_run_config(path: Optional[str]) -> RunConfig:
    """Load the configuration file, or return the defaults when no path is given."""

    if not path:
        return RunConfig()

    try:
        with open(path, "r", encoding="utf-8") as _file:
            data = json.load(_file)
    except json.JSONDecodeError as e:
        raise ValueError(f"Config file is not valid JSON:\n{path}\n{e}") from e

    if not isinstance(data, dict):
        raise ValueError(f"Config file must contain a JSON object:\n{path}")

    return config_from_dict(data)


def save_run_config(config: RunConfig, path: str) -> None:
    """Write the configuration as indented, key-sorted JSON."""

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(path, "w", encoding="utf-8") as _file:
        json.dump(config_to_dict(config), _file, indent=2, sort_keys=True)
        _file.write("\n")


def validate_run_config(config: RunConfig) -> RunConfig:
    """
    Check the invariants of a configuration.

    Raises:
        ValueError: on non-positive limits and budgets, unknown endpoint kinds,
                    unknown tools or an inverted difficulty band.
    """

    for key in POSITIVE_KEYS:
        section_name, attribute = key.split(".")
        value = getattr(getattr(config, section_name), attribute)
        if not value > 0:
            raise ValueError(f"Config value must be positive: {key} = {value!r}")

    if config.pixels.per_image_max_pixels is not None:
        if config.pixels.per_image_max_pixels <= 0:
            raise ValueError(
                "Config value must be positive: pixels.per_image_max_pixels = "
                f"{config.pixels.per_image_max_pixels!r}"
            )

    endpoints = {
        "endpoint": config.endpoint,
        "judge": config.judge,
        "agents.generator": config.agents.generator,
        "agents.verifier": config.agents.verifier,
        "agents.reviser": config.agents.reviser,
        "agents.base": config.agents.base,
    }
    for name, endpoint in endpoints.items():
        if endpoint is None:
            continue
        if endpoint.kind not in ENDPOINT_KINDS:
            raise ValueError(
                f"Unknown endpoint kind for {name}: {endpoint.kind!r}\n"
                f"Expected one of: {', '.join(ENDPOINT_KINDS)}"
            )
        if endpoint.max_retries < 0:
            raise ValueError(f"{name}.max_retries must not be negative")

    unknown_tools = set(config.rollout.enabled_tools) - set(TOOL_NAMES)
    if unknown_tools:
        raise ValueError(f"Unknown tools in rollout.enabled_tools: {sorted(unknown_tools)}")

    band = config.curation.difficulty_band
    if len(band) != 2 or not 0 <= band[0] <= band[1]:
        raise ValueError(f"curation.difficulty_band must be [low, high] with 0 <= low <= high: {band}")
    if band[1] > config.curation.calibration_rollouts:
        raise ValueError(
            "curation.difficulty_band upper bound exceeds curation.calibration_rollouts"
        )

    if config.curation.review_fraction > 1:
        raise ValueError("curation.review_fraction must be at most 1")

    return config


def _section_from_dict(section_type, data, path: str):
    """Recursively build one dataclass section."""

    if not isinstance(data, dict):
        raise ValueError(f"Config section '{path or '<root>'}' must be an object")

    known = {f.name: f for f in dataclasses.fields(section_type)}
    unknown = [key for key in data if key not in known]
    if unknown:
        location = path or "<root>"
        raise ValueError(f"Unknown config keys in '{location}': {sorted(unknown)}")

    kwargs = {}
    for key, value in data.items():
        key_path = f"{path}.{key}" if path else key
        nested_type = _SECTION_TYPES.get((section_type, key))

        if nested_type is not None and value is not None:
            kwargs[key] = _section_from_dict(nested_type, value, key_path)
        else:
            kwargs[key] = value

    return section_type(**kwargs)
