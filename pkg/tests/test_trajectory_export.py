"""
Unit tests for the trajectory export.

Trajectory Export:
   - Golden end-to-end rollout (zoom_in -> lookback_reuse -> answer)
   - Record validation rules
   - All-or-nothing export of a group
   - Reading exports back and re-scoring them
"""

# Python
import copy
import io
import json
import os
import tempfile
import unittest
from unittest.mock import MagicMock

# Third-party
from PIL import Image

# Project
from app.backend.agent_runtime import run_trajectory
from app.backend.llm_engine import ScriptedMockEndpoint
from app.backend.reward_masks import RewardCoefficients, build_masked_group
from app.backend.rollout_runner import EXPORT_FILE, run_rollout
from app.backend.run_config import RolloutConfig, RunConfig
from app.backend.trajectory import RunLimits
from app.backend.trajectory_export import (
    ExportSchemaError,
    export_group,
    read_export,
    rescore_records,
    save_tool_crops,
    strip_timestamps,
    trajectory_record,
    validate_record,
)
from app.backend.visual_tools import prepare_image_set

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
GOLDEN_EXPORT = os.path.join(FIXTURES, "golden_rollout.jsonl")
GOLDEN_SCRIPT = os.path.join(FIXTURES, "golden_script.json")
EXPORTED_AT = "2026-01-01T00:00:00+00:00"

ANSWER = "<think>ok</think><answer>B</answer>"
ZOOM = (
    '<think>z</think><tool_call>{"name": "zoom_in", "arguments": '
    '{"image_index": 0, "bbox": [0, 0, 20, 20], "label": "x"}}</tool_call>'
)


def write_golden_inputs(directory: str) -> str:
    """Sign image and one-prompt manifest of the golden run; returns the manifest path."""

    Image.new("RGB", (56, 56), (200, 40, 40)).save(os.path.join(directory, "sign.png"))
    manifest_path = os.path.join(directory, "prompts.jsonl")
    with open(manifest_path, "w", encoding="utf-8") as _file:
        _file.write(
            json.dumps(
                {
                    "prompt_id": "p-sign",
                    "images": ["sign.png"],
                    "question": "What color is the sign?",
                    "gold": "red",
                }
            )
            + "\n"
        )
    return manifest_path


def golden_config() -> RunConfig:
    return RunConfig(
        rollout=RolloutConfig(group_size=1),
        system_prompt="Use the tools, then answer.",
    )


def scripted_group(scripts, gold="B"):
    image_set = prepare_image_set([Image.new("RGB", (40, 40))], 4_000_000)
    trajectories = [
        run_trajectory("q", image_set, ScriptedMockEndpoint(default=turns), RunLimits(), seed=i)
        for i, turns in enumerate(scripts)
    ]
    return build_masked_group(trajectories, gold, prompt_id="p", group_id=0)


class TestGoldenRollout(unittest.TestCase):
    """
    End-to-end rollout against the checked-in golden export.
    """

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.manifest_path = write_golden_inputs(self.tmp.name)
        self.output_dir = os.path.join(self.tmp.name, "out")

    def tearDown(self):
        self.tmp.cleanup()

    def test_byte_identical_export(self):
        """Test the export bytes with a fixed export time."""

        summary = run_rollout(
            self.manifest_path,
            golden_config(),
            self.output_dir,
            endpoint=ScriptedMockEndpoint.from_file(GOLDEN_SCRIPT),
            exported_at=EXPORTED_AT,
        )

        with open(os.path.join(self.output_dir, EXPORT_FILE), "rb") as _file:
            produced = _file.read()
        with open(GOLDEN_EXPORT, "rb") as _file:
            golden = _file.read()

        self.assertEqual(produced, golden)
        self.assertEqual(summary["records"], 1)
        self.assertEqual(summary["valid_fraction"], 1.0)

    def test_golden_reward(self):
        """Test the reward carried by the golden record."""

        record = read_export(GOLDEN_EXPORT)[0]

        self.assertEqual(record["reward"]["total"], 1.6)
        self.assertEqual([event["name"] for event in record["tool_events"]], ["zoom_in", "lookback_reuse"])

    def test_rerun_differs_only_in_timestamps(self):
        """Test two runs with default export times."""

        outputs = []
        for name in ("a", "b"):
            output_dir = os.path.join(self.tmp.name, name)
            run_rollout(
                self.manifest_path,
                golden_config(),
                output_dir,
                endpoint=ScriptedMockEndpoint.from_file(GOLDEN_SCRIPT),
            )
            outputs.append([strip_timestamps(r) for r in read_export(os.path.join(output_dir, EXPORT_FILE))])

        self.assertEqual(outputs[0], outputs[1])


class TestValidateRecord(unittest.TestCase):
    """
    Test suite for the record rules.
    """

    def setUp(self):
        self.record = read_export(GOLDEN_EXPORT)[0]

    def test_valid_record(self):
        """Test that the golden record passes."""

        self.assertIs(validate_record(self.record), self.record)

    def test_unknown_field(self):
        """Test an extra field."""

        self.record["extra"] = 1

        with self.assertRaises(ExportSchemaError) as context:
            validate_record(self.record)

        self.assertIn("Unknown record fields: ['extra']", str(context.exception))

    def test_missing_field(self):
        """Test a missing field."""

        del self.record["advantage"]

        with self.assertRaises(ExportSchemaError) as context:
            validate_record(self.record)

        self.assertIn("Missing record fields: ['advantage']", str(context.exception))

    def test_nested_fields(self):
        """Test unknown and missing fields below the top level."""

        def extra_reward_field(record):
            record["reward"]["bonus"] = 1.0

        def extra_message_field(record):
            record["messages"][0]["weight"] = 1

        def image_segment_without_digest(record):
            del record["messages"][1]["segments"][1]["sha256"]

        def unknown_segment_type(record):
            record["messages"][1]["segments"][0]["type"] = "audio"

        def extra_tool_event_field(record):
            record["tool_events"][0]["latency"] = 0.2

        def unknown_tool_status(record):
            record["tool_events"][0]["status"] = "pending"

        def manifest_without_scale(record):
            del record["image_manifest"][0]["scale"]

        def extra_span_field(record):
            record["trainable_spans"][0]["weight"] = 1

        cases = {
            extra_reward_field: "reward must hold exactly",
            extra_message_field: "messages item 0: unknown fields ['weight']",
            image_segment_without_digest: "of message 1: segment 1: unknown fields [], missing fields ['sha256']",
            unknown_segment_type: "segment 0 has no known type",
            extra_tool_event_field: "unknown fields ['latency']",
            unknown_tool_status: "known status",
            manifest_without_scale: "missing fields ['scale']",
            extra_span_field: "trainable_spans must be",
        }

        for mutate, expected in cases.items():
            with self.subTest(case=mutate.__name__):
                record = copy.deepcopy(self.record)
                mutate(record)

                with self.assertRaises(ExportSchemaError) as context:
                    validate_record(record)

                self.assertIn(expected, str(context.exception))

    def test_trainable_tool_message(self):
        """Test a tool message marked trainable."""

        self.record["messages"][3]["trainable"] = True

        with self.assertRaises(ExportSchemaError) as context:
            validate_record(self.record)

        self.assertIn("Only assistant messages may be trainable", str(context.exception))

    def test_masked_with_advantage(self):
        """Test a masked record with a non-zero advantage."""

        for message in self.record["messages"]:
            message["trainable"] = False
        self.record["trainable_spans"] = []
        self.record["trajectory_masked"] = True
        self.record["advantage"] = 0.5

        with self.assertRaises(ExportSchemaError) as context:
            validate_record(self.record)

        self.assertIn("advantage 0", str(context.exception))

    def test_schema_version(self):
        """Test an unsupported schema version."""

        self.record["schema_version"] = 2

        with self.assertRaises(ExportSchemaError):
            validate_record(self.record)


class TestExportGroup(unittest.TestCase):
    """
    Test suite for writing groups.
    """

    def test_one_record_per_member(self):
        """Test a mixed group."""

        group = scripted_group([[ZOOM, ANSWER], [ANSWER], [ZOOM] * 6])
        sink = io.StringIO()

        written = export_group(group, sink, exported_at=EXPORTED_AT)

        records = [json.loads(line) for line in sink.getvalue().splitlines()]
        self.assertEqual(written, 3)
        self.assertEqual([r["member_id"] for r in records], [0, 1, 2])
        self.assertEqual([r["trajectory_masked"] for r in records], [False, False, True])
        self.assertEqual(records[2]["validity"], "invalid_max_turns")
        self.assertEqual(records[2]["advantage"], 0.0)

    def test_invalid_group_writes_nothing(self):
        """Test that one bad record keeps the whole group out."""

        group = scripted_group([[ANSWER], [ANSWER]])
        group.trajectories[1].final_answer = None
        sink = io.StringIO()

        with self.assertRaises(ExportSchemaError):
            export_group(group, sink, exported_at=EXPORTED_AT)

        self.assertEqual(sink.getvalue(), "")

    def test_failed_write_leaves_no_crops(self):
        """Test a sink that fails while crops are requested."""

        group = scripted_group([[ZOOM, ANSWER]])
        sink = MagicMock()
        sink.write.side_effect = OSError("disk full")

        with tempfile.TemporaryDirectory() as tmp:
            crops_dir = os.path.join(tmp, "crops")

            with self.assertRaises(OSError):
                export_group(group, sink, crops_dir=crops_dir, exported_at=EXPORTED_AT)

            self.assertFalse(os.path.exists(crops_dir))

    def test_save_tool_crops(self):
        """Test that tool images are written as PNG files."""

        group = scripted_group([[ZOOM, ANSWER]])

        with tempfile.TemporaryDirectory() as tmp:
            paths = save_tool_crops(group.trajectories[0], tmp, "p_0_0")

            self.assertEqual([os.path.basename(path) for path in paths], ["p_0_0_tool_0.png"])
            with Image.open(paths[0]) as crop:
                self.assertEqual(crop.size, (56, 56))

    def test_trajectory_record_fields(self):
        """Test that every record field is present."""

        group = scripted_group([[ANSWER]])

        record = trajectory_record(group, 0, EXPORTED_AT)

        self.assertEqual(record["exported_at"], EXPORTED_AT)
        self.assertEqual(record["image_manifest"][0]["served_width"], 40)
        self.assertNotIn("exported_at", strip_timestamps(record))


class TestReadAndRescore(unittest.TestCase):
    """
    Test suite for reading exports back and re-scoring them.
    """

    def test_bad_line_is_named(self):
        """Test that the first invalid line is reported."""

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "export.jsonl")
            with open(GOLDEN_EXPORT, "r", encoding="utf-8") as source, open(path, "w", encoding="utf-8") as target:
                target.write(source.read())
                target.write("not json\n")

            with self.assertRaises(ExportSchemaError) as context:
                read_export(path)

        self.assertIn("line 2", str(context.exception))

    def test_rescore_with_new_coefficients(self):
        """Test re-scoring the golden record without the tool bonus."""

        records = rescore_records(read_export(GOLDEN_EXPORT), RewardCoefficients(a=1.0, b=0.0, c=0.1))

        self.assertEqual(records[0]["reward"]["total"], 1.1)
        self.assertEqual(records[0]["reward"]["r_format"], 1.0)
        self.assertEqual(records[0]["advantage"], 0.0)

    def test_rescore_keeps_defaults(self):
        """Test that default re-scoring reproduces the exported rewards."""

        original = read_export(GOLDEN_EXPORT)

        rescored = rescore_records(read_export(GOLDEN_EXPORT))

        self.assertEqual(rescored, original)

    def test_rescore_mask_switch(self):
        """Test that switching the mask off unmasks invalid members."""

        group = scripted_group([[ANSWER], [ZOOM] * 6])
        sink = io.StringIO()
        export_group(group, sink, exported_at=EXPORTED_AT)
        records = [json.loads(line) for line in sink.getvalue().splitlines()]

        rescored = rescore_records(records, use_trajectory_mask=False)

        self.assertEqual([r["trajectory_masked"] for r in rescored], [False, False])
        self.assertNotEqual(rescored[1]["advantage"], 0.0)
        self.assertTrue(rescored[1]["messages"][2]["trainable"])


if __name__ == "__main__":
    unittest.main()
