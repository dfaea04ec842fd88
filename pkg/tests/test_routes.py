"""
Unit tests for the review routes.

Routes:
   - /health liveness
   - /review listing of the sampled pairs with their decisions
   - /review/<qa_id> decisions: validation, unknown ids, persistence
"""

# Python
import json
import os
import tempfile
import unittest

# Project
import app.backend.routes  # noqa: F401 (registers the routes)
from app.backend.flask_configuration import flask_app


class TestReviewRoutes(unittest.TestCase):
    """
    Test suite for the human-review hook.

    Validates:
    - Listing of the review manifest
    - 400 on unknown decisions, 404 on unknown pairs
    - Decisions appended and shown on the next listing
    """

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.manifest_path = os.path.join(self.tmp.name, "review_manifest.jsonl")
        self.decisions_path = os.path.join(self.tmp.name, "decisions", "review_decisions.jsonl")

        with open(self.manifest_path, "w", encoding="utf-8") as _file:
            _file.write(
                json.dumps(
                    {
                        "qa_id": "abc123def456",
                        "images": ["regions/p1_00.png"],
                        "question": "Which year is given in the header of the left panel?",
                        "answer": "2024",
                        "reasoning_steps": [{"step": "Read the header.", "confidence_region": None}],
                    }
                )
                + "\n"
            )

        self.saved_config = {
            key: flask_app.config[key] for key in ("REVIEW_MANIFEST_PATH", "REVIEW_DECISIONS_PATH")
        }
        flask_app.config["REVIEW_MANIFEST_PATH"] = self.manifest_path
        flask_app.config["REVIEW_DECISIONS_PATH"] = self.decisions_path
        self.client = flask_app.test_client()

    def tearDown(self):
        flask_app.config.update(self.saved_config)
        self.tmp.cleanup()

    # Positive Test Cases
    def test_health(self):
        """Test the liveness route."""

        response = self.client.get("/health")

        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.get_json(), {"status": "ok"})

    def test_review_list(self):
        """Test the listing before any decision."""

        response = self.client.get("/review")

        data = response.get_json()
        self.assertEqual(response.status_code, 200)
        self.assertEqual(data["count"], 1)
        self.assertEqual(data["items"][0]["qa_id"], "abc123def456")
        self.assertIsNone(data["items"][0]["decision"])

    def test_decision_is_recorded(self):
        """Test that the latest decision shows up in the listing."""

        first = self.client.post("/review/abc123def456", json={"decision": "reject", "note": "blurry"})
        second = self.client.post("/review/abc123def456", json={"decision": "approve"})

        self.assertEqual(first.status_code, 201)
        self.assertEqual(first.get_json()["note"], "blurry")
        self.assertEqual(second.status_code, 201)
        self.assertEqual(self.client.get("/review").get_json()["items"][0]["decision"], "approve")

        with open(self.decisions_path, "r", encoding="utf-8") as _file:
            self.assertEqual(len(_file.readlines()), 2)

    # Negative Test Cases
    def test_invalid_decision(self):
        """Test a decision outside approve/reject."""

        response = self.client.post("/review/abc123def456", json={"decision": "maybe"})

        self.assertEqual(response.status_code, 400)
        self.assertFalse(os.path.exists(self.decisions_path))

    def test_unknown_qa_id(self):
        """Test a decision for a pair not in the sample."""

        response = self.client.post("/review/unknown", json={"decision": "approve"})

        self.assertEqual(response.status_code, 404)
        self.assertIn("Unknown qa_id", response.get_json()["error"])

    def test_missing_manifest(self):
        """Test the listing without a review manifest."""

        os.remove(self.manifest_path)

        response = self.client.get("/review")

        self.assertEqual(response.status_code, 404)

    def test_malformed_manifest(self):
        """Test listing and deciding over a manifest with a broken line."""

        with open(self.manifest_path, "a", encoding="utf-8") as _file:
            _file.write("{not json\n")

        listing = self.client.get("/review")
        decision = self.client.post("/review/abc123def456", json={"decision": "approve"})

        for response in (listing, decision):
            self.assertEqual(response.status_code, 500)
            self.assertIn("line 2: not JSON", response.get_json()["error"])
        self.assertFalse(os.path.exists(self.decisions_path))


if __name__ == "__main__":
    unittest.main()
