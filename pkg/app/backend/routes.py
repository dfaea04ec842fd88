"""
Contains the routes for the Flask application: the human-review hook over
the review sample of the curation pipeline.

- GET  /health            liveness
- GET  /review            the review manifest, with any decision already recorded
- POST /review/<qa_id>    record an approve/reject decision with an optional note
"""

# Python
import json
import os
import threading
from datetime import datetime, timezone

# Flask
from flask import jsonify, request

# Flask configuration
from app.backend.flask_configuration import flask_app

# Curation
from app.backend.curation.qa_manifest import read_manifest

REVIEW_DECISIONS = ("approve", "reject")

_decisions_lock = threading.Lock()


def load_decisions(path: str) -> dict:
    """Latest decision per qa_id; later lines override earlier ones."""

    if not os.path.exists(path):
        return {}
    return {record["qa_id"]: record for record in read_manifest(path) if "qa_id" in record}


@flask_app.route("/health", methods=["GET"])
def health():
    return jsonify({"status": "ok"})


@flask_app.route("/review", methods=["GET"])
def review_list():
    """
    Lists the pairs sampled for review.
    """
    manifest_path = flask_app.config["REVIEW_MANIFEST_PATH"]

    if not os.path.exists(manifest_path):
        return jsonify({"error": f"Review manifest not found: {manifest_path}"}), 404

    try:
        records = read_manifest(manifest_path)
        decisions = load_decisions(flask_app.config["REVIEW_DECISIONS_PATH"])
    except ValueError as e:
        return jsonify({"error": f"Review manifest is unreadable:\n{e}"}), 500

    items = [
        {
            "qa_id": record.get("qa_id"),
            "images": record.get("images", []),
            "question": record.get("question"),
            "answer": record.get("answer"),
            "reasoning_steps": record.get("reasoning_steps", []),
            "decision": decisions.get(record.get("qa_id"), {}).get("decision"),
        }
        for record in records
    ]
    return jsonify({"items": items, "count": len(items)})


@flask_app.route("/review/<qa_id>", methods=["POST"])
def review_decision(qa_id: str):
    """
    Records a reviewer decision for one sampled pair.
    """
    payload = request.get_json(silent=True) or {}
    decision = payload.get("decision")
    note = payload.get("note", "")

    if decision not in REVIEW_DECISIONS:
        return (
            jsonify({"error": f"decision must be one of {list(REVIEW_DECISIONS)}"}),
            400,
        )

    manifest_path = flask_app.config["REVIEW_MANIFEST_PATH"]
    if not os.path.exists(manifest_path):
        return jsonify({"error": f"Review manifest not found: {manifest_path}"}), 404

    try:
        known_ids = {record.get("qa_id") for record in read_manifest(manifest_path)}
    except ValueError as e:
        return jsonify({"error": f"Review manifest is unreadable:\n{e}"}), 500

    if qa_id not in known_ids:
        return jsonify({"error": f"Unknown qa_id: {qa_id}"}), 404

    record = {
        "qa_id": qa_id,
        "decision": decision,
        "note": str(note),
        "decided_at": datetime.now(timezone.utc).isoformat(),
    }

    decisions_path = flask_app.config["REVIEW_DECISIONS_PATH"]
    directory = os.path.dirname(decisions_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with _decisions_lock:
        with open(decisions_path, "a", encoding="utf-8") as _file:
            _file.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")

    return jsonify(record), 201
