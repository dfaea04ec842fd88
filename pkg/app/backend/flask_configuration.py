"""
Flask backend configuration file
"""

# Python
import os

# Flask
from flask import Flask

# Configuration - Flask
flask_app = Flask(__name__)
flask_app.secret_key = os.getenv("FLASK_SECRET_KEY", os.urandom(24))  # Secret key

FLASK_ENV = os.getenv("FLASK_ENV", "production")
FLASK_DEBUG = os.getenv("FLASK_DEBUG", "False").lower() == "true"
FLASK_RUN_HOST = os.getenv("FLASK_RUN_HOST", "0.0.0.0")
FLASK_RUN_PORT = os.getenv("FLASK_RUN_PORT", "5000")

# Configuration - human review of curated QA pairs
flask_app.config["REVIEW_MANIFEST_PATH"] = os.getenv(
    "REVIEW_MANIFEST_PATH", os.path.join("runs", "curation", "review_manifest.jsonl")
)
flask_app.config["REVIEW_DECISIONS_PATH"] = os.getenv(
    "REVIEW_DECISIONS_PATH", os.path.join("runs", "curation", "review_decisions.jsonl")
)
