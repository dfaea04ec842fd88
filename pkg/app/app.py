"""
This script defines the Flask application of the vision-agent harness:
- CLI commands for rollouts, evaluation, data curation, re-scoring and export checks.
- The human-review routes over the curation review sample.
"""

# Python
import logging
import os

# Flask configuration
from app.backend.flask_configuration import flask_app
from app.backend.flask_configuration import FLASK_DEBUG, FLASK_RUN_HOST, FLASK_RUN_PORT

# Import routes and commands to register them
import app.backend.routes
import app.backend.commands

logging.basicConfig(
    level=os.getenv("LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)

if __name__ == "__main__":

    flask_app.run(host=FLASK_RUN_HOST, port=FLASK_RUN_PORT, debug=FLASK_DEBUG)
