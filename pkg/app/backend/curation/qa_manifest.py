"""
Line-delimited QA manifests: the curated pairs, the review sample and the
rejected pairs. Image paths are stored relative to the manifest file.
"""

# Python
import json
import os
from typing import Optional


def qa_record(qa, output_dir: str, difficulty=None, reason: Optional[str] = None) -> dict:
    record = qa.to_dict()
    record["images"] = [relative_path(path, output_dir) for path in qa.image_paths]
    record["difficulty"] = difficulty.to_dict() if difficulty is not None else None
    if reason is not None:
        record["drop_reason"] = reason
    return record


def relative_path(path: str, output_dir: str) -> str:
    return os.path.relpath(os.path.abspath(path), os.path.abspath(output_dir)).replace(os.sep, "/")


def write_manifest(path: str, records: list) -> None:
    """Write records as key-sorted JSON lines, in the given order."""

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(path, "w", encoding="utf-8") as _file:
        for record in records:
            _file.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_manifest(path: str) -> list:
    """
    Read a JSON-lines manifest.

    Raises:
        ValueError: naming the first line that is not a JSON object.
    """

    records = []
    with open(path, "r", encoding="utf-8") as _file:
        for line_number, line in enumerate(_file, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}, line {line_number}: not JSON\n{e}") from e
            if not isinstance(record, dict):
                raise ValueError(f"{path}, line {line_number}: expected a JSON object")
            records.append(record)

    return records
