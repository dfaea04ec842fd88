"""
Stage one of the QA construction: pick the source images worth asking about.

Low-resolution images are dropped; natural-image groups keep their source
grouping; posters go on to segmentation. Unreadable files are skipped with
a warning and counted, never fatal.
"""

# Python
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

# Third-party
from PIL import UnidentifiedImageError

# Project
from app.backend.visual_tools import ImageSet, load_image, prepare_image_set

# Curation
from app.backend.curation.consts import RELATIONSHIPS, SOURCE_KINDS


@dataclass(frozen=True)
class SourceEntry:
    source_id: str
    kind: str
    image_paths: tuple
    relationship: Optional[str] = None


@dataclass(frozen=True)
class SelectedSource:
    source: SourceEntry
    image_set: ImageSet
    image_paths: tuple


@dataclass
class SelectionStats:
    candidates: int = 0
    images_total: int = 0
    images_kept: int = 0
    images_low_resolution: int = 0
    images_unreadable: int = 0
    sources_kept: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SelectionResult:
    selected: list = field(default_factory=list)
    stats: SelectionStats = field(default_factory=SelectionStats)


def load_sources(path: str) -> list:
    """
    Read a source manifest: one JSON object per line,
    {source_id, kind: natural|poster, images: [paths], relationship?}.
    Image paths are resolved relative to the manifest file.

    Raises:
        ValueError: on a malformed line.
    """

    base_dir = os.path.dirname(os.path.abspath(path))
    sources = []

    with open(path, "r", encoding="utf-8") as _file:
        for line_number, line in enumerate(_file, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}, line {line_number}: not JSON\n{e}") from e

            sources.append(_source_from_dict(data, base_dir, f"{path}, line {line_number}"))

    return sources


def select_images(
    candidates: list,
    min_pixels: int,
    total_pixel_budget: int,
    per_image_max_pixels: Optional[int] = None,
) -> SelectionResult:
    """Keep the readable images of at least `min_pixels`, grouped per source."""

    result = SelectionResult()
    result.stats.candidates = len(candidates)

    for source in candidates:
        images, paths = [], []

        for path in source.image_paths:
            result.stats.images_total += 1
            try:
                image = load_image(path)
            except (OSError, UnidentifiedImageError) as e:
                logging.warning("Skipping unreadable image %s of %s: %s", path, source.source_id, e)
                result.stats.images_unreadable += 1
                continue

            if image.width * image.height < min_pixels:
                result.stats.images_low_resolution += 1
                continue

            images.append(image)
            paths.append(path)

        if not images:
            continue

        result.stats.images_kept += len(images)
        result.stats.sources_kept += 1
        result.selected.append(
            SelectedSource(
                source=source,
                image_set=prepare_image_set(
                    images, total_pixel_budget, per_image_max_pixels, paths
                ),
                image_paths=tuple(paths),
            )
        )

    logging.info(
        "Image selection kept %d of %d images (%d low resolution, %d unreadable)",
        result.stats.images_kept,
        result.stats.images_total,
        result.stats.images_low_resolution,
        result.stats.images_unreadable,
    )
    return result


def _source_from_dict(data: dict, base_dir: str, location: str) -> SourceEntry:
    if not isinstance(data, dict):
        raise ValueError(f"{location}: source must be an object")

    source_id = data.get("source_id")
    kind = data.get("kind", "natural")
    images = data.get("images")
    relationship = data.get("relationship")

    if not isinstance(source_id, str) or not source_id:
        raise ValueError(f"{location}: source_id must be non-empty text")
    if kind not in SOURCE_KINDS:
        raise ValueError(f"{location}: kind must be one of {SOURCE_KINDS}, got {kind!r}")
    if not isinstance(images, list) or not images:
        raise ValueError(f"{location}: images must be a non-empty list of paths")
    if kind == "poster" and len(images) != 1:
        raise ValueError(f"{location}: a poster source holds exactly one image")
    if relationship is not None and relationship not in RELATIONSHIPS:
        raise ValueError(
            f"{location}: relationship must be one of {RELATIONSHIPS}, got {relationship!r}"
        )

    return SourceEntry(
        source_id=source_id,
        kind=kind,
        image_paths=tuple(os.path.join(base_dir, image) for image in images),
        relationship=relationship,
    )
