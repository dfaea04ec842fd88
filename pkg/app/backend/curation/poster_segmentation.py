"""
Adaptive structural segmentation of conference posters.

A poster is split into panels along its whitespace gutters:
1. find the background level (median of the border pixels),
2. mark gutter rows/columns (flat and close to the background) per region,
3. split the region with the widest gutter across all regions,
4. repeat until no usable gutter remains or the region cap is reached.

The panels, in reading order, become the images of one multi-image sample.
"""

# Python
from dataclasses import dataclass, field
from typing import Optional

# Third-party
import numpy as np
from PIL import Image
from scipy import ndimage

# Curation
from app.backend.curation.consts import (
    GUTTER_MAX_BACKGROUND_DISTANCE,
    GUTTER_MAX_VARIANCE,
    MIN_POSTER_SIDE,
    MIN_REGIONS,
)

ROW_AXIS = "row"
COLUMN_AXIS = "column"


@dataclass(frozen=True)
class Cut:
    """A split along a gutter; `position` is the gutter center in poster pixels."""

    axis: str
    position: int
    width: int


@dataclass
class SegmentationResult:
    regions: list = field(default_factory=list)  # Pillow images in reading order
    boxes: list = field(default_factory=list)  # (x1, y1, x2, y2) per region
    cuts: list = field(default_factory=list)
    rejection: Optional[str] = None

    @property
    def rejected(self) -> bool:
        return self.rejection is not None


def segment_poster(
    poster: Image.Image,
    min_region_pixels: int = 250_000,
    min_gutter_fraction: float = 0.02,
    max_regions: int = 12,
) -> SegmentationResult:
    """
    Split a poster into 2 to `max_regions` panels in reading order.

    Blank, single-block and too-small posters come back with a rejection
    reason instead of regions.
    """

    width, height = poster.size
    if min(width, height) < MIN_POSTER_SIDE:
        return SegmentationResult(
            rejection=f"poster {width}x{height} is below {MIN_POSTER_SIDE} px on its short side"
        )

    gray = np.asarray(poster.convert("L"), dtype=np.float64)
    background = border_background(gray)
    # Row gutters scale with the height, column gutters with the width
    min_gutter = {
        ROW_AXIS: max(1, int(round(min_gutter_fraction * height))),
        COLUMN_AXIS: max(1, int(round(min_gutter_fraction * width))),
    }

    whole = trim_to_content(gray, (0, 0, width, height), background)
    if whole is None:
        return SegmentationResult(rejection="blank poster")

    regions = [whole]
    cuts = []
    exhausted = set()

    while len(regions) < max_regions:
        split = _widest_split(gray, regions, exhausted, background, min_gutter, min_region_pixels)
        if split is None:
            break

        index, first, second, cut = split
        regions[index : index + 1] = [first, second]
        cuts.append(cut)

    if len(regions) < MIN_REGIONS:
        return SegmentationResult(rejection="single-block poster", cuts=cuts)

    boxes = reading_order(regions)
    return SegmentationResult(
        regions=[poster.crop(box) for box in boxes],
        boxes=boxes,
        cuts=cuts,
    )


def border_background(gray: np.ndarray) -> float:
    """Median intensity of the outermost rows and columns."""

    border = np.concatenate([gray[0, :], gray[-1, :], gray[:, 0], gray[:, -1]])
    return float(np.median(border))


def gutter_profile(block: np.ndarray, axis: int, background: float) -> np.ndarray:
    """
    Boolean gutter flag per row (axis=1) or per column (axis=0) of `block`:
    intensity variance <= 4.0 and mean within 12 grey levels of the background.
    """

    variance = block.var(axis=axis)
    mean = block.mean(axis=axis)
    return (variance <= GUTTER_MAX_VARIANCE) & (
        np.abs(mean - background) <= GUTTER_MAX_BACKGROUND_DISTANCE
    )


def trim_to_content(gray: np.ndarray, box: tuple, background: float) -> Optional[tuple]:
    """Shrink a box to its non-gutter rows and columns; None when nothing is left."""

    x1, y1, x2, y2 = box
    block = gray[y1:y2, x1:x2]
    if block.size == 0:
        return None

    content_rows = np.flatnonzero(~gutter_profile(block, 1, background))
    content_columns = np.flatnonzero(~gutter_profile(block, 0, background))
    if content_rows.size == 0 or content_columns.size == 0:
        return None

    return (
        x1 + int(content_columns[0]),
        y1 + int(content_rows[0]),
        x1 + int(content_columns[-1]) + 1,
        y1 + int(content_rows[-1]) + 1,
    )


def gutter_runs(flags: np.ndarray) -> list:
    """(start, stop) of every run of gutter flags that lies between content."""

    labels, count = ndimage.label(flags)
    runs = []
    for run in ndimage.find_objects(labels)[:count]:
        start, stop = run[0].start, run[0].stop
        if start > 0 and stop < len(flags):
            runs.append((start, stop))
    return runs


def reading_order(boxes: list) -> list:
    """Sort boxes top-to-bottom by row band, then left-to-right inside a band."""

    remaining = sorted(boxes, key=lambda box: (box[1], box[0]))
    ordered = []

    while remaining:
        top = remaining[0]
        band = [box for box in remaining if box[1] < top[3] and top[1] < box[3]]
        band = [box for box in band if box[1] < top[1] + (top[3] - top[1]) / 2 + 1]
        band.sort(key=lambda box: box[0])
        ordered.extend(band)
        remaining = [box for box in remaining if box not in band]

    return ordered


def _widest_split(gray, regions, exhausted, background, min_gutter, min_region_pixels):
    """Best usable gutter over all regions as (region index, first, second, cut)."""

    candidates = []
    for index, box in enumerate(regions):
        x1, y1, x2, y2 = box
        block = gray[y1:y2, x1:x2]

        for axis_name, axis, offset in ((ROW_AXIS, 1, y1), (COLUMN_AXIS, 0, x1)):
            for start, stop in gutter_runs(gutter_profile(block, axis, background)):
                key = (box, axis_name, start, stop)
                if stop - start < min_gutter[axis_name] or key in exhausted:
                    continue
                candidates.append((stop - start, index, axis_name, offset, start, stop, key))

    # Widest first; ties go to the earlier region, rows before columns
    candidates.sort(key=lambda item: (-item[0], item[1], item[2] != ROW_AXIS, item[4]))

    for gutter_width, index, axis_name, offset, start, stop, key in candidates:
        x1, y1, x2, y2 = regions[index]
        if axis_name == ROW_AXIS:
            first_box = (x1, y1, x2, offset + start)
            second_box = (x1, offset + stop, x2, y2)
        else:
            first_box = (x1, y1, offset + start, y2)
            second_box = (offset + stop, y1, x2, y2)

        first = trim_to_content(gray, first_box, background)
        second = trim_to_content(gray, second_box, background)

        if first is None or second is None or min(_area(first), _area(second)) < min_region_pixels:
            exhausted.add(key)
            continue

        cut = Cut(axis=axis_name, position=offset + (start + stop - 1) // 2, width=gutter_width)
        return index, first, second, cut

    return None


def _area(box: tuple) -> int:
    return (box[2] - box[0]) * (box[3] - box[1])
