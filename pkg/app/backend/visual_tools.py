"""
Visual confirmation (zoom_in) and visual reflection (lookback_reuse) tools.

Both tools work on an ImageSet: the indexed input images of one prompt,
downscaled once by a single shared factor so that the set fits the pixel
budget. Crops are taken from the served images, so bounding boxes are in
served-image pixel coordinates with the origin at the top-left corner.
"""

# Python
import enum
import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

# Third-party
from PIL import Image

# Project
from app.backend.tool_parser import LookbackReuse, ToolCall, ZoomIn

MIN_CROP_SIDE = 28
MAX_UPSCALE_PER_SIDE = 2


class PixelBudgetError(ValueError):
    """An image exceeds the pixel budget of the active mode."""


class ToolStatus(str, enum.Enum):
    OK = "ok"
    ERROR = "error"


@dataclass(frozen=True)
class ServedImage:
    original: Image.Image
    served: Image.Image
    scale: float
    path: Optional[str] = None

    @property
    def served_width(self) -> int:
        return self.served.width

    @property
    def served_height(self) -> int:
        return self.served.height

    @property
    def served_pixels(self) -> int:
        return self.served.width * self.served.height


@dataclass(frozen=True)
class ImageSet:
    images: tuple
    total_pixel_budget: int
    per_image_max_pixels: int

    def __len__(self) -> int:
        return len(self.images)

    @property
    def served_pixels(self) -> int:
        return sum(image.served_pixels for image in self.images)

    def manifest(self) -> list:
        """Paths and dimensions of every image, in index order."""

        return [
            {
                "index": index,
                "path": image.path,
                "original_width": image.original.width,
                "original_height": image.original.height,
                "served_width": image.served_width,
                "served_height": image.served_height,
                "scale": image.scale,
            }
            for index, image in enumerate(self.images)
        ]


@dataclass(frozen=True)
class ToolResult:
    status: ToolStatus
    message: str
    source_call: ToolCall
    image: Optional[Image.Image] = None
    region: Optional[tuple] = None
    image_pixels: int = field(default=0)

    @property
    def ok(self) -> bool:
        return self.status == ToolStatus.OK


def load_image(path: str) -> Image.Image:
    """Read a raster file (PNG, JPEG, ...) as an RGB image."""

    with Image.open(path) as image:
        image.load()
        return image.convert("RGB")


def prepare_image_set(
    raw_images: Sequence,
    total_pixel_budget: int,
    per_image_max_pixels: Optional[int] = None,
    paths: Optional[Sequence] = None,
) -> ImageSet:
    """
    Downscale every image by one shared factor so the set fits the budget.

    Args:
        raw_images: Pillow images in index order.
        total_pixel_budget: Cap on the sum of served pixels.
        per_image_max_pixels: Cap on any single served image; defaults to the total budget.
        paths: Optional source paths, kept for manifests.

    Raises:
        ValueError: on an empty image list, a non-positive budget or a zero-area image.
    """

    if not raw_images:
        raise ValueError("Image set needs at least one image.")
    if total_pixel_budget <= 0:
        raise ValueError(f"Pixel budget must be positive: {total_pixel_budget}")

    per_image_max_pixels = per_image_max_pixels or total_pixel_budget
    paths = list(paths) if paths is not None else [None] * len(raw_images)

    sizes = []
    for index, image in enumerate(raw_images):
        width, height = image.size
        if width <= 0 or height <= 0:
            raise ValueError(f"Image {index} has zero area: {width}x{height}")
        sizes.append((width, height))

    total = sum(width * height for width, height in sizes)
    largest = max(width * height for width, height in sizes)
    scale = min(
        1.0,
        math.sqrt(total_pixel_budget / total),
        math.sqrt(per_image_max_pixels / largest),
    )

    served_sizes = _served_sizes(sizes, scale, round)
    if not _fits(served_sizes, total_pixel_budget, per_image_max_pixels):
        served_sizes = _served_sizes(sizes, scale, math.floor)

    images = []
    for image, (width, height), path in zip(raw_images, served_sizes, paths):
        original = image.convert("RGB")
        if (width, height) == original.size:
            served = original
        else:
            served = original.resize((width, height), Image.Resampling.LANCZOS)
        images.append(ServedImage(original=original, served=served, scale=scale, path=path))

    return ImageSet(
        images=tuple(images),
        total_pixel_budget=total_pixel_budget,
        per_image_max_pixels=per_image_max_pixels,
    )


def load_image_set(
    paths: Sequence, total_pixel_budget: int, per_image_max_pixels: Optional[int] = None
) -> ImageSet:
    """Read image files and prepare them as one set."""

    raw_images = [load_image(path) for path in paths]
    return prepare_image_set(raw_images, total_pixel_budget, per_image_max_pixels, paths)


def execute_tool(image_set: ImageSet, call: ToolCall, min_side: int = MIN_CROP_SIDE) -> ToolResult:
    """Dispatch a parsed call to its tool."""

    if isinstance(call, ZoomIn):
        return execute_zoom_in(image_set, call, min_side=min_side)

    if isinstance(call, LookbackReuse):
        return execute_lookback(image_set, call)

    raise ValueError(f"Not a tool call: {call!r}")


def execute_zoom_in(image_set: ImageSet, call: ZoomIn, min_side: int = MIN_CROP_SIDE) -> ToolResult:
    """Crop the requested region of a served image and upscale it within the budget."""

    error = _index_error(image_set, call.image_index)
    if error:
        return _error(call, error)

    served = image_set.images[call.image_index].served
    width, height = served.size

    if width < min_side or height < min_side:
        return _error(
            call,
            f"image {call.image_index} ({width}x{height}) is smaller than the "
            f"minimum crop side of {min_side} px",
        )

    # A box clamped to zero area collapses onto the border and expands from there
    region = expand_bbox(clamp_bbox(call.bbox, width, height), width, height, min_side)

    crop = served.crop(region)
    factor = upscale_factor(crop.size, served.size, image_set.per_image_max_pixels)
    if factor > 1:
        crop = crop.resize(
            (crop.width * factor, crop.height * factor), Image.Resampling.LANCZOS
        )

    return ToolResult(
        status=ToolStatus.OK,
        message="",
        source_call=call,
        image=crop,
        region=region,
        image_pixels=crop.width * crop.height,
    )


def execute_lookback(image_set: ImageSet, call: LookbackReuse) -> ToolResult:
    """Re-emit a served image unchanged."""

    error = _index_error(image_set, call.image_index)
    if error:
        return _error(call, error)

    served = image_set.images[call.image_index].served

    return ToolResult(
        status=ToolStatus.OK,
        message=call.reason,
        source_call=call,
        image=served,
        image_pixels=served.width * served.height,
    )


def disabled_tool_result(call: ToolCall) -> ToolResult:
    """Error result for a call to a tool switched off in the configuration."""
    return _error(call, f"tool {call.name} is disabled")


def clamp_bbox(bbox: Sequence, width: int, height: int) -> tuple:
    """Clamp [x1, y1, x2, y2] into [0, width] x [0, height]."""

    x1, y1, x2, y2 = (int(value) for value in bbox)

    x1 = min(max(x1, 0), width)
    x2 = min(max(x2, 0), width)
    y1 = min(max(y1, 0), height)
    y2 = min(max(y2, 0), height)

    return (x1, y1, x2, y2)


def expand_bbox(bbox: Sequence, width: int, height: int, min_side: int = MIN_CROP_SIDE) -> tuple:
    """
    Grow each side shorter than `min_side` symmetrically around its center,
    shifting the box back inside the image at the borders.
    """

    x1, y1, x2, y2 = bbox
    x1, x2 = _expand_interval(x1, x2, width, min_side)
    y1, y2 = _expand_interval(y1, y2, height, min_side)

    return (x1, y1, x2, y2)


def upscale_factor(crop_size: Sequence, source_size: Sequence, max_pixels: int) -> int:
    """
    Largest integer k >= 1 with the upscaled crop inside `max_pixels`
    and each upscaled side at most twice the source side.
    """

    crop_width, crop_height = crop_size
    source_width, source_height = source_size

    factor = 1
    while True:
        candidate = factor + 1
        if crop_width * candidate > MAX_UPSCALE_PER_SIDE * source_width:
            break
        if crop_height * candidate > MAX_UPSCALE_PER_SIDE * source_height:
            break
        if (crop_width * candidate) * (crop_height * candidate) > max_pixels:
            break
        factor = candidate

    return factor


def check_pixel_budget(images: Sequence, max_pixels: int) -> None:
    """
    Raises:
        PixelBudgetError: if any image exceeds `max_pixels`.
    """

    for image in images:
        pixels = image.width * image.height
        if pixels > max_pixels:
            raise PixelBudgetError(
                f"Image of {image.width}x{image.height} ({pixels} px) exceeds "
                f"the pixel budget of {max_pixels} px"
            )


def encode_png(image: Image.Image) -> bytes:
    """Deterministic PNG encoding of an image."""

    buffer = io.BytesIO()
    image.save(buffer, format="PNG", optimize=False)
    return buffer.getvalue()


def image_digest(image: Image.Image) -> str:
    """SHA-256 of the raw pixel data, independent of the PNG encoder."""

    digest = hashlib.sha256()
    digest.update(f"{image.mode}:{image.width}x{image.height}:".encode("ascii"))
    digest.update(image.tobytes())
    return digest.hexdigest()


def _served_sizes(sizes, scale, rounding) -> list:
    return [
        (max(1, int(rounding(width * scale))), max(1, int(rounding(height * scale))))
        for width, height in sizes
    ]


def _fits(served_sizes, total_budget, per_image_max) -> bool:
    total = sum(width * height for width, height in served_sizes)
    largest = max(width * height for width, height in served_sizes)
    return total <= total_budget and largest <= per_image_max


def _expand_interval(low: int, high: int, limit: int, min_side: int) -> tuple:
    if high - low >= min_side:
        return low, high

    low = (low + high - min_side) // 2
    high = low + min_side

    if low < 0:
        low, high = 0, min_side
    if high > limit:
        low, high = limit - min_side, limit

    return low, high


def _index_error(image_set: ImageSet, image_index: int) -> Optional[str]:
    if 0 <= image_index < len(image_set):
        return None
    return f"image_index {image_index} out of range ({len(image_set)} images provided)"


def _error(call: ToolCall, message: str) -> ToolResult:
    return ToolResult(status=ToolStatus.ERROR, message=message, source_call=call)
