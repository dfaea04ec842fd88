"""
Unit tests for poster segmentation.

Poster Segmentation:
   - Column and grid layouts split along their gutters
   - Reading order of the panels
   - Rejection of small, blank and single-block posters
"""

# Python
import unittest

# Third-party
import numpy as np
from PIL import Image

# Project
from app.backend.curation.poster_segmentation import (
    COLUMN_AXIS,
    ROW_AXIS,
    gutter_runs,
    reading_order,
    segment_poster,
)


def poster(size, blocks, background=(255, 255, 255), ink=(0, 0, 0)):
    """White poster with solid blocks given as (x1, y1, x2, y2), right/bottom exclusive."""

    image = Image.new("RGB", size, background)
    for box in blocks:
        image.paste(ink, box)
    return image


class TestSegmentPoster(unittest.TestCase):
    """
    Test suite for whitespace-gutter segmentation.

    Validates:
    - Cut positions at the gutter centers
    - Region boxes trimmed to their content
    - Rejection reasons
    """

    # Positive Test Cases
    def test_two_columns(self):
        """Test two blocks side by side."""

        image = poster((1200, 1000), [(100, 100, 500, 900), (600, 100, 1100, 900)])

        result = segment_poster(image)

        self.assertFalse(result.rejected)
        self.assertEqual(len(result.regions), 2)
        self.assertEqual(len(result.cuts), 1)
        self.assertEqual(result.cuts[0].axis, COLUMN_AXIS)
        self.assertAlmostEqual(result.cuts[0].position, 549, delta=5)
        self.assertEqual(result.boxes, [(100, 100, 500, 900), (600, 100, 1100, 900)])
        self.assertEqual([region.size for region in result.regions], [(400, 800), (500, 800)])

    def test_two_by_two_grid(self):
        """Test four blocks in a grid."""

        image = poster(
            (1400, 1400),
            [
                (100, 100, 650, 650),
                (750, 100, 1300, 650),
                (100, 750, 650, 1300),
                (750, 750, 1300, 1300),
            ],
        )

        result = segment_poster(image)

        self.assertEqual(len(result.regions), 4)
        self.assertEqual(result.cuts[0].axis, ROW_AXIS)
        for cut in result.cuts:
            self.assertAlmostEqual(cut.position, 699, delta=5)
        self.assertEqual(
            result.boxes,
            [
                (100, 100, 650, 650),
                (750, 100, 1300, 650),
                (100, 750, 650, 1300),
                (750, 750, 1300, 1300),
            ],
        )

    def test_region_cap(self):
        """Test that max_regions stops the splitting."""

        image = poster(
            (1400, 1400),
            [
                (100, 100, 650, 650),
                (750, 100, 1300, 650),
                (100, 750, 650, 1300),
                (750, 750, 1300, 1300),
            ],
        )

        result = segment_poster(image, max_regions=3)

        self.assertEqual(len(result.regions), 3)

    def test_gutter_width_follows_the_cut_side(self):
        """Test a tall poster: 40 px is enough across its width but not across its height."""

        columns = segment_poster(poster((1000, 3000), [(100, 100, 480, 2900), (520, 100, 900, 2900)]))
        rows = segment_poster(poster((1000, 3000), [(100, 100, 900, 1480), (100, 1520, 900, 2900)]))

        self.assertEqual(len(columns.regions), 2)
        self.assertEqual(columns.cuts[0].axis, COLUMN_AXIS)
        self.assertEqual(rows.rejection, "single-block poster")

    # Negative Test Cases
    def test_small_poster(self):
        """Test a poster below the minimum side."""

        result = segment_poster(poster((800, 1200), [(100, 100, 300, 300)]))

        self.assertTrue(result.rejected)
        self.assertIn("below 1000 px", result.rejection)

    def test_blank_poster(self):
        """Test a poster without content."""

        result = segment_poster(poster((1200, 1000), []))

        self.assertEqual(result.rejection, "blank poster")
        self.assertEqual(result.regions, [])

    def test_single_block(self):
        """Test a poster with one block."""

        result = segment_poster(poster((1200, 1000), [(100, 100, 1100, 900)]))

        self.assertEqual(result.rejection, "single-block poster")

    def test_panels_below_min_area(self):
        """Test gutters that would leave panels too small."""

        image = poster((1200, 1000), [(100, 100, 300, 300), (400, 100, 600, 300)])

        result = segment_poster(image, min_region_pixels=250_000)

        self.assertEqual(result.rejection, "single-block poster")


class TestHelpers(unittest.TestCase):
    """
    Test suite for gutter runs and reading order.
    """

    def test_gutter_runs_skip_margins(self):
        """Test that leading and trailing runs are not gutters."""

        flags = np.array([True, True, False, True, True, False, False, True])

        self.assertEqual(gutter_runs(flags), [(3, 5)])

    def test_reading_order(self):
        """Test row bands, left to right."""

        boxes = [(600, 500, 900, 900), (0, 0, 400, 400), (0, 500, 400, 900), (500, 10, 900, 400)]

        self.assertEqual(
            reading_order(boxes),
            [(0, 0, 400, 400), (500, 10, 900, 400), (0, 500, 400, 900), (600, 500, 900, 900)],
        )


if __name__ == "__main__":
    unittest.main()
