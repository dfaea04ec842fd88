"""
Validation of the report charts.

This module tests:
- Bokeh figure generation for accuracy bars and advantage histograms
- Required column and value checks
- Standalone HTML pages
"""

# Python
import os
import tempfile
import unittest

# Third-party
import pandas as pd

# Bokeh
from bokeh.models import Plot

# Project
from app.backend.report_plots import plot_bar, plot_histogram, write_html


class TestReportPlots(unittest.TestCase):
    """
    Test suite for the chart helpers.
    """

    def setUp(self):
        self.accuracy = pd.DataFrame({"subset": ["attribute", "position", "overall"], "accuracy": [50.0, 50.0, 50.0]})

    # Positive Test Cases
    def test_bar(self):
        """Test one bar per subset."""

        plot = plot_bar(self.accuracy, "subset", "accuracy", title="Accuracy")

        self.assertIsInstance(plot, Plot)
        self.assertEqual(list(plot.x_range.factors), ["attribute", "position", "overall"])
        self.assertEqual(plot.title.text, "Accuracy")

    def test_histogram(self):
        """Test advantages, including a constant group."""

        for values in ([-1.2, 0.0, 0.4, 0.8], [0.0, 0.0, 0.0]):
            with self.subTest(values=values):
                self.assertIsInstance(plot_histogram(values, axis_label="advantage"), Plot)

    def test_write_html(self):
        """Test the standalone page."""

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "report.html")
            write_html([plot_bar(self.accuracy, "subset", "accuracy")], path, "Evaluation report")

            with open(path, "r", encoding="utf-8") as _file:
                html = _file.read()

        self.assertIn("<title>Evaluation report</title>", html)

    # Negative Test Cases
    def test_bar_missing_column(self):
        """Test a column that is not in the frame."""

        with self.assertRaises(ValueError) as context:
            plot_bar(self.accuracy, "subset", "correct")

        self.assertIn("'subset' and 'correct'", str(context.exception))

    def test_histogram_without_numbers(self):
        """Test an empty or all-NaN input."""

        for values in ([], [float("nan")]):
            with self.subTest(values=values):
                with self.assertRaises(ValueError):
                    plot_histogram(values)


if __name__ == "__main__":
    unittest.main()
