"""
Bokeh charts of evaluation reports and rollout summaries.

All of them return a Bokeh figure; `write_html` bundles figures into one
standalone HTML page next to the JSON report.
"""

# Python
from typing import Sequence

# Third-party
import colorcet as cc
import numpy as np
import pandas as pd

# Bokeh
from bokeh.embed import file_html
from bokeh.layouts import column
from bokeh.plotting import figure
from bokeh.resources import CDN


def plot_bar(
    data: pd.DataFrame,
    category_column: str,
    value_column: str,
    title: str = "Bar Chart",
    width: int = 500,
    height: int = 300,
) -> figure:
    """
    Create a vertical bar chart from a DataFrame.
    Best for comparing values across categories

    Args:
        data: DataFrame containing the data.
        category_column: Column name for the x-axis (categories).
        value_column: Column name for the bar heights (values).
        title: Title of the plot. Defaults to "Bar Chart".
        width: Plot width in pixels. Defaults to 500.
        height: Plot height in pixels. Defaults to 300.
    """
    if category_column not in data.columns or value_column not in data.columns:
        raise ValueError(
            f"The DataFrame must contain columns '{category_column}' and '{value_column}'."
        )

    x_values = [str(value) for value in data[category_column].tolist()]
    top_values = data[value_column].tolist()

    width = max(width, len(x_values) * 50)
    bar_width = 0.8 if len(x_values) > 1 else 0.5

    # One glasbey colour per category, stable across reports
    colors = [cc.glasbey_cool[index % len(cc.glasbey_cool)] for index in range(len(x_values))]

    plot = figure(
        width=width,
        height=height,
        x_range=pd.Series(x_values).unique().tolist(),
        toolbar_location=None,
        title=title,
    )
    plot.vbar(x=x_values, width=bar_width, bottom=0, top=top_values, color=colors)

    plot.xaxis.axis_label = category_column
    plot.yaxis.axis_label = value_column
    plot.xgrid.grid_line_color = None
    plot.ygrid.grid_line_color = "#dddddd"
    plot.y_range.start = 0

    return plot


def plot_histogram(
    values: Sequence,
    title: str = "Histogram Chart",
    axis_label: str = "value",
    width: int = 670,
    height: int = 400,
) -> figure:
    """
    Create a histogram of numeric values.
    Best for distribution of single numerical variable.

    Args:
        values: Numbers to plot; NaNs are dropped.
        title: Plot title. Defaults to "Histogram Chart".
        axis_label: Label of the x-axis.
        width: Plot width in pixels. Defaults to 670.
        height: Plot height in pixels. Defaults to 400.
    """
    data_values = np.asarray([value for value in values if value == value], dtype=float)
    if data_values.size == 0:
        raise ValueError("The histogram needs at least one numeric value.")

    data_min = float(np.min(data_values))
    data_max = float(np.max(data_values))
    data_range = data_max - data_min

    # Handle edge case (constant data)
    if data_range == 0:
        data_min -= 1
        data_max += 1
    else:
        padding = 0.05 * data_range
        data_min -= padding
        data_max += padding

    bins_count = int(np.clip(np.sqrt(data_values.size) * 2, 5, 60))
    bins = np.linspace(data_min, data_max, bins_count + 1)

    plot = figure(width=width, height=height, toolbar_location=None, title=title)

    hist, edges = np.histogram(data_values, bins=bins)
    plot.quad(
        top=hist,
        bottom=0,
        left=edges[:-1],
        right=edges[1:],
        fill_color=cc.blues[160],
        line_color="white",
        legend_label="Trajectories",
    )

    plot.y_range.start = 0
    plot.xaxis.axis_label = axis_label
    plot.yaxis.axis_label = "Count"
    plot.legend.location = "top_right"

    return plot


def write_html(plots: list, path: str, title: str) -> None:
    """Standalone HTML page stacking the given figures."""

    html = file_html(column(*plots), CDN, title)
    with open(path, "w", encoding="utf-8") as _file:
        _file.write(html)
