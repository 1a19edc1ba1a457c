import numpy as np
import pandas as pd
import plotly.graph_objs as go
import plotly.io as pio

from pancad.metrics import REPORT_COLUMNS

pio.templates.default = "plotly_white"

SCORE_COLORS = {
    "F1": "steelblue",
    "wF1": "lightskyblue",
    "mAP": "seagreen",
    "PQ": "firebrick",
    "SQ": "darkorange",
    "RQ": "goldenrod",
}


def plot_length_histogram(counts: np.ndarray, edges: np.ndarray) -> go.Figure:
    """
    Bar chart of entity counts over log-spaced length bins.

    Args:
        counts (np.ndarray): Count per bin.
        edges (np.ndarray): Bin edges in millimeters, len(counts) + 1.

    Returns:
        go.Figure: Plotly figure with a logarithmic length axis.
    """
    centers = np.sqrt(edges[:-1] * edges[1:])
    fig = go.Figure()
    fig.add_trace(
        go.Bar(
            x=centers,
            y=counts,
            width=np.diff(edges),
            name="Entities",
            marker=dict(color="steelblue"),
            hovertemplate="%{x:.0f} mm: %{y}<extra></extra>",
        )
    )
    fig.update_layout(
        title="Entity Length Histogram",
        xaxis_title="Length (mm)",
        yaxis_title="Entities",
        xaxis_type="log",
        bargap=0.05,
        showlegend=False,
    )
    return fig


def plot_loss_trace(loss_trace: pd.DataFrame, window: int = 100) -> go.Figure:
    """
    Training loss per iteration with a rolling mean, and the learning rate.

    Args:
        loss_trace (pd.DataFrame): Columns iteration, lr, loss.
        window (int): Rolling mean window in iterations.

    Returns:
        go.Figure: Plotly figure, learning rate on a secondary axis.
    """
    smoothed = loss_trace["loss"].rolling(window, min_periods=1).mean()
    fig = go.Figure()
    fig.add_trace(
        go.Scatter(
            x=loss_trace["iteration"],
            y=loss_trace["loss"],
            mode="lines",
            name="Loss",
            line=dict(color="lightgray", width=1),
        )
    )
    fig.add_trace(
        go.Scatter(
            x=loss_trace["iteration"],
            y=smoothed,
            mode="lines",
            name=f"Loss (mean of {window})",
            line=dict(color="firebrick", width=2),
        )
    )
    fig.add_trace(
        go.Scatter(
            x=loss_trace["iteration"],
            y=loss_trace["lr"],
            mode="lines",
            name="Learning rate",
            line=dict(color="green", dash="dot"),
            yaxis="y2",
        )
    )
    fig.update_layout(
        title="Training Loss",
        xaxis_title="Iteration",
        yaxis_title="Loss",
        yaxis2=dict(title="Learning rate", overlaying="y", side="right"),
        hovermode="x unified",
    )
    return fig


def plot_class_scores(table: pd.DataFrame, title: str) -> go.Figure:
    """
    Grouped bars per class for every score column the report filled.

    Args:
        table (pd.DataFrame): Report table from build_report, total row last.
        title (str): Figure title; the total row's scores are appended.

    Returns:
        go.Figure: Plotly figure with one bar trace per score column.
    """
    classes = table[table["class"] != "total"]
    total = table[table["class"] == "total"].iloc[0]
    columns = [c for c in REPORT_COLUMNS[1:] if classes[c].notna().any()]
    fig = go.Figure()
    for column in columns:
        fig.add_trace(
            go.Bar(
                x=classes["class"],
                y=classes[column],
                name=column,
                marker=dict(color=SCORE_COLORS.get(column, "gray")),
            )
        )
    summary = ", ".join(f"{c} {total[c]:.3f}" for c in columns)
    fig.update_layout(
        title=f"{title} ({summary})" if summary else title,
        yaxis_title="Score",
        yaxis_range=[0, 1],
        barmode="group",
    )
    return fig
