"""Deterministic chart rendering for the visual interface.

Two artifacts per instance: a time-domain multi-panel line chart with extremum
markers, and a frequency-domain magnitude-spectrum chart with labeled peaks.
Rendering is a pure function of (series, config): PNG metadata is pinned and no
timestamps or randomness enter the figure, so bytes are identical across runs.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .model import TimeSeriesRecord
from .series_tools import ToolError, get_features, get_frequency_features, spectrum

PANEL_WIDTH_PX = 1200
PANEL_HEIGHT_PX = 400
DPI = 100

#: Series longer than this are min-max bucket downsampled for rendering only.
DOWNSAMPLE_THRESHOLD = 2000
DOWNSAMPLE_BUCKETS = 1000

#: Spectral peaks are labeled only above this multiple of the median bin power.
PEAK_LABEL_FACTOR = 4.0

_PNG_METADATA = {"Software": "tsdebate-charts"}


class ChartError(Exception):
    pass


@dataclass(frozen=True)
class ChartArtifact:
    kind: str  # time | frequency
    png_bytes: bytes
    width: int
    height: int
    panels: int
    digest: str
    downsampled: bool = False
    caption: Optional[str] = None
    annotations: tuple[tuple[int, int], ...] = ()  # (channel, position) markers


def _png_dimensions(png: bytes) -> tuple[int, int]:
    # IHDR is the first chunk: width/height are big-endian uint32 at offsets 16/20
    width = int.from_bytes(png[16:20], "big")
    height = int.from_bytes(png[20:24], "big")
    return width, height


def _finish(fig, kind: str, panels: int, downsampled: bool, caption: Optional[str], annotations) -> ChartArtifact:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=DPI, metadata=_PNG_METADATA)
    plt.close(fig)
    png = buf.getvalue()
    width, height = _png_dimensions(png)
    return ChartArtifact(
        kind=kind,
        png_bytes=png,
        width=width,
        height=height,
        panels=panels,
        digest=hashlib.sha256(png).hexdigest(),
        downsampled=downsampled,
        caption=caption,
        annotations=tuple(annotations),
    )


def _minmax_buckets(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Downsample to min-max pairs per bucket, preserving extrema visibility."""
    t = x.size
    edges = np.linspace(0, t, DOWNSAMPLE_BUCKETS + 1, dtype=int)
    idx: list[int] = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        window = x[lo:hi]
        finite = np.isfinite(window)
        if not finite.any():
            continue
        masked = np.where(finite, window, np.inf)
        i_min = lo + int(np.argmin(masked))
        masked = np.where(finite, window, -np.inf)
        i_max = lo + int(np.argmax(masked))
        pair = sorted({i_min, i_max})
        idx.extend(pair)
    indices = np.asarray(idx, dtype=int)
    return indices, x[indices]


def render_time_chart(series: TimeSeriesRecord) -> ChartArtifact:
    """Multi-panel line chart, one panel per channel, extremum markers annotated."""
    t = series.length
    if t < 1:
        raise ChartError("cannot render an empty series")
    d = series.dim
    downsampled = t > DOWNSAMPLE_THRESHOLD
    caption = None
    if downsampled:
        caption = f"downsampled for rendering: min-max buckets over {t} points"

    peaks = get_features(series, "peak")
    valleys = get_features(series, "valley")
    annotations = [(e.channel, e.position) for e in peaks] + [(e.channel, e.position) for e in valleys]
    annotations.sort()

    fig, axes = plt.subplots(
        d, 1, figsize=(PANEL_WIDTH_PX / DPI, PANEL_HEIGHT_PX * d / DPI), squeeze=False
    )
    for ch in range(d):
        ax = axes[ch][0]
        x = np.asarray(series.channels[ch], dtype=float)
        if downsampled:
            xs, ys = _minmax_buckets(x)
        else:
            xs, ys = np.arange(t), x
        ax.plot(xs, ys, linewidth=0.9, color="#1f77b4")
        for e in peaks:
            if e.channel == ch:
                ax.plot([e.position], [e.value], marker="^", color="#d62728", markersize=5)
        for e in valleys:
            if e.channel == ch:
                ax.plot([e.position], [e.value], marker="v", color="#2ca02c", markersize=5)
        ax.set_ylabel(series.channel_names[ch])
        ax.grid(True, alpha=0.3)
        if ch == d - 1:
            label = "time index"
            if series.granularity:
                label += f" ({series.granularity} per step)"
            ax.set_xlabel(label)
    fig.suptitle(f"time view: {series.id}")
    if caption:
        fig.text(0.01, 0.005, caption, fontsize=7)
    fig.tight_layout(rect=(0, 0.02, 1, 0.97))
    return _finish(fig, "time", d, downsampled, caption, annotations)


def render_freq_chart(series: TimeSeriesRecord) -> ChartArtifact:
    """Per-channel magnitude-spectrum panels with labeled dominant periods."""
    try:
        summary = get_frequency_features(series)
    except ToolError as exc:
        raise ChartError(str(exc)) from None
    d = series.dim
    fig, axes = plt.subplots(
        d, 1, figsize=(PANEL_WIDTH_PX / DPI, PANEL_HEIGHT_PX * d / DPI), squeeze=False
    )
    labeled: list[tuple[int, int]] = []
    for ch_summary in summary.channels:
        ax = axes[ch_summary.channel][0]
        if ch_summary.error:
            ax.text(0.5, 0.5, f"no spectrum: {ch_summary.error}", ha="center", va="center")
            ax.set_ylabel(ch_summary.name)
            continue
        freqs, power = spectrum(np.asarray(series.channels[ch_summary.channel], dtype=float))
        ax.plot(freqs, power, linewidth=0.9, color="#9467bd")
        median_power = float(np.median(power)) if power.size else 0.0
        threshold = PEAK_LABEL_FACTOR * median_power
        for peak in ch_summary.peaks:
            if peak.power >= threshold and peak.power > 0:
                ax.plot([peak.frequency], [peak.power], marker="o", color="#d62728", markersize=5)
                ax.annotate(
                    f"period={peak.period}",
                    xy=(peak.frequency, peak.power),
                    xytext=(3, 3),
                    textcoords="offset points",
                    fontsize=8,
                )
                labeled.append((ch_summary.channel, peak.period))
        ax.set_ylabel(ch_summary.name)
        ax.set_xlim(0.0, 0.5)
        ax.grid(True, alpha=0.3)
        if ch_summary.channel == d - 1:
            ax.set_xlabel("frequency (cycles/sample)")
    fig.suptitle(f"frequency view: {series.id}")
    fig.tight_layout(rect=(0, 0.02, 1, 0.97))
    return _finish(fig, "frequency", d, False, None, labeled)
