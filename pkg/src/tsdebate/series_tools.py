"""Numerical lookup interface over a time series.

Every operation is a pure function of (series, arguments): repeated calls give
byte-identical text. Statistics ignore missing values (NaN) and use the
population standard deviation. Errors surface as :class:`ToolError` with an
agent-readable message; the dispatch layer turns them into tool-result text so
a bad call can never abort a debate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .model import TimeSeriesRecord

#: Hard cap on tool-result text delivered into an agent conversation.
MAX_TOOL_TEXT = 2000

#: Default half-width for get_around when the caller omits it.
DEFAULT_AROUND_WINDOW = 5

#: Local extrema must rise above 5% of the channel's value range.
PROMINENCE_FRACTION = 0.05

#: Rolling z-score window cap and flag threshold for anomaly detection.
ANOMALY_WINDOW = 25
ANOMALY_Z = 3.0

#: Trend segmentation: max segments and minimum SSE reduction to accept a split.
MAX_TREND_SEGMENTS = 4
TREND_SPLIT_GAIN = 0.25
MIN_SEGMENT_DIFFS = 3

#: Spectral peaks reported per channel.
TOP_K_PEAKS = 5

FEATURE_KINDS = ("peak", "valley", "trend", "anomaly")
INDICATOR_NAMES = ("MACD", "BOLLINGER")


class ToolError(Exception):
    """Raised for bad tool arguments; the message is shown to the agent."""


# --- Shared nan-aware statistics (also used by the calc verifier) ------------

def nan_mean(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise ToolError("no non-missing values in range")
    return float(np.mean(finite))


def nan_min(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise ToolError("no non-missing values in range")
    return float(np.min(finite))


def nan_max(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise ToolError("no non-missing values in range")
    return float(np.max(finite))


def nan_std(values: np.ndarray) -> float:
    """Population standard deviation over non-missing values."""
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise ToolError("no non-missing values in range")
    return float(np.std(finite))


def nan_sum(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise ToolError("no non-missing values in range")
    return float(np.sum(finite))


# --- Typed results ------------------------------------------------------------

@dataclass(frozen=True)
class ChannelStats:
    name: str
    minimum: float
    maximum: float
    mean: float
    std: float
    missing: int


@dataclass(frozen=True)
class SeriesInfo:
    length: int
    dim: int
    channel_names: tuple[str, ...]
    stats: tuple[ChannelStats, ...]
    granularity: Optional[str]
    feature_counts: dict[str, int]


@dataclass(frozen=True)
class FeatureEvent:
    kind: str
    channel: int
    position: int
    value: float
    magnitude: float
    span: Optional[tuple[int, int]] = None


@dataclass(frozen=True)
class ValueSlice:
    start: int
    end: int
    channel_names: tuple[str, ...]
    indices: tuple[int, ...]
    timestamps: Optional[tuple[str, ...]]
    values: tuple[tuple[float, ...], ...]  # one row per channel


@dataclass(frozen=True)
class SpectralPeak:
    frequency: float  # cycles per sample, in (0, 0.5]
    period: int  # samples, round(1/frequency)
    power: float
    rank: int


@dataclass(frozen=True)
class ChannelSpectrum:
    channel: int
    name: str
    peaks: tuple[SpectralPeak, ...]
    total_power: float
    error: Optional[str] = None


@dataclass(frozen=True)
class SpectralSummary:
    length: int
    channels: tuple[ChannelSpectrum, ...]


@dataclass(frozen=True)
class IndicatorTable:
    name: str
    params: dict[str, float]
    start: int
    end: int
    columns: dict[str, tuple[Optional[float], ...]]
    warmup_end: int  # first index with defined values


# --- Range / channel helpers ---------------------------------------------------

def _channel_array(series: TimeSeriesRecord, ch: int) -> np.ndarray:
    return np.asarray(series.channels[ch], dtype=float)


def _check_range(series: TimeSeriesRecord, start: int, end: int) -> None:
    t = series.length
    if start > end:
        raise ToolError(f"invalid range: start ({start}) exceeds end ({end})")
    if start < 0 or end >= t:
        raise ToolError(f"index out of range: valid indices are 0..{t - 1}")


def resolve_channel(series: TimeSeriesRecord, ch: Any) -> int:
    """Accept a channel index or a channel name."""
    if isinstance(ch, str) and not ch.lstrip("-").isdigit():
        try:
            return series.channel_names.index(ch)
        except ValueError:
            names = ", ".join(series.channel_names)
            raise ToolError(f"unknown channel {ch!r}: available channels are {names}") from None
    idx = int(ch)
    if not 0 <= idx < series.dim:
        names = ", ".join(series.channel_names)
        raise ToolError(
            f"channel index {idx} out of range: {series.dim} channels available ({names})"
        )
    return idx


# --- Feature detection ----------------------------------------------------------

def _prominence(x: np.ndarray, i: int, sign: float) -> float:
    """Height of extremum i above the higher of its two surrounding bases.

    Walk outward to the first strictly higher point (or the boundary) and take
    the minimum seen on each side; missing values are skipped.
    """
    y = sign * x
    peak = y[i]
    left_min = peak
    j = i - 1
    while j >= 0:
        v = y[j]
        if math.isfinite(v):
            if v > peak:
                break
            left_min = min(left_min, v)
        j -= 1
    right_min = peak
    j = i + 1
    while j < y.size:
        v = y[j]
        if math.isfinite(v):
            if v > peak:
                break
            right_min = min(right_min, v)
        j += 1
    return float(peak - max(left_min, right_min))


def _extrema(x: np.ndarray, kind: str, channel: int) -> list[FeatureEvent]:
    sign = 1.0 if kind == "peak" else -1.0
    y = sign * x
    finite = np.isfinite(x)
    if not finite.any():
        return []
    value_range = float(np.max(x[finite]) - np.min(x[finite]))
    threshold = PROMINENCE_FRACTION * value_range
    if value_range == 0.0:
        return []
    events: list[FeatureEvent] = []
    for i in range(1, x.size - 1):
        if not (finite[i - 1] and finite[i] and finite[i + 1]):
            continue
        if y[i] > y[i - 1] and y[i] > y[i + 1]:
            prom = _prominence(x, i, sign)
            if prom >= threshold:
                events.append(
                    FeatureEvent(kind=kind, channel=channel, position=i, value=float(x[i]), magnitude=prom)
                )
    # Strict extrema are never adjacent, but enforce the documented minimum
    # separation of 2 samples anyway (keep the more prominent).
    pruned: list[FeatureEvent] = []
    for ev in events:
        if pruned and ev.position - pruned[-1].position < 2:
            if ev.magnitude > pruned[-1].magnitude:
                pruned[-1] = ev
        else:
            pruned.append(ev)
    return pruned


def _anomalies(x: np.ndarray, channel: int) -> list[FeatureEvent]:
    t = x.size
    w = min(ANOMALY_WINDOW, t)
    half = w // 2
    events: list[FeatureEvent] = []
    for i in range(t):
        if not math.isfinite(x[i]):
            continue
        lo = max(0, min(i - half, t - w))
        window = x[lo : lo + w]
        finite = window[np.isfinite(window)]
        if finite.size == 0:
            continue
        std = float(np.std(finite))
        if std == 0.0:
            continue
        z = (float(x[i]) - float(np.mean(finite))) / std
        if abs(z) > ANOMALY_Z:
            events.append(
                FeatureEvent(kind="anomaly", channel=channel, position=i, value=float(x[i]), magnitude=abs(z))
            )
    return events


def _segment_sse(d: np.ndarray) -> float:
    finite = d[np.isfinite(d)]
    if finite.size == 0:
        return 0.0
    return float(np.sum((finite - np.mean(finite)) ** 2))


def _ls_slope(x: np.ndarray, a: int, b: int) -> float:
    """Least-squares slope of x over inclusive index range [a, b]."""
    idx = np.arange(a, b + 1, dtype=float)
    seg = x[a : b + 1]
    mask = np.isfinite(seg)
    if mask.sum() < 2:
        return 0.0
    ti = idx[mask]
    vi = seg[mask]
    tm = ti.mean()
    denom = float(np.sum((ti - tm) ** 2))
    if denom == 0.0:
        return 0.0
    return float(np.sum((ti - tm) * (vi - vi.mean())) / denom)


def _trends(x: np.ndarray, channel: int) -> list[FeatureEvent]:
    """Piecewise trends: binary segmentation on first-difference means."""
    t = x.size
    if t < 2:
        return []
    d = np.diff(x)
    # Segments over diff indices [lo, hi).
    segments: list[tuple[int, int]] = [(0, d.size)]
    while len(segments) < MAX_TREND_SEGMENTS:
        best: Optional[tuple[float, int, int, int]] = None  # (gain, seg_idx, lo, split)
        for si, (lo, hi) in enumerate(segments):
            total = _segment_sse(d[lo:hi])
            if total <= 0.0 or hi - lo < 2 * MIN_SEGMENT_DIFFS:
                continue
            for split in range(lo + MIN_SEGMENT_DIFFS, hi - MIN_SEGMENT_DIFFS + 1):
                gain = total - _segment_sse(d[lo:split]) - _segment_sse(d[split:hi])
                if gain >= TREND_SPLIT_GAIN * total and (best is None or gain > best[0]):
                    best = (gain, si, lo, split)
        if best is None:
            break
        _, si, lo, split = best
        hi = segments[si][1]
        segments[si : si + 1] = [(lo, split), (split, hi)]
    events: list[FeatureEvent] = []
    for lo, hi in segments:
        a, b = lo, hi  # diff range [lo, hi) covers x indices [lo, hi]
        slope = _ls_slope(x, a, b)
        first = x[a : b + 1]
        finite = first[np.isfinite(first)]
        value = float(finite[0]) if finite.size else float("nan")
        events.append(
            FeatureEvent(kind="trend", channel=channel, position=a, value=value, magnitude=slope, span=(a, b))
        )
    return events


def _features_for_channel(x: np.ndarray, kind: str, channel: int) -> list[FeatureEvent]:
    if kind in ("peak", "valley"):
        return _extrema(x, kind, channel)
    if kind == "anomaly":
        return _anomalies(x, channel)
    if kind == "trend":
        return _trends(x, channel)
    raise ToolError(f"unknown feature kind {kind!r}: expected one of {', '.join(FEATURE_KINDS)}")


# --- Operations -----------------------------------------------------------------

def get_features(series: TimeSeriesRecord, kind: str) -> list[FeatureEvent]:
    kind_norm = str(kind).strip().lower().rstrip("s")
    if kind_norm not in FEATURE_KINDS:
        raise ToolError(f"unknown feature kind {kind!r}: expected one of {', '.join(FEATURE_KINDS)}")
    events: list[FeatureEvent] = []
    for ch in range(series.dim):
        events.extend(_features_for_channel(_channel_array(series, ch), kind_norm, ch))
    events.sort(key=lambda e: (e.channel, e.position))
    return events


def get_info(series: TimeSeriesRecord) -> SeriesInfo:
    stats: list[ChannelStats] = []
    for ch in range(series.dim):
        x = _channel_array(series, ch)
        finite = x[np.isfinite(x)]
        missing = int(x.size - finite.size)
        if finite.size:
            stats.append(
                ChannelStats(
                    name=series.channel_names[ch],
                    minimum=float(np.min(finite)),
                    maximum=float(np.max(finite)),
                    mean=float(np.mean(finite)),
                    std=float(np.std(finite)),
                    missing=missing,
                )
            )
        else:
            stats.append(
                ChannelStats(
                    name=series.channel_names[ch],
                    minimum=0.0,
                    maximum=0.0,
                    mean=0.0,
                    std=0.0,
                    missing=missing,
                )
            )
    counts = {kind: len(get_features(series, kind)) for kind in FEATURE_KINDS}
    return SeriesInfo(
        length=series.length,
        dim=series.dim,
        channel_names=series.channel_names,
        stats=tuple(stats),
        granularity=series.granularity,
        feature_counts=counts,
    )


def get_values(
    series: TimeSeriesRecord, start: int, end: int, channel: Optional[Any] = None
) -> ValueSlice:
    _check_range(series, start, end)
    if channel is None:
        chans = list(range(series.dim))
    else:
        chans = [resolve_channel(series, channel)]
    indices = tuple(range(start, end + 1))
    ts = tuple(series.timestamps[start : end + 1]) if series.timestamps else None
    values = tuple(tuple(series.channels[c][start : end + 1]) for c in chans)
    return ValueSlice(
        start=start,
        end=end,
        channel_names=tuple(series.channel_names[c] for c in chans),
        indices=indices,
        timestamps=ts,
        values=values,
    )


def get_around(series: TimeSeriesRecord, center: int, window: int = DEFAULT_AROUND_WINDOW) -> ValueSlice:
    t = series.length
    if not 0 <= center < t:
        raise ToolError(f"center {center} out of range: valid indices are 0..{t - 1}")
    if window < 1:
        raise ToolError("window must be a positive integer")
    return get_values(series, max(0, center - window), min(t - 1, center + window))


def get_channel_values(series: TimeSeriesRecord, ch: Any, start: int, end: int) -> ValueSlice:
    idx = resolve_channel(series, ch)
    return get_values(series, start, end, channel=idx)


def get_all_channels(series: TimeSeriesRecord, start: int, end: int) -> ValueSlice:
    return get_values(series, start, end)


def spectrum(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean-removed, Hann-windowed magnitude-squared spectrum.

    Returns (frequencies in cycles/sample, power), DC excluded.
    """
    t = x.size
    finite = np.isfinite(x)
    y = np.where(finite, x, 0.0) - (np.mean(x[finite]) if finite.any() else 0.0)
    y = np.where(finite, y, 0.0)
    windowed = y * np.hanning(t)
    power = np.abs(np.fft.rfft(windowed)) ** 2
    freqs = np.fft.rfftfreq(t, d=1.0)
    return freqs[1:], power[1:]


def get_frequency_features(series: TimeSeriesRecord) -> SpectralSummary:
    t = series.length
    if t < 8:
        raise ToolError(f"too short for spectral analysis: need at least 8 samples, got {t}")
    channels: list[ChannelSpectrum] = []
    for ch in range(series.dim):
        x = _channel_array(series, ch)
        if not np.isfinite(x).any():
            channels.append(
                ChannelSpectrum(
                    channel=ch,
                    name=series.channel_names[ch],
                    peaks=(),
                    total_power=0.0,
                    error="all values missing",
                )
            )
            continue
        freqs, power = spectrum(x)
        total = float(np.sum(power))
        floor = 1e-12 * total
        candidates: list[tuple[float, float]] = []  # (power, frequency)
        n = power.size
        for k in range(n):
            left_ok = k == 0 or power[k] > power[k - 1]
            right_ok = k == n - 1 or power[k] > power[k + 1]
            if left_ok and right_ok and total > 0.0 and power[k] > floor:
                candidates.append((float(power[k]), float(freqs[k])))
        candidates.sort(key=lambda pf: (-pf[0], pf[1]))
        peaks = tuple(
            SpectralPeak(frequency=f, period=round(1.0 / f), power=p, rank=rank + 1)
            for rank, (p, f) in enumerate(candidates[:TOP_K_PEAKS])
        )
        channels.append(
            ChannelSpectrum(channel=ch, name=series.channel_names[ch], peaks=peaks, total_power=total)
        )
    return SpectralSummary(length=t, channels=tuple(channels))


def ema(x: np.ndarray, span: int) -> np.ndarray:
    """EMA recurrence seeded at the first value; missing values carry forward."""
    alpha = 2.0 / (span + 1.0)
    out = np.empty_like(x, dtype=float)
    prev = x[0]
    out[0] = prev
    for i in range(1, x.size):
        v = x[i]
        if math.isfinite(v):
            prev = alpha * v + (1.0 - alpha) * (prev if math.isfinite(prev) else v)
        out[i] = prev
    return out


def get_indicator(
    series: TimeSeriesRecord,
    name: str,
    start: Optional[int] = None,
    end: Optional[int] = None,
    params: Optional[dict[str, float]] = None,
    channel: Any = 0,
) -> IndicatorTable:
    norm = str(name).strip().upper().replace(" ", "")
    if norm in ("BOLLINGERBANDS", "BOLLINGER_BANDS"):
        norm = "BOLLINGER"
    if norm not in INDICATOR_NAMES:
        raise ToolError(f"unknown indicator {name!r}: expected one of {', '.join(INDICATOR_NAMES)}")
    ch = resolve_channel(series, channel)
    x = _channel_array(series, ch)
    t = x.size
    start = 0 if start is None else int(start)
    end = t - 1 if end is None else int(end)
    _check_range(series, start, end)
    params = dict(params or {})
    if norm == "MACD":
        fast = int(params.get("fast", 12))
        slow = int(params.get("slow", 26))
        signal_span = int(params.get("signal", 9))
        warmup = slow - 1
        if t < slow:
            raise ToolError(f"series too short for MACD({fast},{slow},{signal_span}): need {slow} samples, got {t}")
        macd = ema(x, fast) - ema(x, slow)
        signal = ema(macd, signal_span)
        hist = macd - signal
        columns = {
            "macd": _mask_warmup(macd, warmup),
            "signal": _mask_warmup(signal, warmup),
            "histogram": _mask_warmup(hist, warmup),
        }
        used = {"fast": float(fast), "slow": float(slow), "signal": float(signal_span)}
    else:
        window = int(params.get("window", 20))
        sigmas = float(params.get("sigmas", 2.0))
        warmup = window - 1
        if t < window:
            raise ToolError(f"series too short for Bollinger({window},{sigmas:g}): need {window} samples, got {t}")
        middle = np.full(t, np.nan)
        upper = np.full(t, np.nan)
        lower = np.full(t, np.nan)
        for i in range(warmup, t):
            win = x[i - warmup : i + 1]
            finite = win[np.isfinite(win)]
            if finite.size == 0:
                continue
            m = float(np.mean(finite))
            s = float(np.std(finite))
            middle[i] = m
            upper[i] = m + sigmas * s
            lower[i] = m - sigmas * s
        columns = {
            "middle": _mask_warmup(middle, warmup),
            "upper": _mask_warmup(upper, warmup),
            "lower": _mask_warmup(lower, warmup),
        }
        used = {"window": float(window), "sigmas": sigmas}
    sliced = {k: v[start : end + 1] for k, v in columns.items()}
    return IndicatorTable(name=norm, params=used, start=start, end=end, columns=sliced, warmup_end=warmup)


def _mask_warmup(values: np.ndarray, warmup: int) -> tuple[Optional[float], ...]:
    out: list[Optional[float]] = []
    for i, v in enumerate(values):
        if i < warmup or not math.isfinite(v):
            out.append(None)
        else:
            out.append(float(v))
    return tuple(out)


# --- Text rendering for the agent conversation -----------------------------------

def bound_text(text: str, limit: int = MAX_TOOL_TEXT) -> str:
    if len(text) <= limit:
        return text
    head = text[: limit // 2 - 30]
    tail = text[-(limit // 2 - 30) :]
    elided = len(text) - len(head) - len(tail)
    return f"{head}\n... [{elided} characters elided] ...\n{tail}"


def _fmt(v: Optional[float]) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "missing"
    return f"{v:.6g}"


def render_info(info: SeriesInfo) -> str:
    lines = [f"series: T={info.length} samples, d={info.dim} channel(s)"]
    if info.granularity:
        lines.append(f"granularity: {info.granularity}")
    for s in info.stats:
        lines.append(
            f"channel {s.name}: min={_fmt(s.minimum)} max={_fmt(s.maximum)} "
            f"mean={_fmt(s.mean)} std={_fmt(s.std)} missing={s.missing}"
        )
    counts = ", ".join(f"{k}s={v}" for k, v in info.feature_counts.items())
    lines.append(f"detected features: {counts}")
    lines.append("std is population std; stats ignore missing values")
    return "\n".join(lines)


def render_slice(sl: ValueSlice, max_rows: int = 40) -> str:
    header = "index" + ("," + "timestamp" if sl.timestamps else "") + "," + ",".join(sl.channel_names)
    rows = []
    for pos, idx in enumerate(sl.indices):
        cells = [str(idx)]
        if sl.timestamps:
            cells.append(sl.timestamps[pos])
        cells.extend(_fmt(chvals[pos]) for chvals in sl.values)
        rows.append(",".join(cells))
    if len(rows) > max_rows:
        keep = max_rows // 2
        elided = len(rows) - 2 * keep
        rows = rows[:keep] + [f"... ({elided} rows elided) ..."] + rows[-keep:]
    return bound_text("\n".join([f"values[{sl.start}..{sl.end}]", header] + rows))


def render_features(events: Sequence[FeatureEvent], kind: str) -> str:
    if not events:
        return f"no {kind} events detected"
    lines = [f"{len(events)} {kind} event(s):"]
    for e in events:
        if e.kind == "trend":
            a, b = e.span or (e.position, e.position)
            lines.append(f"- channel {e.channel}: trend over [{a}..{b}], slope={e.magnitude:.6g} per step")
        elif e.kind == "anomaly":
            lines.append(
                f"- channel {e.channel}: anomaly at index {e.position}, value={_fmt(e.value)}, |z|={e.magnitude:.3g}"
            )
        else:
            lines.append(
                f"- channel {e.channel}: {e.kind} at index {e.position}, value={_fmt(e.value)}, "
                f"prominence={e.magnitude:.6g}"
            )
    return bound_text("\n".join(lines))


def render_spectrum(summary: SpectralSummary) -> str:
    lines = [f"spectral analysis over T={summary.length} samples (mean-removed, Hann window)"]
    for ch in summary.channels:
        if ch.error:
            lines.append(f"channel {ch.name}: error - {ch.error}")
            continue
        if not ch.peaks:
            lines.append(f"channel {ch.name}: no spectral peaks (flat after mean removal)")
            continue
        lines.append(f"channel {ch.name}: top peaks by power")
        for p in ch.peaks:
            lines.append(
                f"  rank {p.rank}: frequency={p.frequency:.6g} cycles/sample, "
                f"period={p.period} samples, power={p.power:.6g}"
            )
    return bound_text("\n".join(lines))


def render_indicator(table: IndicatorTable) -> str:
    params = ", ".join(f"{k}={v:g}" for k, v in table.params.items())
    lines = [
        f"{table.name}({params}) over [{table.start}..{table.end}]",
        f"warm-up: values before index {table.warmup_end} are unavailable",
        "index," + ",".join(table.columns),
    ]
    names = list(table.columns)
    n = len(next(iter(table.columns.values())))
    rows = []
    for i in range(n):
        idx = table.start + i
        cells = [str(idx)] + [_fmt(table.columns[c][i]) for c in names]
        rows.append(",".join(cells))
    if len(rows) > 40:
        keep = 20
        elided = len(rows) - 2 * keep
        rows = rows[:keep] + [f"... ({elided} rows elided) ..."] + rows[-keep:]
    return bound_text("\n".join(lines + rows))


# --- Tool dispatch ----------------------------------------------------------------

@dataclass
class ToolSpec:
    name: str
    description: str
    parameters: dict[str, Any]
    handler: Callable[[dict[str, Any]], str]


def _int_arg(args: dict[str, Any], key: str, default: Optional[int] = None) -> int:
    if key not in args or args[key] is None:
        if default is None:
            raise ToolError(f"missing required argument {key!r}")
        return default
    try:
        return int(args[key])
    except (TypeError, ValueError):
        raise ToolError(f"argument {key!r} must be an integer, got {args[key]!r}") from None


def series_toolkit(series: TimeSeriesRecord) -> list[ToolSpec]:
    """The lookup tool set bound to one series, results rendered as text."""

    def _info(args: dict[str, Any]) -> str:
        return render_info(get_info(series))

    def _values(args: dict[str, Any]) -> str:
        start = _int_arg(args, "start")
        end = _int_arg(args, "end")
        return render_slice(get_values(series, start, end))

    def _around(args: dict[str, Any]) -> str:
        center = _int_arg(args, "center")
        window = _int_arg(args, "window", DEFAULT_AROUND_WINDOW)
        return render_slice(get_around(series, center, window))

    def _features(args: dict[str, Any]) -> str:
        kind = args.get("type") or args.get("kind")
        if not kind:
            raise ToolError(f"missing required argument 'type': one of {', '.join(FEATURE_KINDS)}")
        kind = str(kind).strip().lower().rstrip("s")
        return render_features(get_features(series, kind), kind)

    def _freq(args: dict[str, Any]) -> str:
        return render_spectrum(get_frequency_features(series))

    def _channel_values(args: dict[str, Any]) -> str:
        ch = args.get("ch", args.get("channel"))
        if ch is None:
            raise ToolError("missing required argument 'ch'")
        start = _int_arg(args, "start")
        end = _int_arg(args, "end")
        return render_slice(get_channel_values(series, ch, start, end))

    def _all_channels(args: dict[str, Any]) -> str:
        start = _int_arg(args, "start")
        end = _int_arg(args, "end")
        return render_slice(get_all_channels(series, start, end))

    def _indicator(args: dict[str, Any]) -> str:
        name = args.get("name", "MACD")
        start = args.get("start")
        end = args.get("end")
        table = get_indicator(
            series,
            name,
            start=None if start is None else _int_arg(args, "start"),
            end=None if end is None else _int_arg(args, "end"),
            params=args.get("params"),
            channel=args.get("ch", 0),
        )
        return render_indicator(table)

    def p(**props: Any) -> dict[str, Any]:
        return {"type": "object", "properties": props}

    integer = {"type": "integer"}
    return [
        ToolSpec("get_info", "Schema, per-channel stats, and detected feature counts.", p(), _info),
        ToolSpec(
            "get_values",
            "Time-series values for all channels over [start, end] (inclusive indices).",
            p(start=integer, end=integer),
            _values,
        ),
        ToolSpec(
            "get_around",
            f"Values around a center index; window defaults to {DEFAULT_AROUND_WINDOW}.",
            p(center=integer, window=integer),
            _around,
        ),
        ToolSpec(
            "get_features",
            "Detected events of one kind: 'peak', 'valley', 'trend', or 'anomaly'.",
            p(type={"type": "string", "enum": list(FEATURE_KINDS)}),
            _features,
        ),
        ToolSpec(
            "get_frequency_features",
            "Spectral analysis: top-5 peaks per channel with frequency, period, power.",
            p(),
            _freq,
        ),
        ToolSpec(
            "get_channel_values",
            "Values of one channel (by index or name) over [start, end].",
            p(ch={"type": ["integer", "string"]}, start=integer, end=integer),
            _channel_values,
        ),
        ToolSpec(
            "get_all_channels",
            "Aligned values of every channel over [start, end].",
            p(start=integer, end=integer),
            _all_channels,
        ),
        ToolSpec(
            "get_indicator",
            "Indicator table: MACD(12,26,9) or BOLLINGER(20,2); warm-up rows unavailable.",
            p(
                name={"type": "string", "enum": list(INDICATOR_NAMES)},
                start=integer,
                end=integer,
                ch={"type": ["integer", "string"]},
            ),
            _indicator,
        ),
    ]
