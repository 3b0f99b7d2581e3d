from __future__ import annotations

import math
import random

import pytest

from tsdebate import series_tools as tools
from tsdebate.series_tools import ToolError

from .conftest import make_series, sinusoid


# --- Independent oracles (plain-python reimplementations) ---------------------

def oracle_prominence(x: list[float], i: int, sign: float) -> float:
    y = [sign * v for v in x]
    peak = y[i]
    left_min = peak
    j = i - 1
    while j >= 0:
        if not math.isnan(y[j]):
            if y[j] > peak:
                break
            left_min = min(left_min, y[j])
        j -= 1
    right_min = peak
    j = i + 1
    while j < len(y):
        if not math.isnan(y[j]):
            if y[j] > peak:
                break
            right_min = min(right_min, y[j])
        j += 1
    return peak - max(left_min, right_min)


def oracle_extrema_positions(x: list[float], kind: str) -> set[int]:
    """Brute force: strict local extrema with prominence ≥ 5% of value range."""
    sign = 1.0 if kind == "peak" else -1.0
    finite = [v for v in x if not math.isnan(v)]
    if not finite:
        return set()
    rng = max(finite) - min(finite)
    if rng == 0:
        return set()
    y = [sign * v for v in x]
    out = set()
    for i in range(1, len(x) - 1):
        if math.isnan(x[i - 1]) or math.isnan(x[i]) or math.isnan(x[i + 1]):
            continue
        if y[i] > y[i - 1] and y[i] > y[i + 1] and oracle_prominence(x, i, sign) >= 0.05 * rng:
            out.add(i)
    return out


def oracle_ls_slope(x: list[float], a: int, b: int) -> float:
    pts = [(t, x[t]) for t in range(a, b + 1) if not math.isnan(x[t])]
    n = len(pts)
    tm = sum(t for t, _ in pts) / n
    vm = sum(v for _, v in pts) / n
    denom = sum((t - tm) ** 2 for t, _ in pts)
    return sum((t - tm) * (v - vm) for t, v in pts) / denom


def oracle_dft_power(x: list[float], k: int) -> float:
    """Direct DFT of the mean-removed, Hann-windowed signal at bin k."""
    t = len(x)
    mean = sum(x) / t
    w = [0.5 - 0.5 * math.cos(2 * math.pi * n / (t - 1)) for n in range(t)]
    re = sum((x[n] - mean) * w[n] * math.cos(-2 * math.pi * k * n / t) for n in range(t))
    im = sum((x[n] - mean) * w[n] * math.sin(-2 * math.pi * k * n / t) for n in range(t))
    return re * re + im * im


def oracle_ema(x: list[float], span: int) -> list[float]:
    alpha = 2.0 / (span + 1.0)
    out = [x[0]]
    for v in x[1:]:
        out.append(alpha * v + (1 - alpha) * out[-1])
    return out


# --- get_info -------------------------------------------------------------------

class TestGetInfo:
    def test_simple_stats(self):
        info = tools.get_info(make_series([1.0, 2.0, 3.0]))
        s = info.stats[0]
        assert info.length == 3
        assert s.mean == 2.0
        assert s.minimum == 1.0
        assert s.maximum == 3.0
        assert s.std == pytest.approx(math.sqrt(2.0 / 3.0))  # population std

    def test_missing_values_skipped(self):
        info = tools.get_info(make_series([1.0, None, 3.0]))
        s = info.stats[0]
        assert s.mean == 2.0
        assert s.missing == 1

    def test_sinusoid_has_extrema_counts(self):
        info = tools.get_info(make_series(sinusoid(4, 64)))
        assert info.feature_counts["peak"] >= 1
        assert info.feature_counts["valley"] >= 1

    def test_deterministic(self):
        series = make_series(sinusoid(3, 48))
        assert tools.render_info(tools.get_info(series)) == tools.render_info(tools.get_info(series))

    def test_no_stat_is_non_finite(self):
        info = tools.get_info(make_series([1.0, None, None, 5.0, None]))
        for s in info.stats:
            for v in (s.minimum, s.maximum, s.mean, s.std):
                assert math.isfinite(v)


# --- Slicing tools ----------------------------------------------------------------

class TestSlices:
    def test_basic_slice(self):
        sl = tools.get_values(make_series([10.0, 20.0, 30.0, 40.0]), 1, 2)
        assert sl.values[0] == (20.0, 30.0)
        assert sl.indices == (1, 2)

    def test_identity_slice(self):
        series = make_series([1.0, 2.0, 3.0])
        sl = tools.get_values(series, 0, 2)
        assert sl.values[0] == (1.0, 2.0, 3.0)

    def test_inverted_bounds_error(self):
        with pytest.raises(ToolError, match="start .* exceeds end"):
            tools.get_values(make_series([1.0, 2.0]), 5, 3)

    def test_out_of_range_names_bounds(self):
        with pytest.raises(ToolError, match="0..3"):
            tools.get_values(make_series([1.0, 2.0, 3.0, 4.0]), 0, 9)

    def test_around_left_clamped(self):
        sl = tools.get_around(make_series([float(i) for i in range(10)]), 0, 3)
        assert sl.indices == (0, 1, 2, 3)

    def test_around_interior(self):
        sl = tools.get_around(make_series([float(i) for i in range(10)]), 5, 2)
        assert sl.indices == (3, 4, 5, 6, 7)

    def test_around_default_window(self):
        series = make_series([float(i) for i in range(30)])
        sl = tools.get_around(series, 15)
        assert sl.indices == tuple(range(10, 21))  # window 5 each side

    def test_channel_by_index(self):
        series = make_series([1.0], [2.0], [3.0])
        sl = tools.get_channel_values(series, 1, 0, 0)
        assert sl.values == ((2.0,),)

    def test_channel_by_name(self):
        series = make_series([1.0, 2.0], [5.0, 6.0], names=["price", "volume"])
        sl = tools.get_channel_values(series, "volume", 0, 1)
        assert sl.values == ((5.0, 6.0),)

    def test_bad_channel_lists_names(self):
        series = make_series([1.0], [2.0], [3.0], names=["a", "b", "c"])
        with pytest.raises(ToolError, match="a, b, c"):
            tools.get_channel_values(series, 5, 0, 0)

    def test_all_channels_aligned(self):
        series = make_series([1.0, 2.0], [3.0, 4.0])
        sl = tools.get_all_channels(series, 0, 1)
        assert len(sl.values) == 2
        assert sl.values[0] == (1.0, 2.0)
        assert sl.values[1] == (3.0, 4.0)

    def test_missing_cells_rendered_as_missing(self):
        series = make_series([1.0, None], [None, 4.0])
        text = tools.render_slice(tools.get_all_channels(series, 0, 1))
        assert "missing" in text

    def test_slice_algebra_concatenation(self):
        rng = random.Random(7)
        for _ in range(25):
            t = rng.randint(3, 40)
            series = make_series([rng.uniform(-5, 5) for _ in range(t)])
            a = rng.randint(0, t - 2)
            b = rng.randint(a + 1, t - 1)
            m = rng.randint(a, b - 1)
            left = tools.get_values(series, a, m).values[0]
            right = tools.get_values(series, m + 1, b).values[0]
            assert left + right == tools.get_values(series, a, b).values[0]


# --- Feature detection ---------------------------------------------------------------

class TestFeatures:
    def test_two_peaks_example(self):
        events = tools.get_features(make_series([0.0, 1.0, 0.0, 2.0, 0.0]), "peak")
        assert [e.position for e in events] == [1, 3]

    def test_peak_positions_match_brute_force_oracle(self):
        rng = random.Random(2026)
        for _ in range(200):
            t = rng.randint(5, 64)
            x = [rng.uniform(-10, 10) for _ in range(t)]
            series = make_series(x)
            got = {e.position for e in tools.get_features(series, "peak")}
            assert got == oracle_extrema_positions(x, "peak")

    def test_valley_positions_match_brute_force_oracle(self):
        rng = random.Random(17)
        for _ in range(200):
            t = rng.randint(5, 64)
            x = [rng.uniform(-10, 10) for _ in range(t)]
            got = {e.position for e in tools.get_features(make_series(x), "valley")}
            assert got == oracle_extrema_positions(x, "valley")

    def test_constant_series_has_no_anomalies(self):
        assert tools.get_features(make_series([5.0] * 30), "anomaly") == []

    def test_single_spike_is_anomalous(self):
        x = [0.0] * 40
        x[20] = 50.0
        events = tools.get_features(make_series(x), "anomaly")
        assert any(e.position == 20 for e in events)

    def test_ramp_yields_single_positive_trend(self):
        x = [float(i) for i in range(30)]
        events = tools.get_features(make_series(x), "trend")
        assert len(events) == 1
        ev = events[0]
        assert ev.span == (0, 29)
        assert ev.magnitude == pytest.approx(oracle_ls_slope(x, 0, 29))
        assert ev.magnitude > 0

    def test_piecewise_series_splits(self):
        x = [float(i) for i in range(20)] + [20.0 - float(i) for i in range(20)]
        events = tools.get_features(make_series(x), "trend")
        assert len(events) >= 2
        assert events[0].magnitude > 0
        assert events[-1].magnitude < 0

    def test_unknown_kind_enumerates_options(self):
        with pytest.raises(ToolError, match="peak, valley, trend, anomaly"):
            tools.get_features(make_series([1.0, 2.0]), "wiggles")

    def test_kind_is_case_insensitive(self):
        events = tools.get_features(make_series([0.0, 1.0, 0.0]), "PEAKS")
        assert [e.position for e in events] == [1]


# --- Spectral view ----------------------------------------------------------------------

class TestSpectral:
    def test_bin_aligned_sinusoid_dominant_frequency(self):
        series = make_series(sinusoid(8, 64))
        summary = tools.get_frequency_features(series)
        top = summary.channels[0].peaks[0]
        assert top.frequency == 8 / 64
        assert top.period == 8

    def test_constant_series_has_no_peaks(self):
        summary = tools.get_frequency_features(make_series([3.0] * 32))
        assert summary.channels[0].peaks == ()

    def test_two_sinusoids_ranked_by_power(self):
        t = 64
        strong = sinusoid(4, t, amplitude=2.0)
        weak = sinusoid(13, t, amplitude=1.0)
        series = make_series([a + b for a, b in zip(strong, weak)])
        peaks = tools.get_frequency_features(series).channels[0].peaks
        assert peaks[0].frequency == 4 / 64
        assert peaks[1].frequency == 13 / 64
        # direct DFT oracle: power ratio of the two bins is amplitude² ratio
        x = [a + b for a, b in zip(strong, weak)]
        assert peaks[0].power == pytest.approx(oracle_dft_power(x, 4), rel=1e-9)
        assert peaks[1].power == pytest.approx(oracle_dft_power(x, 13), rel=1e-9)
        assert peaks[0].power > peaks[1].power

    def test_too_short_series_message(self):
        with pytest.raises(ToolError, match="too short for spectral analysis"):
            tools.get_frequency_features(make_series([1.0] * 7))

    def test_all_missing_channel_gets_error_entry(self):
        series = make_series([None] * 16, sinusoid(2, 16))
        summary = tools.get_frequency_features(series)
        assert summary.channels[0].error == "all values missing"
        assert summary.channels[1].error is None

    def test_frequencies_in_half_open_interval(self):
        rng = random.Random(5)
        series = make_series([rng.uniform(-1, 1) for _ in range(33)])
        for peak in tools.get_frequency_features(series).channels[0].peaks:
            assert 0.0 < peak.frequency <= 0.5
            assert peak.period == round(1.0 / peak.frequency)


# --- Indicators ----------------------------------------------------------------------------

class TestIndicators:
    def test_macd_constant_series_is_zero(self):
        table = tools.get_indicator(make_series([7.0] * 40), "MACD")
        for col in ("macd", "signal", "histogram"):
            defined = [v for v in table.columns[col] if v is not None]
            assert defined
            assert all(v == 0.0 for v in defined)

    def test_bollinger_constant_series_zero_spread(self):
        table = tools.get_indicator(make_series([7.0] * 40), "BOLLINGER")
        for i, mid in enumerate(table.columns["middle"]):
            if mid is not None:
                assert table.columns["upper"][i] == mid
                assert table.columns["lower"][i] == mid
                assert mid == 7.0

    def test_macd_ramp_positive_and_converging(self):
        x = [float(i) for i in range(120)]
        table = tools.get_indicator(make_series(x), "MACD")
        macd = [v for v in table.columns["macd"] if v is not None]
        assert all(v > 0 for v in macd)
        # converging: late deltas shrink
        deltas = [abs(macd[i + 1] - macd[i]) for i in range(len(macd) - 1)]
        assert deltas[-1] < deltas[0]
        # EMA-recurrence oracle
        fast = oracle_ema(x, 12)
        slow = oracle_ema(x, 26)
        expected = fast[-1] - slow[-1]
        assert macd[-1] == pytest.approx(expected, rel=1e-9)

    def test_macd_warmup_region_unavailable(self):
        table = tools.get_indicator(make_series([float(i) for i in range(40)]), "MACD")
        assert all(v is None for v in table.columns["macd"][:25])
        assert table.columns["macd"][25] is not None

    def test_unknown_indicator_enumerates(self):
        with pytest.raises(ToolError, match="MACD, BOLLINGER"):
            tools.get_indicator(make_series([1.0] * 40), "RSI")

    def test_too_short_series_explains(self):
        with pytest.raises(ToolError, match="need 26 samples"):
            tools.get_indicator(make_series([1.0] * 10), "MACD")


# --- Toolkit dispatch -----------------------------------------------------------------------

class TestToolkit:
    def test_toolkit_exposes_full_lookup_set(self):
        kit = tools.series_toolkit(make_series([1.0] * 30))
        names = [spec.name for spec in kit]
        assert names == [
            "get_info",
            "get_values",
            "get_around",
            "get_features",
            "get_frequency_features",
            "get_channel_values",
            "get_all_channels",
            "get_indicator",
        ]

    def test_dispatch_is_deterministic(self):
        kit = {s.name: s for s in tools.series_toolkit(make_series(sinusoid(3, 32)))}
        first = kit["get_frequency_features"].handler({})
        second = kit["get_frequency_features"].handler({})
        assert first == second

    def test_around_dispatch_defaults_window_to_five(self):
        series = make_series([float(i) for i in range(30)])
        kit = {s.name: s for s in tools.series_toolkit(series)}
        text = kit["get_around"].handler({"center": 15})
        assert "values[10..20]" in text

    def test_result_text_is_bounded(self):
        series = make_series([float(i) for i in range(1500)])
        kit = {s.name: s for s in tools.series_toolkit(series)}
        text = kit["get_values"].handler({"start": 0, "end": 1499})
        assert len(text) <= tools.MAX_TOOL_TEXT + 100
        assert "elided" in text
