"""Tests for the dependency-free SVG charts.

The charts are plain text, so the tests read the written files and
assert on structural markers: paths split at NaN runs, ribbon polygons,
legend entries, and byte-level determinism.
"""

import numpy as np
import pytest

from sapflow.plots import report_chart, svg_line_chart, wateruse_chart
from sapflow.series import DailySeries, TimeSeries


@pytest.fixture()
def xy():
    x = np.arange(30, dtype=float)
    y = np.sin(x / 5.0) + 1.5
    return x, y


class TestSvgLineChart:
    def test_writes_wellformed_svg(self, tmp_path, xy):
        x, y = xy
        path = tmp_path / "c.svg"
        svg_line_chart(path, x, {"flux": y}, title="demo", xlabel="t", ylabel="v")
        text = path.read_text()
        assert text.startswith("<svg")
        assert text.rstrip().endswith("</svg>")
        assert "demo" in text
        assert ">flux<" in text  # legend entry
        assert ">t<" in text and ">v<" in text

    def test_deterministic_bytes(self, tmp_path, xy):
        x, y = xy
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        svg_line_chart(a, x, {"s": y})
        svg_line_chart(b, x, {"s": y})
        assert a.read_bytes() == b.read_bytes()

    def test_nan_splits_the_line(self, tmp_path, xy):
        x, y = xy
        y = y.copy()
        y[10:13] = np.nan
        path = tmp_path / "gap.svg"
        svg_line_chart(path, x, {"s": y})
        text = path.read_text()
        assert text.count('<path d="M') == 2

    def test_ribbon_polygon(self, tmp_path, xy):
        x, y = xy
        path = tmp_path / "r.svg"
        svg_line_chart(path, x, {"s": y}, ribbon=(y - 0.5, y + 0.5))
        assert 'fill-opacity="0.15"' in path.read_text()
        bare = tmp_path / "b.svg"
        svg_line_chart(bare, x, {"s": y})
        assert "polygon" not in bare.read_text()

    def test_two_series_get_two_colors(self, tmp_path, xy):
        x, y = xy
        path = tmp_path / "two.svg"
        svg_line_chart(path, x, {"a": y, "b": y + 1.0})
        text = path.read_text()
        strokes = {
            part.split('"')[0]
            for part in text.split('stroke="')[1:]
            if part.startswith("#")
        }
        assert len(strokes) >= 2


class TestReportCharts:
    def test_report_chart(self, tmp_path, tiny_report):
        path = tmp_path / "report.svg"
        report_chart(tiny_report, path)
        text = path.read_text()
        assert "Standard-tree sap flux forecast" in text
        assert ">predicted<" in text
        assert 'fill-opacity="0.15"' in text  # interval ribbon

    def test_report_chart_with_observed(self, tmp_path, tiny_report):
        obs = TimeSeries(
            tiny_report.prediction.start,
            tiny_report.prediction.values + 0.1,
            tiny_report.prediction.step_hours,
        )
        path = tmp_path / "report.svg"
        report_chart(tiny_report, path, observed=obs)
        assert ">observed<" in path.read_text()

    def test_wateruse_chart(self, tmp_path, tiny_report):
        path = tmp_path / "wu.svg"
        wateruse_chart(tiny_report, path)
        text = path.read_text()
        assert "Daily group water-use forecast" in text
        assert ">liters<" in text

    def test_wateruse_chart_with_observed(self, tmp_path, tiny_report):
        wu = tiny_report.water_use.liters
        obs = DailySeries(wu.start_day, wu.values * 1.1)
        path = tmp_path / "wu.svg"
        wateruse_chart(tiny_report, path, observed=obs)
        assert ">observed<" in path.read_text()
