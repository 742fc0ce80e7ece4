"""Tests for the CSV and JSON codecs and the run manifest.

Every writer must be byte-deterministic and every reader must rebuild
the in-memory value exactly, including NaN holes, because downstream
reruns are compared by file hash.
"""

import json
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from sapflow.io import (
    read_daily_csv,
    read_frame_csv,
    read_manifest,
    read_report_csv,
    read_series_csv,
    read_trees_csv,
    read_wateruse_csv,
    read_weights_csv,
    sha256_file,
    write_daily_csv,
    write_frame_csv,
    write_manifest,
    write_report_csv,
    write_series_csv,
    write_trees_csv,
    write_wateruse_csv,
    write_weights_csv,
)
from sapflow.series import AlignedFrame, DailySeries, TimeSeries
from sapflow.wateruse import TreeRecord

T0 = datetime(2023, 6, 1, tzinfo=timezone.utc)


@pytest.fixture()
def frame():
    rng = np.random.default_rng(3)
    temp = rng.normal(20.0, 3.0, 48)
    flux = np.abs(rng.normal(2.0, 0.5, 48))
    flux[7] = np.nan
    return AlignedFrame(T0, 1.0, {"temperature": temp, "alder": flux})


class TestFrameCsv:
    def test_round_trip_exact(self, tmp_path, frame):
        path = tmp_path / "frame.csv"
        write_frame_csv(frame, path)
        back = read_frame_csv(path)
        assert back.start == frame.start
        assert back.step_hours == frame.step_hours
        assert list(back.columns) == list(frame.columns)
        for name in frame.columns:
            assert_array_equal(back.columns[name], frame.columns[name])

    def test_write_is_deterministic(self, tmp_path, frame):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_frame_csv(frame, a)
        write_frame_csv(frame, b)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_values_become_empty_fields(self, tmp_path, frame):
        path = tmp_path / "frame.csv"
        write_frame_csv(frame, path)
        row = path.read_text().splitlines()[8]  # NaN planted at index 7
        assert row.endswith(",")

    def test_too_short(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("timestamp,a\n2023-06-01T00:00:00+00:00,1.0\n")
        with pytest.raises(ValueError, match="at least two rows"):
            read_frame_csv(path)

    def test_header_must_lead_with_timestamp(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,a\n1,2\n3,4\n")
        with pytest.raises(ValueError, match="timestamp"):
            read_frame_csv(path)

    def test_grid_break_names_the_line(self, tmp_path, frame):
        path = tmp_path / "frame.csv"
        write_frame_csv(frame, path)
        lines = path.read_text().splitlines()
        fields = lines[5].split(",")
        fields[0] = (T0 + timedelta(hours=4, minutes=30)).isoformat()
        lines[5] = ",".join(fields)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="line 6.*breaks the grid"):
            read_frame_csv(path)

    def test_naive_timestamps_read_as_utc(self, tmp_path):
        path = tmp_path / "naive.csv"
        path.write_text(
            "timestamp,a\n2023-06-01T00:00:00,1.0\n2023-06-01T01:00:00,2.0\n"
        )
        back = read_frame_csv(path)
        assert back.start == T0


class TestSeriesCsv:
    def test_round_trip_with_unit(self, tmp_path):
        s = TimeSeries(T0, np.array([1.5, np.nan, 2.25]), 1.0)
        path = tmp_path / "s.csv"
        write_series_csv(s, path, name="flux")
        assert path.read_text().splitlines()[0] == "timestamp,flux"
        back = read_series_csv(path, unit="cm3/cm2/h")
        assert back.unit == "cm3/cm2/h"
        assert_array_equal(back.values, s.values)


class TestTreesCsv:
    def test_round_trip(self, tmp_path):
        trees = [
            TreeRecord(
                tree_id="alder",
                circumference_cm=70.0,
                bark_depth_cm=1.0,
                species="Alnus",
                size_class="large",
                count=3,
            ),
            TreeRecord(
                tree_id="birch",
                circumference_cm=66.5,
                bark_depth_cm=0.8,
                r1_cm=2.0,
                r2_cm=5.0,
            ),
        ]
        path = tmp_path / "trees.csv"
        write_trees_csv(trees, path)
        assert read_trees_csv(path) == trees

    def test_header_checked(self, tmp_path):
        path = tmp_path / "trees.csv"
        path.write_text("id,count\nx,1\n")
        with pytest.raises(ValueError, match="expected header"):
            read_trees_csv(path)

    def test_bad_row_names_the_line(self, tmp_path):
        trees = [TreeRecord(tree_id="a", circumference_cm=70.0, bark_depth_cm=1.0)]
        path = tmp_path / "trees.csv"
        write_trees_csv(trees, path)
        lines = path.read_text().splitlines()
        lines.append("b,,,oops,1.0,,,1")
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="line 3"):
            read_trees_csv(path)


class TestReportCsv:
    def test_round_trip(self, tmp_path, tiny_report):
        report = tiny_report
        path = tmp_path / "report.csv"
        write_report_csv(report, path)
        back = read_report_csv(path)
        assert set(back) == {"prediction", "spread", "lower", "upper"}
        assert back["prediction"].start == report.prediction.start
        assert_array_equal(back["prediction"].values, report.prediction.values)
        assert_array_equal(back["upper"].values, report.upper.values)

    def test_weights_round_trip(self, tmp_path, tiny_report):
        report = tiny_report
        path = tmp_path / "weights.csv"
        write_weights_csv(report, path)
        rows = read_weights_csv(path)
        assert rows == [
            (0, "alder|daily_max_temp", 0.75),
            (0, "alder|daily_min_humidity", 0.25),
        ]


class TestWateruseCsv:
    def test_report_round_trip(self, tmp_path, tiny_report):
        report = tiny_report
        path = tmp_path / "wu.csv"
        write_wateruse_csv(report, path)
        back = read_wateruse_csv(path)
        assert_array_equal(
            back["predicted_liters"].values, report.water_use.liters.values
        )
        assert_array_equal(back["sd_liters"].values, report.water_sd.values)
        assert back["lower"].start_day == report.water_use.liters.start_day

    def test_observed_column_with_hole(self, tmp_path, tiny_report):
        report = tiny_report
        # observed covers only the first report day; the second is blank
        observed = DailySeries(report.water_use.liters.start_day, np.array([9.5]))
        path = tmp_path / "wu.csv"
        write_wateruse_csv(report, path, observed=observed)
        back = read_wateruse_csv(path)
        assert back["observed_liters"].values[0] == 9.5
        assert np.isnan(back["observed_liters"].values[1])

    def test_bare_daily_series(self, tmp_path):
        daily = DailySeries(date(2023, 6, 1), np.array([4.5, np.nan, 6.0]))
        path = tmp_path / "observed.csv"
        write_wateruse_csv(daily, path)
        assert path.read_text().splitlines()[0] == "date,liters"
        back = read_wateruse_csv(path)
        assert_array_equal(back["liters"].values, daily.values)

    def test_empty_table(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("date,liters\n")
        with pytest.raises(ValueError, match="empty table"):
            read_wateruse_csv(path)


class TestDailyCsv:
    def test_round_trip(self, tmp_path):
        daily = DailySeries(date(2023, 7, 4), np.array([1.0, np.nan, 0.125]))
        path = tmp_path / "d.csv"
        write_daily_csv(daily, path, name="liters")
        back = read_daily_csv(path)
        assert back.start_day == daily.start_day
        assert_array_equal(back.values, daily.values)


class TestManifest:
    def test_digests_and_structure(self, tmp_path):
        inp = tmp_path / "in.csv"
        out = tmp_path / "out.csv"
        inp.write_text("abc")
        out.write_text("xyz")
        man = tmp_path / "manifest.json"
        write_manifest(
            man,
            "simulate",
            {"days": 3, "seed": 7},
            {"frame": inp},
            {"report": out},
            version="1.2.3",
            notes={"scale_used": 2.0},
        )
        doc = read_manifest(man)
        assert doc["schema_version"] == 1
        assert doc["tool"] == "sapflow"
        assert doc["version"] == "1.2.3"
        assert doc["subcommand"] == "simulate"
        assert doc["config"] == {"days": 3, "seed": 7}
        assert doc["inputs"] == {"frame": sha256_file(inp)}
        assert doc["outputs"] == {"report": sha256_file(out)}
        assert doc["notes"] == {"scale_used": 2.0}

    def test_no_notes_key_when_empty(self, tmp_path):
        f = tmp_path / "f"
        f.write_text("data")
        man = tmp_path / "m.json"
        write_manifest(man, "fit", {}, {}, {"models": f}, version="0")
        assert "notes" not in read_manifest(man)

    def test_rerun_writes_identical_bytes(self, tmp_path):
        # no clock state may leak in: rewriting the same inputs later must
        # give a byte-identical manifest
        f = tmp_path / "f"
        f.write_text("payload")
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        cfg = {"z": 1, "a": [1, 2]}
        write_manifest(a, "roll", cfg, {"frame": f}, {}, version="9")
        f.write_text("payload")  # touch mtime without changing content
        write_manifest(b, "roll", cfg, {"frame": f}, {}, version="9")
        assert a.read_bytes() == b.read_bytes()

    def test_known_digest(self, tmp_path):
        f = tmp_path / "abc.bin"
        f.write_bytes(b"abc")
        assert sha256_file(f) == (
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        )
