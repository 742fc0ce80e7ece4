"""CSV and JSON codecs plus run manifests.

All writers are deterministic: floats are serialized with ``repr`` (the
shortest round-tripping form), missing values as empty fields, timestamps
as ISO-8601 with offset, and manifests carry no wall-clock state, so a
rerun from the same inputs produces byte-identical files.  Every writer
has a matching reader that reconstructs the in-memory value exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .rolling import RollingReport
from .series import AlignedFrame, DailySeries, TimeSeries
from .wateruse import TreeRecord

__all__ = [
    "write_frame_csv",
    "read_frame_csv",
    "write_series_csv",
    "read_series_csv",
    "write_trees_csv",
    "read_trees_csv",
    "write_report_csv",
    "read_report_csv",
    "write_wateruse_csv",
    "read_wateruse_csv",
    "write_weights_csv",
    "read_weights_csv",
    "write_daily_csv",
    "read_daily_csv",
    "sha256_file",
    "write_manifest",
    "read_manifest",
]

MANIFEST_SCHEMA_VERSION = 1


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _parse_float(text: str) -> float:
    return float("nan") if text == "" else float(text)


def _parse_ts(text: str) -> datetime:
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def _timestamps(start: datetime, n: int, step_hours: float) -> list[str]:
    return [(start + timedelta(hours=step_hours * k)).isoformat() for k in range(n)]


# ---------------------------------------------------------------------------
# frames and series


def write_frame_csv(frame: AlignedFrame, path: str | Path) -> None:
    """Hourly channels as ``timestamp,<col>,...`` (daily covariates are
    derived data and not stored)."""
    names = list(frame.columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp"] + names)
        stamps = _timestamps(frame.start, frame.n, frame.step_hours)
        cols = [frame.columns[name] for name in names]
        for i, ts in enumerate(stamps):
            w.writerow([ts] + [_fmt(c[i]) for c in cols])


def read_frame_csv(path: str | Path) -> AlignedFrame:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 3:
        raise ValueError(f"{path}: need a header and at least two rows")
    header = rows[0]
    if header[0] != "timestamp":
        raise ValueError(f"{path}: first column must be 'timestamp'")
    names = header[1:]
    t0 = _parse_ts(rows[1][0])
    t1 = _parse_ts(rows[2][0])
    step = (t1 - t0).total_seconds() / 3600.0
    data = {name: np.empty(len(rows) - 1) for name in names}
    for i, row in enumerate(rows[1:]):
        ts = _parse_ts(row[0])
        expect = t0 + (t1 - t0) * i
        if ts != expect:
            raise ValueError(f"{path} line {i + 2}: timestamp {ts} breaks the grid")
        for j, name in enumerate(names):
            data[name][i] = _parse_float(row[j + 1])
    return AlignedFrame(t0, step, data)


def write_series_csv(series: TimeSeries, path: str | Path, name: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", name])
        for ts, v in zip(
            _timestamps(series.start, len(series), series.step_hours), series.values
        ):
            w.writerow([ts, _fmt(v)])


def read_series_csv(path: str | Path, unit: str = "") -> TimeSeries:
    frame = read_frame_csv(path)
    name = next(iter(frame.columns))
    return TimeSeries(frame.start, frame.columns[name], frame.step_hours, unit)


# ---------------------------------------------------------------------------
# tree records


_TREE_FIELDS = [
    "tree_id",
    "species",
    "size_class",
    "circumference_cm",
    "bark_depth_cm",
    "r1_cm",
    "r2_cm",
    "count",
]


def write_trees_csv(trees: list[TreeRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_TREE_FIELDS)
        for t in trees:
            w.writerow(
                [
                    t.tree_id,
                    t.species,
                    t.size_class,
                    _fmt(t.circumference_cm),
                    _fmt(t.bark_depth_cm),
                    _fmt(t.r1_cm) if t.r1_cm is not None else "",
                    _fmt(t.r2_cm) if t.r2_cm is not None else "",
                    str(t.count),
                ]
            )


def read_trees_csv(path: str | Path) -> list[TreeRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != _TREE_FIELDS:
        raise ValueError(f"{path}: expected header {','.join(_TREE_FIELDS)}")
    trees = []
    for i, row in enumerate(rows[1:]):
        try:
            trees.append(
                TreeRecord(
                    tree_id=row[0],
                    species=row[1],
                    size_class=row[2],
                    circumference_cm=float(row[3]),
                    bark_depth_cm=float(row[4]),
                    r1_cm=float(row[5]) if row[5] else None,
                    r2_cm=float(row[6]) if row[6] else None,
                    count=int(row[7]),
                )
            )
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path} line {i + 2}: {exc}") from exc
    return trees


# ---------------------------------------------------------------------------
# report artifacts


def write_report_csv(report: RollingReport, path: str | Path) -> None:
    """Hourly forecast: timestamp, prediction, spread, lower, upper."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "prediction", "spread", "lower", "upper"])
        stamps = _timestamps(
            report.prediction.start, len(report.prediction), report.prediction.step_hours
        )
        for i, ts in enumerate(stamps):
            w.writerow(
                [
                    ts,
                    _fmt(report.prediction.values[i]),
                    _fmt(report.spread.values[i]),
                    _fmt(report.lower.values[i]),
                    _fmt(report.upper.values[i]),
                ]
            )


def read_report_csv(path: str | Path) -> dict[str, TimeSeries]:
    frame = read_frame_csv(path)
    return {
        name: TimeSeries(frame.start, frame.columns[name], frame.step_hours)
        for name in ("prediction", "spread", "lower", "upper")
    }


def write_wateruse_csv(
    report_or_daily,
    path: str | Path,
    observed: DailySeries | None = None,
) -> None:
    """Daily liters: date, predicted, sd, conservative sd, bounds, observed.

    Accepts a full report or a bare DailySeries (then only date and
    predicted_liters are written, e.g. for observed water-use exports).
    """
    if isinstance(report_or_daily, DailySeries):
        daily = report_or_daily
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "liters"])
            for d, v in zip(daily.dates(), daily.values):
                w.writerow([d.isoformat(), _fmt(v)])
        return
    report: RollingReport = report_or_daily
    wu = report.water_use.liters
    header = [
        "date",
        "predicted_liters",
        "sd_liters",
        "sd_liters_conservative",
        "lower",
        "upper",
    ]
    if observed is not None:
        header.append("observed_liters")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, d in enumerate(wu.dates()):
            row = [
                d.isoformat(),
                _fmt(wu.values[k]),
                _fmt(report.water_sd.values[k]),
                _fmt(report.water_sd_conservative.values[k]),
                _fmt(report.water_lower.values[k]),
                _fmt(report.water_upper.values[k]),
            ]
            if observed is not None:
                try:
                    row.append(_fmt(observed.value_on(d)))
                except ValueError:
                    row.append("")
            w.writerow(row)


def read_wateruse_csv(path: str | Path) -> dict[str, DailySeries]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not body:
        raise ValueError(f"{path}: empty table")
    start = date.fromisoformat(body[0][0])
    out = {}
    for j, name in enumerate(header[1:], start=1):
        out[name] = DailySeries(start, np.array([_parse_float(r[j]) for r in body]))
    return out


def write_daily_csv(daily: DailySeries, path: str | Path, name: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", name])
        for d, v in zip(daily.dates(), daily.values):
            w.writerow([d.isoformat(), _fmt(v)])


def read_daily_csv(path: str | Path) -> DailySeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    start = date.fromisoformat(body[0][0])
    return DailySeries(start, np.array([_parse_float(r[1]) for r in body]))


def write_weights_csv(report: RollingReport, path: str | Path) -> None:
    """Per-window member weights: window_start_day, member_id, weight."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start_day", "member_id", "weight"])
        for rec in report.windows:
            for mid in report.member_ids:
                w.writerow([str(rec.start_day), mid, _fmt(rec.weights[mid])])


def read_weights_csv(path: str | Path) -> list[tuple[int, str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [(int(r[0]), r[1], _parse_float(r[2])) for r in rows[1:]]


# ---------------------------------------------------------------------------
# manifests


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(
    path: str | Path,
    subcommand: str,
    config: dict,
    inputs: dict[str, str | Path],
    outputs: dict[str, str | Path],
    version: str,
    notes: dict | None = None,
) -> None:
    """Run manifest: config echo plus digests of inputs and outputs.

    Contains no clock state, so reruns with identical inputs and config
    write identical manifests; the digests chain pipeline stages together.
    ``notes`` carries run facts worth keeping next to the digests, e.g.
    partial days dropped from daily totals or a derived flux scale.
    """
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "tool": "sapflow",
        "version": version,
        "subcommand": subcommand,
        "config": config,
        "inputs": {name: sha256_file(p) for name, p in sorted(inputs.items())},
        "outputs": {name: sha256_file(p) for name, p in sorted(outputs.items())},
    }
    if notes:
        doc["notes"] = notes
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_manifest(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)
