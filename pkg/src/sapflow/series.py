"""Evenly sampled time series containers and alignment operations.

All series live on a fixed UTC grid: a start timestamp, a step that divides
24 hours exactly, and a value array where ``NaN`` marks a missing
observation.  Missing data stays explicit; nothing here imputes.  Rows are
only ever dropped at model-fitting time, and day level summaries ignore the
missing hours within each day.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone

import numpy as np

from .errors import (
    DegenerateVariance,
    EmptyOverlap,
    InsufficientData,
    LagTooLarge,
    MixedStep,
    NonPositiveScale,
)

__all__ = [
    "TimeSeries",
    "DailySeries",
    "AlignedFrame",
    "align",
    "daily_aggregate",
    "lag",
    "cross_correlation",
    "quantile_normalize",
    "quantile_type7",
]

UTC = timezone.utc

_DAILY_STATS = ("max", "min", "mean", "sum")


def _check_grid(start: datetime, step_hours: float) -> None:
    if start.tzinfo is None or start.utcoffset() != timedelta(0):
        raise ValueError("series start must be timezone-aware UTC")
    if step_hours <= 0:
        raise ValueError("step must be positive")
    per_day = 24.0 / step_hours
    if abs(per_day - round(per_day)) > 1e-9:
        raise ValueError(f"step of {step_hours} h does not divide 24 h")
    midnight = start.replace(hour=0, minute=0, second=0, microsecond=0)
    offset_h = (start - midnight).total_seconds() / 3600.0
    if abs(offset_h / step_hours - round(offset_h / step_hours)) > 1e-9:
        raise ValueError("series start is not aligned to the step grid")


@dataclass(frozen=True)
class TimeSeries:
    """One evenly sampled channel.  ``values`` uses NaN for missing."""

    start: datetime
    values: np.ndarray
    step_hours: float = 1.0
    unit: str = ""

    def __post_init__(self) -> None:
        _check_grid(self.start, self.step_hours)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("values must be one-dimensional")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def end(self) -> datetime:
        """First timestamp after the series (exclusive end)."""
        return self.start + timedelta(hours=self.step_hours * len(self))

    @property
    def per_day(self) -> int:
        return round(24.0 / self.step_hours)

    def timestamps(self) -> list[datetime]:
        step = timedelta(hours=self.step_hours)
        return [self.start + k * step for k in range(len(self))]

    def timestamp_at(self, k: int) -> datetime:
        return self.start + timedelta(hours=self.step_hours * k)

    def index_of(self, ts: datetime) -> int:
        """Grid index of ``ts``; raises if off the grid or out of range."""
        delta = (ts - self.start).total_seconds() / 3600.0
        k = delta / self.step_hours
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"{ts.isoformat()} is not on the series grid")
        k = round(k)
        if not 0 <= k < len(self):
            raise ValueError(f"{ts.isoformat()} is outside the series span")
        return k

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def with_values(self, values: np.ndarray) -> "TimeSeries":
        return TimeSeries(self.start, values, self.step_hours, self.unit)


@dataclass(frozen=True)
class DailySeries:
    """One value per calendar day, starting at ``start_day``."""

    start_day: date
    values: np.ndarray
    unit: str = ""

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float).copy()
        if vals.ndim != 1:
            raise ValueError("values must be one-dimensional")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.shape[0]

    def dates(self) -> list[date]:
        return [self.start_day + timedelta(days=k) for k in range(len(self))]

    def value_on(self, day: date) -> float:
        k = (day - self.start_day).days
        if not 0 <= k < len(self):
            raise ValueError(f"{day.isoformat()} outside daily series span")
        return float(self.values[k])


@dataclass
class AlignedFrame:
    """Several channels on one shared grid plus day-level covariates.

    ``columns`` maps channel name to its value array (all the same length,
    NaN for missing).  ``daily`` maps covariate name to one value per
    calendar day touched by the index.  Rows with a missing value in any
    column are flagged through :meth:`complete_rows`, never dropped here.
    """

    start: datetime
    step_hours: float
    columns: dict[str, np.ndarray]
    daily: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _check_grid(self.start, self.step_hours)
        lengths = {name: len(v) for name, v in self.columns.items()}
        if len(set(lengths.values())) > 1:
            raise ValueError(f"column lengths differ: {lengths}")
        self.columns = {
            name: np.asarray(v, dtype=float) for name, v in self.columns.items()
        }
        for name, v in self.daily.items():
            v = np.asarray(v, dtype=float)
            if len(v) != self.n_days:
                raise ValueError(
                    f"daily covariate {name!r} has {len(v)} values, "
                    f"frame covers {self.n_days} days"
                )
            self.daily[name] = v

    @property
    def n(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    @property
    def end(self) -> datetime:
        return self.start + timedelta(hours=self.step_hours * self.n)

    @property
    def per_day(self) -> int:
        return round(24.0 / self.step_hours)

    @property
    def first_day(self) -> date:
        return self.start.date()

    @property
    def n_days(self) -> int:
        """Number of calendar days touched by the index."""
        if self.n == 0:
            return 0
        last = self.start + timedelta(hours=self.step_hours * (self.n - 1))
        return (last.date() - self.start.date()).days + 1

    def day_dates(self) -> list[date]:
        return [self.first_day + timedelta(days=k) for k in range(self.n_days)]

    def day_index(self) -> np.ndarray:
        """For each row, the ordinal of its calendar day within the frame."""
        midnight = self.start.replace(hour=0, minute=0, second=0, microsecond=0)
        offset = (self.start - midnight).total_seconds() / 3600.0
        hours = offset + np.arange(self.n) * self.step_hours
        return (hours // 24.0).astype(int)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def series(self, name: str, unit: str = "") -> TimeSeries:
        return TimeSeries(self.start, self.columns[name], self.step_hours, unit)

    def complete_rows(self) -> np.ndarray:
        """Boolean mask of rows where no hourly column is missing."""
        mask = np.ones(self.n, dtype=bool)
        for v in self.columns.values():
            mask &= ~np.isnan(v)
        return mask

    def add_daily(self, name: str, values: np.ndarray | DailySeries) -> None:
        if isinstance(values, DailySeries):
            if values.start_day != self.first_day or len(values) != self.n_days:
                raise ValueError(f"daily series {name!r} does not match frame days")
            values = values.values
        values = np.asarray(values, dtype=float)
        if len(values) != self.n_days:
            raise ValueError(
                f"daily covariate {name!r} needs {self.n_days} values, got {len(values)}"
            )
        self.daily[name] = values

    def daily_at_rows(self, name: str) -> np.ndarray:
        """Broadcast a daily covariate onto the hourly rows."""
        return self.daily[name][self.day_index()]

    def day_row_range(self, day_lo: int, day_hi: int) -> tuple[int, int]:
        """Row slice [lo, hi) covering frame-day ordinals [day_lo, day_hi).

        Only meaningful for frames starting at midnight.
        """
        per = self.per_day
        return day_lo * per, min(day_hi * per, self.n)

    def subframe(self, row_lo: int, row_hi: int) -> "AlignedFrame":
        start = self.start + timedelta(hours=self.step_hours * row_lo)
        cols = {k: v[row_lo:row_hi] for k, v in self.columns.items()}
        sub = AlignedFrame(start, self.step_hours, cols)
        d_lo = (start.date() - self.first_day).days
        for name, v in self.daily.items():
            sub.add_daily(name, v[d_lo : d_lo + sub.n_days])
        return sub

    def starts_at_midnight(self) -> bool:
        return self.start.hour == 0 and self.start.minute == 0 and self.start.second == 0

    def trim_to_full_days(self) -> "AlignedFrame":
        """Drop partial days at either edge so the frame is whole days."""
        per = self.per_day
        midnight = self.start.replace(hour=0, minute=0, second=0, microsecond=0)
        lead = 0
        if self.start != midnight:
            lead = round(
                (midnight + timedelta(days=1) - self.start).total_seconds()
                / 3600.0
                / self.step_hours
            )
        usable = self.n - lead
        if usable < per:
            raise ValueError("frame does not cover a single full day")
        return self.subframe(lead, lead + (usable // per) * per)


def align(inputs: dict[str, TimeSeries]) -> AlignedFrame:
    """Intersect the spans of named series on a shared grid.

    All inputs must use the same step.  The result covers the overlap of
    the spans; rows where some channel is missing stay in the frame and are
    reported by :meth:`AlignedFrame.complete_rows`.
    """
    if not inputs:
        raise ValueError("align needs at least one series")
    steps = {s.step_hours for s in inputs.values()}
    if len(steps) > 1:
        raise MixedStep(f"cannot align series with steps {sorted(steps)} h")
    step = steps.pop()
    start = max(s.start for s in inputs.values())
    end = min(s.end for s in inputs.values())
    if end <= start:
        raise EmptyOverlap("series spans do not overlap")
    n = round((end - start).total_seconds() / 3600.0 / step)
    cols = {}
    for name, s in inputs.items():
        lo = s.index_of(start)
        cols[name] = s.values[lo : lo + n].copy()
    return AlignedFrame(start, step, cols)


def daily_aggregate(series: TimeSeries, stat: str) -> DailySeries:
    """Summarize a series by calendar day, skipping missing hours.

    ``stat`` is one of ``max``, ``min``, ``mean``, ``sum``.  A day with no
    observed value at all yields NaN.
    """
    if stat not in _DAILY_STATS:
        raise ValueError(f"stat must be one of {_DAILY_STATS}, got {stat!r}")
    midnight = series.start.replace(hour=0, minute=0, second=0, microsecond=0)
    offset = (series.start - midnight).total_seconds() / 3600.0
    day_idx = ((offset + np.arange(len(series)) * series.step_hours) // 24.0).astype(int)
    n_days = int(day_idx[-1]) + 1 if len(series) else 0
    out = np.full(n_days, np.nan)
    fn = {"max": np.nanmax, "min": np.nanmin, "mean": np.nanmean, "sum": np.nansum}[stat]
    for d in range(n_days):
        chunk = series.values[day_idx == d]
        if np.all(np.isnan(chunk)):
            continue
        out[d] = fn(chunk)
    return DailySeries(series.start.date(), out, series.unit)


def lag(series: TimeSeries, k: int) -> TimeSeries:
    """Shift a series forward by ``k`` steps; the first ``k`` slots are missing."""
    if k < 0:
        raise ValueError("lag must be non-negative")
    if k >= len(series):
        raise LagTooLarge(f"lag {k} >= series length {len(series)}")
    out = np.full(len(series), np.nan)
    if k == 0:
        out[:] = series.values
    else:
        out[k:] = series.values[:-k]
    return series.with_values(out)


def cross_correlation(
    x: TimeSeries, y: TimeSeries, max_lag: int
) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation of ``(x[t + tau], y[t])`` for ``tau`` in
    ``-max_lag .. +max_lag``.

    Series are aligned on their overlap first.  Pairs with either value
    missing are skipped.  Returns ``(taus, correlations)``.

    Raises
    ------
    DegenerateVariance
        If either slice is constant at some lag.
    InsufficientData
        If fewer than ``3 * max_lag`` complete pairs are available.
    """
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    frame = align({"x": x, "y": y})
    xv, yv = frame.columns["x"], frame.columns["y"]
    n = len(xv)
    both = ~np.isnan(xv) & ~np.isnan(yv)
    if both.sum() < max(3 * max_lag, 3):
        raise InsufficientData(
            f"need at least {max(3 * max_lag, 3)} complete pairs, have {int(both.sum())}"
        )
    taus = np.arange(-max_lag, max_lag + 1)
    out = np.empty(len(taus))
    for i, tau in enumerate(taus):
        if tau >= 0:
            a, b = xv[tau:], yv[: n - tau]
        else:
            a, b = xv[: n + tau], yv[-tau:]
        ok = ~np.isnan(a) & ~np.isnan(b)
        a, b = a[ok], b[ok]
        if len(a) < 2:
            raise InsufficientData(f"no complete pairs at lag {tau}")
        sa, sb = a.std(), b.std()
        if sa <= 0 or sb <= 0:
            raise DegenerateVariance(f"constant slice at lag {tau}")
        out[i] = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
    return taus, out


def quantile_type7(values: np.ndarray, q: float) -> float:
    """Linear-interpolation sample quantile (the numpy/R default)."""
    return float(np.quantile(np.asarray(values, dtype=float), q))


def quantile_normalize(series: TimeSeries, q: float = 0.95) -> tuple[TimeSeries, float]:
    """Divide a series by its ``q`` sample quantile.

    Returns the normalized series and the scale, so the transform can be
    undone or applied to a different season.  Needs at least 20 observed
    values; the scale must come out positive.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    vals = series.values[~series.missing_mask()]
    if len(vals) < 20:
        raise InsufficientData(f"need >= 20 observed values, have {len(vals)}")
    scale = quantile_type7(vals, q)
    if scale <= 0:
        raise NonPositiveScale(f"{q} quantile is {scale}; cannot normalize")
    return series.with_values(series.values / scale), scale
