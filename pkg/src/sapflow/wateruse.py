"""Scaling sap flux density to daily tree and stand water use.

Flux is measured in cm^3 of water per cm^2 of sapwood per hour; multiplying
by a sapwood area (cm^2) and the sampling step (h) and summing over a day
gives cm^3 per day, reported in liters.  Sapwood area comes from stem
circumference minus bark, or from two sensor rings when a tree is
instrumented at two depths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .errors import BadRadii, BarkExceedsRadius, LengthMismatch, StepMismatch
from .series import DailySeries, TimeSeries

__all__ = [
    "TreeRecord",
    "WaterUse",
    "DailyErrorBands",
    "sapwood_area",
    "two_ring_areas",
    "water_use",
    "water_use_two_sensor",
    "water_use_averaged",
    "tree_water_use",
    "propagate_error",
    "AVERAGED_THRESHOLD_CM",
]

# Outer-ring radius above which a tree is integrated with the averaged
# inner/outer flux instead of the outer ring alone.
AVERAGED_THRESHOLD_CM = 3.5

CM3_PER_LITER = 1000.0


@dataclass(frozen=True)
class TreeRecord:
    """Geometry and bookkeeping for one monitored tree (or tree class)."""

    tree_id: str
    circumference_cm: float
    bark_depth_cm: float
    species: str = ""
    size_class: str = ""
    r1_cm: float | None = None
    r2_cm: float | None = None
    count: int = 1

    def sapwood_area_cm2(self) -> float:
        return sapwood_area(self.circumference_cm, self.bark_depth_cm)

    def has_two_sensors(self) -> bool:
        return self.r1_cm is not None and self.r2_cm is not None


def sapwood_area(circumference_cm: float, bark_depth_cm: float) -> float:
    """Cross-section area inside the bark: ``pi * (c / (2 pi) - d)^2``."""
    if circumference_cm <= 0:
        raise BarkExceedsRadius("circumference must be positive")
    radius = circumference_cm / (2.0 * math.pi)
    if bark_depth_cm < 0 or bark_depth_cm >= radius:
        raise BarkExceedsRadius(
            f"bark depth {bark_depth_cm} cm >= stem radius {radius:.3f} cm"
        )
    return math.pi * (radius - bark_depth_cm) ** 2


def two_ring_areas(r1_cm: float, r2_cm: float) -> tuple[float, float]:
    """Areas of the inner disc and the outer annulus for two sensor depths."""
    if not (0.0 < r1_cm < r2_cm):
        raise BadRadii(f"need 0 < r1 < r2, got r1={r1_cm}, r2={r2_cm}")
    inner = math.pi * r1_cm**2
    outer = math.pi * (r2_cm**2 - r1_cm**2)
    return inner, outer


@dataclass(frozen=True)
class WaterUse:
    """Daily water-use totals; days that are not fully observed are NaN."""

    liters: DailySeries
    cm3: np.ndarray
    partial_days: tuple[date, ...]
    area_cm2: float


def _daily_totals(flux_scaled: TimeSeries) -> WaterUse:
    """Sum an already area-and-step scaled series (cm^3 per sample) by day."""
    per = flux_scaled.per_day
    midnight = flux_scaled.start.replace(hour=0, minute=0, second=0, microsecond=0)
    offset = (flux_scaled.start - midnight).total_seconds() / 3600.0
    day_idx = (
        (offset + np.arange(len(flux_scaled)) * flux_scaled.step_hours) // 24.0
    ).astype(int)
    n_days = int(day_idx[-1]) + 1 if len(flux_scaled) else 0
    cm3 = np.full(n_days, np.nan)
    partial: list[date] = []
    for d in range(n_days):
        chunk = flux_scaled.values[day_idx == d]
        if len(chunk) < per or np.any(np.isnan(chunk)):
            partial.append(flux_scaled.start.date() + timedelta(days=d))
            continue
        cm3[d] = float(np.sum(chunk))
    liters = DailySeries(flux_scaled.start.date(), cm3 / CM3_PER_LITER, unit="L")
    return WaterUse(liters, cm3, tuple(partial), area_cm2=float("nan"))


def water_use(
    flux: TimeSeries, area_cm2: float, step_hours: float | None = None
) -> WaterUse:
    """Daily water use of one area from one flux series.

    Only fully observed days get a total; days with a missing hour or cut
    off at the span edges are flagged in ``partial_days``.
    """
    if area_cm2 <= 0:
        raise BadRadii("sapwood area must be positive")
    if step_hours is not None and abs(step_hours - flux.step_hours) > 1e-9:
        raise StepMismatch(
            f"stated step {step_hours} h != series step {flux.step_hours} h"
        )
    scaled = flux.with_values(flux.values * area_cm2 * flux.step_hours)
    result = _daily_totals(scaled)
    return WaterUse(result.liters, result.cm3, result.partial_days, float(area_cm2))


def water_use_two_sensor(
    inner_flux: TimeSeries,
    outer_flux: TimeSeries,
    r1_cm: float,
    r2_cm: float,
    step_hours: float | None = None,
) -> WaterUse:
    """Daily water use with separate inner-disc and outer-annulus fluxes."""
    a_inner, a_outer = two_ring_areas(r1_cm, r2_cm)
    _check_same_grid(inner_flux, outer_flux)
    if step_hours is not None and abs(step_hours - inner_flux.step_hours) > 1e-9:
        raise StepMismatch(
            f"stated step {step_hours} h != series step {inner_flux.step_hours} h"
        )
    combined = inner_flux.with_values(
        (a_inner * inner_flux.values + a_outer * outer_flux.values)
        * inner_flux.step_hours
    )
    result = _daily_totals(combined)
    return WaterUse(result.liters, result.cm3, result.partial_days, a_inner + a_outer)


def water_use_averaged(
    inner_flux: TimeSeries,
    outer_flux: TimeSeries,
    area_cm2: float,
    step_hours: float | None = None,
) -> WaterUse:
    """Daily water use of one area from the average of two ring fluxes."""
    _check_same_grid(inner_flux, outer_flux)
    avg = inner_flux.with_values(0.5 * (inner_flux.values + outer_flux.values))
    return water_use(avg, area_cm2, step_hours)


def tree_water_use(
    tree: TreeRecord,
    flux: TimeSeries | tuple[TimeSeries, TimeSeries],
    threshold_cm: float = AVERAGED_THRESHOLD_CM,
) -> WaterUse:
    """Water use of one tree, choosing the integration rule by its size.

    With one flux series the full sapwood area applies.  With a pair
    ``(inner, outer)``: a small tree (outer sensor radius at most
    ``threshold_cm``) uses the outer flux alone over the full area, a
    larger one uses the inner/outer average.
    """
    area = tree.sapwood_area_cm2()
    if isinstance(flux, TimeSeries):
        return water_use(flux, area)
    inner, outer = flux
    if tree.r2_cm is None:
        raise BadRadii(f"tree {tree.tree_id!r} has two flux series but no r2")
    if tree.r2_cm <= threshold_cm:
        return water_use(outer, area)
    return water_use_averaged(inner, outer, area)


def _check_same_grid(a: TimeSeries, b: TimeSeries) -> None:
    if a.start != b.start or len(a) != len(b) or a.step_hours != b.step_hours:
        raise LengthMismatch("inner and outer flux series are not on the same grid")


@dataclass(frozen=True)
class DailyErrorBands:
    """Daily water-use uncertainty from an hourly flux standard deviation."""

    sd_liters: DailySeries
    sd_liters_conservative: DailySeries


def propagate_error(area_cm2: float, flux_sd: TimeSeries) -> DailyErrorBands:
    """Turn an hourly flux standard-deviation series into daily totals.

    ``sd_liters`` treats hours as independent
    (``area * step * sqrt(sum sd^2)``); the conservative variant assumes
    perfectly correlated hours (``area * step * sum sd``) and is the upper
    envelope.  Days with missing values yield NaN.
    """
    if area_cm2 <= 0:
        raise BadRadii("sapwood area must be positive")
    per = flux_sd.per_day
    midnight = flux_sd.start.replace(hour=0, minute=0, second=0, microsecond=0)
    offset = (flux_sd.start - midnight).total_seconds() / 3600.0
    day_idx = (
        (offset + np.arange(len(flux_sd)) * flux_sd.step_hours) // 24.0
    ).astype(int)
    n_days = int(day_idx[-1]) + 1 if len(flux_sd) else 0
    indep = np.full(n_days, np.nan)
    conserv = np.full(n_days, np.nan)
    factor = area_cm2 * flux_sd.step_hours / CM3_PER_LITER
    for d in range(n_days):
        chunk = flux_sd.values[day_idx == d]
        if len(chunk) < per or np.any(np.isnan(chunk)):
            continue
        indep[d] = factor * float(np.sqrt(np.sum(chunk * chunk)))
        conserv[d] = factor * float(np.sum(chunk))
    day0 = flux_sd.start.date()
    return DailyErrorBands(
        DailySeries(day0, indep, unit="L"),
        DailySeries(day0, conserv, unit="L"),
    )
