"""Rolling ensemble forecasting of daily tree water-use.

The driver walks a season in fixed windows.  At each window start it
(re)fits one additive model per (tree, day-covariate choice) on all data
so far, scores every member on the trailing observed window to get
simplex weights and a spread-calibration factor, then rolls every member
forward through the window once per initialization tree, averages the
per-tree ensembles into a standard-tree flux forecast with calibrated
intervals, and converts flux to liters through the group sapwood area.

Two member-handling modes exist: ``refit`` (default) refits members each
window, warm-starting the smoothing-weight search from the previous
window; ``frozen_members`` fits once on the initial period and only the
weights move.  ``run_cross_season`` applies frozen members from one
season to a new season's weather, with forecasts initialized from
same-day-of-year historical observations and outputs rescaled by a known
season scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import timedelta

import numpy as np

from . import ensemble as _ens
from .errors import (
    InsufficientHistory,
    NoOverlap,
    SapflowError,
    ScaleMissing,
    ZeroSpread,
)
from .ensemble import WeightScheme
from .model import (
    FLEX_CHOICES,
    FittedModel,
    ModelSpec,
    ensure_daily_covariates,
    fit_additive_model,
    model_from_dict,
    rolling_predict,
)
from .series import AlignedFrame, DailySeries, TimeSeries, quantile_type7
from .wateruse import TreeRecord, WaterUse, propagate_error, water_use

__all__ = [
    "RollingConfig",
    "WindowRecord",
    "RollingReport",
    "Metrics",
    "run_rolling",
    "run_cross_season",
    "build_init_day_map",
    "evaluate",
]

log = logging.getLogger("sapflow.rolling")


@dataclass(frozen=True)
class RollingConfig:
    """Knobs of the rolling driver.

    ``initial_days`` is the warm-up period before the first forecast
    window; ``window_days`` the forecast horizon refreshed per window;
    ``weight_window_days`` how much trailing observed data scores the
    members.  ``model_types`` lists the day-level covariate choices, one
    model per choice per tree.
    """

    initial_days: int = 14
    window_days: int = 7
    weight_window_days: int = 14
    model_types: tuple[str, ...] = FLEX_CHOICES
    weight_scheme: WeightScheme = field(default_factory=WeightScheme)
    interval_level: float = 0.95
    mode: str = "refit"

    def __post_init__(self) -> None:
        if not self.initial_days >= self.weight_window_days >= 1:
            raise ValueError("need initial_days >= weight_window_days >= 1")
        if self.window_days < 1:
            raise ValueError("window_days must be >= 1")
        if not self.model_types:
            raise ValueError("need at least one model type")
        if self.mode not in ("refit", "frozen_members"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.interval_level < 1.0:
            raise ValueError("interval_level must be in (0, 1)")
        object.__setattr__(self, "model_types", tuple(self.model_types))

    @property
    def scoring_days(self) -> int:
        """Scoring window length; the weight scheme may override it."""
        return self.weight_scheme.window_days or self.weight_window_days


@dataclass
class WindowRecord:
    """What happened in one forecast window."""

    start_day: int
    end_day: int
    weights: dict[str, float]
    gamma: float
    spread_fallback: bool
    excluded: tuple[str, ...]
    init_trees: tuple[str, ...]
    per_init: dict[str, np.ndarray]
    clamp_count: int
    n_scoring_rows: int


@dataclass
class RollingReport:
    """Hourly forecasts plus their daily water-use aggregation."""

    config: RollingConfig
    windows: list[WindowRecord]
    member_ids: tuple[str, ...]
    prediction: TimeSeries
    spread: TimeSeries
    lower: TimeSeries
    upper: TimeSeries
    water_use: WaterUse
    water_sd: DailySeries
    water_sd_conservative: DailySeries
    water_lower: DailySeries
    water_upper: DailySeries
    total_area_cm2: float
    clamp_count: int
    scale: float = 1.0

    @property
    def eval_start_day(self) -> int:
        return self.windows[0].start_day if self.windows else 0


# ---------------------------------------------------------------------------
# seeding and per-window mechanics


def _seed_from_column(col: np.ndarray, row: int, lookback: int) -> float | None:
    """Latest finite observation at or before ``row``, searching back a bit."""
    lo = max(row - lookback + 1, 0)
    for r in range(row, lo - 1, -1):
        if np.isfinite(col[r]):
            return float(col[r])
    return None


def _observed_seeds(
    frame: AlignedFrame, tree_ids: list[str], row: int
) -> dict[str, float]:
    """Per-tree recursion seeds from the frame's own observations."""
    out: dict[str, float] = {}
    for tree in tree_ids:
        seed = _seed_from_column(frame.columns[tree], row, frame.per_day)
        if seed is None:
            log.warning("tree %s has no observation near row %d", tree, row)
        else:
            out[tree] = seed
    return out


def _historical_seeds(
    frame: AlignedFrame,
    tree_ids: list[str],
    row: int,
    init_day_map: dict[int, dict[str, float]],
) -> dict[str, float]:
    """Seeds from the same day-of-year of a historical season.

    ``row`` is the last grid row before the simulated span; the map entry
    for its calendar day supplies the values.  Trees (or whole days)
    absent from the map fall back to the new season's own observations.
    """
    day = row // frame.per_day
    doy = (frame.first_day + timedelta(days=day)).timetuple().tm_yday
    entry = init_day_map.get(doy, {})
    out: dict[str, float] = {}
    for tree in tree_ids:
        if tree in entry and np.isfinite(entry[tree]):
            out[tree] = float(entry[tree])
            continue
        seed = _seed_from_column(frame.columns[tree], row, frame.per_day)
        if seed is None:
            log.warning(
                "tree %s has neither a day-%d map entry nor observations", tree, doy
            )
        else:
            log.warning("tree %s missing from day-%d map; using observation", tree, doy)
            out[tree] = seed
    return out


def _score_members(
    fitted: dict[str, FittedModel],
    frame: AlignedFrame,
    seeds: dict[str, float],
    s0: int,
    r0: int,
) -> tuple[list[str], dict[str, np.ndarray]]:
    """Simulate every member over the scoring rows [s0, r0) per init tree.

    Returns the surviving member ids (members whose simulation failed are
    dropped) and per-init prediction stacks of shape (rows, members).
    """
    surviving = list(fitted)
    sims: dict[str, dict[str, np.ndarray]] = {tree: {} for tree in seeds}
    for tree, seed in seeds.items():
        for mid in list(surviving):
            try:
                pred, _ = rolling_predict(fitted[mid], frame, s0, r0 - s0, seed)
            except SapflowError as exc:
                log.warning("member %s excluded from scoring: %s", mid, exc)
                surviving.remove(mid)
                continue
            sims[tree][mid] = pred.values
    per_init = {
        tree: np.column_stack([sims[tree][mid] for mid in surviving])
        for tree in seeds
        if all(mid in sims[tree] for mid in surviving)
    }
    return surviving, per_init


def _gamma_with_fallback(
    weights: np.ndarray,
    stacked_preds: np.ndarray,
    stacked_obs: np.ndarray,
    stacked_spreads: np.ndarray,
    fitted: dict[str, FittedModel],
    member_order: list[str],
) -> tuple[float, bool, float]:
    """Spread calibration; degenerate ensembles fall back to model sigma.

    When every member agrees (spread identically zero, e.g. a single
    member), the spread carries no information, so the weighted
    model-implied residual SD stands in for it and gamma calibrates that
    instead.  Returns (gamma, fallback_used, fallback_sd).
    """
    try:
        return (
            _ens.gamma_scale(weights, stacked_preds, stacked_obs, stacked_spreads),
            False,
            0.0,
        )
    except ZeroSpread:
        sigma2 = sum(w * fitted[mid].sigma2 for w, mid in zip(weights, member_order))
        s_model = float(np.sqrt(max(sigma2, 0.0)))
        if s_model <= 0.0:
            return 0.0, True, 0.0
        flat = np.full(stacked_obs.shape, s_model)
        gamma = _ens.gamma_scale(weights, stacked_preds, stacked_obs, flat)
        return gamma, True, s_model


def _forecast_window(
    fitted: dict[str, FittedModel],
    member_order: list[str],
    frame: AlignedFrame,
    inits: list[str],
    r0: int,
    r1: int,
    seeds: dict[str, float],
) -> tuple[np.ndarray, int]:
    """Member forecast cube over [r0, r1): shape (rows, members, inits)."""
    t_len = r1 - r0
    cube = np.empty((t_len, len(member_order), len(inits)))
    clamps = 0
    for j, tree in enumerate(inits):
        for k, mid in enumerate(member_order):
            pred, c = rolling_predict(fitted[mid], frame, r0, t_len, seeds[tree])
            cube[:, k, j] = pred.values
            clamps += c
    return cube, clamps


def _one_window(
    fitted: dict[str, FittedModel],
    frame: AlignedFrame,
    config: RollingConfig,
    all_ids: list[str],
    t0: int,
    t1: int,
    score_seeds: dict[str, float],
    forecast_seeds: dict[str, float],
) -> tuple[WindowRecord, np.ndarray, np.ndarray, float]:
    """Weights, calibration, and forecast for one window."""
    per = frame.per_day
    r0, r1 = t0 * per, t1 * per
    s0 = max(r0 - config.scoring_days * per, 1)

    surviving, per_init_scores = _score_members(fitted, frame, score_seeds, s0, r0)
    if not surviving or not per_init_scores:
        raise InsufficientHistory(
            f"no members or init trees usable for scoring at day {t0}"
        )

    score_rows = np.arange(s0, r0)
    stacks_p, stacks_o = [], []
    for tree, mat in per_init_scores.items():
        obs = frame.columns[tree][score_rows]
        ok = np.isfinite(obs)
        stacks_p.append(mat[ok])
        stacks_o.append(obs[ok])
    stacked_preds = np.vstack(stacks_p)
    stacked_obs = np.concatenate(stacks_o)
    w = _ens.compute_weights(config.weight_scheme, stacked_preds, stacked_obs)
    stacked_spreads = _ens.spread_series(w, stacked_preds)[1]
    live = {mid: fitted[mid] for mid in surviving}
    gamma, fallback, s_model = _gamma_with_fallback(
        w, stacked_preds, stacked_obs, stacked_spreads, live, surviving
    )

    inits = sorted(forecast_seeds)
    if not inits:
        raise InsufficientHistory(f"no initialization values before day {t0}")
    cube, clamps = _forecast_window(live, surviving, frame, inits, r0, r1, forecast_seeds)
    per_init_means = np.tensordot(cube, w, axes=([1], [0]))
    mean = per_init_means.mean(axis=1)
    if fallback:
        s = np.full(r1 - r0, s_model)
    else:
        flat = cube.reshape(cube.shape[0], -1)
        w_flat = np.tile(w / len(inits), len(inits))
        _, s = _ens.spread_series(w_flat, flat)

    weights_out = {mid: 0.0 for mid in all_ids}
    weights_out.update({mid: float(x) for mid, x in zip(surviving, w)})
    record = WindowRecord(
        start_day=t0,
        end_day=t1,
        weights=weights_out,
        gamma=gamma,
        spread_fallback=fallback,
        excluded=tuple(m for m in all_ids if m not in surviving),
        init_trees=tuple(inits),
        per_init={t: per_init_means[:, j] for j, t in enumerate(inits)},
        clamp_count=clamps,
        n_scoring_rows=len(stacked_obs),
    )
    return record, mean, s, gamma


def _window_starts(n_days: int, config: RollingConfig) -> list[int]:
    return list(range(config.initial_days, n_days, config.window_days))


def _check_frame(frame: AlignedFrame, config: RollingConfig) -> int:
    if not frame.starts_at_midnight():
        raise ValueError("frame must start at midnight")
    ensure_daily_covariates(frame)
    n_days = frame.n // frame.per_day
    if n_days < config.initial_days + config.window_days:
        raise InsufficientHistory(
            f"{n_days} whole days < initial {config.initial_days} "
            f"+ window {config.window_days}"
        )
    return n_days


# ---------------------------------------------------------------------------
# drivers


def run_rolling(
    frame: AlignedFrame, trees: list[TreeRecord], config: RollingConfig
) -> RollingReport:
    """Forecast a season window by window (see module docstring).

    ``frame`` must start at midnight, contain one column per tree plus the
    weather channels, and cover at least ``initial_days + window_days``
    whole days.  Members that fail to fit or simulate in a window are
    excluded from that window with their weight reported as zero.
    """
    n_days = _check_frame(frame, config)
    per = frame.per_day
    tree_ids = [t.tree_id for t in trees]
    for tid in tree_ids:
        if tid not in frame.columns:
            raise KeyError(f"frame has no column for tree {tid!r}")

    members = [
        (f"{tree}|{flex}", tree, flex)
        for tree in tree_ids
        for flex in config.model_types
    ]
    all_ids = [mid for mid, _, _ in members]
    prev_lambdas: dict[str, dict[str, float]] = {}
    fitted: dict[str, FittedModel] = {}

    n_rows = n_days * per
    pred = np.full(n_rows, np.nan)
    spread_arr = np.full(n_rows, np.nan)
    gamma_rows = np.full(n_rows, np.nan)
    records: list[WindowRecord] = []
    total_clamps = 0

    for t0 in _window_starts(n_days, config):
        t1 = min(t0 + config.window_days, n_days)
        r0 = t0 * per

        if config.mode == "refit" or not fitted:
            fit_rows = (
                config.initial_days * per if config.mode == "frozen_members" else r0
            )
            fit_frame = frame.subframe(0, fit_rows)
            new_fitted: dict[str, FittedModel] = {}
            for mid, tree, flex in members:
                spec = ModelSpec(response=tree, flexible_covariate=flex)
                try:
                    model = fit_additive_model(
                        spec, fit_frame, lambda_init=prev_lambdas.get(mid)
                    )
                except SapflowError as exc:
                    log.warning("member %s failed to fit: %s", mid, exc)
                    continue
                new_fitted[mid] = model
                prev_lambdas[mid] = model.lambdas
            fitted = new_fitted
        if not fitted:
            raise InsufficientHistory("every ensemble member failed to fit")

        s0 = max(r0 - config.scoring_days * per, 1)
        score_seeds = _observed_seeds(frame, tree_ids, s0 - 1)
        forecast_seeds = _observed_seeds(frame, tree_ids, r0 - 1)
        record, mean, s, gamma = _one_window(
            fitted, frame, config, all_ids, t0, t1, score_seeds, forecast_seeds
        )
        r1 = t1 * per
        pred[r0:r1] = mean
        spread_arr[r0:r1] = s
        gamma_rows[r0:r1] = gamma
        total_clamps += record.clamp_count
        records.append(record)

    return _assemble_report(
        frame, trees, config, records, all_ids,
        pred, spread_arr, gamma_rows, total_clamps, scale=1.0,
    )


def build_init_day_map(
    frame: AlignedFrame, tree_ids: list[str]
) -> dict[int, dict[str, float]]:
    """Last observed value of each tree on each day-of-year of a frame.

    Used to initialize cross-season forecasts from the matching calendar
    day of the historical season.
    """
    per = frame.per_day
    out: dict[int, dict[str, float]] = {}
    for d in range(frame.n // per):
        doy = (frame.first_day + timedelta(days=d)).timetuple().tm_yday
        entry: dict[str, float] = {}
        for tree in tree_ids:
            seed = _seed_from_column(frame.columns[tree], (d + 1) * per - 1, per)
            if seed is not None:
                entry[tree] = seed
        if entry:
            out[doy] = entry
    return out


def run_cross_season(
    members: list[FittedModel | dict],
    new_frame: AlignedFrame,
    trees: list[TreeRecord],
    scale_info: float,
    init_day_map: dict[int, dict[str, float]],
    config: RollingConfig,
) -> RollingReport:
    """Apply frozen members from one season to the next.

    ``new_frame`` must carry the new season's weather and NORMALIZED tree
    observations (the same normalization the members were trained on);
    member weights are retrained per window against them, but the members
    themselves never refit.  Recursion seeds come from ``init_day_map``
    (day-of-year -> tree -> value from the historical season; see
    :func:`build_init_day_map`), falling back to the new season's own
    latest observation when an entry is absent.  Every output series is
    multiplied by ``scale_info`` (the known flux scale of the target
    season) before water-use conversion, so predictions come out in
    physical units while the members keep working on the normalized scale.
    """
    if scale_info is None:
        raise ScaleMissing("cross-season runs need the target season's flux scale")
    if not np.isfinite(scale_info) or scale_info <= 0:
        raise ScaleMissing(f"flux scale must be a positive number, got {scale_info!r}")

    n_days = _check_frame(new_frame, config)
    per = new_frame.per_day

    fitted: dict[str, FittedModel] = {}
    for m in members:
        model = model_from_dict(m) if isinstance(m, dict) else m
        mid = f"{model.spec.response}|{model.spec.flexible_covariate}"
        fitted[mid] = model
    if not fitted:
        raise InsufficientHistory("no ensemble members supplied")
    tree_ids = sorted({m.spec.response for m in fitted.values()})
    for tid in tree_ids:
        if tid not in new_frame.columns:
            raise KeyError(f"new season frame has no column for tree {tid!r}")
    all_ids = list(fitted)

    n_rows = n_days * per
    pred = np.full(n_rows, np.nan)
    spread_arr = np.full(n_rows, np.nan)
    gamma_rows = np.full(n_rows, np.nan)
    records: list[WindowRecord] = []
    total_clamps = 0

    for t0 in _window_starts(n_days, config):
        t1 = min(t0 + config.window_days, n_days)
        r0, r1 = t0 * per, t1 * per
        s0 = max(r0 - config.scoring_days * per, 1)
        score_seeds = _historical_seeds(new_frame, tree_ids, s0 - 1, init_day_map)
        forecast_seeds = _historical_seeds(new_frame, tree_ids, r0 - 1, init_day_map)
        record, mean, s, gamma = _one_window(
            fitted, new_frame, config, all_ids, t0, t1, score_seeds, forecast_seeds
        )
        pred[r0:r1] = mean
        spread_arr[r0:r1] = s
        gamma_rows[r0:r1] = gamma
        total_clamps += record.clamp_count
        records.append(record)

    return _assemble_report(
        new_frame, trees, config, records, all_ids,
        pred, spread_arr, gamma_rows, total_clamps, scale=float(scale_info),
    )


def _assemble_report(
    frame: AlignedFrame,
    trees: list[TreeRecord],
    config: RollingConfig,
    records: list[WindowRecord],
    all_ids: list[str],
    pred: np.ndarray,
    spread_arr: np.ndarray,
    gamma_rows: np.ndarray,
    total_clamps: int,
    scale: float,
) -> RollingReport:
    per = frame.per_day
    e0 = records[0].start_day * per
    e1 = records[-1].end_day * per
    start_ts = frame.start + timedelta(hours=frame.step_hours * e0)

    pred_w = pred[e0:e1] * scale
    spread_w = spread_arr[e0:e1] * scale
    sd_w = gamma_rows[e0:e1] * spread_w
    z = _ens.z_value(config.interval_level)
    lower = np.maximum(pred_w - z * sd_w, 0.0)
    upper = pred_w + z * sd_w

    def mk(v: np.ndarray) -> TimeSeries:
        return TimeSeries(start_ts, v, frame.step_hours)

    area = sum(t.sapwood_area_cm2() * t.count for t in trees)
    wu = water_use(mk(pred_w), area)
    bands = propagate_error(area, mk(sd_w))
    w_lower = DailySeries(
        wu.liters.start_day,
        np.maximum(wu.liters.values - z * bands.sd_liters.values, 0.0),
    )
    w_upper = DailySeries(
        wu.liters.start_day, wu.liters.values + z * bands.sd_liters.values
    )

    return RollingReport(
        config=config,
        windows=records,
        member_ids=tuple(all_ids),
        prediction=mk(pred_w),
        spread=mk(spread_w),
        lower=mk(lower),
        upper=mk(upper),
        water_use=wu,
        water_sd=bands.sd_liters,
        water_sd_conservative=bands.sd_liters_conservative,
        water_lower=w_lower,
        water_upper=w_upper,
        total_area_cm2=area,
        clamp_count=total_clamps,
        scale=scale,
    )


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Metrics:
    """Accuracy and sharpness summary of one report."""

    hourly_mse: float
    median_half_width: float
    pct_error_q10: float
    pct_error_q50: float
    pct_error_q90: float
    n_hours: int
    n_days: int
    n_zero_days: int

    def to_dict(self) -> dict:
        return {
            "hourly_mse": self.hourly_mse,
            "median_half_width": self.median_half_width,
            "pct_error_q10": self.pct_error_q10,
            "pct_error_q50": self.pct_error_q50,
            "pct_error_q90": self.pct_error_q90,
            "n_hours": self.n_hours,
            "n_days": self.n_days,
            "n_zero_days": self.n_zero_days,
        }


def evaluate(
    report: RollingReport,
    observed_flux: TimeSeries,
    observed_water: DailySeries,
) -> Metrics:
    """Score a report against held-back observations.

    ``observed_flux`` is compared hourly against the standard-tree
    prediction (use the cross-tree average of the group when the report
    came from several trees); ``observed_water`` is compared daily in
    liters.  Both must cover the report's span.  Days observed at exactly
    zero liters cannot be scored as percentages and are excluded; their
    number is reported.
    """
    pred = report.prediction
    if observed_flux.step_hours != pred.step_hours:
        raise NoOverlap("observed flux uses a different time step")
    if observed_flux.start > pred.start or observed_flux.end < pred.end:
        raise NoOverlap("observations do not cover the report span")
    lo = observed_flux.index_of(pred.start)
    obs = observed_flux.values[lo : lo + len(pred)]
    ok = np.isfinite(obs) & np.isfinite(pred.values)
    if not np.any(ok):
        raise NoOverlap("no commonly observed hours")
    mse = float(np.mean((obs[ok] - pred.values[ok]) ** 2))
    half = (report.upper.values - report.lower.values) / 2.0
    median_half = float(np.median(half[np.isfinite(half)]))

    wu = report.water_use.liters
    obs_end = observed_water.start_day + timedelta(days=len(observed_water))
    if observed_water.start_day > wu.start_day or obs_end < wu.start_day + timedelta(
        days=len(wu)
    ):
        raise NoOverlap("observed water-use does not cover the report days")
    k0 = (wu.start_day - observed_water.start_day).days
    obs_w = observed_water.values[k0 : k0 + len(wu)]
    zero = obs_w == 0.0
    usable = np.isfinite(obs_w) & ~zero & np.isfinite(wu.values)
    if np.any(usable):
        pct = np.abs(wu.values[usable] - obs_w[usable]) / obs_w[usable] * 100.0
        qs = [quantile_type7(pct, q) for q in (0.1, 0.5, 0.9)]
    else:
        qs = [float("nan")] * 3
    return Metrics(
        hourly_mse=mse,
        median_half_width=median_half,
        pct_error_q10=qs[0],
        pct_error_q50=qs[1],
        pct_error_q90=qs[2],
        n_hours=int(ok.sum()),
        n_days=int(usable.sum()),
        n_zero_days=int(zero.sum()),
    )
