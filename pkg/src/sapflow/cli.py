"""Command-line surface of the toolkit.

Eight subcommands cover the pipeline: ``simulate`` writes a synthetic
stand, ``fit`` trains additive models, ``roll`` runs the rolling
ensemble forecast, ``cross-season`` reapplies frozen members to a new
season, ``wateruse`` converts observed flux to daily liters, ``spa``
compares forecast losses between model sets, ``changepoint`` segments a
residual series, and ``report`` rebuilds metrics and charts from CSV
artifacts.

Every subcommand accepts ``--config FILE`` (a JSON object keyed by the
snake_case option names); flags passed explicitly override file values.
Results land in ``--out DIR`` as fixed-name artifacts next to a
``manifest.json`` that echoes the configuration and digests every input
and output, so a finished run can be traced and reproduced exactly.

Exit status: 0 on success, 1 for configuration or data-contract
problems, 2 when the numerics fail.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import __version__
from .changepoint import (
    crops,
    default_penalty,
    default_penalty_range,
    pelt,
    select_by_count,
    split_on_gaps,
)
from .ensemble import WeightScheme
from .errors import (
    AllZeroWeights,
    DegenerateVariance,
    MissingChannel,
    MissingRequired,
    RankDeficient,
    SapflowError,
    ScaleMissing,
    SingularSystem,
    TooShort,
    TypeMismatch,
    UnknownKey,
    ZeroSpread,
)
from .io import (
    read_frame_csv,
    read_report_csv,
    read_trees_csv,
    read_wateruse_csv,
    write_frame_csv,
    write_manifest,
    write_report_csv,
    write_series_csv,
    write_trees_csv,
    write_wateruse_csv,
    write_weights_csv,
)
from .model import (
    FLEX_CHOICES,
    ModelSpec,
    ensure_daily_covariates,
    fit_additive_model,
    model_to_dict,
)
from .plots import report_chart, svg_line_chart, wateruse_chart
from .rolling import (
    RollingConfig,
    build_init_day_map,
    evaluate,
    run_cross_season,
    run_rolling,
)
from .series import AlignedFrame, DailySeries, TimeSeries, quantile_type7
from .spa import loss_diffs, spa_pvalue
from .synthetic import HeatwaveWindow, five_tree_scenario, simulate_scenario
from .wateruse import TreeRecord, tree_water_use

NUMERIC_ERRORS = (
    SingularSystem,
    RankDeficient,
    AllZeroWeights,
    ZeroSpread,
    DegenerateVariance,
)


# ---------------------------------------------------------------------------
# option table and config merging


@dataclass(frozen=True)
class Opt:
    """One configurable option of a subcommand.

    The same table drives the argparse flags, the JSON config keys and
    the validation, so the three surfaces cannot drift apart.
    """

    name: str
    kind: str  # int | float | str | bool | path | pathmap
    default: object = None
    required: bool = False
    help: str = ""
    choices: tuple | None = None
    minimum: float | None = None
    flag: str | None = None  # override the auto-derived flag spelling


def _coerce(opt: Opt, value):
    """Check/convert one value (from file or flag) against its option."""
    if value is None:
        return None
    name = opt.name
    if opt.kind == "bool":
        if not isinstance(value, bool):
            raise TypeMismatch(f"option '{name}' expects true/false, got {value!r}")
        out = value
    elif opt.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatch(f"option '{name}' expects an integer, got {value!r}")
        out = value
    elif opt.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatch(f"option '{name}' expects a number, got {value!r}")
        out = float(value)
    elif opt.kind == "str":
        if not isinstance(value, str):
            raise TypeMismatch(f"option '{name}' expects a string, got {value!r}")
        out = value
    elif opt.kind == "path":
        if isinstance(value, Path):
            out = value
        elif isinstance(value, str):
            out = Path(value)
        else:
            raise TypeMismatch(f"option '{name}' expects a path, got {value!r}")
    elif opt.kind == "pathmap":
        if isinstance(value, dict):
            bad = [k for k, v in value.items() if not isinstance(v, str)]
            if bad:
                raise TypeMismatch(f"option '{name}' entries must map names to paths")
            out = dict(value)
        elif isinstance(value, list):
            out = {}
            for item in value:
                if not isinstance(item, str) or "=" not in item:
                    raise TypeMismatch(
                        f"option '{name}' entries use NAME=PATH, got {item!r}"
                    )
                key, _, path = item.partition("=")
                out[key] = path
        else:
            raise TypeMismatch(f"option '{name}' expects NAME=PATH entries")
    else:  # pragma: no cover - table mistake, not user input
        raise AssertionError(f"unknown option kind {opt.kind!r}")
    if opt.choices is not None and out not in opt.choices:
        allowed = ", ".join(str(c) for c in opt.choices)
        raise TypeMismatch(f"option '{name}' must be one of {allowed}, got {out!r}")
    if opt.minimum is not None and out < opt.minimum:
        raise TypeMismatch(f"option '{name}' must be >= {opt.minimum}, got {out}")
    return out


def parse_config(opts: list[Opt], config_path, flag_values: dict) -> dict:
    """Merge defaults, the JSON config file and the explicit flags.

    Precedence grows left to right: defaults < file < flags.  Unknown
    file keys, wrong types, out-of-range values and missing required
    options all raise a ConfigError naming the offending key.
    """
    by_name = {o.name: o for o in opts}
    merged = {o.name: o.default for o in opts}
    if config_path is not None:
        with open(config_path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise TypeMismatch("config file must hold a JSON object")
        for key, value in doc.items():
            if key not in by_name:
                raise UnknownKey(f"unknown config key '{key}'")
            merged[key] = _coerce(by_name[key], value)
    for key, value in flag_values.items():
        if key in by_name and value is not None:
            merged[key] = _coerce(by_name[key], value)
    for opt in opts:
        if opt.required and merged[opt.name] is None:
            raise MissingRequired(f"missing required option '{opt.name}'")
    return merged


def _split_list(text: str, key: str) -> list[str]:
    items = [part.strip() for part in text.split(",") if part.strip()]
    if not items:
        raise TypeMismatch(f"option '{key}' needs at least one entry")
    return items


def _split_types(text: str, key: str = "model_types") -> tuple[str, ...]:
    items = _split_list(text, key)
    for item in items:
        if item not in FLEX_CHOICES:
            allowed = ", ".join(FLEX_CHOICES)
            raise TypeMismatch(f"option '{key}' must pick from {allowed}, got {item!r}")
    return tuple(items)


def _parse_heatwaves(text: str) -> tuple[HeatwaveWindow, ...]:
    if not text:
        return ()
    out = []
    for part in text.split(","):
        bits = part.split(":")
        if not 2 <= len(bits) <= 4:
            raise TypeMismatch(
                "option 'heatwaves' entries use START:END[:SUPPRESSION[:BOOST]]"
            )
        try:
            window = HeatwaveWindow(
                start_day=int(bits[0]),
                end_day=int(bits[1]),
                suppression=float(bits[2]) if len(bits) > 2 else 0.5,
                temp_boost=float(bits[3]) if len(bits) > 3 else 0.0,
            )
        except ValueError as exc:
            raise TypeMismatch(f"option 'heatwaves': {exc}")
        out.append(window)
    return tuple(out)


# ---------------------------------------------------------------------------
# shared command plumbing


def _out_dir(cfg: dict) -> Path:
    out = cfg["out"]
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _echo(cfg: dict) -> dict:
    return {
        key: str(value) if isinstance(value, Path) else value
        for key, value in cfg.items()
    }


def _finish(
    cfg: dict,
    subcommand: str,
    inputs: dict[str, Path],
    artifacts: list[str],
    notes: dict | None = None,
) -> None:
    out = cfg["out"]
    write_manifest(
        out / "manifest.json",
        subcommand,
        _echo(cfg),
        inputs,
        {name: out / name for name in artifacts},
        version=__version__,
        notes=notes,
    )


def _rolling_config(cfg: dict, mode: str = "refit") -> RollingConfig:
    types = _split_types(cfg["model_types"])
    try:
        scheme = WeightScheme(
            kind=cfg["weight_kind"],
            penalty=cfg["weight_penalty"],
            strength=cfg["weight_strength"],
        )
        return RollingConfig(
            initial_days=cfg["initial_days"],
            window_days=cfg["window_days"],
            weight_window_days=cfg["weight_window_days"],
            model_types=types,
            weight_scheme=scheme,
            interval_level=cfg["level"],
            mode=mode,
        )
    except ValueError as exc:
        raise TypeMismatch(str(exc))


def _standard_tree_obs(frame: AlignedFrame, tree_ids: list[str]) -> TimeSeries:
    """Cross-tree mean observation, NaN where no tree reported."""
    cols = np.stack([frame.columns[t] for t in tree_ids])
    finite = np.isfinite(cols)
    count = finite.sum(axis=0)
    total = np.where(finite, cols, 0.0).sum(axis=0)
    values = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return TimeSeries(frame.start, values, frame.step_hours)


def _group_water(
    frame: AlignedFrame, trees: list[TreeRecord]
) -> tuple[DailySeries, list[date]]:
    """Observed group water use: per-tree liters times count, summed.

    A record with two sensor radii uses the ``<id>_inner``/``<id>_outer``
    column pair when present, otherwise its plain ``<id>`` column.
    """
    total = None
    partial: set[date] = set()
    for rec in trees:
        inner, outer = f"{rec.tree_id}_inner", f"{rec.tree_id}_outer"
        if rec.has_two_sensors() and inner in frame.columns and outer in frame.columns:
            wu = tree_water_use(rec, (frame.series(inner), frame.series(outer)))
        else:
            if rec.tree_id not in frame.columns:
                raise MissingChannel(
                    f"frame has no flux column for tree {rec.tree_id!r}"
                )
            wu = tree_water_use(rec, frame.series(rec.tree_id))
        values = wu.liters.values * rec.count
        total = values if total is None else total + values
        partial.update(wu.partial_days)
    return DailySeries(frame.first_day, total, unit="L"), sorted(partial)


def _eval_slice(obs: TimeSeries, pred: TimeSeries) -> TimeSeries:
    lo = obs.index_of(pred.start)
    return TimeSeries(pred.start, obs.values[lo : lo + len(pred)], pred.step_hours)


def _forecast_artifacts(cfg: dict, report, frame, trees) -> tuple[list[str], dict]:
    """report/observed/wateruse/weights CSVs, charts and metrics for one run."""
    out = _out_dir(cfg)
    tree_ids = [t.tree_id for t in trees]
    obs_flux = _standard_tree_obs(frame, tree_ids)
    obs_water, partial = _group_water(frame, trees)
    metrics = evaluate(report, obs_flux, obs_water)

    write_report_csv(report, out / "report.csv")
    write_series_csv(
        _eval_slice(obs_flux, report.prediction), out / "observed.csv", name="observed"
    )
    write_wateruse_csv(report, out / "wateruse.csv", observed=obs_water)
    write_weights_csv(report, out / "weights.csv")
    _write_json(out / "metrics.json", {"schema_version": 1, **metrics.to_dict()})
    report_chart(report, out / "report.svg", observed=obs_flux)
    wateruse_chart(report, out / "wateruse.svg", observed=obs_water)

    artifacts = [
        "report.csv",
        "observed.csv",
        "wateruse.csv",
        "weights.csv",
        "metrics.json",
        "report.svg",
        "wateruse.svg",
    ]
    notes: dict = {}
    dropped = sorted(set(report.water_use.partial_days) | set(partial))
    if dropped:
        notes["partial_days"] = [d.isoformat() for d in dropped]
    print(
        f"{len(report.windows)} windows, median daily error "
        f"{metrics.pct_error_q50:.1f}%, hourly MSE {metrics.hourly_mse:.4f}"
    )
    return artifacts, notes


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: dict) -> None:
    scenario = five_tree_scenario(
        days=cfg["days"],
        seed=cfg["seed"],
        n_trees=cfg["n_trees"],
        heatwaves=_parse_heatwaves(cfg["heatwaves"]),
        noise_sd=cfg["noise_sd"],
        mechanism=cfg["mechanism"],
    )
    data = simulate_scenario(scenario)
    out = _out_dir(cfg)
    write_frame_csv(data.frame, out / "frame.csv")
    write_trees_csv(list(data.trees), out / "trees.csv")
    truth = AlignedFrame(
        data.frame.start,
        data.frame.step_hours,
        {tree: data.truth[tree]["signal"] for tree in data.truth},
    )
    write_frame_csv(truth, out / "truth.csv")
    _finish(cfg, "simulate", {}, ["frame.csv", "trees.csv", "truth.csv"])
    print(f"simulated {cfg['days']} days x {cfg['n_trees']} trees -> {out}")


def cmd_fit(cfg: dict) -> None:
    frame = read_frame_csv(cfg["frame"])
    ensure_daily_covariates(frame)
    responses = _split_list(cfg["response"], "response")
    types = _split_types(cfg["model_types"])
    docs = []
    for response in responses:
        for flex in types:
            model = fit_additive_model(
                ModelSpec(response=response, flexible_covariate=flex), frame
            )
            docs.append(model_to_dict(model))
    out = _out_dir(cfg)
    _write_json(out / "models.json", docs)
    _finish(cfg, "fit", {"frame": cfg["frame"]}, ["models.json"])
    explained = ", ".join(
        f"{d['spec']['response']}|{d['spec']['flexible_covariate']}"
        f" DE={d['deviance_explained']:.3f}"
        for d in docs
    )
    print(f"fitted {len(docs)} models: {explained}")


def cmd_roll(cfg: dict) -> None:
    frame = read_frame_csv(cfg["frame"])
    trees = read_trees_csv(cfg["trees"])
    config = _rolling_config(cfg)
    report = run_rolling(frame, trees, config)
    artifacts, notes = _forecast_artifacts(cfg, report, frame, trees)
    if cfg["save_members"]:
        docs = [
            model_to_dict(
                fit_additive_model(ModelSpec(response=t, flexible_covariate=f), frame)
            )
            for t in [rec.tree_id for rec in trees]
            for f in config.model_types
        ]
        _write_json(cfg["out"] / "members.json", docs)
        artifacts.append("members.json")
    _finish(
        cfg,
        "roll",
        {"frame": cfg["frame"], "trees": cfg["trees"]},
        artifacts,
        notes or None,
    )


def cmd_cross_season(cfg: dict) -> None:
    frame = read_frame_csv(cfg["frame"])
    trees = read_trees_csv(cfg["trees"])
    with open(cfg["models"]) as fh:
        docs = json.load(fh)
    if not isinstance(docs, list) or not docs:
        raise TypeMismatch("models file must hold a non-empty JSON list")
    history = read_frame_csv(cfg["history"])
    config = _rolling_config(cfg, mode="frozen_members")

    tree_ids = sorted({doc["spec"]["response"] for doc in docs})
    init_map = build_init_day_map(history, tree_ids)

    scale = cfg["scale"]
    if scale is None:
        pooled = [
            frame.columns[t][np.isfinite(frame.columns[t])]
            for t in tree_ids
            if t in frame.columns
        ]
        flat = np.concatenate(pooled) if pooled else np.empty(0)
        if flat.size == 0:
            raise ScaleMissing(
                "cannot derive a flux scale: no tree observations in the new frame"
            )
        scale = float(quantile_type7(flat, 0.95))

    normalized = AlignedFrame(
        frame.start,
        frame.step_hours,
        {
            name: col / scale if name in tree_ids else col
            for name, col in frame.columns.items()
        },
    )
    report = run_cross_season(docs, normalized, trees, scale, init_map, config)
    artifacts, notes = _forecast_artifacts(cfg, report, frame, trees)
    notes["scale_used"] = scale
    _finish(
        cfg,
        "cross-season",
        {
            "frame": cfg["frame"],
            "trees": cfg["trees"],
            "models": cfg["models"],
            "history": cfg["history"],
        },
        artifacts,
        notes,
    )


def cmd_wateruse(cfg: dict) -> None:
    frame = read_frame_csv(cfg["frame"])
    trees = read_trees_csv(cfg["trees"])
    daily, partial = _group_water(frame, trees)
    out = _out_dir(cfg)
    write_wateruse_csv(daily, out / "wateruse.csv")
    notes = {"partial_days": [d.isoformat() for d in partial]} if partial else None
    _finish(
        cfg,
        "wateruse",
        {"frame": cfg["frame"], "trees": cfg["trees"]},
        ["wateruse.csv"],
        notes,
    )
    finite = daily.values[np.isfinite(daily.values)]
    total = float(finite.sum()) if finite.size else 0.0
    print(f"{finite.size} complete days, {total:.1f} L total -> {out}")


def _spa_matrix(frame: AlignedFrame, columns: list[str], what: str) -> np.ndarray:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise MissingChannel(f"{what} is missing columns {missing}")
    return np.stack([frame.columns[c] for c in columns])


def cmd_spa(cfg: dict) -> None:
    obs_frame = read_frame_csv(cfg["observed"])
    bench_frame = read_frame_csv(cfg["benchmark"])
    if cfg["observed_column"] is not None:
        obs_cols = [cfg["observed_column"]]
    else:
        obs_cols = list(obs_frame.columns)
    if cfg["column"] is not None and len(obs_cols) != 1:
        raise TypeMismatch(
            "option 'column' needs a single observed series; set 'observed_column'"
        )

    def pred_matrix(frame: AlignedFrame, what: str) -> np.ndarray:
        cols = [cfg["column"]] * len(obs_cols) if cfg["column"] else obs_cols
        return _spa_matrix(frame, cols, what)

    obs = _spa_matrix(obs_frame, obs_cols, "observed file")
    bench = pred_matrix(bench_frame, "benchmark file")
    competitors = {}
    for name in sorted(cfg["competitors"]):
        competitors[name] = pred_matrix(
            read_frame_csv(cfg["competitors"][name]), f"competitor {name!r}"
        )
    panel = loss_diffs(bench, competitors, obs, loss=cfg["loss"])
    result = spa_pvalue(
        panel,
        p_star_days=cfg["pstar_days"],
        B=cfg["replicates"],
        seed=cfg["seed"],
        batch=cfg["batch"],
    )
    out = _out_dir(cfg)
    _write_json(out / "spa.json", {"schema_version": 1, "loss": cfg["loss"], **result.to_dict()})
    inputs = {"observed": cfg["observed"], "benchmark": cfg["benchmark"]}
    for name, path in cfg["competitors"].items():
        inputs[f"competitor:{name}"] = Path(path)
    _finish(cfg, "spa", inputs, ["spa.json"])
    print(
        f"SPA statistic {result.statistic:.4f}, p-value {result.p_value:.4f} "
        f"({result.B} replicates)"
    )


def cmd_changepoint(cfg: dict) -> None:
    frame = read_frame_csv(cfg["residuals"])
    name = cfg["column"]
    if name is None:
        if len(frame.columns) != 1:
            raise TypeMismatch(
                "option 'column' is required when the residual file has several columns"
            )
        name = next(iter(frame.columns))
    if name not in frame.columns:
        raise MissingChannel(f"residual file has no column {name!r}")
    series = frame.series(name)

    modes = [key for key in ("penalty", "count", "penalty_range") if cfg[key] is not None]
    if len(modes) > 1:
        raise TypeMismatch(
            "options 'penalty', 'count' and 'penalty_range' are mutually exclusive"
        )
    prange = None
    if cfg["penalty_range"] is not None:
        bits = cfg["penalty_range"].split(":")
        if len(bits) != 2:
            raise TypeMismatch("option 'penalty_range' uses LO:HI")
        try:
            prange = (float(bits[0]), float(bits[1]))
        except ValueError as exc:
            raise TypeMismatch(f"option 'penalty_range': {exc}")

    chunks = split_on_gaps(series, cfg["max_gap_hours"])
    usable = [(idx, vals) for idx, vals in chunks if len(vals) >= 2 * cfg["min_seg_len"]]
    if not usable:
        raise TooShort("no contiguous residual chunk is long enough to segment")

    def stamp(row: int) -> str:
        return (frame.start + timedelta(hours=frame.step_hours * row)).isoformat()

    entries = []
    for idx, vals in usable:
        entry: dict = {
            "first_row": int(idx[0]),
            "last_row": int(idx[-1]),
            "start": stamp(int(idx[0])),
            "n": len(vals),
        }
        segmentation = None
        if cfg["count"] is not None or prange is not None:
            lo, hi = prange if prange else default_penalty_range(len(vals))
            curve = crops(vals, lo, hi, cfg["min_seg_len"], cfg["cost"])
            entry["curve"] = [
                {
                    "penalty_lo": e.penalty_lo,
                    "penalty_hi": e.penalty_hi,
                    "num_changepoints": e.num_changepoints,
                    "segmentation": e.segmentation.to_dict(),
                }
                for e in curve.entries
            ]
            if cfg["count"] is not None:
                picked = select_by_count(curve, cfg["count"])
                segmentation = picked.segmentation
                entry["requested_count"] = picked.requested
                entry["exact"] = picked.exact
        else:
            penalty = cfg["penalty"]
            if penalty is None:
                penalty = default_penalty(len(vals))
            segmentation = pelt(vals, penalty, cfg["min_seg_len"], cfg["cost"])
        if segmentation is not None:
            entry["segmentation"] = segmentation.to_dict()
            rows = [int(idx[e]) for e in segmentation.changepoints]
            entry["changepoint_rows"] = rows
            entry["changepoint_timestamps"] = [stamp(r) for r in rows]
        entries.append(entry)

    out = _out_dir(cfg)
    _write_json(
        out / "segmentation.json",
        {
            "schema_version": 1,
            "column": name,
            "cost": cfg["cost"],
            "chunks": entries,
            "skipped_chunks": len(chunks) - len(usable),
        },
    )
    _finish(cfg, "changepoint", {"residuals": cfg["residuals"]}, ["segmentation.json"])
    found = sum(len(e.get("changepoint_rows", [])) for e in entries)
    print(f"{len(entries)} chunks analyzed, {found} changepoints -> {out}")


def cmd_report(cfg: dict) -> None:
    series = read_report_csv(cfg["report"])
    water = read_wateruse_csv(cfg["wateruse"])
    pred_water = water.get("predicted_liters", water.get("liters"))
    if pred_water is None:
        raise TypeMismatch(
            "wateruse file needs a 'predicted_liters' or 'liters' column"
        )

    if (cfg["frame"] is None) != (cfg["trees"] is None):
        raise MissingRequired("options 'frame' and 'trees' must be given together")
    obs_flux = obs_water = None
    if cfg["frame"] is not None:
        frame = read_frame_csv(cfg["frame"])
        trees = read_trees_csv(cfg["trees"])
        obs_flux = _standard_tree_obs(frame, [t.tree_id for t in trees])
        obs_water, _ = _group_water(frame, trees)

    out = _out_dir(cfg)
    artifacts = ["report.svg", "wateruse.svg"]
    pred = series["prediction"]
    x = np.arange(len(pred)) * pred.step_hours
    hourly = {"predicted": pred.values}
    if obs_flux is not None:
        hourly = {"observed": _eval_slice(obs_flux, pred).values, **hourly}
    svg_line_chart(
        out / "report.svg",
        x,
        hourly,
        ribbon=(series["lower"].values, series["upper"].values),
        title="Standard-tree sap flux forecast",
        xlabel="hours since evaluation start",
        ylabel="sap flux density",
    )
    xd = np.arange(len(pred_water), dtype=float)
    daily = {"predicted": pred_water.values}
    if obs_water is not None:
        k0 = (pred_water.start_day - obs_water.start_day).days
        daily = {"observed": obs_water.values[k0 : k0 + len(pred_water)], **daily}
    ribbon = None
    if "lower" in water and "upper" in water:
        ribbon = (water["lower"].values, water["upper"].values)
    svg_line_chart(
        out / "wateruse.svg",
        xd,
        daily,
        ribbon=ribbon,
        title="Daily group water-use forecast",
        xlabel="day of evaluation span",
        ylabel="liters",
    )

    if obs_flux is not None:
        rebuilt = SimpleNamespace(
            prediction=series["prediction"],
            lower=series["lower"],
            upper=series["upper"],
            water_use=SimpleNamespace(liters=pred_water),
        )
        metrics = evaluate(rebuilt, obs_flux, obs_water)
        _write_json(out / "metrics.json", {"schema_version": 1, **metrics.to_dict()})
        artifacts.append("metrics.json")
        print(
            f"median daily error {metrics.pct_error_q50:.1f}%, "
            f"hourly MSE {metrics.hourly_mse:.4f}"
        )

    inputs = {"report": cfg["report"], "wateruse": cfg["wateruse"]}
    if cfg["frame"] is not None:
        inputs["frame"] = cfg["frame"]
        inputs["trees"] = cfg["trees"]
    _finish(cfg, "report", inputs, artifacts)


# ---------------------------------------------------------------------------
# wiring


_ROLL_KNOBS = [
    Opt("initial_days", "int", 14, minimum=1,
        help="warm-up days before the first forecast window"),
    Opt("window_days", "int", 7, minimum=1, help="forecast horizon per window, days"),
    Opt("weight_window_days", "int", 14, minimum=1,
        help="trailing observed days that score the members"),
    Opt("model_types", "str", ",".join(FLEX_CHOICES),
        help="comma-separated day-level covariates; one model per tree each"),
    Opt("weight_kind", "str", "reciprocal_mse",
        choices=("equal", "reciprocal_mse", "penalized_regression"),
        help="member weighting scheme"),
    Opt("weight_penalty", "str", "ridge", choices=("ridge", "lasso"),
        help="penalty for the regression weighting scheme"),
    Opt("weight_strength", "float", 1e-3, minimum=0.0,
        help="penalty strength for the regression weighting scheme"),
    Opt("level", "float", 0.95, help="central interval coverage level"),
]

_OUT = Opt("out", "path", required=True, help="output directory for the artifacts")

SUBCOMMANDS: dict[str, tuple] = {
    "simulate": (
        cmd_simulate,
        "generate a synthetic stand: frame.csv, trees.csv, truth.csv",
        [
            Opt("days", "int", 90, minimum=1, help="season length in days"),
            Opt("seed", "int", 20230601, help="scenario RNG seed"),
            Opt("n_trees", "int", 5, minimum=1, help="number of trees"),
            Opt("noise_sd", "float", 0.1, minimum=0.0, help="flux noise level"),
            Opt("mechanism", "str", "separable", choices=("separable", "additive"),
                help="data-generating mechanism"),
            Opt("heatwaves", "str", "",
                help="comma-separated windows START:END[:SUPPRESSION[:BOOST]] in days"),
            _OUT,
        ],
    ),
    "fit": (
        cmd_fit,
        "fit additive models and write models.json",
        [
            Opt("frame", "path", required=True, help="input frame CSV"),
            Opt("response", "str", required=True,
                help="comma-separated response column names"),
            Opt("model_types", "str", FLEX_CHOICES[0],
                help="comma-separated day-level covariates to fit per response"),
            _OUT,
        ],
    ),
    "roll": (
        cmd_roll,
        "rolling ensemble forecast over one season",
        [
            Opt("frame", "path", required=True, help="input frame CSV"),
            Opt("trees", "path", required=True, help="tree records CSV"),
            *_ROLL_KNOBS,
            Opt("save_members", "bool", False,
                help="also fit members on the whole frame and write members.json"),
            _OUT,
        ],
    ),
    "cross-season": (
        cmd_cross_season,
        "apply frozen members from one season to a new one",
        [
            Opt("frame", "path", required=True, help="new season frame CSV (physical units)"),
            Opt("trees", "path", required=True, help="tree records CSV"),
            Opt("models", "path", required=True, help="members JSON from fit or roll"),
            Opt("history", "path", required=True,
                help="training season frame CSV, used for day-of-year initialization"),
            Opt("scale", "float", None,
                help="flux scale of the new season; default: pooled 0.95 quantile"),
            *_ROLL_KNOBS,
            _OUT,
        ],
    ),
    "wateruse": (
        cmd_wateruse,
        "convert observed flux to daily group water use",
        [
            Opt("frame", "path", required=True, help="observed flux frame CSV"),
            Opt("trees", "path", required=True, help="tree records CSV"),
            _OUT,
        ],
    ),
    "spa": (
        cmd_spa,
        "test whether any competitor forecast beats the benchmark",
        [
            Opt("benchmark", "path", required=True, help="benchmark prediction CSV"),
            Opt("observed", "path", required=True, help="observed series CSV"),
            Opt("competitors", "pathmap", required=True, flag="--competitor",
                help="competitor prediction as NAME=PATH; repeatable"),
            Opt("loss", "str", "squared_error",
                choices=("squared_error", "absolute_error"), help="loss function"),
            Opt("column", "str", None,
                help="prediction column to compare (default: match observed columns)"),
            Opt("observed_column", "str", None,
                help="observed column (default: every column of the observed file)"),
            Opt("pstar_days", "float", 3.0, minimum=1e-9,
                help="mean bootstrap block length in days"),
            Opt("replicates", "int", 1000, minimum=200, help="bootstrap replicates"),
            Opt("seed", "int", 0, help="bootstrap RNG seed"),
            Opt("batch", "int", 32, minimum=1,
                help="replicates evaluated per vectorized pass"),
            _OUT,
        ],
    ),
    "changepoint": (
        cmd_changepoint,
        "segment a residual series into stable regimes",
        [
            Opt("residuals", "path", required=True, help="residual series CSV"),
            Opt("column", "str", None, help="column to analyze (default: the only one)"),
            Opt("penalty", "float", None,
                help="fixed segmentation penalty (default: 3 ln n)"),
            Opt("count", "int", None, minimum=0,
                help="pick the penalty that yields this many changepoints"),
            Opt("penalty_range", "str", None,
                help="explore penalties LO:HI and report the whole curve"),
            Opt("cost", "str", "meanvar", choices=("meanvar", "mean"),
                help="segment cost: mean and variance, or mean only"),
            Opt("min_seg_len", "int", 2, minimum=1, help="minimum segment length"),
            Opt("max_gap_hours", "float", 6.0, minimum=0.0,
                help="missing runs longer than this split the series"),
            _OUT,
        ],
    ),
    "report": (
        cmd_report,
        "rebuild charts and metrics from forecast CSV artifacts",
        [
            Opt("report", "path", required=True, help="hourly forecast CSV"),
            Opt("wateruse", "path", required=True, help="daily water-use CSV"),
            Opt("frame", "path", None, help="observed frame CSV for overlays/metrics"),
            Opt("trees", "path", None, help="tree records CSV (with 'frame')"),
            _OUT,
        ],
    ),
}


class _Parser(argparse.ArgumentParser):
    """Argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise TypeMismatch(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sapflow", description=__doc__.split("\n\n")[0])
    parser.add_argument(
        "--version", action="version", version=f"sapflow {__version__}"
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name, (func, blurb, opts) in SUBCOMMANDS.items():
        sub = subparsers.add_parser(name, help=blurb, description=blurb)
        sub.set_defaults(_func=func, _opts=opts)
        sub.add_argument(
            "--config", type=Path, default=None,
            help="JSON config file; explicit flags override its values",
        )
        for opt in opts:
            flag = opt.flag or "--" + opt.name.replace("_", "-")
            helptext = opt.help
            if opt.default not in (None, ""):
                helptext = f"{helptext} (default: {opt.default})"
            if opt.kind == "bool":
                sub.add_argument(
                    flag, dest=opt.name, action=argparse.BooleanOptionalAction,
                    default=None, help=helptext,
                )
            elif opt.kind == "pathmap":
                sub.add_argument(
                    flag, dest=opt.name, action="append", default=None,
                    metavar="NAME=PATH", help=helptext,
                )
            else:
                to_type = {"int": int, "float": float, "str": str, "path": Path}
                sub.add_argument(
                    flag, dest=opt.name, type=to_type[opt.kind], default=None,
                    help=helptext,
                )
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        flag_values = {opt.name: getattr(ns, opt.name) for opt in ns._opts}
        cfg = parse_config(ns._opts, ns.config, flag_values)
        ns._func(cfg)
        return 0
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SapflowError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
