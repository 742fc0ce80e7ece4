"""Seeded synthetic weather and sap flux scenarios.

The generator produces an hourly weather frame (temperature, humidity,
radiation, vapour pressure deficit via the Tetens formula, soil moisture)
and one sap flux channel per configured tree.  Flux follows a saturating
response to vapour pressure deficit and radiation, modulated by a smooth
day-level envelope driven by one of the standard daily covariates, with a
lag-one carry-over and additive noise:

    separable:  Y[t] = max(0, a * f(V[t]) * g(R[t]) * env[day] * heat[day]
                              + rho * Y[t-1] + noise)
    additive:   Y[t] = max(0, a0 + g1(R[t]) + f2(V[t]) * R[t]
                              + h3(V[t]) * e3(X[day]) + rho * Y[t-1] + noise)

The separable form reproduces the field patterns (exact night zeros, a
single afternoon peak); the additive form matches the fitted model's own
structure term for term, which makes it the right data source for recovery
tests.  Heatwave windows multiply the envelope by a suppression factor the
covariates know nothing about, which is exactly what makes them a useful
stress test.  Every run is a pure function of its config, including the
seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .model import ensure_daily_covariates
from .series import AlignedFrame
from .wateruse import TreeRecord

__all__ = [
    "WeatherParams",
    "HeatwaveWindow",
    "TreeParams",
    "ScenarioConfig",
    "ScenarioData",
    "tetens_vpd",
    "gen_weather",
    "gen_sapflux",
    "simulate_scenario",
    "five_tree_scenario",
]

DEFAULT_START = datetime(2023, 6, 1, tzinfo=timezone.utc)

FLEX_DRIVERS = ("daily_max_temp", "daily_min_humidity", "daily_mean_soil")


def tetens_vpd(temp_c: np.ndarray, humidity_pct: np.ndarray) -> np.ndarray:
    """Vapour pressure deficit (kPa) from air temperature and relative humidity.

    Saturation pressure uses the Tetens approximation
    ``0.6108 * exp(17.27 T / (T + 237.3))``.
    """
    temp_c = np.asarray(temp_c, dtype=float)
    humidity_pct = np.asarray(humidity_pct, dtype=float)
    e_sat = 0.6108 * np.exp(17.27 * temp_c / (temp_c + 237.3))
    return e_sat * (1.0 - humidity_pct / 100.0)


@dataclass(frozen=True)
class WeatherParams:
    base_temp: float = 18.0
    diurnal_amp: float = 6.0
    seasonal_amp: float = 3.0
    season_days: float = 120.0
    day_offset_sd: float = 1.4
    day_offset_phi: float = 0.6
    temp_noise_sd: float = 0.6
    humidity_base: float = 62.0
    humidity_slope: float = 2.4
    humidity_noise_sd: float = 3.0
    radiation_peak: float = 800.0
    sunrise: int = 6
    sunset: int = 18
    cloud_sd: float = 0.18
    soil_capacity: float = 0.40
    soil_wilting: float = 0.10
    soil_start: float = 0.32
    drying_per_day: float = 0.04
    rain_prob: float = 0.10
    rain_fill: float = 0.6


@dataclass(frozen=True)
class HeatwaveWindow:
    """Days ``[start_day, end_day)`` with the flux envelope multiplied by
    ``suppression`` and air temperature raised by ``temp_boost``."""

    start_day: int
    end_day: int
    suppression: float = 0.5
    temp_boost: float = 0.0


@dataclass(frozen=True)
class TreeParams:
    tree_id: str
    amplitude: float = 3.5
    vpd_half_sat: float = 0.7
    rad_half_sat: float = 220.0
    rho: float = 0.3
    env_driver: str = "daily_max_temp"
    env_gain: float = 0.2
    circumference_cm: float = 70.0
    bark_depth_cm: float = 1.0
    count: int = 1

    def __post_init__(self) -> None:
        if self.env_driver not in FLEX_DRIVERS:
            raise ValueError(f"env_driver must be one of {FLEX_DRIVERS}")

    def record(self) -> TreeRecord:
        return TreeRecord(
            tree_id=self.tree_id,
            circumference_cm=self.circumference_cm,
            bark_depth_cm=self.bark_depth_cm,
            count=self.count,
        )


@dataclass(frozen=True)
class ScenarioConfig:
    days: int = 90
    seed: int = 20230601
    trees: tuple[TreeParams, ...] = (TreeParams("tree1"),)
    weather: WeatherParams = WeatherParams()
    heatwaves: tuple[HeatwaveWindow, ...] = ()
    noise_sd: float = 0.1
    mechanism: str = "separable"
    start: datetime = DEFAULT_START

    def __post_init__(self) -> None:
        if self.mechanism not in ("separable", "additive"):
            raise ValueError("mechanism must be 'separable' or 'additive'")
        if self.days < 1:
            raise ValueError("need at least one day")
        for hw in self.heatwaves:
            if not 0 <= hw.start_day < hw.end_day <= self.days:
                raise ValueError("heatwave window outside the scenario span")


@dataclass
class ScenarioData:
    config: ScenarioConfig
    frame: AlignedFrame
    trees: tuple[TreeRecord, ...]
    truth: dict[str, dict]


def _streams(config: ScenarioConfig) -> list[np.random.Generator]:
    children = np.random.SeedSequence(config.seed).spawn(1 + len(config.trees))
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def _heat_arrays(config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-day envelope suppression factor and temperature boost."""
    suppression = np.ones(config.days)
    boost = np.zeros(config.days)
    for hw in config.heatwaves:
        suppression[hw.start_day : hw.end_day] *= hw.suppression
        boost[hw.start_day : hw.end_day] += hw.temp_boost
    return suppression, boost


def gen_weather(config: ScenarioConfig) -> AlignedFrame:
    """Hourly weather channels for the scenario, including daily covariates."""
    rng = _streams(config)[0]
    w = config.weather
    n = config.days * 24
    hod = np.arange(n) % 24
    day = np.arange(n) // 24

    _, temp_boost = _heat_arrays(config)

    day_offsets = np.empty(config.days)
    innov = rng.normal(0.0, w.day_offset_sd, size=config.days)
    prev = 0.0
    for d in range(config.days):
        prev = w.day_offset_phi * prev + innov[d]
        day_offsets[d] = prev

    seasonal = w.seasonal_amp * np.sin(2.0 * np.pi * day / w.season_days)
    diurnal = w.diurnal_amp * np.cos(2.0 * np.pi * (hod - 15) / 24.0)
    temp = (
        w.base_temp
        + seasonal
        + diurnal
        + day_offsets[day]
        + temp_boost[day]
        + rng.normal(0.0, w.temp_noise_sd, size=n)
    )

    humidity = (
        w.humidity_base
        - w.humidity_slope * (temp - w.base_temp)
        + rng.normal(0.0, w.humidity_noise_sd, size=n)
    )
    humidity = np.clip(humidity, 15.0, 100.0)

    elev = np.sin(np.pi * (hod - w.sunrise) / (w.sunset - w.sunrise))
    elev = np.where((hod > w.sunrise) & (hod < w.sunset), np.maximum(elev, 0.0), 0.0)
    cloud = np.exp(rng.normal(0.0, w.cloud_sd, size=config.days))
    cloud = np.clip(cloud, 0.3, 1.25)
    flicker = np.clip(1.0 + 0.05 * rng.normal(size=n), 0.0, None)
    radiation = w.radiation_peak * elev * cloud[day] * flicker

    rain_days = rng.random(config.days) < w.rain_prob
    decay = (1.0 - w.drying_per_day) ** (1.0 / 24.0)
    soil = np.empty(n)
    level = w.soil_start
    for t in range(n):
        d = t // 24
        if rain_days[d] and t % 24 == 5:
            level = level + w.rain_fill * (w.soil_capacity - level)
        level = w.soil_wilting + (level - w.soil_wilting) * decay
        soil[t] = level

    vpd = tetens_vpd(temp, humidity)

    frame = AlignedFrame(
        start=config.start,
        step_hours=1.0,
        columns={
            "temperature": temp,
            "humidity": humidity,
            "radiation": radiation,
            "vpd": vpd,
            "soil_moisture": soil,
        },
    )
    ensure_daily_covariates(frame)
    return frame


def _saturating(x: np.ndarray, half: float) -> np.ndarray:
    return x / (x + half)


def _standardize_days(values: np.ndarray) -> np.ndarray:
    sd = values.std()
    if sd <= 0:
        return np.zeros_like(values)
    return (values - values.mean()) / sd


def gen_sapflux(config: ScenarioConfig, frame: AlignedFrame) -> tuple[dict[str, np.ndarray], dict[str, dict]]:
    """Sap flux series for every configured tree on an existing weather frame.

    Returns ``(columns, truth)`` where truth holds, per tree, the
    deterministic signal path and the generating component functions.
    """
    n = frame.n
    day = frame.day_index()
    radiation = frame.columns["radiation"]
    vpd = frame.columns["vpd"]
    suppression, _ = _heat_arrays(config)

    streams = _streams(config)[1:]
    columns: dict[str, np.ndarray] = {}
    truth: dict[str, dict] = {}

    for tree, rng in zip(config.trees, streams):
        driver_daily = frame.daily[tree.env_driver]
        z = _standardize_days(driver_daily)
        noise = rng.normal(0.0, config.noise_sd, size=n) if config.noise_sd > 0 else np.zeros(n)

        if config.mechanism == "separable":
            env = np.maximum(1.0 + tree.env_gain * z, 0.2)
            f_v = _saturating(vpd, tree.vpd_half_sat)
            g_r = _saturating(radiation, tree.rad_half_sat)
            signal = tree.amplitude * f_v * g_r * env[day] * suppression[day]
            info = {
                "signal": signal,
                "env": env,
                "suppression": suppression,
                "f_vpd": f_v,
                "g_radiation": g_r,
                "rho": tree.rho,
                "mechanism": "separable",
            }
        else:
            alpha0 = 0.3
            g_amp = 0.45 * tree.amplitude
            f_gain = 0.35 * tree.amplitude / 800.0
            h_amp = 0.25 * tree.amplitude

            def g1_fn(r, tree=tree, g_amp=g_amp):
                return g_amp * _saturating(np.asarray(r, float), tree.rad_half_sat)

            def f2_fn(v, tree=tree, f_gain=f_gain):
                return f_gain * _saturating(np.asarray(v, float), tree.vpd_half_sat)

            drv = driver_daily
            d_mean, d_sd = drv.mean(), max(drv.std(), 1e-12)

            def e3_fn(x, d_mean=d_mean, d_sd=d_sd, tree=tree):
                return 1.0 + 2.0 * tree.env_gain * np.tanh((np.asarray(x, float) - d_mean) / d_sd)

            def h3_fn(v, tree=tree):
                return _saturating(np.asarray(v, float), 1.5 * tree.vpd_half_sat)

            def h3e3_fn(v, x, h_amp=h_amp):
                return h_amp * h3_fn(v) * e3_fn(x)

            term_g1 = g1_fn(radiation)
            term_vc = f2_fn(vpd) * radiation
            term_te = h_amp * h3_fn(vpd) * e3_fn(driver_daily[day])
            signal = (alpha0 + term_g1 + term_vc + term_te) * suppression[day]
            info = {
                "signal": signal,
                "alpha0": alpha0,
                "g1_fn": g1_fn,
                "f2_fn": f2_fn,
                "h3e3_fn": h3e3_fn,
                "term_g1": term_g1,
                "term_vc": term_vc,
                "term_te": term_te,
                "suppression": suppression,
                "rho": tree.rho,
                "mechanism": "additive",
            }

        y = np.empty(n)
        prev = 0.0
        for t in range(n):
            prev = max(signal[t] + tree.rho * prev + noise[t], 0.0)
            y[t] = prev
        columns[tree.tree_id] = y
        truth[tree.tree_id] = info

    return columns, truth


def simulate_scenario(config: ScenarioConfig) -> ScenarioData:
    """Weather plus sap flux for every tree, in one aligned frame."""
    frame = gen_weather(config)
    columns, truth = gen_sapflux(config, frame)
    for name, values in columns.items():
        frame.columns[name] = values
    return ScenarioData(
        config=config,
        frame=frame,
        trees=tuple(t.record() for t in config.trees),
        truth=truth,
    )


_ARCHETYPES = (
    dict(amplitude=3.6, vpd_half_sat=0.65, rad_half_sat=200.0, rho=0.30,
         env_driver="daily_max_temp", env_gain=0.20, circumference_cm=72.0),
    dict(amplitude=3.1, vpd_half_sat=0.80, rad_half_sat=240.0, rho=0.28,
         env_driver="daily_min_humidity", env_gain=0.18, circumference_cm=66.0),
    dict(amplitude=4.0, vpd_half_sat=0.70, rad_half_sat=210.0, rho=0.33,
         env_driver="daily_mean_soil", env_gain=0.22, circumference_cm=78.0),
    dict(amplitude=3.4, vpd_half_sat=0.60, rad_half_sat=260.0, rho=0.26,
         env_driver="daily_max_temp", env_gain=0.15, circumference_cm=70.0),
    dict(amplitude=3.8, vpd_half_sat=0.75, rad_half_sat=190.0, rho=0.31,
         env_driver="daily_mean_soil", env_gain=0.25, circumference_cm=74.0),
)


def five_tree_scenario(
    days: int = 90,
    seed: int = 20230601,
    n_trees: int = 5,
    heatwaves: tuple[HeatwaveWindow, ...] = (),
    noise_sd: float = 0.1,
    mechanism: str = "separable",
) -> ScenarioConfig:
    """A ready-made stand of similar but not identical trees."""
    trees = tuple(
        TreeParams(tree_id=f"tree{i + 1}", bark_depth_cm=1.0, **_ARCHETYPES[i % len(_ARCHETYPES)])
        for i in range(n_trees)
    )
    return ScenarioConfig(
        days=days,
        seed=seed,
        trees=trees,
        heatwaves=heatwaves,
        noise_sd=noise_sd,
        mechanism=mechanism,
    )
