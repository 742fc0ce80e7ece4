"""Shared fixtures and the acceptance-line reporter.

The ``acceptance`` fixture lets the acceptance tests record one
``criterion NN: PASS/FAIL`` line each; the collected lines are printed
as a separate section at the end of the pytest run so the verdicts are
visible even with output capture on.
"""

from __future__ import annotations

from datetime import datetime, timezone

import numpy as np
import pytest

from sapflow.series import TimeSeries
from sapflow.synthetic import ScenarioConfig, TreeParams, simulate_scenario

_ACCEPTANCE_LINES: list[str] = []

T0 = datetime(2023, 6, 1, tzinfo=timezone.utc)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance():
    """Recorder: call with (number, passed, detail) from acceptance tests."""

    def record(num: int, passed: bool, detail: str = "") -> None:
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {num:02d}: {verdict}"
        if detail:
            line += f"  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


@pytest.fixture
def hourly():
    """Factory for hourly TimeSeries starting 2023-06-01T00Z."""

    def make(values, start=T0, step=1.0, unit=""):
        return TimeSeries(start, np.asarray(values, dtype=float), step, unit)

    return make


@pytest.fixture(scope="session")
def two_tree_data():
    """A small synthetic stand shared by the slower integration tests.

    Thirty days and two trees keep the rolling runs fast while still
    exercising distinct environmental drivers per tree.
    """
    config = ScenarioConfig(
        days=30,
        seed=7,
        trees=(
            TreeParams("alder", env_driver="daily_max_temp"),
            TreeParams("birch", amplitude=3.0, env_driver="daily_min_humidity"),
        ),
    )
    return simulate_scenario(config)


@pytest.fixture
def tiny_report():
    """A two-day report built by hand, for codec and chart tests."""
    from sapflow.ensemble import z_value
    from sapflow.rolling import RollingConfig, RollingReport, WindowRecord
    from sapflow.series import DailySeries
    from sapflow.wateruse import propagate_error, water_use

    n = 48
    pred = np.linspace(1.0, 3.0, n)
    spread = np.full(n, 0.25)
    gamma = 1.5
    z = z_value(0.95)
    sd = gamma * spread
    area = 150.0

    def mk(v):
        return TimeSeries(T0, v, 1.0)

    wu = water_use(mk(pred), area)
    bands = propagate_error(area, mk(sd))
    rec = WindowRecord(
        start_day=0,
        end_day=2,
        weights={"alder|daily_max_temp": 0.75, "alder|daily_min_humidity": 0.25},
        gamma=gamma,
        spread_fallback=False,
        excluded=(),
        init_trees=("alder",),
        per_init={"alder": pred},
        clamp_count=0,
        n_scoring_rows=24,
    )
    return RollingReport(
        config=RollingConfig(initial_days=2, window_days=2, weight_window_days=2),
        windows=[rec],
        member_ids=("alder|daily_max_temp", "alder|daily_min_humidity"),
        prediction=mk(pred),
        spread=mk(spread),
        lower=mk(np.maximum(pred - z * sd, 0.0)),
        upper=mk(pred + z * sd),
        water_use=wu,
        water_sd=bands.sd_liters,
        water_sd_conservative=bands.sd_liters_conservative,
        water_lower=DailySeries(
            wu.liters.start_day,
            np.maximum(wu.liters.values - z * bands.sd_liters.values, 0.0),
        ),
        water_upper=DailySeries(
            wu.liters.start_day, wu.liters.values + z * bands.sd_liters.values
        ),
        total_area_cm2=area,
        clamp_count=3,
    )
