"""Additive model assembly, GCV fitting and prediction.

Coverage:
- term naming and spec round trips
- design dimensions (default spec is 57 columns) and row dropping
- penalized_fit against a least-squares oracle and a hand-computed GCV
- tie-breaking toward heavier smoothing and the grid-edge warning
- predict_one_step cross-checked against the fitted term functions
- rolling_predict recursion, clamping and serialization round trips
"""

from __future__ import annotations

import warnings
from datetime import datetime, timezone

import numpy as np
import pytest

from sapflow.errors import (
    GridExhausted,
    InsufficientData,
    LowDataWarning,
    MissingChannel,
    MissingCovariate,
    SingularSystem,
    VersionMismatch,
)
from sapflow.model import (
    DEFAULT_LAMBDA_GRID,
    ModelSpec,
    PenaltyBlock,
    TermDef,
    build_design,
    ensure_daily_covariates,
    fit_additive_model,
    load_model,
    model_from_dict,
    model_to_dict,
    penalized_fit,
    predict_one_step,
    residuals,
    rolling_predict,
    save_model,
)
from sapflow.series import AlignedFrame

T0 = datetime(2023, 6, 1, tzinfo=timezone.utc)


def _tetens(temp, rh):
    return 0.6108 * np.exp(17.27 * temp / (temp + 237.3)) * (1.0 - rh / 100.0)


def make_frame(n_days=30, seed=0, rho=0.3):
    """Weather-like channels plus a response with a known backbone."""
    rng = np.random.default_rng(seed)
    n = 24 * n_days
    hod = np.arange(n) % 24
    temp = 18.0 + 6.0 * np.sin((hod - 9.0) / 24.0 * 2 * np.pi)
    temp += np.repeat(rng.normal(0.0, 1.0, n_days), 24)
    humidity = np.clip(60.0 - 1.5 * (temp - 18.0) + rng.normal(0, 3, n), 20, 100)
    sun = np.where((hod >= 6) & (hod < 18), np.sin((hod - 6) / 12 * np.pi), 0.0)
    radiation = 800.0 * sun * (0.7 + 0.3 * rng.random(n))
    soil = np.clip(0.3 - 0.002 * np.arange(n) / 24 + rng.normal(0, 0.005, n), 0.1, 0.4)
    vpd = _tetens(temp, humidity)

    signal = 0.3 + 0.0035 * radiation + 0.25 * vpd + 0.02 * (temp - 18.0)
    y = np.empty(n)
    prev = 0.0
    eps = rng.normal(0.0, 0.05, n)
    for t in range(n):
        y[t] = max(signal[t] + rho * prev + eps[t], 0.0)
        prev = y[t]

    frame = AlignedFrame(
        T0,
        1.0,
        {
            "y": y,
            "temperature": temp,
            "humidity": humidity,
            "radiation": radiation,
            "soil_moisture": soil,
            "vpd": vpd,
        },
    )
    ensure_daily_covariates(frame)
    return frame


@pytest.fixture(scope="module")
def frame():
    return make_frame()


@pytest.fixture(scope="module")
def model(frame):
    # the tensor term is weak under this backbone, so its smoothing
    # weight legitimately lands on the heavy edge of the grid
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridExhausted)
        return fit_additive_model(ModelSpec(response="y"), frame)


class TestTermDef:
    def test_auto_names(self):
        assert TermDef("smooth_1d", ("radiation",), (10,)).name == "s(radiation)"
        assert (
            TermDef("varying_coeff", ("vpd", "radiation"), (10,)).name
            == "s(vpd)*radiation"
        )
        assert (
            TermDef("tensor_2d", ("vpd", "daily_max_temp"), (6, 6)).name
            == "te(vpd,daily_max_temp)"
        )

    def test_bad_kind_and_constraint(self):
        with pytest.raises(ValueError):
            TermDef("wiggle", ("x",), (5,))
        with pytest.raises(ValueError):
            TermDef("smooth_1d", ("x",), (5,), constraint="center")

    def test_round_trip(self):
        t = TermDef("tensor_2d", ("vpd", "daily_mean_soil"), (6, 6), degree=2)
        assert TermDef.from_dict(t.to_dict()) == t


class TestModelSpec:
    def test_default_terms_follow_flexible_covariate(self):
        spec = ModelSpec(response="y", flexible_covariate="daily_mean_soil")
        names = [t.name for t in spec.smooth_terms]
        assert names == [
            "s(radiation)",
            "s(vpd)*radiation",
            "te(vpd,daily_mean_soil)",
        ]

    def test_covariate_names_deduplicated(self):
        names = ModelSpec(response="y").covariate_names()
        assert names == ("temperature", "humidity", "radiation", "vpd", "daily_max_temp")

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelSpec(response="y", lag_orders=(0,))
        with pytest.raises(ValueError):
            ModelSpec(response="y", radiation_lag=2)

    def test_round_trip(self):
        spec = ModelSpec(response="y", flexible_covariate="daily_min_humidity")
        assert ModelSpec.from_dict(spec.to_dict()) == spec


class TestEnsureDailyCovariates:
    def test_derives_all_three(self, frame):
        for name in ("daily_max_temp", "daily_min_humidity", "daily_mean_soil"):
            assert name in frame.daily
        day_temp = frame.columns["temperature"][:24]
        assert frame.daily["daily_max_temp"][0] == pytest.approx(day_temp.max())

    def test_skips_missing_channels(self):
        f = AlignedFrame(T0, 1.0, {"temperature": np.ones(48)})
        ensure_daily_covariates(f)
        assert "daily_max_temp" in f.daily
        assert "daily_min_humidity" not in f.daily


class TestBuildDesign:
    def test_default_width_is_57(self, frame):
        design = build_design(ModelSpec(response="y"), frame)
        # 1 intercept + 1 lag + 2 linear + 9 + 9 + 35 constrained spline cols
        assert design.X.shape[1] == 57
        assert design.penalties[-1].cols == (22, 57)

    def test_lag_drops_first_row(self, frame):
        design = build_design(ModelSpec(response="y"), frame)
        assert design.row_index[0] == 1
        assert len(design.y) == frame.n - 1

    def test_missing_response_drops_row_and_lag_successor(self, frame):
        cols = {k: v.copy() for k, v in frame.columns.items()}
        cols["y"][100] = np.nan
        f = AlignedFrame(T0, 1.0, cols)
        ensure_daily_covariates(f)
        design = build_design(ModelSpec(response="y"), f)
        assert 100 not in design.row_index
        assert 101 not in design.row_index
        assert 102 in design.row_index

    def test_constant_covariate_rejected(self, frame):
        cols = {k: v.copy() for k, v in frame.columns.items()}
        cols["vpd"] = np.full(frame.n, 0.8)
        f = AlignedFrame(T0, 1.0, cols)
        ensure_daily_covariates(f)
        with pytest.raises(InsufficientData, match="constant"):
            build_design(ModelSpec(response="y"), f)

    def test_low_data_warning(self):
        f = make_frame(n_days=8)
        with pytest.warns(LowDataWarning):
            build_design(ModelSpec(response="y"), f)

    def test_too_few_rows(self):
        f = make_frame(n_days=30)
        sub = f.subframe(0, 50)
        with pytest.raises(InsufficientData):
            build_design(ModelSpec(response="y"), sub)

    def test_missing_channel(self, frame):
        with pytest.raises(MissingChannel):
            build_design(ModelSpec(response="absent"), frame)


class TestPenalizedFit:
    def test_unpenalized_matches_lstsq(self):
        rng = np.random.default_rng(50)
        x = rng.normal(size=(60, 4))
        y = rng.normal(size=60)
        fit = penalized_fit(x, y, penalties=[])
        want, *_ = np.linalg.lstsq(x, y, rcond=None)
        np.testing.assert_allclose(fit.coefficients, want, atol=1e-10)
        assert fit.edf == pytest.approx(4.0, abs=1e-8)

    def test_gcv_matches_hand_formula(self):
        rng = np.random.default_rng(51)
        x = rng.normal(size=(80, 6))
        y = rng.normal(size=80)
        s = np.eye(3)
        lam = 7.5
        block = PenaltyBlock(s, (3, 6), "pen")
        # a one-candidate grid pins the weight and sits on the grid edge
        with pytest.warns(GridExhausted):
            fit = penalized_fit(x, y, [block], lambda_grid=np.array([lam]))
        a = x.T @ x
        a[3:6, 3:6] += lam * s
        beta = np.linalg.solve(a, x.T @ y)
        edf = float(np.trace(np.linalg.solve(a, x.T @ x)))
        rss = float(np.sum((y - x @ beta) ** 2))
        np.testing.assert_allclose(fit.coefficients, beta, atol=1e-10)
        assert fit.edf == pytest.approx(edf, rel=1e-10)
        assert fit.gcv == pytest.approx(80 * rss / (80 - edf) ** 2, rel=1e-10)

    def test_flat_gcv_prefers_heavier_smoothing(self):
        # a zero penalty matrix makes every candidate tie; the search must
        # keep the largest weight and then flag the grid edge
        rng = np.random.default_rng(52)
        x = rng.normal(size=(50, 3))
        y = rng.normal(size=50)
        block = PenaltyBlock(np.zeros((2, 2)), (1, 3), "flat")
        with pytest.warns(GridExhausted):
            fit = penalized_fit(x, y, [block])
        assert fit.lambdas[0] == DEFAULT_LAMBDA_GRID[-1]

    def test_singular_design(self):
        x = np.zeros((30, 2))
        x[:, 0] = 1.0  # second column identically zero
        y = np.arange(30.0)
        with pytest.raises(SingularSystem):
            penalized_fit(x, y, penalties=[])

    def test_lambda_init_shape_checked(self):
        x = np.random.default_rng(53).normal(size=(40, 4))
        block = PenaltyBlock(np.eye(2), (2, 4), "pen")
        with pytest.raises(ValueError):
            penalized_fit(x, x[:, 0], [block], lambda_init=np.ones(3))


class TestFittedModel:
    def test_basic_shape(self, model):
        assert model.p == 57
        assert set(model.lambdas) == {
            "s(radiation)",
            "s(vpd)*radiation",
            "te(vpd,daily_max_temp)",
        }
        assert 0.0 <= model.deviance_explained <= 1.0
        assert model.deviance_explained > 0.8
        assert model.n_train == 719

    def test_prediction_matches_term_decomposition(self, model):
        # independent path: intercept + linear parts + the three fitted
        # term functions evaluated directly + the lag contribution
        cov = {
            "temperature": 21.0,
            "humidity": 55.0,
            "radiation": 420.0,
            "vpd": 1.1,
            "daily_max_temp": 24.0,
        }
        y_prev = 1.3
        got = predict_one_step(model, cov, y_prev)
        want = (
            model.intercept
            + model.lag_coefficient(1) * y_prev
            + model.linear_coefficient("temperature") * cov["temperature"]
            + model.linear_coefficient("humidity") * cov["humidity"]
            + model.term_curve("s(radiation)", np.array([cov["radiation"]]))[0]
            + model.term_curve("s(vpd)*radiation", np.array([cov["vpd"]]))[0]
            * cov["radiation"]
            + model.term_surface(
                "te(vpd,daily_max_temp)",
                np.array([cov["vpd"]]),
                np.array([cov["daily_max_temp"]]),
            )[0, 0]
        )
        assert got == pytest.approx(max(want, 0.0), abs=1e-10)

    def test_out_of_range_covariate_clamps(self, model):
        cov = {
            "temperature": 21.0,
            "humidity": 55.0,
            "radiation": 1e9,
            "vpd": 1.1,
            "daily_max_temp": 24.0,
        }
        hi = model.training_range["radiation"][1]
        at_edge = dict(cov, radiation=hi)
        assert predict_one_step(model, cov, 1.0) == predict_one_step(
            model, at_edge, 1.0
        )

    def test_missing_covariate(self, model):
        cov = {"temperature": 21.0, "humidity": 55.0, "radiation": 400.0, "vpd": 1.1}
        with pytest.raises(MissingCovariate, match="daily_max_temp"):
            predict_one_step(model, cov, 1.0)
        with pytest.raises(MissingCovariate):
            predict_one_step(model, dict(cov, daily_max_temp=np.nan), 1.0)

    @pytest.mark.filterwarnings("ignore::sapflow.errors.GridExhausted")
    def test_scalar_lag_rejected_for_multi_lag_spec(self, frame):
        spec = ModelSpec(response="y", lag_orders=(1, 2))
        m = fit_additive_model(spec, frame)
        cov = {
            "temperature": 21.0,
            "humidity": 55.0,
            "radiation": 400.0,
            "vpd": 1.1,
            "daily_max_temp": 24.0,
        }
        with pytest.raises(MissingCovariate, match="several lags"):
            predict_one_step(m, cov, 1.0)
        assert predict_one_step(m, cov, {1: 1.0, 2: 0.8}) >= 0.0


class TestRollingPredict:
    def test_matches_one_step_chain(self, model, frame):
        start, steps = 240, 48
        series, clamps = rolling_predict(model, frame, start, steps, y_init=0.9)
        assert clamps == 0
        cov_names = model.spec.covariate_names()
        daily = {n: frame.daily_at_rows(n) for n in frame.daily}
        prev = 0.9
        for s in range(steps):
            row = start + s
            cov = {}
            for name in cov_names:
                cov[name] = (
                    daily[name][row] if name in daily else frame.columns[name][row]
                )
            prev = predict_one_step(model, cov, prev)
            assert series.values[s] == pytest.approx(prev, abs=1e-10)

    def test_window_bounds_checked(self, model, frame):
        with pytest.raises(ValueError):
            rolling_predict(model, frame, frame.n - 10, 20, y_init=1.0)

    def test_missing_covariate_names_row(self, model):
        f = make_frame(n_days=10, seed=1)
        cols = {k: v.copy() for k, v in f.columns.items()}
        cols["vpd"][50] = np.nan
        broken = AlignedFrame(T0, 1.0, cols)
        ensure_daily_covariates(broken)
        with pytest.raises(MissingCovariate, match="row 50"):
            rolling_predict(model, broken, 40, 24, y_init=1.0)

    @pytest.mark.filterwarnings("ignore::sapflow.errors.LowDataWarning")
    @pytest.mark.filterwarnings("ignore::sapflow.errors.GridExhausted")
    def test_clamp_count_positive_off_support(self, frame):
        head = frame.subframe(0, 15 * 24)
        m = fit_additive_model(ModelSpec(response="y"), head)
        _, clamps = rolling_predict(m, frame, 20 * 24, 5 * 24, y_init=1.0)
        assert clamps > 0


class TestResiduals:
    def test_mask_and_centering(self, model, frame):
        res = residuals(model, frame)
        assert np.isnan(res.values[0])  # lag makes row 0 untrainable
        finite = res.values[1:]
        assert np.isfinite(finite).all()
        # the intercept is unpenalized, so training residuals sum to zero
        assert float(finite.sum()) == pytest.approx(0.0, abs=1e-6)

    def test_missing_rows_propagate(self, model):
        f = make_frame(n_days=10, seed=2)
        cols = {k: v.copy() for k, v in f.columns.items()}
        cols["y"][30] = np.nan
        broken = AlignedFrame(T0, 1.0, cols)
        ensure_daily_covariates(broken)
        res = residuals(model, broken, response="y")
        assert np.isnan(res.values[30]) and np.isnan(res.values[31])
        assert np.isfinite(res.values[32])


class TestSerialization:
    def test_dict_round_trip_preserves_predictions(self, model, frame):
        clone = model_from_dict(model_to_dict(model))
        a, _ = rolling_predict(model, frame, 200, 48, y_init=1.0)
        b, _ = rolling_predict(clone, frame, 200, 48, y_init=1.0)
        np.testing.assert_array_equal(a.values, b.values)

    def test_file_round_trip(self, model, frame, tmp_path):
        path = str(tmp_path / "model.json")
        save_model(model, path)
        clone = load_model(path)
        a, _ = rolling_predict(model, frame, 100, 24, y_init=0.5)
        b, _ = rolling_predict(clone, frame, 100, 24, y_init=0.5)
        np.testing.assert_array_equal(a.values, b.values)

    def test_version_mismatch(self, model):
        doc = model_to_dict(model)
        doc["schema_version"] = 99
        with pytest.raises(VersionMismatch):
            model_from_dict(doc)
