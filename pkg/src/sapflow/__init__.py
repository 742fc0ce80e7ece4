"""Forecasting toolkit for tree sap flux density and stand water use.

The pipeline in one breath: fit penalized additive models of hourly sap
flux per tree (``model``), combine them into a rolling ensemble forecast
with calibrated uncertainty (``ensemble``, ``rolling``), convert flux to
daily liters through sapwood geometry (``wateruse``), and judge the
results with a bootstrap predictive-ability test (``spa``) and residual
changepoint analysis (``changepoint``).  ``synthetic`` generates seeded
test scenarios, ``io``/``plots``/``cli`` handle artifacts.
"""

from .basis import BasisDef, bspline_matrix, difference_penalty, make_bspline_basis, tensor_matrix
from .changepoint import (
    CropsCurve,
    Segmentation,
    crops,
    default_penalty,
    default_penalty_range,
    pelt,
    select_by_count,
    split_on_gaps,
)
from .ensemble import (
    WeightScheme,
    compute_weights,
    gamma_scale,
    interval,
    spread_series,
)
from .errors import SapflowError
from .model import (
    FLEX_CHOICES,
    FittedModel,
    ModelSpec,
    fit_additive_model,
    load_model,
    model_from_dict,
    model_to_dict,
    residuals,
    rolling_predict,
    save_model,
)
from .rolling import (
    Metrics,
    RollingConfig,
    RollingReport,
    build_init_day_map,
    evaluate,
    run_cross_season,
    run_rolling,
)
from .series import AlignedFrame, DailySeries, TimeSeries, align
from .spa import LossDiffPanel, SpaResult, loss_diffs, spa_pvalue
from .synthetic import (
    HeatwaveWindow,
    ScenarioConfig,
    TreeParams,
    five_tree_scenario,
    simulate_scenario,
)
from .wateruse import (
    TreeRecord,
    propagate_error,
    sapwood_area,
    tree_water_use,
    two_ring_areas,
    water_use,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AlignedFrame",
    "BasisDef",
    "CropsCurve",
    "DailySeries",
    "FLEX_CHOICES",
    "FittedModel",
    "HeatwaveWindow",
    "LossDiffPanel",
    "Metrics",
    "ModelSpec",
    "RollingConfig",
    "RollingReport",
    "SapflowError",
    "ScenarioConfig",
    "Segmentation",
    "SpaResult",
    "TimeSeries",
    "TreeParams",
    "TreeRecord",
    "WeightScheme",
    "align",
    "bspline_matrix",
    "build_init_day_map",
    "compute_weights",
    "crops",
    "default_penalty",
    "default_penalty_range",
    "difference_penalty",
    "evaluate",
    "fit_additive_model",
    "five_tree_scenario",
    "gamma_scale",
    "interval",
    "load_model",
    "loss_diffs",
    "make_bspline_basis",
    "model_from_dict",
    "model_to_dict",
    "pelt",
    "propagate_error",
    "residuals",
    "rolling_predict",
    "run_cross_season",
    "run_rolling",
    "sapwood_area",
    "save_model",
    "select_by_count",
    "simulate_scenario",
    "spa_pvalue",
    "split_on_gaps",
    "spread_series",
    "tensor_matrix",
    "tree_water_use",
    "two_ring_areas",
    "water_use",
]
