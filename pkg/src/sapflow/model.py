"""Penalized additive model for hourly sap flux density.

The default model explains the response at hour ``t`` with an intercept,
the lag-one response, linear air temperature and humidity effects, a smooth
in radiation, a radiation-varying smooth in vapour pressure deficit, and a
tensor-product surface in vapour pressure deficit and one day-level
"flexible" covariate (daily maximum temperature, daily minimum humidity,
or daily mean soil moisture).  Each smooth carries a difference penalty on
its basis coefficients, and the penalty weights are chosen by generalized
cross validation on a fixed log-spaced grid, one coordinate at a time.

``radiation_lag=1`` switches every use of the radiation channel to its
lag-one value, which trades a little fit for a model that can run on a
covariate forecast that stops one hour early.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from datetime import timedelta
from typing import Iterable, Mapping

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import basis as _basis
from .basis import BasisDef, SumToZero
from .errors import (
    GridExhausted,
    InsufficientData,
    LowDataWarning,
    MissingChannel,
    MissingCovariate,
    SingularSystem,
    VersionMismatch,
)
from .series import AlignedFrame, TimeSeries, daily_aggregate

__all__ = [
    "TermDef",
    "ModelSpec",
    "PenaltyBlock",
    "DesignMatrices",
    "FittedModel",
    "FLEX_CHOICES",
    "DEFAULT_LAMBDA_GRID",
    "default_smooth_terms",
    "ensure_daily_covariates",
    "build_design",
    "penalized_fit",
    "fit_additive_model",
    "predict_one_step",
    "rolling_predict",
    "residuals",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]

SCHEMA_VERSION = 1

FLEX_CHOICES = ("daily_max_temp", "daily_min_humidity", "daily_mean_soil")

# daily covariate name -> (hourly source channel, day statistic)
DAILY_SOURCES = {
    "daily_max_temp": ("temperature", "max"),
    "daily_min_humidity": ("humidity", "min"),
    "daily_mean_soil": ("soil_moisture", "mean"),
}

DEFAULT_LAMBDA_GRID = np.logspace(-4.0, 6.0, 21)

_TERM_KINDS = ("smooth_1d", "varying_coeff", "tensor_2d", "by_factor_smooth")


@dataclass(frozen=True)
class TermDef:
    """Declaration of one smooth model term.

    kind
        ``smooth_1d``        -- smooth in ``inputs[0]``
        ``varying_coeff``    -- smooth in ``inputs[0]`` times the raw value
                                of ``inputs[1]``
        ``tensor_2d``        -- tensor-product surface in ``inputs``
        ``by_factor_smooth`` -- one copy of a smooth in ``inputs[0]`` per
                                level of the integer factor ``inputs[1]``
    """

    kind: str
    inputs: tuple[str, ...]
    num_basis: tuple[int, ...]
    degree: int = 3
    penalty_order: int = 2
    constraint: str = "sum_to_zero"
    levels: int = 0
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in _TERM_KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "num_basis", tuple(int(k) for k in self.num_basis))
        if self.constraint not in ("sum_to_zero", "none"):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.kind == "by_factor_smooth" and self.levels < 2:
            raise ValueError("by_factor_smooth needs levels >= 2")
        if not self.name:
            object.__setattr__(self, "name", self._default_name())

    def _default_name(self) -> str:
        if self.kind == "smooth_1d":
            return f"s({self.inputs[0]})"
        if self.kind == "varying_coeff":
            return f"s({self.inputs[0]})*{self.inputs[1]}"
        if self.kind == "tensor_2d":
            return f"te({self.inputs[0]},{self.inputs[1]})"
        return f"s({self.inputs[0]})by({self.inputs[1]})"

    def smooth_inputs(self) -> tuple[str, ...]:
        """Input names that get a spline basis (excludes multipliers/factors)."""
        if self.kind in ("smooth_1d",):
            return (self.inputs[0],)
        if self.kind in ("varying_coeff", "by_factor_smooth"):
            return (self.inputs[0],)
        return self.inputs

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "inputs": list(self.inputs),
            "num_basis": list(self.num_basis),
            "degree": self.degree,
            "penalty_order": self.penalty_order,
            "constraint": self.constraint,
            "levels": self.levels,
            "name": self.name,
        }

    @staticmethod
    def from_dict(d: dict) -> "TermDef":
        return TermDef(
            kind=d["kind"],
            inputs=tuple(d["inputs"]),
            num_basis=tuple(d["num_basis"]),
            degree=int(d["degree"]),
            penalty_order=int(d["penalty_order"]),
            constraint=d["constraint"],
            levels=int(d["levels"]),
            name=d["name"],
        )


def default_smooth_terms(flexible_covariate: str) -> tuple[TermDef, ...]:
    """The standard three smooths: s(radiation), s(vpd)*radiation and a
    vpd-by-flexible-covariate tensor surface."""
    return (
        TermDef("smooth_1d", ("radiation",), (10,)),
        TermDef("varying_coeff", ("vpd", "radiation"), (10,)),
        TermDef("tensor_2d", ("vpd", flexible_covariate), (6, 6)),
    )


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to build the design matrix for one tree."""

    response: str
    flexible_covariate: str = "daily_max_temp"
    lag_orders: tuple[int, ...] = (1,)
    linear_terms: tuple[str, ...] = ("temperature", "humidity")
    smooth_terms: tuple[TermDef, ...] | None = None
    radiation_lag: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "lag_orders", tuple(int(k) for k in self.lag_orders))
        object.__setattr__(self, "linear_terms", tuple(self.linear_terms))
        if any(k < 1 for k in self.lag_orders):
            raise ValueError("lag orders must be >= 1")
        if self.radiation_lag not in (0, 1):
            raise ValueError("radiation_lag must be 0 or 1")
        if self.smooth_terms is None:
            object.__setattr__(
                self, "smooth_terms", default_smooth_terms(self.flexible_covariate)
            )
        else:
            object.__setattr__(self, "smooth_terms", tuple(self.smooth_terms))

    def covariate_names(self) -> tuple[str, ...]:
        """All covariates the design needs, in a stable order."""
        names: list[str] = list(self.linear_terms)
        for term in self.smooth_terms:
            for nm in term.inputs:
                if nm not in names:
                    names.append(nm)
        return tuple(names)

    def to_dict(self) -> dict:
        return {
            "response": self.response,
            "flexible_covariate": self.flexible_covariate,
            "lag_orders": list(self.lag_orders),
            "linear_terms": list(self.linear_terms),
            "smooth_terms": [t.to_dict() for t in self.smooth_terms],
            "radiation_lag": self.radiation_lag,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(
            response=d["response"],
            flexible_covariate=d["flexible_covariate"],
            lag_orders=tuple(d["lag_orders"]),
            linear_terms=tuple(d["linear_terms"]),
            smooth_terms=tuple(TermDef.from_dict(t) for t in d["smooth_terms"]),
            radiation_lag=int(d["radiation_lag"]),
        )


@dataclass
class TermLayout:
    """A smooth term bound to its bases, constraint and column block."""

    term: TermDef
    bases: tuple[BasisDef, ...]
    transform: SumToZero | None
    penalty: np.ndarray
    cols: tuple[int, int]

    def raw_width(self) -> int:
        if self.term.kind == "tensor_2d":
            return self.bases[0].num_basis * self.bases[1].num_basis
        if self.term.kind == "by_factor_smooth":
            return self.bases[0].num_basis * self.term.levels
        return self.bases[0].num_basis

    def width(self) -> int:
        return self.cols[1] - self.cols[0]

    def raw_block(self, cov: Mapping[str, np.ndarray]) -> np.ndarray:
        """Unconstrained basis block for rows described by ``cov`` arrays."""
        term = self.term
        if term.kind == "smooth_1d":
            return _basis.bspline_matrix(self.bases[0], cov[term.inputs[0]])
        if term.kind == "varying_coeff":
            block = _basis.bspline_matrix(self.bases[0], cov[term.inputs[0]])
            return block * cov[term.inputs[1]][:, None]
        if term.kind == "tensor_2d":
            bx = _basis.bspline_matrix(self.bases[0], cov[term.inputs[0]])
            by = _basis.bspline_matrix(self.bases[1], cov[term.inputs[1]])
            return _basis.tensor_matrix(bx, by)
        # by_factor_smooth
        block = _basis.bspline_matrix(self.bases[0], cov[term.inputs[0]])
        codes = cov[term.inputs[1]]
        n, k = block.shape
        out = np.zeros((n, k * self.term.levels))
        for row in range(n):
            out[row] = _basis.by_factor_row(
                block[row], int(round(codes[row])), self.term.levels
            )
        return out

    def block(self, cov: Mapping[str, np.ndarray]) -> np.ndarray:
        raw = self.raw_block(cov)
        if self.transform is not None:
            return self.transform.apply(raw)
        return raw

    def full_coefficients(self, coef: np.ndarray) -> np.ndarray:
        """Term coefficients mapped back to the unconstrained basis."""
        block = coef[self.cols[0] : self.cols[1]]
        if self.transform is not None:
            return self.transform.expand(block)
        return np.asarray(block)


@dataclass(frozen=True)
class PenaltyBlock:
    """A quadratic penalty acting on one column block of the design."""

    matrix: np.ndarray
    cols: tuple[int, int]
    name: str


@dataclass
class DesignMatrices:
    """Assembled training design for one model."""

    X: np.ndarray
    y: np.ndarray
    penalties: list[PenaltyBlock]
    row_index: np.ndarray
    layouts: list[TermLayout]
    lag_cols: dict[int, int]
    linear_cols: dict[str, int]
    training_range: dict[str, tuple[float, float]]


# ---------------------------------------------------------------------------
# covariate resolution


def ensure_daily_covariates(frame: AlignedFrame) -> None:
    """Fill in the three standard day-level covariates where possible."""
    for name, (channel, stat) in DAILY_SOURCES.items():
        if name in frame.daily or channel not in frame.columns:
            continue
        daily = daily_aggregate(frame.series(channel), stat)
        frame.add_daily(name, daily.values)


def _resolve_covariates(
    spec: ModelSpec, frame: AlignedFrame, names: Iterable[str]
) -> dict[str, np.ndarray]:
    """Per-row arrays for every named covariate, honouring the radiation lag."""
    out: dict[str, np.ndarray] = {}
    for name in names:
        if name in frame.daily:
            arr = frame.daily_at_rows(name)
        elif name in frame.columns:
            arr = frame.columns[name].astype(float)
        else:
            raise MissingChannel(f"channel {name!r} not present in frame")
        if np.all(np.isnan(arr)):
            raise MissingChannel(f"channel {name!r} is entirely missing")
        if name == "radiation" and spec.radiation_lag == 1:
            shifted = np.full_like(arr, np.nan)
            shifted[1:] = arr[:-1]
            arr = shifted
        out[name] = arr
    return out


def _response_array(spec: ModelSpec, frame: AlignedFrame, response: str | None) -> tuple[str, np.ndarray]:
    name = response or spec.response
    if name not in frame.columns:
        raise MissingChannel(f"response channel {name!r} not present in frame")
    y = frame.columns[name].astype(float)
    if np.all(np.isnan(y)):
        raise MissingChannel(f"response channel {name!r} is entirely missing")
    return name, y


# ---------------------------------------------------------------------------
# design assembly


def build_design(
    spec: ModelSpec, frame: AlignedFrame, response: str | None = None
) -> DesignMatrices:
    """Assemble the penalized-regression design for one tree.

    Rows where the response, any lagged response or any covariate is
    missing are dropped; ``row_index`` records which frame rows survived.
    Spline knots are placed evenly over the observed range of each smooth
    input, and each smooth block is reparameterized so its fitted values
    sum to zero over the training rows.
    """
    resp_name, y_full = _response_array(spec, frame, response)
    cov = _resolve_covariates(spec, frame, spec.covariate_names())

    n = frame.n
    valid = ~np.isnan(y_full)
    max_lag = max(spec.lag_orders) if spec.lag_orders else 0
    lag_arrays: dict[int, np.ndarray] = {}
    for k in spec.lag_orders:
        shifted = np.full(n, np.nan)
        shifted[k:] = y_full[:-k]
        lag_arrays[k] = shifted
        valid &= ~np.isnan(shifted)
    for arr in cov.values():
        valid &= ~np.isnan(arr)
    if max_lag:
        valid[:max_lag] = False

    rows = np.flatnonzero(valid)
    p = (
        1
        + len(spec.lag_orders)
        + len(spec.linear_terms)
        + _constrained_width(spec)
    )
    if len(rows) <= p:
        raise InsufficientData(
            f"{len(rows)} complete rows for {p} design columns"
        )
    if len(rows) < 10 * p:
        warnings.warn(
            f"only {len(rows)} complete rows for {p} columns (< 10 per column)",
            LowDataWarning,
            stacklevel=2,
        )

    cov_rows = {name: arr[rows] for name, arr in cov.items()}
    training_range = {
        name: (float(np.min(vals)), float(np.max(vals)))
        for name, vals in cov_rows.items()
    }

    col = 0
    lag_cols: dict[int, int] = {}
    linear_cols: dict[str, int] = {}
    col += 1  # intercept
    for k in spec.lag_orders:
        lag_cols[k] = col
        col += 1
    for name in spec.linear_terms:
        linear_cols[name] = col
        col += 1

    layouts: list[TermLayout] = []
    blocks: list[np.ndarray] = []
    penalties: list[PenaltyBlock] = []
    for term in spec.smooth_terms:
        bases = []
        for nm, k in zip(term.smooth_inputs(), term.num_basis):
            lo, hi = training_range[nm]
            if hi <= lo:
                raise InsufficientData(
                    f"covariate {nm!r} is constant over the training rows"
                )
            bases.append(_basis.make_bspline_basis(lo, hi, k, term.degree))
        layout = TermLayout(term, tuple(bases), None, np.empty(0), (0, 0))
        raw = layout.raw_block(cov_rows)
        pen = _raw_penalty(term, bases)
        if term.constraint == "sum_to_zero":
            constrained, transform = _basis.apply_sum_to_zero(raw)
            layout.transform = transform
            pen = transform.penalty(pen)
        else:
            constrained = raw
        layout.penalty = pen
        layout.cols = (col, col + constrained.shape[1])
        col += constrained.shape[1]
        layouts.append(layout)
        blocks.append(constrained)
        penalties.append(PenaltyBlock(pen, layout.cols, term.name))

    n_rows = len(rows)
    X = np.empty((n_rows, col))
    X[:, 0] = 1.0
    for k, c in lag_cols.items():
        X[:, c] = lag_arrays[k][rows]
    for name, c in linear_cols.items():
        X[:, c] = cov_rows[name]
    for layout, block in zip(layouts, blocks):
        X[:, layout.cols[0] : layout.cols[1]] = block

    return DesignMatrices(
        X=X,
        y=y_full[rows],
        penalties=penalties,
        row_index=rows,
        layouts=layouts,
        lag_cols=lag_cols,
        linear_cols=linear_cols,
        training_range=training_range,
    )


def _constrained_width(spec: ModelSpec) -> int:
    total = 0
    for term in spec.smooth_terms:
        if term.kind == "tensor_2d":
            w = term.num_basis[0] * term.num_basis[1]
        elif term.kind == "by_factor_smooth":
            w = term.num_basis[0] * term.levels
        else:
            w = term.num_basis[0]
        if term.constraint == "sum_to_zero":
            w -= 1
        total += w
    return total


def _raw_penalty(term: TermDef, bases: list[BasisDef]) -> np.ndarray:
    if term.kind == "tensor_2d":
        px = _basis.difference_penalty(bases[0].num_basis, term.penalty_order)
        py = _basis.difference_penalty(bases[1].num_basis, term.penalty_order)
        return _basis.tensor_penalty(px, py)
    pen = _basis.difference_penalty(bases[0].num_basis, term.penalty_order)
    if term.kind == "by_factor_smooth":
        return np.kron(np.eye(term.levels), pen)
    return pen


# ---------------------------------------------------------------------------
# penalized least squares with GCV grid search


@dataclass
class PenalizedFit:
    """Numeric result of one penalized least-squares fit."""

    coefficients: np.ndarray
    lambdas: np.ndarray
    edf: float
    edf_per_block: np.ndarray
    rss: float
    sigma2: float
    gcv: float
    deviance_explained: float
    n_rows: int


def penalized_fit(
    X: np.ndarray,
    y: np.ndarray,
    penalties: list[PenaltyBlock],
    lambda_grid: np.ndarray | None = None,
    lambda_init: np.ndarray | None = None,
) -> PenalizedFit:
    """Solve ``min ||y - X b||^2 + sum_j lam_j b' S_j b`` with GCV-chosen weights.

    The smoothing weights are searched one penalty at a time over the grid
    (two full sweeps), scoring each candidate with
    ``GCV = n * RSS / (n - tr(H))^2`` and breaking ties toward the largest
    weight.  A weight landing on the edge of the grid triggers a
    ``GridExhausted`` warning.  ``lambda_init`` seeds the search (useful
    when refitting on slightly longer data); the sweep still visits the
    whole grid, so the start point only matters through the coordinate
    interactions.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if lambda_grid is None:
        lambda_grid = DEFAULT_LAMBDA_GRID
    xtx = X.T @ X
    xty = X.T @ y
    yty = float(y @ y)

    def factor(lams: np.ndarray):
        a = xtx.copy()
        for lam, pen in zip(lams, penalties):
            lo, hi = pen.cols
            a[lo:hi, lo:hi] += lam * pen.matrix
        try:
            return cho_factor(a, lower=True)
        except LinAlgError as exc:
            raise SingularSystem(f"penalized normal equations singular: {exc}") from exc

    def score(lams: np.ndarray) -> tuple[float, np.ndarray, float]:
        c = factor(lams)
        beta = cho_solve(c, xty)
        rss = max(yty - 2.0 * float(beta @ xty) + float(beta @ xtx @ beta), 0.0)
        edf = float(np.trace(cho_solve(c, xtx)))
        denom = n - edf
        gcv = np.inf if denom <= 1e-8 else n * rss / denom**2
        return gcv, beta, edf

    if lambda_init is not None:
        lams = np.asarray(lambda_init, dtype=float).copy()
        if lams.shape != (len(penalties),):
            raise ValueError("lambda_init must give one value per penalty block")
    else:
        lams = np.ones(len(penalties))
    if len(penalties):
        for _ in range(2):
            for j in range(len(penalties)):
                best_gcv = np.inf
                best = lams[j]
                for cand in lambda_grid:
                    trial = lams.copy()
                    trial[j] = cand
                    gcv, _, _ = score(trial)
                    if gcv <= best_gcv:
                        best_gcv = gcv
                        best = cand
                lams[j] = best
        for j, lam in enumerate(lams):
            if lam in (lambda_grid[0], lambda_grid[-1]):
                warnings.warn(
                    f"smoothing weight for {penalties[j].name!r} selected at "
                    f"grid edge {lam:g}",
                    GridExhausted,
                    stacklevel=2,
                )

    c = factor(lams)
    beta = cho_solve(c, xty)
    resid = y - X @ beta
    rss = float(resid @ resid)
    hat_diag_total = cho_solve(c, xtx)
    edf = float(np.trace(hat_diag_total))
    edf_per_block = np.array(
        [np.trace(hat_diag_total[p_.cols[0] : p_.cols[1], p_.cols[0] : p_.cols[1]]) for p_ in penalties]
    )
    denom = max(n - edf, 1e-8)
    gcv = n * rss / denom**2
    sigma2 = rss / denom
    ybar = float(np.mean(y))
    tss = float(np.sum((y - ybar) ** 2))
    if tss <= 0.0:
        dev = 1.0 if rss <= 1e-12 else 0.0
    else:
        dev = min(max(1.0 - rss / tss, 0.0), 1.0)
    return PenalizedFit(
        coefficients=beta,
        lambdas=lams,
        edf=edf,
        edf_per_block=edf_per_block,
        rss=rss,
        sigma2=sigma2,
        gcv=gcv,
        deviance_explained=dev,
        n_rows=n,
    )


# ---------------------------------------------------------------------------
# fitted model


@dataclass
class FittedModel:
    """A fitted additive model, self-contained for prediction."""

    spec: ModelSpec
    layouts: list[TermLayout]
    lag_cols: dict[int, int]
    linear_cols: dict[str, int]
    coefficients: np.ndarray
    lambdas: dict[str, float]
    edf: float
    edf_per_term: dict[str, float]
    sigma2: float
    deviance_explained: float
    training_range: dict[str, tuple[float, float]]
    n_train: int
    unit: str = ""

    @property
    def p(self) -> int:
        return len(self.coefficients)

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def lag_coefficient(self, order: int = 1) -> float:
        return float(self.coefficients[self.lag_cols[order]])

    def linear_coefficient(self, name: str) -> float:
        return float(self.coefficients[self.linear_cols[name]])

    def layout(self, name: str) -> TermLayout:
        for lay in self.layouts:
            if lay.term.name == name:
                return lay
        raise KeyError(f"no term named {name!r}")

    def term_curve(self, name: str, grid: np.ndarray) -> np.ndarray:
        """Fitted 1-d term function on a grid.

        For a plain smooth this is the term's additive contribution; for a
        varying-coefficient term it is the coefficient curve, i.e. the
        contribution per unit of the multiplier.
        """
        lay = self.layout(name)
        if lay.term.kind not in ("smooth_1d", "varying_coeff"):
            raise ValueError(f"term {name!r} is not one-dimensional")
        full = lay.full_coefficients(self.coefficients)
        return _basis.bspline_matrix(lay.bases[0], np.asarray(grid, float)) @ full

    def term_surface(
        self, name: str, grid_x: np.ndarray, grid_y: np.ndarray
    ) -> np.ndarray:
        """Fitted tensor surface on the outer product of two grids."""
        lay = self.layout(name)
        if lay.term.kind != "tensor_2d":
            raise ValueError(f"term {name!r} is not a tensor surface")
        full = lay.full_coefficients(self.coefficients)
        bx = _basis.bspline_matrix(lay.bases[0], np.asarray(grid_x, float))
        by = _basis.bspline_matrix(lay.bases[1], np.asarray(grid_y, float))
        k_y = lay.bases[1].num_basis
        coefs = full.reshape(lay.bases[0].num_basis, k_y)
        return bx @ coefs @ by.T


def fit_additive_model(
    spec: ModelSpec,
    frame: AlignedFrame,
    response: str | None = None,
    lambda_grid: np.ndarray | None = None,
    unit: str = "",
    lambda_init: dict[str, float] | None = None,
) -> FittedModel:
    """Build the design for one tree and fit it.

    ``lambda_init`` maps penalty names (term names) to starting smoothing
    weights, e.g. the ``lambdas`` of a previous fit of the same spec.
    """
    design = build_design(spec, frame, response)
    init = None
    if lambda_init is not None:
        init = np.array([lambda_init.get(pen.name, 1.0) for pen in design.penalties])
    result = penalized_fit(design.X, design.y, design.penalties, lambda_grid, init)
    lambdas = {
        pen.name: float(lam) for pen, lam in zip(design.penalties, result.lambdas)
    }
    edf_per_term = {
        pen.name: float(e) for pen, e in zip(design.penalties, result.edf_per_block)
    }
    resolved = (
        ModelSpec(
            response=response,
            flexible_covariate=spec.flexible_covariate,
            lag_orders=spec.lag_orders,
            linear_terms=spec.linear_terms,
            smooth_terms=spec.smooth_terms,
            radiation_lag=spec.radiation_lag,
        )
        if response and response != spec.response
        else spec
    )
    return FittedModel(
        spec=resolved,
        layouts=design.layouts,
        lag_cols=design.lag_cols,
        linear_cols=design.linear_cols,
        coefficients=result.coefficients,
        lambdas=lambdas,
        edf=result.edf,
        edf_per_term=edf_per_term,
        sigma2=result.sigma2,
        deviance_explained=result.deviance_explained,
        training_range=design.training_range,
        n_train=result.n_rows,
        unit=unit,
    )


# ---------------------------------------------------------------------------
# prediction


def _clamp_covariates(
    model: FittedModel, cov: dict[str, np.ndarray]
) -> tuple[dict[str, np.ndarray], int]:
    clamped: dict[str, np.ndarray] = {}
    count = 0
    for name, arr in cov.items():
        lo, hi = model.training_range[name]
        out = np.clip(arr, lo, hi)
        count += int(np.sum((arr < lo) | (arr > hi)))
        clamped[name] = out
    return clamped, count


def _base_matrix(
    model: FittedModel, cov: dict[str, np.ndarray], n: int
) -> np.ndarray:
    """Design rows with the lag columns left at zero."""
    X = np.zeros((n, model.p))
    X[:, 0] = 1.0
    for name, c in model.linear_cols.items():
        X[:, c] = cov[name]
    for lay in model.layouts:
        X[:, lay.cols[0] : lay.cols[1]] = lay.block(cov)
    return X


def predict_one_step(
    model: FittedModel,
    covariates: Mapping[str, float],
    y_prev: float | Mapping[int, float],
) -> float:
    """One-hour-ahead prediction, floored at zero.

    ``covariates`` must carry every channel the model uses (including the
    day-level flexible covariate, and the lag-one radiation value under
    ``radiation_lag=1``); values outside the training range are clamped.
    ``y_prev`` is the lag-one response, or a mapping of lag order to value
    when the spec uses several lags.
    """
    cov_arrays: dict[str, np.ndarray] = {}
    for name in model.spec.covariate_names():
        if name not in covariates or not np.isfinite(covariates[name]):
            raise MissingCovariate(f"covariate {name!r} missing at prediction time")
        cov_arrays[name] = np.array([float(covariates[name])])
    cov_arrays, _ = _clamp_covariates(model, cov_arrays)
    row = _base_matrix(model, cov_arrays, 1)[0]
    if isinstance(y_prev, Mapping):
        lag_values = {k: float(v) for k, v in y_prev.items()}
    else:
        if len(model.spec.lag_orders) != 1:
            raise MissingCovariate("model has several lags; pass a mapping")
        lag_values = {model.spec.lag_orders[0]: float(y_prev)}
    for order, c in model.lag_cols.items():
        if order not in lag_values or not np.isfinite(lag_values[order]):
            raise MissingCovariate(f"lagged response (order {order}) missing")
        row[c] = lag_values[order]
    return max(float(row @ model.coefficients), 0.0)


def rolling_predict(
    model: FittedModel,
    frame: AlignedFrame,
    start_row: int,
    n_steps: int,
    y_init: float | Iterable[float],
) -> tuple[TimeSeries, int]:
    """Roll the model forward ``n_steps`` hours, feeding predictions back in.

    ``y_init`` seeds the recursion: the response value one step before
    ``start_row`` (or, with several lags, the values at ``start_row - 1,
    start_row - 2, ...`` in that order).  Covariates over the window must be
    complete.  Returns the prediction series and the number of covariate
    values that had to be clamped to the training range.
    """
    if start_row < 0 or start_row + n_steps > frame.n:
        raise ValueError("prediction window outside the frame")
    names = model.spec.covariate_names()
    cov_full = _resolve_covariates(model.spec, frame, names)
    cov = {}
    for name, arr in cov_full.items():
        window = arr[start_row : start_row + n_steps]
        if np.any(np.isnan(window)):
            bad = start_row + int(np.argmax(np.isnan(window)))
            ts = frame.start.isoformat()
            raise MissingCovariate(
                f"covariate {name!r} missing inside prediction window "
                f"(row {bad} of frame starting {ts})"
            )
        cov[name] = window
    cov, clamp_count = _clamp_covariates(model, cov)

    base = _base_matrix(model, cov, n_steps) @ model.coefficients
    lag_orders = sorted(model.lag_cols)
    lag_coefs = {k: model.coefficients[model.lag_cols[k]] for k in lag_orders}
    if np.isscalar(y_init):
        init = [float(y_init)]
    else:
        init = [float(v) for v in y_init]
    max_lag = max(lag_orders) if lag_orders else 0
    if len(init) < max_lag:
        raise MissingCovariate(
            f"need {max_lag} initial response values, got {len(init)}"
        )

    preds = np.empty(n_steps)
    for s in range(n_steps):
        acc = base[s]
        for k in lag_orders:
            back = s - k
            prev = preds[back] if back >= 0 else init[-back - 1]
            acc += lag_coefs[k] * prev
        preds[s] = max(acc, 0.0)

    start_ts = frame.start + timedelta(hours=frame.step_hours * start_row)
    return TimeSeries(start_ts, preds, frame.step_hours, model.unit), clamp_count


def residuals(model: FittedModel, frame: AlignedFrame, response: str | None = None) -> TimeSeries:
    """Observed minus (unfloored) fitted values on the frame's grid.

    Rows that would have been dropped at training time (missing response,
    lag or covariate) come back as NaN.
    """
    resp_name = response or model.spec.response
    _, y_full = _response_array(model.spec, frame, resp_name)
    cov = _resolve_covariates(model.spec, frame, model.spec.covariate_names())
    n = frame.n
    valid = ~np.isnan(y_full)
    lag_arrays: dict[int, np.ndarray] = {}
    for k in model.spec.lag_orders:
        shifted = np.full(n, np.nan)
        shifted[k:] = y_full[:-k]
        lag_arrays[k] = shifted
        valid &= ~np.isnan(shifted)
    for arr in cov.values():
        valid &= ~np.isnan(arr)
    rows = np.flatnonzero(valid)
    cov_rows = {name: arr[rows] for name, arr in cov.items()}
    cov_rows, _ = _clamp_covariates(model, cov_rows)
    X = _base_matrix(model, cov_rows, len(rows))
    for k, c in model.lag_cols.items():
        X[:, c] = lag_arrays[k][rows]
    fitted = X @ model.coefficients
    out = np.full(n, np.nan)
    out[rows] = y_full[rows] - fitted
    return TimeSeries(frame.start, out, frame.step_hours, model.unit)


# ---------------------------------------------------------------------------
# serialization


def model_to_dict(model: FittedModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "sapflow-additive-model",
        "spec": model.spec.to_dict(),
        "terms": [
            {
                "def": lay.term.to_dict(),
                "bases": [b.to_dict() for b in lay.bases],
                "transform": lay.transform.to_list() if lay.transform else None,
                "cols": list(lay.cols),
                "lambda": model.lambdas.get(lay.term.name),
                "edf": model.edf_per_term.get(lay.term.name),
            }
            for lay in model.layouts
        ],
        "lag_cols": {str(k): v for k, v in model.lag_cols.items()},
        "linear_cols": dict(model.linear_cols),
        "coefficients": [float(v) for v in model.coefficients],
        "edf": model.edf,
        "sigma2": model.sigma2,
        "deviance_explained": model.deviance_explained,
        "training_range": {k: [float(a), float(b)] for k, (a, b) in model.training_range.items()},
        "n_train": model.n_train,
        "unit": model.unit,
    }


def model_from_dict(doc: dict) -> FittedModel:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise VersionMismatch(
            f"model schema version {version!r} not supported (expected {SCHEMA_VERSION})"
        )
    spec = ModelSpec.from_dict(doc["spec"])
    layouts = []
    lambdas: dict[str, float] = {}
    edf_per_term: dict[str, float] = {}
    for entry in doc["terms"]:
        term = TermDef.from_dict(entry["def"])
        bases = tuple(BasisDef.from_dict(b) for b in entry["bases"])
        transform = (
            SumToZero(np.asarray(entry["transform"], dtype=float))
            if entry["transform"] is not None
            else None
        )
        lay = TermLayout(term, bases, transform, np.empty(0), tuple(entry["cols"]))
        layouts.append(lay)
        if entry["lambda"] is not None:
            lambdas[term.name] = float(entry["lambda"])
        if entry["edf"] is not None:
            edf_per_term[term.name] = float(entry["edf"])
    return FittedModel(
        spec=spec,
        layouts=layouts,
        lag_cols={int(k): int(v) for k, v in doc["lag_cols"].items()},
        linear_cols={k: int(v) for k, v in doc["linear_cols"].items()},
        coefficients=np.asarray(doc["coefficients"], dtype=float),
        lambdas=lambdas,
        edf=float(doc["edf"]),
        edf_per_term=edf_per_term,
        sigma2=float(doc["sigma2"]),
        deviance_explained=float(doc["deviance_explained"]),
        training_range={k: (float(v[0]), float(v[1])) for k, v in doc["training_range"].items()},
        n_train=int(doc["n_train"]),
        unit=doc.get("unit", ""),
    )


def save_model(model: FittedModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> FittedModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
