"""Combining member forecasts: weights, spread and calibrated intervals.

Members are columns of a prediction matrix scored against one observation
vector.  Weights always live on the simplex (non-negative, summing to one).
Interval width comes from the weighted ensemble spread, rescaled by a
variance-ratio factor gamma estimated on a scoring window, so that the
spread's size matches the actual weighted squared error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import AllZeroWeights, InsufficientData, ZeroMse, ZeroSpread

__all__ = [
    "WeightScheme",
    "compute_weights",
    "ensemble_mean",
    "standard_tree",
    "spread",
    "gamma_scale",
    "interval",
    "half_widths",
]

MSE_FLOOR = 1e-12


@dataclass(frozen=True)
class WeightScheme:
    """How member weights are derived from a scoring window.

    kind: ``equal`` | ``reciprocal_mse`` | ``penalized_regression``.
    ``penalty`` and ``strength`` only matter for the regression scheme.
    ``window_days`` optionally overrides the driver's scoring window.
    """

    kind: str = "reciprocal_mse"
    penalty: str = "ridge"
    strength: float = 1e-3
    window_days: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("equal", "reciprocal_mse", "penalized_regression"):
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.penalty not in ("ridge", "lasso"):
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if self.strength < 0:
            raise ValueError("penalty strength must be >= 0")


def compute_weights(
    scheme: WeightScheme, predictions: np.ndarray, observations: np.ndarray
) -> np.ndarray:
    """Simplex weights for the columns of ``predictions``.

    ``predictions`` has shape (T, M); ``observations`` has length T with no
    missing values (the caller filters).  Requires T >= 24.  If some member
    already matches the observations to within MSE < 1e-12, the weight mass
    goes entirely to such members (with a ``ZeroMse`` warning).
    """
    preds = np.asarray(predictions, dtype=float)
    obs = np.asarray(observations, dtype=float)
    if preds.ndim != 2 or len(obs) != preds.shape[0]:
        raise ValueError("predictions must be (T, M) matching observations")
    if np.any(np.isnan(obs)) or np.any(np.isnan(preds)):
        raise ValueError("scoring window contains missing values")
    t_len, n_members = preds.shape
    if t_len < 24:
        raise InsufficientData(f"scoring window has {t_len} rows; need >= 24")

    if scheme.kind == "equal":
        return np.full(n_members, 1.0 / n_members)

    mses = np.mean((preds - obs[:, None]) ** 2, axis=0)
    exact = mses < MSE_FLOOR
    if np.any(exact):
        warnings.warn(
            f"{int(exact.sum())} member(s) match the observations almost exactly",
            ZeroMse,
            stacklevel=2,
        )
        w = exact.astype(float)
        return w / w.sum()

    if scheme.kind == "reciprocal_mse":
        w = 1.0 / mses
        return w / w.sum()

    # penalized regression of observations on member predictions
    if scheme.penalty == "ridge":
        gram = preds.T @ preds + scheme.strength * np.eye(n_members)
        w = np.linalg.solve(gram, preds.T @ obs)
    else:
        w = _lasso_cd(preds, obs, scheme.strength)
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total <= 0.0:
        raise AllZeroWeights("penalized regression produced no positive weight")
    return w / total


def _lasso_cd(
    x: np.ndarray, y: np.ndarray, alpha: float, tol: float = 1e-10, max_iter: int = 1000
) -> np.ndarray:
    """Coordinate descent for ``0.5 * ||y - X w||^2 + alpha * ||w||_1``."""
    n_feat = x.shape[1]
    norms = np.einsum("ij,ij->j", x, x)
    w = np.zeros(n_feat)
    r = y.copy()
    for _ in range(max_iter):
        delta = 0.0
        for j in range(n_feat):
            if norms[j] <= 0.0:
                continue
            rho = float(x[:, j] @ r) + norms[j] * w[j]
            new = np.sign(rho) * max(abs(rho) - alpha, 0.0) / norms[j]
            if new != w[j]:
                r += x[:, j] * (w[j] - new)
                delta = max(delta, abs(new - w[j]))
                w[j] = new
        if delta < tol:
            break
    return w


def ensemble_mean(weights: np.ndarray, member_row: np.ndarray) -> float:
    """Weighted combination of one row of member predictions."""
    return float(np.dot(weights, member_row))


def standard_tree(per_init_means: np.ndarray) -> np.ndarray:
    """Average the per-initialization ensemble means: (T, n) -> (T,)."""
    per_init_means = np.asarray(per_init_means, dtype=float)
    return per_init_means.mean(axis=1)


def spread(weights: np.ndarray, member_row: np.ndarray, mean: float) -> float:
    """Weighted standard deviation of one row of member predictions."""
    dev = np.asarray(member_row, dtype=float) - mean
    return float(np.sqrt(np.dot(weights, dev * dev)))


def spread_series(weights: np.ndarray, members: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized means and spreads for a (T, M) member block."""
    members = np.asarray(members, dtype=float)
    means = members @ weights
    dev = members - means[:, None]
    s = np.sqrt(np.maximum((dev * dev) @ weights, 0.0))
    return means, s


def gamma_scale(
    weights: np.ndarray,
    predictions: np.ndarray,
    observations: np.ndarray,
    spreads: np.ndarray,
) -> float:
    """Variance-ratio calibration factor.

    ``gamma^2`` is the weighted squared prediction error accumulated over
    the scoring window divided by the accumulated squared spread, so that
    ``gamma * spread`` has the size of a typical ensemble error.
    """
    preds = np.asarray(predictions, dtype=float)
    obs = np.asarray(observations, dtype=float)
    s = np.asarray(spreads, dtype=float)
    denom = float(np.sum(s * s))
    if denom <= 1e-24:
        raise ZeroSpread("ensemble spread is zero over the scoring window")
    err = (preds - obs[:, None]) ** 2
    num = float(np.sum(err @ weights))
    return float(np.sqrt(num / denom))


def z_value(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError("interval level must be in (0, 1)")
    return float(norm.ppf(0.5 * (1.0 + level)))


def half_widths(spreads: np.ndarray, gamma: float, level: float) -> np.ndarray:
    """Half interval widths ``z * gamma * spread``."""
    return z_value(level) * gamma * np.asarray(spreads, dtype=float)


def interval(
    mean: np.ndarray, spreads: np.ndarray, gamma: float, level: float = 0.95
) -> tuple[np.ndarray, np.ndarray]:
    """Central interval around the ensemble mean; the floor at zero keeps
    the lower bound physical."""
    mean = np.asarray(mean, dtype=float)
    half = half_widths(spreads, gamma, level)
    return np.maximum(mean - half, 0.0), mean + half
