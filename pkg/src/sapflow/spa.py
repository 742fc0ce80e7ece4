"""Test whether any competitor forecast beats a benchmark forecast.

The null hypothesis is that no competitor improves on the benchmark in
expected loss.  Loss differences ``d_kt = L(bench) - L(comp_k)`` are
positive when competitor ``k`` wins at hour ``t``.  The statistic

    T = max( max_k sqrt(n) * dbar_k / omega_k, 0 )

studentizes each competitor's mean difference by a kernel-weighted
long-run standard deviation ``omega_k`` and its null distribution is
approximated by a stationary bootstrap that resamples whole DAYS, so the
strong diurnal dependence of hourly errors stays intact inside blocks.
When several trees contribute loss series, their autocovariances are
pooled (averaged) before forming ``omega_k``, and resampling applies the
same day indices to every tree and competitor to preserve cross-sectional
dependence.

Replicates use independent counter-based RNG streams spawned from one
seed, so results are reproducible and replicates could be evaluated in
any order or in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import irfft, next_fast_len, rfft

from .errors import LagTooLarge, LengthMismatch, NotWholeDays

__all__ = [
    "LossDiffPanel",
    "SpaResult",
    "loss_diffs",
    "pooled_autocov",
    "omega",
    "day_index_sequences",
    "day_block_bootstrap",
    "spa_statistic",
    "spa_pvalue",
]

HOURS_PER_DAY = 24
OMEGA_FLOOR = 1e-12

LOSSES = {
    "squared_error": lambda obs, pred: (obs - pred) ** 2,
    "absolute_error": lambda obs, pred: np.abs(obs - pred),
}


@dataclass(frozen=True)
class LossDiffPanel:
    """Benchmark-minus-competitor losses for one or more trees.

    ``diffs`` has shape (trees, hours, competitors); hours must cover whole
    days.  Entry ``[i, t, k]`` is benchmark loss minus competitor ``k``
    loss on tree ``i`` at hour ``t``: positive means competitor ``k`` beat
    the benchmark there.
    """

    diffs: np.ndarray
    names: tuple[str, ...]
    loss: str = "squared_error"

    def __post_init__(self) -> None:
        d = np.asarray(self.diffs, dtype=float)
        if d.ndim != 3:
            raise ValueError("diffs must be (trees, hours, competitors)")
        if d.shape[1] % HOURS_PER_DAY != 0:
            raise NotWholeDays(
                f"panel length {d.shape[1]} is not a whole number of days"
            )
        if d.shape[2] != len(self.names):
            raise LengthMismatch(
                f"{d.shape[2]} competitor columns vs {len(self.names)} names"
            )
        if np.any(np.isnan(d)):
            raise ValueError("loss panel must be complete (no NaN)")
        object.__setattr__(self, "diffs", d)

    @property
    def n_trees(self) -> int:
        return self.diffs.shape[0]

    @property
    def n_hours(self) -> int:
        return self.diffs.shape[1]

    @property
    def n_days(self) -> int:
        return self.diffs.shape[1] // HOURS_PER_DAY

    @property
    def n_competitors(self) -> int:
        return self.diffs.shape[2]

    def dbar(self) -> np.ndarray:
        """Mean loss difference per competitor, pooled over trees and hours."""
        return self.diffs.mean(axis=(0, 1))


def _as_tree_matrix(x, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{what} must be (hours,) or (trees, hours)")
    return arr


def loss_diffs(
    bench_preds,
    comp_preds: dict[str, np.ndarray],
    obs,
    loss: str = "squared_error",
) -> LossDiffPanel:
    """Build the loss-difference panel from aligned prediction arrays.

    ``bench_preds`` and ``obs`` are (trees, hours) arrays (a single (hours,)
    vector is treated as one tree); ``comp_preds`` maps competitor name to
    an array of the same shape.  All series must be complete and aligned by
    the caller.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; use one of {sorted(LOSSES)}")
    lfun = LOSSES[loss]
    bench = _as_tree_matrix(bench_preds, "bench_preds")
    y = _as_tree_matrix(obs, "obs")
    if bench.shape != y.shape:
        raise LengthMismatch(f"benchmark {bench.shape} vs observations {y.shape}")
    base = lfun(y, bench)
    names = tuple(comp_preds)
    blocks = []
    for name in names:
        comp = _as_tree_matrix(comp_preds[name], f"competitor {name!r}")
        if comp.shape != y.shape:
            raise LengthMismatch(
                f"competitor {name!r} {comp.shape} vs observations {y.shape}"
            )
        blocks.append(base - lfun(y, comp))
    diffs = np.stack(blocks, axis=-1)
    return LossDiffPanel(diffs=diffs, names=names, loss=loss)


# ---------------------------------------------------------------------------
# long-run variance


def _autocov_all_lags(centered: np.ndarray) -> np.ndarray:
    """Autocovariances at lags 0..n-1 along the LAST axis, 1/n divisor."""
    n = centered.shape[-1]
    nfft = next_fast_len(2 * n)
    f = rfft(centered, nfft, axis=-1)
    acf = irfft(f * np.conj(f), nfft, axis=-1)[..., :n]
    return acf / n


def pooled_autocov(panel: LossDiffPanel, k: int, tau: int) -> float:
    """Lag-``tau`` autocovariance of competitor ``k``, averaged over trees.

    Each tree's series is centered by its own mean and the biased (1/n)
    estimator is used, so the lag-0 value for a single tree is the sample
    variance with 1/n divisor.
    """
    n = panel.n_hours
    if tau >= n:
        raise LagTooLarge(f"lag {tau} >= series length {n}")
    d = panel.diffs[:, :, k]
    centered = d - d.mean(axis=1, keepdims=True)
    prods = centered[:, : n - tau] * centered[:, tau:]
    return float(np.mean(np.sum(prods, axis=1) / n))


def kernel_weights(n: int, q: float) -> np.ndarray:
    """Bootstrap-implied kernel ``kappa(n, tau)`` for tau = 1..n-1."""
    tau = np.arange(1, n, dtype=float)
    one_minus = 1.0 - q
    return (n - tau) / n * one_minus**tau + tau / n * one_minus ** (n - tau)


def _omegas_from_diffs(diffs: np.ndarray, kappa: np.ndarray) -> np.ndarray:
    """Pooled long-run SD per competitor.

    ``diffs`` is (..., trees, hours, competitors); returns (..., competitors).
    Autocovariances are pooled across trees, weighted with ``kappa`` and
    floored so degenerate competitors cannot divide by zero.
    """
    d = np.moveaxis(diffs, -1, -3)  # (..., comps, trees, hours)
    centered = d - d.mean(axis=-1, keepdims=True)
    acf = _autocov_all_lags(centered).mean(axis=-2)  # pooled over trees
    omega2 = acf[..., 0] + 2.0 * acf[..., 1:] @ kappa
    return np.sqrt(np.maximum(omega2, OMEGA_FLOOR))


def omega(panel: LossDiffPanel, k: int, q: float) -> float:
    """Kernel-weighted long-run standard deviation for competitor ``k``.

    ``q`` is the per-hour block-switch probability of the stationary
    bootstrap; a mean block length of ``p*`` days gives ``q = 1/(p* * 24)``.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    kappa = kernel_weights(panel.n_hours, q)
    return float(_omegas_from_diffs(panel.diffs[:, :, [k]], kappa)[0])


# ---------------------------------------------------------------------------
# day-block stationary bootstrap


def _draw_day_sequence(
    rng: np.random.Generator, n_days: int, p_star: float
) -> np.ndarray:
    """One replicate's day indices: geometric blocks of whole days, wrapped.

    Starts and lengths are drawn in fixed-size batches (doubling on the
    rare shortfall), so the result depends only on the stream, not on how
    the batches are consumed.  Block lengths are capped at ``n_days``
    because longer blocks are truncated anyway.
    """
    p = min(max(1.0 / p_star, 1e-12), 1.0)
    chunk = max(4, 2 * int(np.ceil(n_days * p)) + 1)
    while True:
        starts = rng.integers(0, n_days, size=chunk)
        lengths = np.minimum(rng.geometric(p, size=chunk), n_days)
        csum = np.cumsum(lengths)
        if csum[-1] >= n_days:
            break
        chunk *= 2
    k = int(np.searchsorted(csum, n_days, side="left"))
    starts, lengths = starts[: k + 1], lengths[: k + 1]
    offsets = np.repeat(np.concatenate([[0], csum[:k]]), lengths)
    rel = np.arange(int(csum[k])) - offsets
    days = (np.repeat(starts, lengths) + rel) % n_days
    return days[:n_days]


def day_index_sequences(
    n_days: int, p_star_days: float, B: int, seed: int
) -> np.ndarray:
    """Day indices for ``B`` replicates, shape (B, n_days).

    Each replicate concatenates blocks of consecutive days: block starts
    are uniform over days, block lengths geometric with mean ``p*`` days,
    runs wrap past the last day, and the final block is truncated.  Each
    replicate draws from its own spawned counter-based stream, so the
    matrix is reproducible and independent of evaluation order.
    """
    if p_star_days < 1:
        raise ValueError("p_star_days must be >= 1")
    if n_days < 1:
        raise ValueError("need at least one day")
    streams = np.random.SeedSequence(seed).spawn(B)
    out = np.empty((B, n_days), dtype=np.int64)
    for b, ss in enumerate(streams):
        rng = np.random.Generator(np.random.Philox(ss))
        out[b] = _draw_day_sequence(rng, n_days, p_star_days)
    return out


def day_block_bootstrap(
    panel: LossDiffPanel, p_star_days: float, B: int, seed: int
):
    """Yield ``B`` day-resampled panels (lazily; each replicate is full length).

    The same day sequence is applied to every tree and every competitor,
    and blocks always contain whole days, so hour-of-day structure is
    preserved exactly.
    """
    idx = day_index_sequences(panel.n_days, p_star_days, B, seed)
    for b in range(B):
        rows = (idx[b][:, None] * HOURS_PER_DAY + np.arange(HOURS_PER_DAY)).ravel()
        yield LossDiffPanel(
            diffs=panel.diffs[:, rows, :], names=panel.names, loss=panel.loss
        )


# ---------------------------------------------------------------------------
# statistic and p-value


def spa_statistic(dbar: np.ndarray, omegas: np.ndarray, n: int) -> float:
    """``max(max_k sqrt(n) dbar_k / omega_k, 0)``."""
    dbar = np.asarray(dbar, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    if np.any(omegas <= 0):
        raise ValueError("omegas must be positive")
    return float(max(np.max(np.sqrt(n) * dbar / omegas), 0.0))


@dataclass(frozen=True)
class SpaResult:
    statistic: float
    p_value: float
    omegas: tuple[float, ...]
    dbar: tuple[float, ...]
    names: tuple[str, ...]
    B: int
    p_star_days: float
    q: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "omegas": list(self.omegas),
            "dbar": list(self.dbar),
            "names": list(self.names),
            "replicates": self.B,
            "p_star_days": self.p_star_days,
            "q": self.q,
            "seed": self.seed,
        }


def spa_pvalue(
    panel: LossDiffPanel,
    p_star_days: float = 3.0,
    B: int = 1000,
    seed: int = 0,
    batch: int = 32,
) -> SpaResult:
    """Bootstrap p-value for the no-better-competitor null.

    Replicates resample whole days (stationary bootstrap, mean block
    ``p_star_days``), recompute the pooled long-run SDs on the resampled
    panel, and recenter each competitor consistently: a competitor whose
    observed mean is within ``sqrt(2 ln ln n / n)`` standardized units of
    the boundary is recentered to zero, while hopeless competitors keep
    their negative mean and cannot inflate the null distribution.
    ``batch`` only sets how many replicates are evaluated per vectorized
    pass; it does not affect the result.
    """
    if B < 200:
        raise ValueError("need at least 200 bootstrap replicates")
    n = panel.n_hours
    q = 1.0 / (p_star_days * HOURS_PER_DAY)
    kappa = kernel_weights(n, q)

    dbar = panel.dbar()
    omegas = _omegas_from_diffs(panel.diffs, kappa)
    t_obs = spa_statistic(dbar, omegas, n)

    root_n = math.sqrt(n)
    threshold = -math.sqrt(2.0 * math.log(math.log(n))) if n > math.e else 0.0
    keep_center = (root_n * dbar / omegas) >= threshold
    recenter = np.where(keep_center, dbar, 0.0)

    idx = day_index_sequences(panel.n_days, p_star_days, B, seed)
    hour_offsets = np.arange(HOURS_PER_DAY)
    exceed = 0
    for lo in range(0, B, batch):
        chunk = idx[lo : lo + batch]
        rows = (chunk[:, :, None] * HOURS_PER_DAY + hour_offsets).reshape(
            chunk.shape[0], -1
        )
        # gather: (b, trees, hours, comps)
        d_star = panel.diffs[:, rows, :].transpose(1, 0, 2, 3)
        dbar_star = d_star.mean(axis=(1, 2))
        om_star = _omegas_from_diffs(d_star, kappa)
        z = root_n * (dbar_star - recenter[None, :]) / om_star
        t_star = np.maximum(z.max(axis=1), 0.0)
        exceed += int(np.sum(t_star >= t_obs))

    return SpaResult(
        statistic=t_obs,
        p_value=exceed / B,
        omegas=tuple(float(w) for w in omegas),
        dbar=tuple(float(v) for v in dbar),
        names=panel.names,
        B=B,
        p_star_days=p_star_days,
        q=q,
        seed=seed,
    )
