"""Exact changepoint detection for residual diagnostics.

Segments a series by minimizing total segment cost plus a per-changepoint
penalty, where the cost of a segment is the Gaussian twice-negative
log-likelihood with segment-specific mean and variance:

    C(seg) = len * (log(2 pi var_hat) + 1),  var_hat floored at 1e-10.

``pelt`` solves this exactly with pruned dynamic programming (prune
constant K = 0, valid because the cost is segment-additive).  ``crops``
sweeps a penalty interval and recovers every optimal segmentation along it
by probing the penalties where the optimal changepoint count switches,
which costs one ``pelt`` run per distinct count instead of a dense grid.
Changepoint indices are exclusive segment ends: a changepoint at ``c``
means one segment is ``[.., c)`` and the next starts at ``c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TooShort
from .series import TimeSeries

__all__ = [
    "Segmentation",
    "CropsEntry",
    "CropsCurve",
    "CountSelection",
    "pelt",
    "crops",
    "select_by_count",
    "default_penalty",
    "default_penalty_range",
    "split_on_gaps",
]

VAR_FLOOR = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Segmentation:
    """Optimal segmentation of one series at one penalty."""

    changepoints: tuple[int, ...]
    total_cost: float
    penalty: float
    segment_means: tuple[float, ...]
    segment_variances: tuple[float, ...]
    n: int

    @property
    def num_changepoints(self) -> int:
        return len(self.changepoints)

    @property
    def segment_params(self) -> tuple[tuple[float, float], ...]:
        return tuple(zip(self.segment_means, self.segment_variances))

    def segments(self) -> list[tuple[int, int]]:
        bounds = (0,) + self.changepoints + (self.n,)
        return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]

    def to_dict(self) -> dict:
        return {
            "changepoints": list(self.changepoints),
            "total_cost": self.total_cost,
            "penalty": self.penalty,
            "segment_means": list(self.segment_means),
            "segment_variances": list(self.segment_variances),
            "n": self.n,
        }


def default_penalty(n: int) -> float:
    """Three parameters per extra segment (mean, variance, location)."""
    return 3.0 * math.log(n)


def default_penalty_range(n: int) -> tuple[float, float]:
    return math.log(n), 100.0 * math.log(n)


def _segment_stats(x: np.ndarray, lo: int, hi: int) -> tuple[float, float]:
    seg = x[lo:hi]
    mean = float(seg.mean())
    var = float(seg.var())
    return mean, max(var, VAR_FLOOR)


def pelt(
    series: TimeSeries | np.ndarray,
    penalty: float,
    min_seg_len: int = 2,
    cost: str = "meanvar",
) -> Segmentation:
    """Exact penalized segmentation by pruned dynamic programming.

    ``penalty`` must be non-negative; pruning keeps the search exact while
    discarding candidate segment starts that can never win again.  The
    default cost lets both mean and variance shift per segment; pass
    ``cost="mean"`` for residual sum of squares around per-segment means
    with a shared unit variance.
    """
    x = series.values if isinstance(series, TimeSeries) else np.asarray(series, float)
    if np.any(np.isnan(x)):
        raise ValueError("changepoint input must not contain missing values")
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    if min_seg_len < 1:
        raise ValueError("min_seg_len must be >= 1")
    if cost not in ("meanvar", "mean"):
        raise ValueError(f"unknown cost {cost!r}")
    n = len(x)
    if n < 2 * min_seg_len:
        raise TooShort(f"need at least {2 * min_seg_len} points, have {n}")

    cum1 = np.concatenate([[0.0], np.cumsum(x)])
    cum2 = np.concatenate([[0.0], np.cumsum(x * x)])

    # best[tau] = inf marks indices where no valid segmentation can end
    # (0 < tau < min_seg_len); they enter the candidate set but never win.
    best = np.full(n + 1, np.inf)
    best[0] = -penalty
    prev = np.zeros(n + 1, dtype=np.int64)

    # The candidate set lives in fixed buffers compacted in place; per-step
    # work is a handful of in-place vector ops over the few surviving taus.
    cap = n + 1
    c_idx = np.empty(cap, dtype=np.int64)
    c_tau = np.empty(cap)  # float copy of c_idx, for length arithmetic
    c_best = np.empty(cap)
    c_s1 = np.empty(cap)
    c_s2 = np.empty(cap)
    c_idx[0], c_tau[0], c_best[0] = 0, 0.0, -penalty
    c_s1[0], c_s2[0] = 0.0, 0.0
    k = 1
    lens = np.empty(cap)
    d1 = np.empty(cap)
    d2 = np.empty(cap)
    tot = np.empty(cap)
    mean_only = cost == "mean"
    offset = LOG_2PI + 1.0

    for t in range(min_seg_len, n + 1):
        tau_new = t - min_seg_len
        if tau_new > 0:
            c_idx[k] = tau_new
            c_tau[k] = tau_new
            c_best[k] = best[tau_new]
            c_s1[k] = cum1[tau_new]
            c_s2[k] = cum2[tau_new]
            k += 1
        np.subtract(float(t), c_tau[:k], out=lens[:k])
        np.subtract(cum1[t], c_s1[:k], out=d1[:k])
        np.subtract(cum2[t], c_s2[:k], out=d2[:k])
        if mean_only:
            # residual sum of squares: s2 - s1^2 / len
            np.multiply(d1[:k], d1[:k], out=d1[:k])
            np.divide(d1[:k], lens[:k], out=d1[:k])
            np.subtract(d2[:k], d1[:k], out=tot[:k])
        else:
            # len * (log(2 pi var) + 1), var = s2/len - (s1/len)^2
            np.divide(d1[:k], lens[:k], out=d1[:k])
            np.divide(d2[:k], lens[:k], out=d2[:k])
            np.multiply(d1[:k], d1[:k], out=d1[:k])
            np.subtract(d2[:k], d1[:k], out=d2[:k])
            np.maximum(d2[:k], VAR_FLOOR, out=d2[:k])
            np.log(d2[:k], out=d2[:k])
            np.add(d2[:k], offset, out=d2[:k])
            np.multiply(d2[:k], lens[:k], out=tot[:k])
        np.add(tot[:k], c_best[:k], out=tot[:k])
        i = int(np.argmin(tot[:k]))
        best_t = tot[i] + penalty
        best[t] = best_t
        prev[t] = c_idx[i]
        keep = tot[:k] <= best_t
        k2 = int(np.count_nonzero(keep))
        if k2 < k:
            sel = keep.nonzero()[0]
            c_idx[:k2] = c_idx[sel]
            c_tau[:k2] = c_tau[sel]
            c_best[:k2] = c_best[sel]
            c_s1[:k2] = c_s1[sel]
            c_s2[:k2] = c_s2[sel]
            k = k2

    bounds = []
    t = n
    while t > 0:
        tau = int(prev[t])
        bounds.append(tau)
        t = tau
    changepoints = tuple(sorted(b for b in bounds if b > 0))

    seg_bounds = (0,) + changepoints + (n,)
    means, variances, total = [], [], 0.0
    for lo, hi in zip(seg_bounds[:-1], seg_bounds[1:]):
        mean, var = _segment_stats(x, lo, hi)
        means.append(mean)
        variances.append(var)
        if cost == "mean":
            total += float(np.sum((x[lo:hi] - mean) ** 2))
        else:
            total += (hi - lo) * (math.log(2.0 * math.pi * var) + 1.0)

    return Segmentation(
        changepoints=changepoints,
        total_cost=total,
        penalty=float(penalty),
        segment_means=tuple(means),
        segment_variances=tuple(variances),
        n=n,
    )


@dataclass(frozen=True)
class CropsEntry:
    penalty_lo: float
    penalty_hi: float
    num_changepoints: int
    segmentation: Segmentation


@dataclass(frozen=True)
class CropsCurve:
    """Changepoint count as a step function of the penalty."""

    entries: tuple[CropsEntry, ...]
    penalty_lo: float
    penalty_hi: float

    def counts(self) -> list[int]:
        return [e.num_changepoints for e in self.entries]


def crops(
    series: TimeSeries | np.ndarray,
    penalty_lo: float,
    penalty_hi: float,
    min_seg_len: int = 2,
    cost: str = "meanvar",
) -> CropsCurve:
    """All optimal segmentations over a penalty interval.

    Runs ``pelt`` at both endpoints, then recursively probes the crossing
    penalty ``(cost(high) - cost(low)) / (m(low) - m(high))`` whenever the
    counts at the ends of a subinterval differ by more than one, until
    every distinct optimal count in the interval has been seen.
    """
    if not 0 <= penalty_lo < penalty_hi:
        raise ValueError("need 0 <= penalty_lo < penalty_hi")
    runs: dict[float, Segmentation] = {}

    def run(beta: float) -> Segmentation:
        if beta not in runs:
            runs[beta] = pelt(series, beta, min_seg_len, cost)
        return runs[beta]

    stack = [(penalty_lo, penalty_hi)]
    while stack:
        b0, b1 = stack.pop()
        s0, s1 = run(b0), run(b1)
        m0, m1 = s0.num_changepoints, s1.num_changepoints
        if m0 <= m1 + 1:
            continue
        beta_int = (s1.total_cost - s0.total_cost) / (m0 - m1)
        if not (b0 < beta_int < b1):
            continue
        s_int = run(beta_int)
        if s_int.num_changepoints in (m0, m1):
            continue
        stack.append((b0, beta_int))
        stack.append((beta_int, b1))

    by_penalty = sorted(runs.items())
    picked: list[tuple[int, Segmentation]] = []
    for _, seg in by_penalty:
        if not picked or seg.num_changepoints != picked[-1][0]:
            picked.append((seg.num_changepoints, seg))

    entries: list[CropsEntry] = []
    lo = penalty_lo
    for i, (count, seg) in enumerate(picked):
        if i + 1 < len(picked):
            nxt_count, nxt_seg = picked[i + 1]
            hi = (nxt_seg.total_cost - seg.total_cost) / (count - nxt_count)
            hi = min(max(hi, lo), penalty_hi)
        else:
            hi = penalty_hi
        entries.append(CropsEntry(lo, hi, count, seg))
        lo = hi
    return CropsCurve(tuple(entries), penalty_lo, penalty_hi)


@dataclass(frozen=True)
class CountSelection:
    segmentation: Segmentation
    requested: int
    count: int
    exact: bool


def select_by_count(curve: CropsCurve, m: int) -> CountSelection:
    """Segmentation with ``m`` changepoints, or the nearest count available.

    Ties between two equally distant counts go to the larger one;
    ``exact`` records whether the request could be honoured.
    """
    if not curve.entries:
        raise ValueError("empty penalty curve")
    best: CropsEntry | None = None
    for entry in curve.entries:
        if best is None:
            best = entry
            continue
        d_new = abs(entry.num_changepoints - m)
        d_old = abs(best.num_changepoints - m)
        if d_new < d_old or (d_new == d_old and entry.num_changepoints > best.num_changepoints):
            best = entry
    assert best is not None
    return CountSelection(
        segmentation=best.segmentation,
        requested=m,
        count=best.num_changepoints,
        exact=best.num_changepoints == m,
    )


def split_on_gaps(
    series: TimeSeries, max_gap_hours: float = 6.0
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Carve a residual series into analyzable chunks.

    Runs of missing values longer than ``max_gap_hours`` split the series;
    shorter gaps are bridged by simply dropping the missing points.  Each
    chunk comes back as ``(row_indices, values)`` so results can be mapped
    to timestamps.
    """
    isnan = np.isnan(series.values)
    max_run = max(int(round(max_gap_hours / series.step_hours)), 1)
    chunks: list[tuple[np.ndarray, np.ndarray]] = []
    current: list[int] = []
    run = 0
    for i in range(len(series)):
        if isnan[i]:
            run += 1
            if run > max_run and current:
                idx = np.array(current, dtype=np.int64)
                chunks.append((idx, series.values[idx]))
                current = []
            continue
        run = 0
        current.append(i)
    if current:
        idx = np.array(current, dtype=np.int64)
        chunks.append((idx, series.values[idx]))
    return chunks
