"""Segmentation: pruned exact search, penalty curves, gap handling.

The central check compares the pruned dynamic program against a plain
O(n^2) optimal-partitioning oracle that shares the cost definitions, so
any pruning or recursion mistake shows up as a changepoint or objective
mismatch.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from sapflow.changepoint import (
    VAR_FLOOR,
    crops,
    default_penalty,
    default_penalty_range,
    pelt,
    select_by_count,
    split_on_gaps,
)
from sapflow.errors import TooShort


def _seg_cost(x: np.ndarray, cost: str) -> float:
    if cost == "mean":
        return float(np.sum((x - x.mean()) ** 2))
    var = max(float(np.mean((x - x.mean()) ** 2)), VAR_FLOOR)
    return len(x) * (math.log(2.0 * math.pi * var) + 1.0)


def _optimal_partition_reference(values, penalty, min_seg_len=2, cost="meanvar"):
    """Unpruned O(n^2) dynamic program over all admissible last segments."""
    n = len(values)
    best = [math.inf] * (n + 1)
    best[0] = -penalty
    prev = [0] * (n + 1)
    for t in range(min_seg_len, n + 1):
        for s in range(0, t - min_seg_len + 1):
            if not math.isfinite(best[s]):
                continue
            c = best[s] + _seg_cost(values[s:t], cost) + penalty
            if c < best[t]:
                best[t] = c
                prev[t] = s
    cps = []
    t = n
    while t > 0:
        s = prev[t]
        if s > 0:
            cps.append(s)
        t = s
    return tuple(sorted(cps)), best[n]


def _shifted_series(rng, n=200, shift_at=100, delta=2.0, sd=0.5):
    x = rng.normal(0.0, sd, size=n)
    x[shift_at:] += delta
    return x


class TestPelt:
    def test_matches_unpruned_oracle(self):
        rng = np.random.default_rng(60)
        for trial in range(25):
            n = int(rng.integers(40, 140))
            x = rng.normal(size=n)
            if trial % 2:  # half the series get one or two genuine shifts
                k = int(rng.integers(10, n - 10))
                x[k:] += rng.normal(0.0, 3.0)
            cost = "mean" if trial % 3 == 0 else "meanvar"
            msl = 2 if trial % 4 else 3
            penalty = float(rng.uniform(1.0, 4.0)) * math.log(n)
            seg = pelt(x, penalty, min_seg_len=msl, cost=cost)
            want_cps, want_obj = _optimal_partition_reference(x, penalty, msl, cost)
            assert seg.changepoints == want_cps
            got_obj = seg.total_cost + seg.num_changepoints * penalty
            assert got_obj == pytest.approx(want_obj, rel=1e-10, abs=1e-8)

    def test_single_shift_located(self):
        # the pure mean cost matches a mean-shift alternative; meanvar
        # would also reward carving out low-variance micro-segments
        x = _shifted_series(np.random.default_rng(61))
        seg = pelt(x, default_penalty(len(x)), cost="mean")
        assert seg.num_changepoints == 1
        assert abs(seg.changepoints[0] - 100) <= 3

    def test_constant_series_has_no_changepoints(self):
        seg = pelt(np.ones(100), penalty=5.0)
        assert seg.changepoints == ()
        assert seg.segment_variances[0] == VAR_FLOOR

    def test_segments_partition_the_range(self):
        x = _shifted_series(np.random.default_rng(62))
        seg = pelt(x, default_penalty(len(x)))
        spans = seg.segments()
        assert spans[0][0] == 0 and spans[-1][1] == len(x)
        for (a, b), (c, d) in zip(spans, spans[1:]):
            assert b == c and b - a >= 2

    def test_reported_cost_excludes_penalty(self):
        x = _shifted_series(np.random.default_rng(63))
        seg = pelt(x, default_penalty(len(x)))
        by_hand = sum(_seg_cost(x[a:b], "meanvar") for a, b in seg.segments())
        assert seg.total_cost == pytest.approx(by_hand, rel=1e-12)

    def test_segment_moments(self):
        x = _shifted_series(np.random.default_rng(64))
        seg = pelt(x, default_penalty(len(x)))
        for k, (a, b) in enumerate(seg.segments()):
            assert seg.segment_means[k] == pytest.approx(float(x[a:b].mean()))
            biased = float(np.mean((x[a:b] - x[a:b].mean()) ** 2))
            assert seg.segment_variances[k] == pytest.approx(max(biased, VAR_FLOOR))

    def test_min_seg_len_respected_with_edge_outlier(self):
        # an extreme first value tempts the search into a length-1 segment
        x = np.random.default_rng(65).normal(size=80)
        x[0] = 40.0
        seg = pelt(x, penalty=2.0, min_seg_len=2)
        for a, b in seg.segments():
            assert b - a >= 2

    def test_affine_invariance_of_meanvar(self):
        x = _shifted_series(np.random.default_rng(66))
        a, b = 3.0, -7.0
        seg1 = pelt(x, 12.0)
        seg2 = pelt(a * x + b, 12.0)
        assert seg1.changepoints == seg2.changepoints
        # each segment cost shifts by len * ln(a^2)
        assert seg2.total_cost - seg1.total_cost == pytest.approx(
            len(x) * math.log(a * a), rel=1e-9
        )

    def test_input_validation(self):
        x = np.random.default_rng(67).normal(size=50)
        with pytest.raises(ValueError, match="penalty"):
            pelt(x, -1.0)
        with pytest.raises(ValueError, match="min_seg_len"):
            pelt(x, 1.0, min_seg_len=0)
        with pytest.raises(ValueError, match="cost"):
            pelt(x, 1.0, cost="variance")
        bad = x.copy()
        bad[3] = np.nan
        with pytest.raises(ValueError, match="[Nn]a[Nn]|missing"):
            pelt(bad, 1.0)
        with pytest.raises(TooShort):
            pelt(x[:3], 1.0, min_seg_len=2)

    def test_to_dict(self):
        x = _shifted_series(np.random.default_rng(68))
        doc = pelt(x, default_penalty(len(x)), cost="mean").to_dict()
        assert doc["changepoints"] == [100]
        assert doc["n"] == 200


class TestDefaults:
    def test_default_penalty(self):
        assert default_penalty(200) == pytest.approx(3.0 * math.log(200), rel=1e-15)

    def test_default_penalty_range(self):
        lo, hi = default_penalty_range(200)
        assert lo == pytest.approx(math.log(200), rel=1e-15)
        assert hi == pytest.approx(100.0 * math.log(200), rel=1e-15)


class TestCrops:
    def _series(self, seed=70):
        rng = np.random.default_rng(seed)
        x = rng.normal(0.0, 0.5, size=240)
        x[80:] += 2.0
        x[160:] -= 3.0
        return x

    def test_counts_monotone_in_penalty(self):
        x = self._series()
        curve = crops(x, *default_penalty_range(len(x)))
        counts = curve.counts()
        assert sorted(counts, reverse=True) == list(counts)
        assert counts[-1] <= 1

    def test_entries_tile_the_range(self):
        x = self._series()
        lo, hi = default_penalty_range(len(x))
        curve = crops(x, lo, hi)
        assert curve.entries[0].penalty_lo == lo
        assert curve.entries[-1].penalty_hi == hi
        for a, b in zip(curve.entries, curve.entries[1:]):
            assert a.penalty_hi == pytest.approx(b.penalty_lo)

    def test_each_entry_optimal_inside_its_interval(self):
        x = self._series()
        curve = crops(x, *default_penalty_range(len(x)))
        for entry in curve.entries:
            mid = 0.5 * (entry.penalty_lo + entry.penalty_hi)
            direct = pelt(x, mid)
            assert direct.changepoints == entry.segmentation.changepoints

    def test_select_by_count_exact_and_nearest(self):
        x = self._series()
        curve = crops(x, *default_penalty_range(len(x)))
        counts = set(curve.counts())
        assert 2 in counts
        picked = select_by_count(curve, 2)
        assert picked.exact and picked.count == 2
        # far beyond anything on the curve: settles on the largest count
        high = select_by_count(curve, 99)
        assert not high.exact
        assert high.count == max(counts)

    def test_select_tie_prefers_more_changepoints(self):
        x = self._series()
        curve = crops(x, *default_penalty_range(len(x)))
        counts = sorted(set(curve.counts()))
        gaps = [b - a for a, b in zip(counts, counts[1:])]
        if 2 in gaps:  # a hole of width 2 gives an equidistant request
            a = counts[gaps.index(2)]
            picked = select_by_count(curve, a + 1)
            assert picked.count == a + 2


class TestSplitOnGaps:
    def test_short_gap_bridged(self, hourly):
        vals = np.arange(20.0)
        vals[5:8] = np.nan  # three missing hours, under the limit
        chunks = split_on_gaps(hourly(vals), max_gap_hours=6.0)
        assert len(chunks) == 1
        idx, x = chunks[0]
        assert idx.tolist() == [0, 1, 2, 3, 4, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19]
        assert not np.isnan(x).any()

    def test_long_gap_splits(self, hourly):
        vals = np.arange(30.0)
        vals[10:18] = np.nan  # eight missing hours
        chunks = split_on_gaps(hourly(vals), max_gap_hours=6.0)
        assert len(chunks) == 2
        assert chunks[0][0].tolist() == list(range(10))
        assert chunks[1][0].tolist() == list(range(18, 30))

    def test_leading_and_trailing_nans(self, hourly):
        vals = np.full(12, np.nan)
        vals[4:9] = 1.0
        chunks = split_on_gaps(hourly(vals), max_gap_hours=2.0)
        assert len(chunks) == 1
        assert chunks[0][0].tolist() == [4, 5, 6, 7, 8]

    def test_all_missing(self, hourly):
        assert split_on_gaps(hourly(np.full(10, np.nan))) == []

    def test_respects_step_hours(self):
        from datetime import datetime, timezone

        from sapflow.series import TimeSeries

        start = datetime(2023, 6, 1, tzinfo=timezone.utc)
        vals = np.arange(20.0)
        vals[5:9] = np.nan  # four samples at 2 h each: an 8 h gap
        s = TimeSeries(start, vals, step_hours=2.0)
        chunks = split_on_gaps(s, max_gap_hours=6.0)
        assert len(chunks) == 2
