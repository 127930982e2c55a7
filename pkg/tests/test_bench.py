import math

import pytest

from specflow.bench import BRUTE, TN, loglog_slope, run_memory_benchmark


class TestMemoryBenchmark:
    def test_tn_mode_linear_scaling(self):
        rows = run_memory_benchmark(d=32, lengths=(4, 16, 64, 256), modes=(TN,), seed=0)
        assert all(r.feasible for r in rows)
        peaks = [r.peak_bytes for r in rows]
        assert all(p and p > 0 for p in peaks)
        slope = loglog_slope([r.length for r in rows], peaks)
        assert slope <= 1.1

    def test_brute_mode_guard_and_growth(self):
        # at a small feature width the materialized tensor is measurable over
        # several lengths and must grow like d^N
        rows = run_memory_benchmark(d=8, lengths=(3, 4, 5, 6), modes=(BRUTE,), seed=0)
        assert all(r.feasible for r in rows)
        slope_per_step = loglog_slope(
            [math.e ** r.length for r in rows], [r.peak_bytes for r in rows]
        )  # log-peak vs N
        assert slope_per_step == pytest.approx(math.log(8), rel=0.35)

    def test_brute_mode_infeasible_guard(self):
        rows = run_memory_benchmark(d=32, lengths=(4, 8), modes=(BRUTE,), seed=0)
        by_len = {r.length: r for r in rows}
        assert by_len[4].feasible
        assert not by_len[8].feasible
        assert by_len[8].peak_bytes is None and by_len[8].method == "guard"

    def test_methods_reported(self):
        rows = run_memory_benchmark(d=8, lengths=(4,), modes=(TN,), seed=0)
        assert rows[0].method in ("allocator_events", "rss_sampling_1ms")
