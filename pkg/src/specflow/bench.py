"""Peak-memory measurement of the contraction scan vs full materialization."""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass

import numpy as np
import torch

from .spectral import (
    contract_sequence,
    init_spectral_params,
    materialize_mean_embedding,
    tensor_inner_product,
)

TN = "tn"
BRUTE = "brute"


@dataclass
class BenchRow:
    length: int
    mode: str
    feasible: bool
    peak_bytes: int | None
    wall_seconds: float | None
    method: str


def _profiler_peak(fn):
    """Replay the CPU profiler's signed allocation events to a high-water mark."""
    from torch.profiler import ProfilerActivity, profile

    with profile(activities=[ProfilerActivity.CPU], profile_memory=True) as prof:
        fn()
    events = [e for e in prof.events() if e.cpu_memory_usage != 0]
    if not events:
        return None
    current = peak = 0
    for ev in sorted(events, key=lambda e: e.time_range.start):
        current += ev.cpu_memory_usage
        peak = max(peak, current)
    return peak


def _rss_peak(fn, interval: float = 1e-3):
    """Sample resident-set size at ``interval`` while fn runs; report the rise."""
    import psutil

    proc = psutil.Process()
    baseline = proc.memory_info().rss
    peak = [baseline]
    stop = threading.Event()

    def sampler():
        while not stop.is_set():
            peak[0] = max(peak[0], proc.memory_info().rss)
            time.sleep(interval)

    thread = threading.Thread(target=sampler, daemon=True)
    thread.start()
    try:
        fn()
    finally:
        stop.set()
        thread.join()
    return max(0, peak[0] - baseline)


def measure_peak_bytes(fn) -> tuple[int, str]:
    """Peak allocation of fn(): allocator high-water mark, else RSS sampling."""
    peak = _profiler_peak(fn)
    if peak is not None:
        return peak, "allocator_events"
    return _rss_peak(fn), "rss_sampling_1ms"


def run_memory_benchmark(d: int = 32, lengths=(4, 16, 64, 256), modes=(TN, BRUTE),
                         seed: int = 0) -> list[BenchRow]:
    """Measure contraction memory across sequence lengths at feature width d.

    TN mode runs the linear-memory scan; BRUTE mode materializes the full
    [d]^N embedding tensor and pairs it with the rank-one feature tensor.
    BRUTE lengths whose tensor would exceed the size guard are recorded as
    infeasible rather than attempted.
    """
    params = init_spectral_params(num_blocks=1, d_h=d, d_r=max(1, d // 2), seed=seed)
    rows = []
    for mode in modes:
        for length in lengths:
            gen = torch.Generator().manual_seed(seed + length)

            def features():
                re = torch.randn(length, 1, d, generator=gen)
                im = torch.randn(length, 1, d, generator=gen)
                return torch.complex(re, im)

            if mode == TN:
                def job():
                    with torch.no_grad():
                        contract_sequence(features(), params)
            elif mode == BRUTE:
                def job():
                    with torch.no_grad():
                        tensor = materialize_mean_embedding(params, length)
                        tensor_inner_product(features(), tensor)
            else:
                raise ValueError(f"unknown mode {mode!r}")

            if mode == BRUTE:
                try:
                    materialize_guard_check(d, length)
                except ValueError:
                    rows.append(BenchRow(length, mode, False, None, None, "guard"))
                    continue
            start = time.perf_counter()
            peak, method = measure_peak_bytes(job)
            rows.append(BenchRow(length, mode, True, peak, time.perf_counter() - start, method))
    return rows


def materialize_guard_check(d: int, length: int):
    from .spectral import MATERIALIZE_MAX_ENTRIES

    if math.log(MATERIALIZE_MAX_ENTRIES) < length * math.log(d):
        raise ValueError(f"d^N = {d}^{length} exceeds guard {MATERIALIZE_MAX_ENTRIES}")


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    xs = np.log(np.asarray(xs, dtype=np.float64))
    ys = np.log(np.asarray(ys, dtype=np.float64))
    return float(np.polyfit(xs, ys, 1)[0])
