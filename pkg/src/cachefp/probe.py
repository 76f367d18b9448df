"""Native cache-occupancy and sweep-counting prober.

The eviction buffer is an LLC-sized array carrying its own traversal order:
element i of the chain stores the index of the next element, one element
per cache line, so a sweep is a chain of data-dependent loads that the CPU
cannot reorder past the timing call (the final index is returned from the
jitted traversal and checked, which forces the whole walk to complete
before the clock is read again). Lines are visited page by page in a
permuted page order, with a per-page pseudo-random line order that never
steps to the immediately following line, which keeps stride prefetchers
out of the measurement.

The buffer is written once at build time, so first-touch page faults land
in the build, not in the sweeps. A prober instance is single-threaded;
distinct instances may run on distinct threads or processes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .arch import ArchProfile
from .errors import OutOfMemoryError
from .rng import derive_rng
from .trace import Memorygram, SampleKind, Technique

PAGE_BYTES = 4096
MIN_LLC_BYTES = 1 << 20


@dataclass
class EvictionBuffer:
    storage: np.ndarray  # int64 chain, llc_bytes plus one page of slack
    start: int  # chain entry point (element index)
    n_lines: int
    line_bytes: int
    arch_name: str


@njit(cache=True)
def _walk(buf, start, steps):
    idx = start
    for _ in range(steps):
        idx = buf[idx]
    return idx


def _permute_lines(n: int, rng) -> np.ndarray:
    """Permutation of 0..n-1 with no element followed by its successor
    (anti-prefetch: successor distances within a page are never +1)."""
    perm = rng.permutation(n)
    for _ in range(64):
        seq = np.nonzero(np.diff(perm) == 1)[0]
        if len(seq) == 0:
            return perm
        for j in seq:
            swap = (j + 2) % n
            perm[j + 1], perm[swap] = perm[swap], perm[j + 1]
    raise RuntimeError("could not build an anti-sequential permutation")


def build_buffer(profile: ArchProfile, seed: int = 0) -> EvictionBuffer:
    """LLC-sized eviction buffer with a single-cycle traversal chain."""
    if profile.llc_bytes < MIN_LLC_BYTES:
        raise ValueError(f"llc_bytes must be >= {MIN_LLC_BYTES}")
    n_lines = profile.lines
    words_per_line = profile.line_bytes // 8
    n_words = (profile.llc_bytes + PAGE_BYTES) // 8
    try:
        storage = np.zeros(n_words, dtype=np.int64)
    except MemoryError:
        raise OutOfMemoryError(f"cannot allocate {profile.llc_bytes} byte buffer") from None

    rng = derive_rng(seed, "eviction-chain")
    lines_per_page = max(1, PAGE_BYTES // profile.line_bytes)
    n_pages = (n_lines + lines_per_page - 1) // lines_per_page
    page_order = rng.permutation(n_pages)
    order = np.empty(n_lines, dtype=np.int64)
    pos = 0
    for page in page_order:
        first = page * lines_per_page
        count = min(lines_per_page, n_lines - first)
        perm = _permute_lines(count, rng)
        order[pos: pos + count] = first + perm
        pos += count

    slots = order * words_per_line
    storage[slots[:-1]] = slots[1:]
    storage[slots[-1]] = slots[0]
    buf = EvictionBuffer(storage=storage, start=int(slots[0]), n_lines=n_lines,
                         line_bytes=profile.line_bytes, arch_name=profile.name)
    _walk(storage, buf.start, n_lines)  # JIT compile + cache warm before first timed sweep
    return buf


def sweep(buffer: EvictionBuffer) -> float:
    """Wall time of one full chain traversal, in microseconds."""
    t0 = time.perf_counter_ns()
    end = _walk(buffer.storage, buffer.start, buffer.n_lines)
    t1 = time.perf_counter_ns()
    if end != buffer.start:
        raise RuntimeError("chain traversal did not return to its start")
    return (t1 - t0) / 1000.0


def capture_occupancy(profile: ArchProfile, duration_ms: int, period_ms: float,
                      seed: int = 0, buffer: EvictionBuffer = None) -> Memorygram:
    """One sweep-duration sample per period for ``duration_ms``.

    A sweep that overruns its period starts the next sample immediately (no
    catch-up sleeping); timestamps record what actually happened.
    """
    if duration_ms > 0 and not 0 < period_ms <= duration_ms:
        raise ValueError("need 0 < period_ms <= duration_ms")
    if buffer is None and duration_ms > 0:
        buffer = build_buffer(profile, seed)
    t_list, v_list = [], []
    start_ns = time.perf_counter_ns()
    duration_ns = duration_ms * 1_000_000
    period_ns = int(period_ms * 1_000_000)
    tick = start_ns
    while time.perf_counter_ns() - start_ns < duration_ns:
        now_ns = time.perf_counter_ns()
        t_list.append((now_ns - start_ns) // 1000)
        v_list.append(sweep(buffer))
        tick += period_ns
        pause = tick - time.perf_counter_ns()
        if pause > 0:
            time.sleep(pause / 1e9)
        else:
            tick = time.perf_counter_ns()  # overran the period: restart the grid
    return Memorygram(
        t_us=np.asarray(t_list, dtype=np.int64),
        values=np.asarray(v_list),
        sample_kind=SampleKind.DURATION,
        duration_ms=duration_ms,
        technique=Technique.OCCUPANCY,
        arch_profile=profile.name,
    )


def capture_sweep_count(profile: ArchProfile, duration_ms: int, window_ms: int = 100,
                        seed: int = 0, buffer: EvictionBuffer = None) -> Memorygram:
    """Completed sweeps per ``window_ms`` tick for ``duration_ms``.

    Window boundaries sit on multiples of ``window_ms`` of the monotonic
    clock, modeling a coarse timer tick; a sweep that spans a boundary
    counts in neither window.
    """
    if window_ms < 1:
        raise ValueError("window_ms must be >= 1")
    n_windows = duration_ms // window_ms
    if n_windows == 0:
        return Memorygram(t_us=np.empty(0, dtype=np.int64), values=np.empty(0),
                          sample_kind=SampleKind.SWEEP_COUNT, duration_ms=duration_ms,
                          technique=Technique.SWEEP_COUNT, arch_profile=profile.name)
    if buffer is None:
        buffer = build_buffer(profile, seed)
    window_ns = window_ms * 1_000_000
    # align the capture to the next whole tick of the monotonic clock
    now_ns = time.perf_counter_ns()
    start_ns = ((now_ns // window_ns) + 1) * window_ns
    while time.perf_counter_ns() < start_ns:
        pass
    counts = []
    count = 0
    boundary = start_ns + window_ns
    while len(counts) < n_windows:
        sweep_start = time.perf_counter_ns()
        _walk(buffer.storage, buffer.start, buffer.n_lines)
        sweep_end = time.perf_counter_ns()
        if sweep_end < boundary:
            if sweep_start >= boundary - window_ns:
                count += 1
        else:
            # close every window the sweep crossed; the crossing sweep
            # started in one window and finished in another, so it counts
            # in neither
            while boundary <= sweep_end and len(counts) < n_windows:
                counts.append(count)
                count = 0
                boundary += window_ns
    t_us = np.arange(n_windows, dtype=np.int64) * (window_ms * 1000)
    return Memorygram(
        t_us=t_us,
        values=np.asarray(counts, dtype=np.float64),
        sample_kind=SampleKind.SWEEP_COUNT,
        duration_ms=duration_ms,
        technique=Technique.SWEEP_COUNT,
        arch_profile=profile.name,
    )
