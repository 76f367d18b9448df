"""Synthetic victim: scripted cache pressure for ground-truth experiments.

An :class:`ActivityProfile` is a piecewise-constant intensity schedule; the
victim process touches ``intensity * n_lines`` distinct cache lines of its
own LLC-sized buffer every 10 ms tick while inside a segment and idles
outside. The profile library generates families of deterministic,
pairwise-distinct schedules that stand in for the per-site memory activity
of a monitored page set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .arch import ArchProfile
from .errors import OutOfMemoryError
from .rng import derive_rng

TICK_MS = 10


@dataclass(frozen=True)
class ActivityProfile:
    id: str
    total_ms: int
    segments: tuple  # of (start_ms, end_ms, intensity)

    def __post_init__(self):
        segs = tuple((int(s), int(e), float(i)) for s, e, i in self.segments)
        object.__setattr__(self, "segments", segs)
        if self.total_ms <= 0:
            raise ValueError("total_ms must be > 0")
        prev_end = 0
        for start, end, intensity in segs:
            if not 0.0 <= intensity <= 1.0:
                raise ValueError("intensity must be in [0, 1]")
            if start < prev_end or end <= start or end > self.total_ms:
                raise ValueError("segments must be sorted, non-overlapping, within [0, total_ms]")
            prev_end = end

    def intensity_at(self, t_ms: float) -> float:
        for start, end, intensity in self.segments:
            if start <= t_ms < end:
                return intensity
        return 0.0

    def intensities_at(self, t_ms: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`intensity_at` for the simulator."""
        t_ms = np.asarray(t_ms, dtype=np.float64)
        out = np.zeros_like(t_ms)
        if not self.segments:
            return out
        starts = np.array([s for s, _, _ in self.segments])
        ends = np.array([e for _, e, _ in self.segments])
        vals = np.array([i for _, _, i in self.segments])
        pos = np.searchsorted(starts, t_ms, side="right") - 1
        inside = (pos >= 0) & (t_ms < ends[np.clip(pos, 0, len(ends) - 1)])
        out[inside] = vals[pos[inside]]
        return out


def _burst_skeleton(rng, total_ms: int) -> list:
    scale = total_ms / 30_000.0  # geometry is laid out for 30 s traces
    base = []
    t = max(1, int(300 * scale))
    margin = t
    for _ in range(8):
        width = max(40, int(rng.integers(120, 420) * scale))
        if t + width > total_ms - margin:
            break
        base.append((t, width, float(np.round(rng.uniform(0.35, 0.95), 2))))
        t += width + max(50, int(rng.integers(2000, 3600) * scale))
    if len(base) < 2:
        raise ValueError(f"total_ms={total_ms} too short for a multi-burst profile")
    return base


def profile_library(k: int, seed: int, total_ms: int = 30_000,
                    independent: bool = False) -> list:
    """Deterministic library of ``k`` pairwise-distinct activity profiles.

    By default all profiles share one burst skeleton (the coarse activity
    envelope) and classes differ in fine structure only: per-burst phase
    offsets of a few tens of ms, width scaling, intensity shifts, and
    whether a burst is split into a close pair. That makes the signatures
    robust to sub-millisecond noise but progressively confusable as
    injected timing jitter approaches the tens-of-ms scale, and gives
    classes differing burst counts, phases, and intensities.

    ``independent=True`` draws a separate skeleton per class instead
    (coarsely distinct signatures, the easy regime for any classifier).
    """
    if not 2 <= k <= 100:
        raise ValueError("k must be in [2, 100]")
    base = _burst_skeleton(derive_rng(seed, "victim-skeleton"), total_ms)

    profiles = []
    seen = set()
    for i in range(k):
        if independent:
            base = _burst_skeleton(derive_rng(seed, "victim-skeleton", i + 1), total_ms)
        for attempt in range(100):
            rng = derive_rng(seed, "victim-profile", i * 100 + attempt)
            segments = []
            for start, width, intensity in base:
                start = max(0, start + int(rng.integers(-15, 16)))
                intensity = float(np.round(
                    np.clip(intensity + rng.uniform(-0.03, 0.03), 0.1, 1.0), 3))
                if rng.random() < 0.25:
                    # split into a close pair with the active mass preserved,
                    # so the difference is pure fine structure
                    half = width // 2
                    segments.append((start, start + half, intensity))
                    segments.append((start + half + 50, start + 50 + width, intensity))
                else:
                    segments.append((start, start + width, intensity))
            segments = [
                (s, min(total_ms, e), v) for s, e, v in segments if s < total_ms and e > s
            ]
            segments.sort()
            cleaned = []
            prev_end = 0
            for s, e, v in segments:
                s = max(s, prev_end)
                if e > s:
                    cleaned.append((s, e, v))
                    prev_end = e
            key = tuple(cleaned)
            if len(cleaned) >= 2 and key not in seen:
                seen.add(key)
                profiles.append(ActivityProfile(id=f"prof-{i:02d}", total_ms=total_ms,
                                                segments=tuple(cleaned)))
                break
        else:
            raise RuntimeError(f"could not generate a distinct profile for class {i}")
    return profiles


@njit(cache=True)
def _touch_lines(buf, n_lines, k, stride, offset, words_per_line):
    # stride-walk over k distinct lines; no index array so the victim's
    # footprint stays bounded by its buffer
    acc = 0
    for j in range(k):
        line = (stride * j + offset) % n_lines
        idx = line * words_per_line
        buf[idx] += 1
        acc ^= idx
    return acc


def _coprime_stride(n_lines: int, rng: np.random.Generator) -> int:
    while True:
        s = int(rng.integers(n_lines // 3, n_lines)) | 1
        if np.gcd(s, n_lines) == 1:
            return s


def run_victim(profile: ActivityProfile, arch: ArchProfile, seed: int = 0,
               tick_ms: int = TICK_MS, clock=time.monotonic, sleep=time.sleep) -> int:
    """Run the scripted victim to completion; returns the number of ticks.

    Touches ``intensity * lines`` distinct lines per tick inside segments,
    idles outside, and exits after ``profile.total_ms``. The line selection
    (a coprime stride walk) is deterministic per (profile, seed).
    """
    n_lines = arch.lines
    words_per_line = arch.line_bytes // 8
    try:
        buf = np.zeros(n_lines * words_per_line, dtype=np.int64)
    except MemoryError:
        raise OutOfMemoryError(f"cannot allocate {arch.llc_bytes} byte victim buffer") from None
    rng = derive_rng(seed, "victim-lines-" + profile.id)
    stride = _coprime_stride(n_lines, rng)
    offset = int(rng.integers(0, n_lines))
    _touch_lines(buf, n_lines, 1, stride, offset, words_per_line)  # JIT warm-up

    start = clock()
    tick = 0
    n_ticks = profile.total_ms // tick_ms
    while tick < n_ticks:
        t_ms = tick * tick_ms
        intensity = profile.intensity_at(t_ms)
        if intensity > 0:
            k = int(round(intensity * n_lines))
            if k:
                _touch_lines(buf, n_lines, k, stride, offset, words_per_line)
        tick += 1
        target = start + tick * tick_ms / 1000.0
        delay = target - clock()
        if delay > 0:
            sleep(delay)
    return tick


def save_profile(profile: ActivityProfile, path) -> None:
    """Serialize as TSV: one ``start_ms end_ms intensity`` row per segment."""
    lines = [f"# id\t{profile.id}", f"# total_ms\t{profile.total_ms}"]
    lines += [f"{s}\t{e}\t{i:g}" for s, e, i in profile.segments]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_profile(path) -> ActivityProfile:
    meta = {}
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                key, _, val = line[2:].partition("\t")
                meta[key] = val
                continue
            s, e, i = line.split("\t")
            segments.append((int(s), int(e), float(i)))
    return ActivityProfile(id=meta.get("id", "unnamed"), total_ms=int(meta["total_ms"]),
                           segments=tuple(segments))
