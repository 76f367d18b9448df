"""Array-growth timing model and buffer-offset recovery.

The engine grows a dynamic array's backing store by

    new_size = size + (size >> 1) + 16

and the copy at each growth point makes the corresponding push visibly
slower. When an index-shifting defense adds a secret offset to every array
index, the observed resize positions shift by that offset, and inverting
the growth rule over one consecutive pair of observed sizes,

    offset = 2 * new_size - 3 * size - 32,

recovers it. The floor in the shift makes a single pair exact only up to
the parity of the prior internal capacity (it yields offset - (capacity
mod 2)), so the trace-level recovery takes the maximum over all consecutive
pairs: any pair whose prior capacity is even yields the exact offset, and
an estimate can never exceed it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter1d

from .errors import InsufficientSpikesError

SPIKE_MAD_K = 8.0
SPIKE_WINDOW = 3


class TraceSource(str, Enum):
    MEASURED = "measured"
    SIMULATED = "simulated"


@dataclass(frozen=True)
class PushTrace:
    """Per-push durations (us), index = push count."""

    durations: np.ndarray
    source: TraceSource = TraceSource.MEASURED
    true_offset: Optional[int] = None

    def __post_init__(self):
        d = np.ascontiguousarray(self.durations, dtype=np.float64)
        if d.ndim != 1:
            raise ValueError("durations must be a 1-d array")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("durations must be finite and >= 0")
        d.setflags(write=False)
        object.__setattr__(self, "durations", d)

    def __len__(self) -> int:
        return len(self.durations)


def v8_new_size(size: int) -> int:
    """Next backing-store capacity for a store of ``size`` elements."""
    if size < 0:
        raise ValueError("size must be >= 0")
    return size + (size >> 1) + 16


def growth_boundaries(offset: int, n_pushes: int) -> tuple:
    """(push indices, internal capacities) of the resizes an offset-shifted
    array hits within ``n_pushes`` pushes.

    The first internal capacity is ``v8_new_size(0) + offset``; element p
    lands at internal slot p + offset, so capacity c is exhausted at push
    index c - offset.
    """
    indices = []
    caps = []
    c = v8_new_size(0) + offset
    while c - offset < n_pushes:
        indices.append(c - offset)
        caps.append(c)
        c = v8_new_size(c)
    return np.asarray(indices, dtype=np.int64), np.asarray(caps, dtype=np.int64)


def simulate_push_timings(offset: int, n_pushes: int, base_us: float = 1.0,
                          spike_us_per_elem: float = 0.05,
                          noise_sigma_us: float = 0.0, seed: int = 0) -> PushTrace:
    """Forward-simulate per-push durations for a given index offset.

    Every push costs ``base_us`` plus optional Gaussian noise; a push that
    crosses a growth boundary additionally pays ``spike_us_per_elem`` times
    the capacity being copied, so spikes grow with the array.
    """
    if offset < 0:
        raise ValueError("offset must be >= 0")
    if n_pushes == 0:
        return PushTrace(np.empty(0), source=TraceSource.SIMULATED, true_offset=offset)
    durations = np.full(n_pushes, base_us, dtype=np.float64)
    if noise_sigma_us > 0:
        rng = np.random.default_rng(seed)
        durations += rng.normal(0.0, noise_sigma_us, n_pushes)
        np.maximum(durations, 0.0, out=durations)
    idx, caps = growth_boundaries(offset, n_pushes)
    durations[idx] += spike_us_per_elem * caps
    return PushTrace(durations, source=TraceSource.SIMULATED, true_offset=offset)


def detect_resizes(trace: PushTrace) -> np.ndarray:
    """Push indices whose duration is an outlier spike.

    A spike must exceed median + 8*MAD and be the maximum within a +-3
    window (robust against the spike amplitude growing along the trace).
    """
    d = trace.durations
    if len(d) < 32:
        raise ValueError("trace too short to detect resizes (need >= 32 pushes)")
    med = np.median(d)
    mad = np.median(np.abs(d - med))
    threshold = med + SPIKE_MAD_K * mad
    local_max = d >= maximum_filter1d(d, size=2 * SPIKE_WINDOW + 1, mode="nearest")
    idx = np.nonzero((d > threshold) & local_max)[0]
    if len(idx) < 2:
        raise InsufficientSpikesError(f"found {len(idx)} spikes, need at least 2")
    return idx


def recover_offset(size: int, new_size: int) -> int:
    """Invert the growth rule over one pair of observed (shifted) sizes."""
    if size < 0 or new_size <= size:
        raise ValueError("need new_size > size >= 0")
    return 2 * new_size - 3 * size - 32


def recover_offset_from_trace(trace: PushTrace) -> int:
    """Recover the index offset from a push-timing trace.

    Applies :func:`recover_offset` to every consecutive pair of detected
    resize positions and returns the maximum: a pair with even prior
    capacity recovers the offset exactly, a pair with odd prior capacity
    undershoots by exactly 1, and nothing overshoots. If every observed
    prior capacity is odd the result is offset - 1 (the two hypotheses are
    observationally equivalent inside such a window).
    """
    spikes = detect_resizes(trace)
    if len(spikes) < 3:
        raise InsufficientSpikesError(f"found {len(spikes)} spikes, need at least 3")
    estimates = [recover_offset(int(a), int(b)) for a, b in zip(spikes, spikes[1:])]
    return max(estimates)


def load_push_trace(path) -> PushTrace:
    """Read a TSV of ``push_index<TAB>duration_us`` rows."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path} line {lineno}: expected 'push_index<TAB>duration_us'")
            pairs.append((int(parts[0]), float(parts[1])))
    pairs.sort()
    durations = np.array([d for _, d in pairs])
    return PushTrace(durations, source=TraceSource.MEASURED)
