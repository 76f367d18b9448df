"""Deterministic channel simulator: maps an activity profile to a memorygram
per technique, with no hardware or network involved.

The contention model is linear: one sweep over the LLC-sized buffer costs

    sweep_us = base_sweep_us + contention_us_per_line * occupied_lines(t) + N(0, noise_sigma_us)

and each technique derives its sample value from sweeps:

* occupancy:    the sweep time itself (us)
* sweep_count:  floor(period / sweep_us) completed sweeps per tick
* dns_racing:   indicator of the sweep losing the race against a drawn
                resolver round-trip (binary per period)
* string_sock / css_pp: the inter-packet gap, i.e. the sum of
                ``decimation_n`` consecutive sweep times

The tor_like transport post-processes gap traces through a stop-and-wait
queue model (see :func:`simulate_tor_latency`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import UnsupportedTechniqueError
from .rng import derive_seed
from .trace import Dataset, Memorygram, SampleKind, Technique, World, inject_jitter, OTHER_LABEL
from .victim import ActivityProfile, profile_library

Seed = Union[int, np.random.SeedSequence]

#: measured per-technique sampling periods (ms) on the reference Intel machine
DEFAULT_PERIOD_MS = {
    Technique.OCCUPANCY: 2.9,
    Technique.SWEEP_COUNT: 100.0,
    Technique.DNS_RACING: 20.3,
    Technique.STRING_SOCK: 1.5,
    Technique.CSS_PP: 0.3,
}

SAMPLE_KIND_OF = {
    Technique.OCCUPANCY: SampleKind.DURATION,
    Technique.SWEEP_COUNT: SampleKind.SWEEP_COUNT,
    Technique.DNS_RACING: SampleKind.DNS_GAP,
    Technique.STRING_SOCK: SampleKind.WS_GAP,
    Technique.CSS_PP: SampleKind.DNS_GAP,
}


class Transport:
    DIRECT = "direct"
    TOR_LIKE = "tor_like"


@dataclass(frozen=True)
class SimParams:
    base_sweep_us: float = 2000.0
    contention_us_per_line: float = 0.02
    noise_sigma_us: float = 40.0
    llc_lines: int = 98_304
    period_ms: Mapping = field(default_factory=lambda: dict(DEFAULT_PERIOD_MS))
    dns_rtt_ms: float = 2.0
    dns_rtt_sigma_ms: float = 0.2
    transport: str = Transport.DIRECT
    tor_rtt_ms: float = 120.0
    decimation_n: int = 1

    def __post_init__(self):
        for name in ("base_sweep_us", "contention_us_per_line", "noise_sigma_us",
                     "dns_rtt_ms", "dns_rtt_sigma_ms", "tor_rtt_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.decimation_n < 1:
            raise ValueError("decimation_n must be >= 1")
        if self.llc_lines < 1:
            raise ValueError("llc_lines must be >= 1")
        if self.transport not in (Transport.DIRECT, Transport.TOR_LIKE):
            raise ValueError(f"unknown transport {self.transport!r}")

    @classmethod
    def tor_like(cls, **kwargs) -> "SimParams":
        """Stop-and-wait transport with the probe decimation that works best
        over it (one probe pair every 72 sweeps)."""
        kwargs.setdefault("decimation_n", 72)
        return cls(transport=Transport.TOR_LIKE, **kwargs)


def _sweep_times(occupied_lines: np.ndarray, params: SimParams,
                 rng: np.random.Generator, draws_per_sample: int = 1) -> np.ndarray:
    shape = occupied_lines.shape + ((draws_per_sample,) if draws_per_sample > 1 else ())
    if params.noise_sigma_us > 0:
        noise = rng.normal(0.0, params.noise_sigma_us, shape)
    else:
        noise = np.zeros(shape)
    base = params.base_sweep_us + params.contention_us_per_line * occupied_lines
    if draws_per_sample > 1:
        base = base[:, None]
    return np.maximum(base + noise, 0.001)


def simulate_trace(profile: ActivityProfile, technique: Technique, params: SimParams,
                   seed: Seed, arch: str = "intel-i5-3470",
                   label: Optional[str] = None, phase_ms: float = 0.0) -> Memorygram:
    """Simulate one trace of ``profile`` under ``technique``.

    ``phase_ms`` delays the whole activity schedule relative to the capture
    start (a capture rarely begins exactly at the page-load instant).
    Deterministic for fixed (profile, technique, params, seed, phase_ms).
    """
    technique = Technique(technique) if not isinstance(technique, Technique) else technique
    if technique not in SAMPLE_KIND_OF:
        raise UnsupportedTechniqueError(str(technique))
    period_ms = params.period_ms[technique]
    period_us = int(round(period_ms * 1000))
    n = int(profile.total_ms * 1000) // period_us
    t_us = np.arange(n, dtype=np.int64) * period_us
    rng = np.random.default_rng(seed)
    occupied = profile.intensities_at(t_us / 1000.0 - phase_ms) * params.llc_lines

    if technique is Technique.OCCUPANCY:
        values = _sweep_times(occupied, params, rng)
    elif technique is Technique.SWEEP_COUNT:
        sweeps = _sweep_times(occupied, params, rng)
        values = np.floor(period_us / sweeps)
    elif technique is Technique.DNS_RACING:
        sweeps = _sweep_times(occupied, params, rng)
        rtt = rng.normal(params.dns_rtt_ms * 1000.0, params.dns_rtt_sigma_ms * 1000.0, n)
        values = (sweeps > rtt).astype(np.float64)
    else:  # STRING_SOCK / CSS_PP: gap = decimation_n consecutive sweeps
        sweeps = _sweep_times(occupied, params, rng, draws_per_sample=params.decimation_n)
        values = sweeps.sum(axis=1) if params.decimation_n > 1 else sweeps
        if params.transport == Transport.TOR_LIKE:
            values = simulate_tor_latency(values, params, rng=rng)

    return Memorygram(
        t_us=t_us,
        values=values,
        sample_kind=SAMPLE_KIND_OF[technique],
        duration_ms=profile.total_ms,
        technique=technique,
        arch_profile=arch,
        label=label,
    )


def simulate_tor_latency(durations: Sequence, params: SimParams,
                         rng: Optional[np.random.Generator] = None,
                         seed: Seed = 0) -> np.ndarray:
    """Transform probe gaps (us) through a stop-and-wait transport.

    A transmission occupies the channel until its acknowledgement returns
    one round-trip later. Probes arriving while the channel is busy are
    buffered and all flush together at the ack instant, so the observed gaps
    fall into three regimes: ~0 for buffered batch members, ~tor_rtt_ms for
    batch leaders, and pass-through (plus jitter) for probes that found the
    channel idle.
    """
    if params.transport != Transport.TOR_LIKE:
        raise ValueError("simulate_tor_latency requires transport=tor_like")
    gaps = np.asarray(durations, dtype=np.float64).ravel()
    if gaps.size == 0:
        return np.empty(0)
    if rng is None:
        rng = np.random.default_rng(seed)
    rtt_us = params.tor_rtt_ms * 1000.0
    arrivals = np.cumsum(gaps)
    tx = np.empty_like(arrivals)
    passthrough = np.zeros(len(gaps), dtype=bool)
    free_at = -np.inf
    i = 0
    n = len(gaps)
    while i < n:
        if arrivals[i] >= free_at:
            tx[i] = arrivals[i]
            passthrough[i] = True
            free_at = arrivals[i] + rtt_us
            i += 1
        else:
            j = i
            while j < n and arrivals[j] < free_at:
                j += 1
            tx[i:j] = free_at
            free_at += rtt_us
            i = j
    out = np.diff(tx, prepend=0.0)
    if params.noise_sigma_us > 0:
        jitter = rng.normal(0.0, params.noise_sigma_us, n)
        out[passthrough] += jitter[passthrough]
    return np.maximum(out, 0.0)


def build_benchmark(k_classes: int, traces_per_class: int, technique: Technique,
                    params: SimParams, seed: int, total_ms: int = 30_000,
                    jitter_sigma_ms: float = 0.0, arch: str = "intel-i5-3470",
                    world: World = World.CLOSED,
                    other_traces: int = 0, phase_jitter_ms: float = 0.0,
                    independent_profiles: bool = False) -> Dataset:
    """Simulated labeled dataset: ``k_classes x traces_per_class`` traces with
    round-robin fold assignment.

    ``other_traces`` > 0 switches to the open world and appends that many
    traces drawn from profiles *outside* the monitored library, labeled
    "other". ``phase_jitter_ms`` > 0 delays each trace's schedule by a
    per-trace uniform draw from [0, phase_jitter_ms] (capture-start
    misalignment). ``independent_profiles`` selects the per-class-skeleton
    library.
    """
    technique = Technique(technique) if not isinstance(technique, Technique) else technique
    n_other_profiles = min(other_traces, 100 - k_classes) if other_traces else 0
    library = profile_library(k_classes + n_other_profiles, seed, total_ms=total_ms,
                              independent=independent_profiles)
    monitored = library[:k_classes]
    extras = library[k_classes:]

    def _one(profile, label, idx):
        phase = 0.0
        if phase_jitter_ms > 0:
            phase_rng = np.random.default_rng(derive_seed(seed, "sim-phase", idx))
            phase = float(phase_rng.uniform(0.0, phase_jitter_ms))
        tr = simulate_trace(profile, technique, params,
                            seed=derive_seed(seed, "sim-trace", idx),
                            arch=arch, label=label, phase_ms=phase)
        if jitter_sigma_ms > 0:
            tr = inject_jitter(tr, jitter_sigma_ms, derive_seed(seed, "sim-jitter", idx))
        return tr

    traces = []
    idx = 0
    for c, profile in enumerate(monitored):
        for j in range(traces_per_class):
            traces.append(_one(profile, profile.id, idx))
            idx += 1
    if other_traces:
        for j in range(other_traces):
            profile = extras[j % len(extras)]
            traces.append(_one(profile, OTHER_LABEL, idx))
            idx += 1
        world = World.OPEN
    folds = tuple(i % 10 for i in range(len(traces)))
    n_points = max(2, round(total_ms / params.period_ms[technique]))
    return Dataset(traces=tuple(traces), world=world, class_count=k_classes,
                   fold_of=folds, n_points=n_points)
