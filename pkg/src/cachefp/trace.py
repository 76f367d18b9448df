"""Memorygram data model, dataset container, on-disk format, and the shared
trace transforms (normalization, resampling, jitter injection).

A memorygram is a trace of cache use over a capture window: an ordered list
of (t_us, value) probe measurements, where the value is a probe duration in
microseconds, a sweep count, or an inter-arrival gap, depending on the
technique that produced it.

On-disk format (shared with out-of-process consumers, so it is deliberately
line oriented): a dataset is a directory holding ``manifest.tsv`` plus one
TSV file per trace with ``t_us<TAB>value`` lines. UTF-8, LF line endings,
integers decimal, values printed with at most 6 fractional digits (values
are quantized to 6 decimals at construction so the round-trip is bit exact).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import EmptyTraceError, FormatError
from .rng import RNG_NAME

Seed = Union[int, np.random.SeedSequence]

#: Distinguished open-world label for traces outside the monitored set.
OTHER_LABEL = "other"

FORMAT_NAME = "cachefp-dataset-v1"

MANIFEST_COLUMNS = ("file", "label", "technique", "arch", "duration_ms", "sample_kind", "fold")


class SampleKind(str, Enum):
    DURATION = "duration"
    SWEEP_COUNT = "sweep_count"
    DNS_GAP = "dns_gap"
    WS_GAP = "ws_gap"


class Technique(str, Enum):
    OCCUPANCY = "occupancy"
    SWEEP_COUNT = "sweep_count"
    DNS_RACING = "dns_racing"
    STRING_SOCK = "string_sock"
    CSS_PP = "css_pp"


class World(str, Enum):
    CLOSED = "closed"
    OPEN = "open"


def _quantize(values: np.ndarray) -> np.ndarray:
    # 6 fractional digits is the external format's precision; quantizing here
    # keeps save/load bit-exact.
    return np.round(np.asarray(values, dtype=np.float64), 6)


@dataclass(frozen=True, eq=False)
class Memorygram:
    """One captured (or simulated) trace. Immutable after construction."""

    t_us: np.ndarray
    values: np.ndarray
    sample_kind: SampleKind
    duration_ms: int
    technique: Technique
    arch_profile: str = "unknown"
    label: Optional[str] = None

    def __post_init__(self):
        t = np.ascontiguousarray(self.t_us, dtype=np.int64)
        v = _quantize(self.values)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("t_us and values must be 1-d arrays of equal length")
        if self.duration_ms < 0:
            raise ValueError("duration_ms must be >= 0")
        if len(t):
            if t[0] < 0:
                raise ValueError("timestamps must be >= 0")
            if np.any(np.diff(t) <= 0):
                raise ValueError("timestamps must be strictly increasing")
            if t[-1] >= self.duration_ms * 1000:
                raise ValueError(
                    f"timestamp {t[-1]} us outside capture window of {self.duration_ms} ms"
                )
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ValueError("sample values must be finite and >= 0")
            if self.sample_kind is SampleKind.SWEEP_COUNT and np.any(v != np.floor(v)):
                raise ValueError("sweep_count values must be integers")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "t_us", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.t_us)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Memorygram):
            return NotImplemented
        return (
            self.sample_kind == other.sample_kind
            and self.duration_ms == other.duration_ms
            and self.technique == other.technique
            and self.arch_profile == other.arch_profile
            and self.label == other.label
            and np.array_equal(self.t_us, other.t_us)
            and np.array_equal(self.values, other.values)
        )


def normalize(trace: Memorygram) -> np.ndarray:
    """Affine-rescale the trace values into [0, 1].

    Minimum maps to 0 and maximum to 1; a constant trace maps to all zeros
    (avoids the undefined 0/0, and downstream classifiers tolerate it).
    """
    if len(trace) == 0:
        raise EmptyTraceError("cannot normalize a trace with no samples")
    v = trace.values
    lo = float(v.min())
    hi = float(v.max())
    if hi == lo:
        return np.zeros(len(v))
    return (v - lo) / (hi - lo)


def resample(trace: Memorygram, n_points: int) -> np.ndarray:
    """Linearly interpolate the trace onto ``n_points`` equally spaced times.

    The grid spans [0, t_last]; grid points outside the observed timestamps
    clamp to the nearest sample. A single-sample trace extends as a constant.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if len(trace) == 0:
        raise EmptyTraceError("cannot resample a trace with no samples")
    grid = np.linspace(0.0, float(trace.t_us[-1]), n_points)
    return np.interp(grid, trace.t_us.astype(np.float64), trace.values)


def inject_jitter(trace: Memorygram, sigma_ms: float, seed: Seed) -> Memorygram:
    """Perturb every timestamp with independent N(0, sigma_ms) noise.

    Values ride along with their perturbed timestamps; the pairs are then
    re-sorted (stable, so ties keep original order) and minimally bumped to
    restore strict monotonicity. Timestamps are clipped to the capture
    window. Deterministic for a fixed seed.
    """
    if sigma_ms < 0:
        raise ValueError("sigma_ms must be >= 0")
    n = len(trace)
    if sigma_ms == 0 or n == 0:
        return trace
    duration_us = trace.duration_ms * 1000
    if n > duration_us:
        raise ValueError("more samples than microseconds in the capture window")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma_ms * 1000.0, n)
    t = np.rint(trace.t_us + noise).astype(np.int64)
    np.clip(t, 0, duration_us - 1, out=t)
    order = np.argsort(t, kind="stable")
    t = t[order]
    v = trace.values[order]
    # smallest strictly increasing sequence >= t, then clamp clusters that
    # clipping piled onto the window edge back under the ceiling (the clamp
    # has slope 1, so strict monotonicity survives)
    ramp = np.arange(n, dtype=np.int64)
    t = np.maximum.accumulate(t - ramp) + ramp
    ceiling = duration_us - n + ramp
    t = np.minimum(t, ceiling)
    return Memorygram(
        t_us=t,
        values=v,
        sample_kind=trace.sample_kind,
        duration_ms=trace.duration_ms,
        technique=trace.technique,
        arch_profile=trace.arch_profile,
        label=trace.label,
    )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled memorygram collection with world type and fold assignments."""

    traces: tuple
    world: World
    class_count: int
    fold_of: tuple
    n_points: Optional[int] = None

    def __post_init__(self):
        traces = tuple(self.traces)
        folds = tuple(int(f) for f in self.fold_of)
        object.__setattr__(self, "traces", traces)
        object.__setattr__(self, "fold_of", folds)
        if len(folds) != len(traces):
            raise ValueError("fold_of must assign exactly one fold per trace")
        for f in folds:
            if not 0 <= f < 10:
                raise ValueError(f"fold id {f} outside [0, 10)")
        labels = set()
        for tr in traces:
            if tr.label is None:
                raise ValueError("every trace in a dataset must carry a label")
            if self.world is World.CLOSED and tr.label == OTHER_LABEL:
                raise ValueError(f"label {OTHER_LABEL!r} is reserved for open-world datasets")
            labels.add(tr.label)
        monitored = {lab for lab in labels if lab != OTHER_LABEL}
        if traces and len(monitored) != self.class_count:
            raise ValueError(
                f"class_count={self.class_count} but dataset has {len(monitored)} monitored labels"
            )

    def __len__(self) -> int:
        return len(self.traces)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.world == other.world
            and self.class_count == other.class_count
            and self.fold_of == other.fold_of
            and self.n_points == other.n_points
            and len(self.traces) == len(other.traces)
            and all(a == b for a, b in zip(self.traces, other.traces))
        )

    def labels(self) -> list:
        return [tr.label for tr in self.traces]


def _format_value(v: float) -> str:
    if v == int(v):
        return str(int(v))
    return f"{v:.6f}".rstrip("0")


def save_dataset(ds: Dataset, path) -> Path:
    """Write ``ds`` under directory ``path`` (created if missing)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# format\t{FORMAT_NAME}",
        f"# world\t{ds.world.value}",
        f"# class_count\t{ds.class_count}",
        f"# rng\t{RNG_NAME}",
    ]
    if ds.n_points is not None:
        lines.append(f"# n_points\t{ds.n_points}")
    lines.append("\t".join(MANIFEST_COLUMNS))
    for i, tr in enumerate(ds.traces):
        fname = f"t{i:05d}.tsv"
        lines.append(
            "\t".join(
                [
                    fname,
                    tr.label or "",
                    tr.technique.value,
                    tr.arch_profile,
                    str(tr.duration_ms),
                    tr.sample_kind.value,
                    str(ds.fold_of[i]),
                ]
            )
        )
        body = "".join(
            f"{t}\t{_format_value(v)}\n" for t, v in zip(tr.t_us.tolist(), tr.values.tolist())
        )
        (root / fname).write_text(body, encoding="utf-8", newline="\n")
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return root


def _parse_trace_file(path: Path) -> tuple:
    ts, vs = [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path.name} line {lineno}: expected 't_us<TAB>value'")
            try:
                ts.append(int(parts[0]))
                vs.append(float(parts[1]))
            except ValueError:
                raise FormatError(f"{path.name} line {lineno}: non-numeric field") from None
    return np.asarray(ts, dtype=np.int64), np.asarray(vs, dtype=np.float64)


def load_dataset(path) -> Dataset:
    """Load a dataset directory written by :func:`save_dataset`."""
    root = Path(path)
    manifest = root / "manifest.tsv"
    if not manifest.is_file():
        raise FormatError(f"{manifest}: missing manifest")
    meta = {}
    traces = []
    folds = []
    header_seen = False
    with manifest.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                parts = line[2:].split("\t")
                if len(parts) != 2:
                    raise FormatError(f"manifest.tsv line {lineno}: bad metadata line")
                meta[parts[0]] = parts[1]
                continue
            cols = line.split("\t")
            if not header_seen:
                if tuple(cols) != MANIFEST_COLUMNS:
                    raise FormatError(f"manifest.tsv line {lineno}: unexpected header")
                header_seen = True
                continue
            if len(cols) != len(MANIFEST_COLUMNS):
                raise FormatError(
                    f"manifest.tsv line {lineno}: expected {len(MANIFEST_COLUMNS)} columns"
                )
            fname, label, technique, arch, duration_ms, kind, fold = cols
            try:
                t_us, values = _parse_trace_file(root / fname)
            except FileNotFoundError:
                raise FormatError(f"manifest.tsv line {lineno}: trace file {fname} missing") from None
            try:
                traces.append(
                    Memorygram(
                        t_us=t_us,
                        values=values,
                        sample_kind=SampleKind(kind),
                        duration_ms=int(duration_ms),
                        technique=Technique(technique),
                        arch_profile=arch,
                        label=label or None,
                    )
                )
                folds.append(int(fold))
            except ValueError as exc:
                raise FormatError(f"manifest.tsv line {lineno}: {exc}") from None
    if not header_seen:
        raise FormatError("manifest.tsv line 1: missing header row")
    for key in ("world", "class_count"):
        if key not in meta:
            raise FormatError(f"manifest.tsv: missing '# {key}' metadata line")
    try:
        world = World(meta["world"])
        class_count = int(meta["class_count"])
        n_points = int(meta["n_points"]) if "n_points" in meta else None
    except ValueError as exc:
        raise FormatError(f"manifest.tsv: bad metadata value ({exc})") from None
    try:
        return Dataset(
            traces=tuple(traces),
            world=world,
            class_count=class_count,
            fold_of=tuple(folds),
            n_points=n_points,
        )
    except ValueError as exc:
        raise FormatError(f"manifest.tsv: {exc}") from None
