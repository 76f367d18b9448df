"""Reader for the shared trace-dataset directory format.

The format is line oriented on purpose so consumers like this one need no
library from the producing side: a ``manifest.tsv`` with ``# key<TAB>value``
metadata lines, a header row, and one row per trace pointing at a
``t_us<TAB>value`` file. Featurization mirrors the documented convention:
per-trace min/max normalization to [0, 1] (constant traces to zeros), then
linear resampling onto n_points equally spaced times over the observed
span.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

MANIFEST_COLUMNS = ("file", "label", "technique", "arch", "duration_ms", "sample_kind", "fold")


class DatasetFormatError(Exception):
    pass


@dataclass
class TraceRecord:
    t_us: np.ndarray
    values: np.ndarray
    label: str
    fold: int


@dataclass
class TraceDataset:
    traces: List[TraceRecord]
    world: str
    class_count: int
    n_points: Optional[int]

    @property
    def labels(self) -> list:
        return sorted({t.label for t in self.traces})


def load_dataset(path) -> TraceDataset:
    root = Path(path)
    manifest = root / "manifest.tsv"
    if not manifest.is_file():
        raise DatasetFormatError(f"{manifest} not found")
    meta = {}
    traces = []
    header_seen = False
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        if line.startswith("# "):
            key, _, value = line[2:].partition("\t")
            meta[key] = value
            continue
        cols = line.split("\t")
        if not header_seen:
            if tuple(cols) != MANIFEST_COLUMNS:
                raise DatasetFormatError(f"manifest.tsv line {lineno}: unexpected header")
            header_seen = True
            continue
        fname, label, _technique, _arch, _duration, _kind, fold = cols
        t_us, values = _read_trace(root / fname)
        traces.append(TraceRecord(t_us=t_us, values=values, label=label, fold=int(fold)))
    if "class_count" not in meta:
        raise DatasetFormatError("manifest.tsv: missing '# class_count'")
    return TraceDataset(
        traces=traces,
        world=meta.get("world", "closed"),
        class_count=int(meta["class_count"]),
        n_points=int(meta["n_points"]) if "n_points" in meta else None,
    )


def _read_trace(path: Path):
    ts, vs = [], []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetFormatError(f"{path.name} line {lineno}: expected two columns")
        ts.append(int(parts[0]))
        vs.append(float(parts[1]))
    return np.asarray(ts, dtype=np.int64), np.asarray(vs, dtype=np.float64)


def featurize_trace(t_us: np.ndarray, values: np.ndarray, n_points: int) -> np.ndarray:
    lo, hi = values.min(), values.max()
    norm = np.zeros_like(values) if hi == lo else (values - lo) / (hi - lo)
    grid = np.linspace(0.0, float(t_us[-1]), n_points)
    return np.interp(grid, t_us.astype(np.float64), norm)


def featurize(ds: TraceDataset, n_points: int):
    """(X, y, folds, labels): features, integer labels, fold ids."""
    labels = ds.labels
    label_id = {lab: i for i, lab in enumerate(labels)}
    X = np.stack([featurize_trace(t.t_us, t.values, n_points) for t in ds.traces])
    y = np.array([label_id[t.label] for t in ds.traces], dtype=np.int64)
    folds = np.array([t.fold for t in ds.traces], dtype=np.int64)
    return X, y, folds, labels
