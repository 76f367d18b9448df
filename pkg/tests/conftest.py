import os

import numpy as np
import pytest

from cachefp.trace import Dataset, Memorygram, SampleKind, Technique, World


def make_gram(values, t_us=None, duration_ms=None, kind=SampleKind.DURATION,
              technique=Technique.OCCUPANCY, label=None, arch="ci-small"):
    values = np.asarray(values, dtype=np.float64)
    if t_us is None:
        t_us = np.arange(len(values), dtype=np.int64) * 1000
    else:
        t_us = np.asarray(t_us, dtype=np.int64)
    if duration_ms is None:
        duration_ms = int(t_us[-1] // 1000) + 1 if len(t_us) else 0
    return Memorygram(t_us=t_us, values=values, sample_kind=kind,
                      duration_ms=duration_ms, technique=technique,
                      arch_profile=arch, label=label)


def make_dataset(traces, world=World.CLOSED, n_points=None):
    labels = {tr.label for tr in traces if tr.label != "other"}
    return Dataset(traces=tuple(traces), world=world, class_count=len(labels),
                   fold_of=tuple(i % 10 for i in range(len(traces))), n_points=n_points)


def hw_tests_enabled():
    return os.environ.get("CACHEFP_HW_TESTS") == "1"


requires_hw = pytest.mark.skipif(
    not hw_tests_enabled(),
    reason="hardware contention test; enable with CACHEFP_HW_TESTS=1 on a quiet multi-core host",
)
