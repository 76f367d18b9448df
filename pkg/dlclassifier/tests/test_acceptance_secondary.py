"""Secondary acceptance: the deep classifier matches or beats the distance
baseline on a simulator dataset, consuming the producing toolkit only
through its external interfaces (the `cachefp` CLI and the dataset/report
file formats).

This is the slow test of the suite (~30-40 min on a 2-vCPU host: ten
cross-validation folds of a 256-kernel conv stack on CPU). Skip it during
quick iterations with `-m "not slow"`.
"""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from dlclassifier.model import ModelConfig
from dlclassifier.train import train_eval

SEED = 20260810
N_POINTS = 128

pytestmark = pytest.mark.slow


def run_cachefp(args):
    result = subprocess.run([sys.executable, "-m", "cachefp.cli", *args],
                            capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    return result.stdout


def parse_report(path: Path):
    meta, metrics = {}, {}
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if parts[0] in ("top1", "top5"):
            metrics[parts[0]] = float(parts[1])
    return metrics


def schema_of(path: Path):
    """Structural skeleton of a report file: comment keys + column layout."""
    skeleton = []
    for line in path.read_text().splitlines():
        if line.startswith("# param\t"):
            skeleton.append("# param")  # parameter sets legitimately differ
        elif line.startswith("# "):
            skeleton.append(line.split("\t")[0])
        else:
            skeleton.append("\t".join(p if not _numeric(p) else "<num>"
                                      for p in line.split("\t")))
    return skeleton


def _numeric(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def test_dl_matches_baseline_on_k10_dataset(tmp_path):
    data = tmp_path / "k10"
    run_cachefp(["simulate", "--k", "10", "--n", "100", "--technique", "occupancy",
                 "--sigma-ms", "1", "--phase-jitter-ms", "400",
                 "--independent-profiles", "--seed", str(SEED), "--out", str(data)])

    baseline_out = tmp_path / "baseline"
    run_cachefp(["classify-baseline", "--data", str(data),
                 "--n-points", str(N_POINTS), "--out", str(baseline_out)])
    baseline = parse_report(baseline_out / "report.tsv")

    dl_out = tmp_path / "dl"
    metrics = train_eval(data, dl_out,
                         config=ModelConfig(max_epochs=110, min_epochs=45, patience=12),
                         n_points=N_POINTS, seed=1)

    print(f"ACCEPTANCE dl-vs-baseline: dl top1={metrics['top1']:.4f} "
          f"baseline top1={baseline['top1']:.4f}", flush=True)
    assert metrics["top1"] >= baseline["top1"] - 0.02, \
        f"dl {metrics['top1']:.4f} < baseline {baseline['top1']:.4f} - 2 points"
    assert metrics["top5"] >= metrics["top1"]

    # report files are diff-compatible: identical structural schema
    dl_schema = schema_of(dl_out / "report.tsv")
    base_schema = schema_of(baseline_out / "report.tsv")
    assert [l for l in dl_schema if not l.startswith("#")] == \
        [l for l in base_schema if not l.startswith("#")]
    for name in ("folds.tsv", "confusion.tsv"):
        assert schema_of(dl_out / name) == schema_of(baseline_out / name)
    print("ACCEPTANCE dl-report-schema: PASS", flush=True)
