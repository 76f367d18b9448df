import numpy as np
import pytest


def write_dataset(root, traces, world="closed", class_count=None, n_points=None):
    """Write a dataset directory in the shared format without any producer
    library: traces is a list of (t_us, values, label, fold)."""
    root.mkdir(parents=True, exist_ok=True)
    labels = {lab for _, _, lab, _ in traces if lab != "other"}
    lines = [
        "# format\tcachefp-dataset-v1",
        f"# world\t{world}",
        f"# class_count\t{class_count if class_count is not None else len(labels)}",
        "# rng\tpcg64",
    ]
    if n_points:
        lines.append(f"# n_points\t{n_points}")
    lines.append("file\tlabel\ttechnique\tarch\tduration_ms\tsample_kind\tfold")
    for i, (t_us, values, label, fold) in enumerate(traces):
        fname = f"t{i:05d}.tsv"
        duration_ms = int(t_us[-1] // 1000) + 1
        lines.append(f"{fname}\t{label}\toccupancy\tci-small\t{duration_ms}\tduration\t{fold}")
        body = "".join(f"{int(t)}\t{v:g}\n" for t, v in zip(t_us, values))
        (root / fname).write_text(body)
    (root / "manifest.tsv").write_text("\n".join(lines) + "\n")
    return root


@pytest.fixture
def toy_dataset(tmp_path):
    """Two well-separated classes, 8 traces each, two folds."""
    rng = np.random.default_rng(0)
    traces = []
    for c in range(2):
        for j in range(8):
            t = np.arange(64) * 1000
            base = np.zeros(64)
            if c == 0:
                base[8:20] = 100.0
            else:
                base[40:52] = 100.0
            values = base + rng.normal(0, 1, 64) + 10
            values = np.clip(values, 0, None)
            traces.append((t, np.round(values, 6), f"c{c}", j % 2))
    return write_dataset(tmp_path / "toy", traces)
