"""Classifier-independent evaluation: featurization, a k-NN baseline,
10-fold cross-validation, top-1/top-5 accuracy, open-world F1, confusion
matrices, and TSV/SVG report emission.

The baseline classifier is an inverse-distance-weighted k-NN over the
normalized, fixed-length trace features: strong on smooth one-dimensional
signatures, zero training cost, and keeps the evaluation suite
self-contained (heavier models consume the same dataset format and emit the
same report schema from their own package).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import FoldsMissingError
from .trace import Dataset, Memorygram, OTHER_LABEL, World, normalize

logger = logging.getLogger(__name__)

EXACT_MATCH_WEIGHT = 1e12


def featurize_trace(trace: Memorygram, n_points: int) -> np.ndarray:
    """Normalize the values to [0, 1], then resample onto a uniform grid."""
    v = normalize(trace)
    grid = np.linspace(0.0, float(trace.t_us[-1]), n_points)
    return np.interp(grid, trace.t_us.astype(np.float64), v)


def featurize(ds: Dataset, n_points: int) -> tuple:
    """Feature matrix for a dataset.

    Returns (X, kept): X has one row per non-empty trace, all values in
    [0, 1]; ``kept`` holds the dataset indices of the rows (empty traces are
    skipped with a warning).
    """
    rows = []
    kept = []
    for i, tr in enumerate(ds.traces):
        if len(tr) == 0:
            logger.warning("skipping empty trace %d (label=%s)", i, tr.label)
            continue
        rows.append(featurize_trace(tr, n_points))
        kept.append(i)
    X = np.vstack(rows) if rows else np.empty((0, n_points))
    return X, np.asarray(kept, dtype=np.int64)


def knn_predict(train_X: np.ndarray, train_y: np.ndarray, test_X: np.ndarray,
                k: int = 3, n_labels: Optional[int] = None) -> np.ndarray:
    """Rank labels per test row by inverse-distance-weighted k-NN vote.

    ``train_y`` holds integer label ids. Returns an (n_test, n_labels)
    matrix whose rows list label ids from most to least likely; labels with
    tied scores order by smaller id.
    """
    if len(train_X) == 0:
        raise ValueError("train set must be non-empty")
    if k > len(train_X):
        raise ValueError("k must be <= train size")
    n_labels = n_labels if n_labels is not None else int(train_y.max()) + 1
    d = cdist(test_X, train_X)
    nn = np.argpartition(d, k - 1, axis=1)[:, :k]
    nd = np.take_along_axis(d, nn, axis=1)
    w = np.where(nd == 0.0, EXACT_MATCH_WEIGHT, 1.0 / np.maximum(nd, 1e-300))
    scores = np.zeros((len(test_X), n_labels))
    rows = np.repeat(np.arange(len(test_X)), k)
    np.add.at(scores, (rows, train_y[nn].ravel()), w.ravel())
    # stable sort on -score keeps ascending label id among ties
    return np.argsort(-scores, axis=1, kind="stable")


@dataclass
class EvalReport:
    """Cross-validated metrics plus the parameters that produced them."""

    top1: float
    top1_std: float
    top5: float
    top5_std: float
    fold_top1: tuple
    fold_top5: tuple
    labels: tuple
    confusion: np.ndarray
    f1_macro: Optional[float] = None
    f1_binary: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.top1 <= self.top5 <= 1.0:
            raise ValueError("need 0 <= top1 <= top5 <= 1")
        n = len(self.labels)
        if self.confusion.shape != (n, n):
            raise ValueError("confusion must be class_count x class_count")


def _rank_of_true(rankings: np.ndarray, true_ids: np.ndarray) -> np.ndarray:
    hits = rankings == true_ids[:, None]
    rank = np.argmax(hits, axis=1)
    rank[~hits.any(axis=1)] = rankings.shape[1]  # absent from the ranking: a miss
    return rank


def evaluate(ds: Dataset, n_points: int = 512, k: int = 3,
             classifier: Optional[Callable] = None) -> EvalReport:
    """10-fold cross-validation of a ranking classifier over ``ds``.

    Per fold: train on the other nine folds, test on this one; top-1 is the
    rank-1 hit rate and top-5 the hit rate within the first five ranks.
    Open-world datasets additionally get a binary monitored-vs-other F1 and
    a macro-averaged per-class F1 over the monitored classes.
    """
    if len(ds) == 0:
        raise FoldsMissingError("dataset is empty")
    X, kept = featurize(ds, n_points)
    labels = sorted({ds.traces[i].label for i in kept})
    label_id = {lab: i for i, lab in enumerate(labels)}
    y = np.array([label_id[ds.traces[i].label] for i in kept])
    folds = np.array([ds.fold_of[i] for i in kept])
    fold_ids = sorted(set(folds.tolist()))
    if len(fold_ids) < 2:
        raise FoldsMissingError(f"need >= 2 folds, dataset has {len(fold_ids)}")

    if classifier is None:
        def classifier(tr_X, tr_y, te_X, n_labels):
            return knn_predict(tr_X, tr_y, te_X, k=k, n_labels=n_labels)

    n = len(labels)
    confusion = np.zeros((n, n), dtype=np.int64)
    fold_top1, fold_top5 = [], []
    rank1_all = np.empty(len(y), dtype=np.int64)
    for f in fold_ids:
        test_mask = folds == f
        if not np.any(~test_mask):
            raise FoldsMissingError(f"fold {f} leaves an empty train set")
        rankings = classifier(X[~test_mask], y[~test_mask], X[test_mask], n)
        true_ids = y[test_mask]
        rank = _rank_of_true(rankings, true_ids)
        fold_top1.append(float(np.mean(rank == 0)))
        fold_top5.append(float(np.mean(rank < 5)))
        rank1 = rankings[:, 0]
        rank1_all[test_mask] = rank1
        np.add.at(confusion, (true_ids, rank1), 1)

    f1_macro = f1_binary = None
    if ds.world is World.OPEN and OTHER_LABEL in label_id:
        other = label_id[OTHER_LABEL]
        truth_pos = y != other
        pred_pos = rank1_all != other
        f1_binary = _f1(truth_pos, pred_pos)
        per_class = [
            _f1(y == c, rank1_all == c) for c in range(n) if c != other
        ]
        f1_macro = float(np.mean(per_class)) if per_class else None

    return EvalReport(
        top1=float(np.mean(fold_top1)),
        top1_std=float(np.std(fold_top1)),
        top5=float(np.mean(fold_top5)),
        top5_std=float(np.std(fold_top5)),
        fold_top1=tuple(fold_top1),
        fold_top5=tuple(fold_top5),
        labels=tuple(labels),
        confusion=confusion,
        f1_macro=f1_macro,
        f1_binary=f1_binary,
        params={"classifier": f"knn-k{k}", "n_points": n_points, "folds": len(fold_ids),
                "world": ds.world.value},
    )


def _f1(truth: np.ndarray, pred: np.ndarray) -> float:
    tp = int(np.sum(truth & pred))
    fp = int(np.sum(~truth & pred))
    fn = int(np.sum(truth & ~pred))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def _fmt(x: Optional[float]) -> str:
    return "-" if x is None else f"{x:.6f}"


def emit_report(report: EvalReport, out_dir) -> list:
    """Write report.tsv, folds.tsv, and confusion.tsv under ``out_dir``.

    Output bytes are deterministic for a fixed report. The schema is shared
    with other classifiers so reports diff cleanly.
    """
    if not report.labels:
        raise ValueError("cannot emit an empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    lines = [f"# classifier\t{report.params.get('classifier', 'unknown')}"]
    lines += [f"# param\t{k}\t{v}" for k, v in sorted(report.params.items()) if k != "classifier"]
    lines.append("# f1_averaging\tmacro")
    lines.append("metric\tmean\tstddev")
    lines.append(f"top1\t{report.top1:.6f}\t{report.top1_std:.6f}")
    lines.append(f"top5\t{report.top5:.6f}\t{report.top5_std:.6f}")
    if report.f1_macro is not None:
        lines.append(f"f1_macro\t{_fmt(report.f1_macro)}\t-")
    if report.f1_binary is not None:
        lines.append(f"f1_binary\t{_fmt(report.f1_binary)}\t-")
    path = out / "report.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    written.append(path)

    lines = ["fold\ttop1\ttop5"]
    lines += [f"{i}\t{a:.6f}\t{b:.6f}"
              for i, (a, b) in enumerate(zip(report.fold_top1, report.fold_top5))]
    path = out / "folds.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    written.append(path)

    lines = ["\t".join(("true\\pred",) + report.labels)]
    for i, lab in enumerate(report.labels):
        lines.append("\t".join([lab] + [str(int(c)) for c in report.confusion[i]]))
    path = out / "confusion.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    written.append(path)
    return written


def _deterministic_savefig(fig, path: Path) -> None:
    import matplotlib
    with matplotlib.rc_context({"svg.hashsalt": "cachefp"}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def emit_jitter_report(entries: Sequence, out_dir) -> list:
    """Accuracy-vs-jitter table and curve for a sweep of sigma values.

    ``entries`` is a sequence of (sigma_ms, EvalReport) pairs.
    """
    if not entries:
        raise ValueError("cannot emit an empty jitter report")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["sigma_ms\ttop1\ttop1_std\ttop5\ttop5_std"]
    for sigma, rep in entries:
        lines.append(f"{sigma:g}\t{rep.top1:.6f}\t{rep.top1_std:.6f}"
                     f"\t{rep.top5:.6f}\t{rep.top5_std:.6f}")
    tsv = out / "jitter_accuracy.tsv"
    tsv.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    sigmas = [s for s, _ in entries]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.errorbar(sigmas, [r.top1 for _, r in entries],
                yerr=[r.top1_std for _, r in entries], marker="o", label="top-1")
    ax.errorbar(sigmas, [r.top5 for _, r in entries],
                yerr=[r.top5_std for _, r in entries], marker="s", label="top-5")
    ax.set_xlabel("injected jitter stddev (ms)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    svg = out / "jitter_accuracy.svg"
    _deterministic_savefig(fig, svg)
    plt.close(fig)
    return [tsv, svg]


def emit_histogram(values: Sequence, path, bins: int = 80, unit: str = "ms") -> Path:
    """Histogram of a sample distribution (e.g. probe gaps) as SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot plot an empty histogram")
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(values, bins=bins)
    ax.set_xlabel(f"value ({unit})")
    ax.set_ylabel("count")
    fig.tight_layout()
    path = Path(path)
    _deterministic_savefig(fig, path)
    plt.close(fig)
    return path
