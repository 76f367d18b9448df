"""Cross-validated training and evaluation.

Folds come from the dataset's fold map (never re-randomized). Per test
fold, the next fold (cyclically) is held out of training as the validation
set for early stopping on validation accuracy; the remaining folds train.
The model emits a full per-class probability ranking per test trace, so
top-1 and top-5 come from the same pass.

Report files (report.tsv, folds.tsv, confusion.tsv) use the same schema as
the distance-baseline evaluator so runs diff cleanly against each other.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .data import TraceDataset, featurize, load_dataset
from .model import ModelConfig, TraceNet


class ClassCountMismatch(Exception):
    pass


def _train_one_fold(X, y, folds, test_fold, n_classes, config, seed):
    fold_ids = sorted(set(folds.tolist()))
    val_fold = fold_ids[(fold_ids.index(test_fold) + 1) % len(fold_ids)]
    test = folds == test_fold
    val = folds == val_fold
    train = ~test & ~val

    torch.manual_seed(seed)
    Xt = torch.tensor(X[train], dtype=torch.float32).unsqueeze(1)
    yt = torch.tensor(y[train])
    Xv = torch.tensor(X[val], dtype=torch.float32).unsqueeze(1)
    yv = torch.tensor(y[val])
    Xs = torch.tensor(X[test], dtype=torch.float32).unsqueeze(1)

    net = TraceNet(n_classes, config)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    best_acc, best_loss, best_state, stall = -1.0, float("inf"), None, 0
    for epoch in range(config.max_epochs):
        net.train()
        perm = torch.randperm(len(Xt))
        for i in range(0, len(Xt), config.batch_size):
            idx = perm[i:i + config.batch_size]
            opt.zero_grad()
            loss_fn(net(Xt[idx]), yt[idx]).backward()
            opt.step()
        net.eval()
        with torch.no_grad():
            logits = net(Xv)
            val_acc = (logits.argmax(1) == yv).float().mean().item()
            val_loss = loss_fn(logits, yv).item()
        improved = val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss)
        if improved:
            best_acc, best_loss = val_acc, min(val_loss, best_loss)
            best_state = {k: v.clone() for k, v in net.state_dict().items()}
            stall = 0
        else:
            stall += 1
            if stall >= config.patience and epoch + 1 >= config.min_epochs:
                break
    net.load_state_dict(best_state)
    net.eval()
    with torch.no_grad():
        probs = net.probabilities(Xs).numpy()
    return probs, test


def train_eval(data_dir, out_dir, config: ModelConfig = ModelConfig(),
               n_points: Optional[int] = None, seed: int = 0,
               log=print) -> dict:
    """Run the full cross-validation and write report files.

    Returns the metrics dict (top1/top5 means and stddevs, per-fold values,
    confusion matrix).
    """
    ds = load_dataset(data_dir)
    n_points = n_points or ds.n_points or 512
    X, y, folds, labels = featurize(ds, n_points)
    monitored = [lab for lab in labels if lab != "other"]
    if len(monitored) != ds.class_count:
        raise ClassCountMismatch(
            f"manifest says {ds.class_count} classes but traces carry "
            f"{len(monitored)} monitored labels")

    n_classes = len(labels)
    fold_ids = sorted(set(folds.tolist()))
    if len(fold_ids) < 2:
        raise ValueError("need at least two folds")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    fold_top1, fold_top5 = [], []
    for f in fold_ids:
        probs, test_mask = _train_one_fold(X, y, folds, f, n_classes, config,
                                           seed=seed * 1000 + f)
        ranks = np.argsort(-probs, axis=1)
        truth = y[test_mask]
        hit_rank = np.argmax(ranks == truth[:, None], axis=1)
        top1 = float(np.mean(hit_rank == 0))
        top5 = float(np.mean(hit_rank < 5))
        fold_top1.append(top1)
        fold_top5.append(top5)
        np.add.at(confusion, (truth, ranks[:, 0]), 1)
        log(f"fold {f}: top1={top1:.4f} top5={top5:.4f}")

    metrics = {
        "top1": float(np.mean(fold_top1)),
        "top1_std": float(np.std(fold_top1)),
        "top5": float(np.mean(fold_top5)),
        "top5_std": float(np.std(fold_top5)),
        "fold_top1": fold_top1,
        "fold_top5": fold_top5,
        "labels": labels,
        "confusion": confusion,
        "n_points": n_points,
        "folds": len(fold_ids),
    }
    _emit_report(metrics, config, Path(out_dir))
    return metrics


def _emit_report(metrics, config: ModelConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lines = ["# classifier\tcnn-lstm"]
    params = {
        "n_points": metrics["n_points"],
        "folds": metrics["folds"],
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "dropout": config.dropout,
        "lstm_units": config.lstm_units,
        "kernel_sizes": ",".join(str(k) for k in config.kernel_sizes),
        "pool_size": config.pool_size,
        "patience": config.patience,
        "min_epochs": config.min_epochs,
        # the pooled maps feed the LSTM as a time-major 256-dim sequence and
        # the sequence is averaged over time before the dense layer
        "pool_reshape": "time-major-sequence",
        "lstm_readout": "mean-over-time",
    }
    lines += [f"# param\t{k}\t{v}" for k, v in sorted(params.items())]
    lines.append("# f1_averaging\tmacro")
    lines.append("metric\tmean\tstddev")
    lines.append(f"top1\t{metrics['top1']:.6f}\t{metrics['top1_std']:.6f}")
    lines.append(f"top5\t{metrics['top5']:.6f}\t{metrics['top5_std']:.6f}")
    (out / "report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    lines = ["fold\ttop1\ttop5"]
    lines += [f"{i}\t{a:.6f}\t{b:.6f}"
              for i, (a, b) in enumerate(zip(metrics["fold_top1"], metrics["fold_top5"]))]
    (out / "folds.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    labels = metrics["labels"]
    lines = ["\t".join(("true\\pred",) + tuple(labels))]
    for i, lab in enumerate(labels):
        lines.append("\t".join([lab] + [str(int(c)) for c in metrics["confusion"][i]]))
    (out / "confusion.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
