"""``dlclassify``: train and evaluate the CNN+LSTM on a dataset directory."""

from __future__ import annotations

import argparse
import sys

from .model import ModelConfig
from .train import train_eval


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dlclassify", description=__doc__)
    parser.add_argument("--data", required=True, help="dataset directory")
    parser.add_argument("--out", required=True, help="report output directory")
    parser.add_argument("--n-points", type=int, default=None,
                        help="input length (default: dataset manifest, else 512)")
    parser.add_argument("--max-epochs", type=int, default=100)
    parser.add_argument("--min-epochs", type=int, default=40)
    parser.add_argument("--patience", type=int, default=10,
                        help="early-stop patience on validation accuracy")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    config = ModelConfig(patience=args.patience, max_epochs=args.max_epochs,
                         min_epochs=args.min_epochs)
    try:
        metrics = train_eval(args.data, args.out, config=config,
                             n_points=args.n_points, seed=args.seed)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"top1 {metrics['top1']:.4f} +- {metrics['top1_std']:.4f}  "
          f"top5 {metrics['top5']:.4f} +- {metrics['top5_std']:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
