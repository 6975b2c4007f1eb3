"""Overfit a small model on one synthetic clip and check the training RMSE.

    python -m voxblend.validations.overfit [--epochs 500] [--hidden 128]
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from typing import List

import numpy as np

from ..trainer import EpochRecord, smoothed, train, training_rmse
from ._common import single_clip_set, train_config

RMSE_THRESHOLD = 0.05


@dataclass
class OverfitResult:
    rmse: float
    history: List[EpochRecord]
    threshold: float = RMSE_THRESHOLD

    @property
    def passed(self) -> bool:
        return self.rmse < self.threshold

    @property
    def smoothed_increases(self) -> int:
        """Number of 10-epoch blocks whose mean loss rose over the previous block."""
        blocks = smoothed([r.train_loss for r in self.history], 10)
        return int(np.sum(np.diff(blocks) > 0))


def run_overfit(
    seed: int = 7,
    frames: int = 300,
    hidden: int = 128,
    epochs: int = 500,
    lr: float = 1e-3,
    batch_size: int = 100,
    verbose: bool = False,
) -> OverfitResult:
    samples, normalizer = single_clip_set(seed, frames)
    cfg = train_config(hidden, epochs, seed, lr, batch_size=batch_size)

    def report(record: EpochRecord) -> None:
        if verbose and (record.epoch % 10 == 0 or record.epoch == 1):
            print(f"epoch {record.epoch:4d} train_loss={record.train_loss:.6f}")

    result = train(samples, None, cfg, None, normalizer=normalizer, on_epoch=report)
    return OverfitResult(training_rmse(result.final, samples), result.history)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--frames", type=int, default=300)
    parser.add_argument("--hidden", type=int, default=128)
    parser.add_argument("--epochs", type=int, default=500)
    parser.add_argument("--lr", type=float, default=1e-3)
    args = parser.parse_args()

    result = run_overfit(args.seed, args.frames, args.hidden, args.epochs, args.lr, verbose=True)
    print("-" * 40)
    print(f"training rmse={result.rmse:.4f} threshold={result.threshold} passed={result.passed}")
    print(f"10-epoch blocks with a loss increase: {result.smoothed_increases}")


if __name__ == "__main__":
    main()
