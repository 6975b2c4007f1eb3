"""Held-out RMSE of the attention bi-LSTM against a plain LSTM, over several seeds.

    python -m voxblend.validations.ordering [--minutes 10] [--epochs 50]
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

from ..errors import VoxblendError
from ..trainer import evaluate, train
from ._common import corpus_data, majority, train_config


@dataclass
class OrderingRun:
    seed: int
    full_rmse: float
    plain_rmse: float

    @property
    def ordered(self) -> bool:
        return self.full_rmse <= self.plain_rmse


@dataclass
class OrderingResult:
    runs: List[OrderingRun] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return majority([r.ordered for r in self.runs])


def run_ordering(
    seeds: Sequence[int] = (0, 1, 2),
    minutes: float = 10.0,
    clips: int = 10,
    hidden: int = 64,
    epochs: int = 50,
    lr: float = 1e-3,
    verbose: bool = False,
    work_dir: Optional[Path] = None,
) -> OrderingResult:
    result = OrderingResult()
    for seed in seeds:
        seed_dir = None if work_dir is None else Path(work_dir) / f"seed{seed}"
        data = corpus_data(seed, minutes, clips, work_dir=seed_dir)
        if data.val is None:
            raise VoxblendError("ordering needs a validation split; use at least 2 clips")
        scores = []
        for bidirectional, attention in ((True, True), (False, False)):
            cfg = train_config(hidden, epochs, seed, lr, bidirectional=bidirectional, use_attention=attention)
            trained = train(data.train, data.val, cfg, None, normalizer=data.normalizer)
            scores.append(evaluate(trained.best, data.val, cfg.loss).rmse)
        run = OrderingRun(seed, *scores)
        result.runs.append(run)
        if verbose:
            print(f"seed {seed}: bilstm+attention={run.full_rmse:.4f} lstm={run.plain_rmse:.4f} ordered={run.ordered}")
    return result


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--minutes", type=float, default=10.0)
    parser.add_argument("--clips", type=int, default=10)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    result = run_ordering(args.seeds, args.minutes, args.clips, args.hidden, args.epochs, verbose=True)
    print("-" * 40)
    print(f"majority ordered: {result.passed}")


if __name__ == "__main__":
    main()
