"""Validation jitter and RMSE with and without the smooth loss term.

    python -m voxblend.validations.smoothness [--minutes 4] [--epochs 50]
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

from ..errors import VoxblendError
from ..trainer import evaluate, train
from ._common import corpus_data, majority, mean_run_jitter, train_config

JITTER_SLACK = 1.05
RMSE_SLACK = 1.10


@dataclass
class SmoothnessRun:
    seed: int
    smooth_jitter: float
    plain_jitter: float
    smooth_rmse: float
    plain_rmse: float

    @property
    def passed(self) -> bool:
        return self.smooth_jitter <= JITTER_SLACK * self.plain_jitter and self.smooth_rmse <= RMSE_SLACK * self.plain_rmse


@dataclass
class SmoothnessResult:
    runs: List[SmoothnessRun] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return majority([r.passed for r in self.runs])


def run_smoothness(
    seeds: Sequence[int] = (0, 1, 2),
    minutes: float = 4.0,
    clips: int = 5,
    hidden: int = 64,
    epochs: int = 50,
    lr: float = 1e-3,
    w2: float = 0.5,
    verbose: bool = False,
    work_dir: Optional[Path] = None,
) -> SmoothnessResult:
    if w2 <= 0.0:
        raise VoxblendError(f"w2 must be positive to compare against w2=0, got {w2}")
    result = SmoothnessResult()
    for seed in seeds:
        seed_dir = None if work_dir is None else Path(work_dir) / f"seed{seed}"
        data = corpus_data(seed, minutes, clips, work_dir=seed_dir)
        if data.val is None:
            raise VoxblendError("smoothness needs a validation split; use at least 2 clips")
        measured = {}
        for weight in (w2, 0.0):
            cfg = train_config(hidden, epochs, seed, lr, w2=weight)
            ckpt = train(data.train, data.val, cfg, None, normalizer=data.normalizer).best
            measured[weight] = (mean_run_jitter(ckpt.params, data.val), evaluate(ckpt, data.val, cfg.loss).rmse)
        run = SmoothnessRun(seed, measured[w2][0], measured[0.0][0], measured[w2][1], measured[0.0][1])
        result.runs.append(run)
        if verbose:
            print(
                f"seed {seed}: jitter w2={w2}: {run.smooth_jitter:.5f} w2=0: {run.plain_jitter:.5f} | "
                f"rmse {run.smooth_rmse:.4f} vs {run.plain_rmse:.4f} passed={run.passed}"
            )
    return result


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--minutes", type=float, default=4.0)
    parser.add_argument("--clips", type=int, default=5)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    result = run_smoothness(args.seeds, args.minutes, args.clips, args.hidden, args.epochs, verbose=True)
    print("-" * 40)
    print(f"majority passed: {result.passed}")


if __name__ == "__main__":
    main()
