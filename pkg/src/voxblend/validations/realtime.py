"""Per-window wall time of features plus forward for a full-size model.

    python -m voxblend.validations.realtime [--windows 300] [--hidden 256]
"""

from __future__ import annotations

import argparse

from ..config import FeatureConfig, ModelConfig
from ..frontend import Normalizer
from ..inference import LatencyReport, bench
from ..network import init_params
from ..trainer import Checkpoint


def run_realtime(windows: int = 300, hidden: int = 256, seed: int = 0) -> LatencyReport:
    feature_cfg = FeatureConfig()
    params = init_params(ModelConfig(hidden_size=hidden), seed)
    ckpt = Checkpoint(params, feature_cfg, Normalizer.identity(feature_cfg.n_columns))
    return bench(ckpt, windows, seed)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--windows", type=int, default=300)
    parser.add_argument("--hidden", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    report = run_realtime(args.windows, args.hidden, args.seed)
    print(report.format_table())


if __name__ == "__main__":
    main()
