"""Compare every training mode on the synthetic task over several seeds.

    python3 scripts/table2.py --seeds 3 --out runs/table2
    python3 scripts/table2.py --quick          # few epochs, small images

Prints a Dice / HD / MSD table with relative improvement over the lower
bound and writes per-seed metrics under --out.
"""
import argparse
import logging
from pathlib import Path

import numpy as np
import torch

from roam.config import DataSpec, Mode, RunConfig, load
from roam.experiment import PretrainCache, execute_run, prepare_data
from roam.metrics import EvalResult, MetricsReport

MODES = [Mode.LOWER_BOUND, Mode.SSL_PSEUDO_BASELINE, Mode.SSL_ROAM, Mode.SUP_ROAM_LB,
         Mode.UPPER_BOUND, Mode.SUP_ROAM_UB, Mode.FULLY_SUP_ROAM]


def base_config(args) -> RunConfig:
    if args.config:
        return load(args.config)
    cfg = RunConfig(pretrain_epochs=40, train_epochs=40, data=DataSpec(height=32, width=32))
    if args.quick:
        cfg = cfg.override(pretrain_epochs=20, train_epochs=5, data__n_unlabeled=40, data__n_test=20)
    return cfg


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--out", default="runs/table2")
    p.add_argument("--quick", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    base = base_config(args)
    pooled: dict[Mode, list[EvalResult]] = {m: [] for m in MODES}
    for s in range(args.seeds):
        cfg = base.override(seed=base.seed + s)
        splits, cache = prepare_data(cfg), PretrainCache()
        for mode in MODES:
            res = execute_run(cfg.override(mode=mode), Path(args.out) / f"seed{cfg.seed}" / str(mode), cache, splits)
            pooled[mode].append(res.test)
    report = MetricsReport(baseline=str(Mode.LOWER_BOUND))
    for mode, results in pooled.items():
        merged = EvalResult(np.concatenate([r.dice for r in results]), np.concatenate([r.hd for r in results]),
                            np.concatenate([r.msd for r in results]), results[0].num_classes)
        report.add(str(mode), "test", merged)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "table2.csv").write_text(report.to_csv())
    print(report.to_text(), end="")


if __name__ == "__main__":
    main()
