"""SSL mixup at the bottleneck with and without mixing the skip activations.

    python3 scripts/skip_mix.py --seeds 3
"""
import argparse

import numpy as np
import torch

from roam.config import DataSpec, Mode, RunConfig
from roam.experiment import PretrainCache, execute_run, prepare_data
from roam.types import Layer


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--layer", default="BOTTLENECK")
    p.add_argument("--quick", action="store_true")
    args = p.parse_args()
    torch.set_num_threads(1)
    base = RunConfig(mode=Mode.SSL_ROAM, kappa_set=(Layer(args.layer),), pretrain_epochs=40, train_epochs=40,
                     data=DataSpec(height=32, width=32))
    if args.quick:
        base = base.override(pretrain_epochs=20, train_epochs=5, data__n_unlabeled=40)
    scores = {False: [], True: []}
    for s in range(args.seeds):
        cfg = base.override(seed=s)
        splits, cache = prepare_data(cfg), PretrainCache()
        for flag in scores:
            scores[flag].append(execute_run(cfg.override(mix_skips=flag), None, cache, splits, distances=False).test_dice)
            print(f"seed {s} mix_skips={flag}: {scores[flag][-1]:.4f}", flush=True)
    for flag, v in scores.items():
        print(f"mix_skips={str(flag):<5}  test Dice {np.mean(v):.4f} ± {np.std(v):.4f}")


if __name__ == "__main__":
    main()
