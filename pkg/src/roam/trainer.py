"""Training loops: pretraining, SSL random-layer mixup, supervised mixup, pseudo-label baseline.

Seed policy: the run seed fans out into named, independent numpy streams
(``init``, ``labeled``, ``unlabeled``, ``kappa``, ``lambda``, ``perm``), so
turning one feature off never shifts the random draws of another.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import pseudo_labels
from .config import Mode, RunConfig
from .data import Dataset, Splits
from .errors import CheckpointError, DatasetError, TrainingError
from .losses import concat_batches, loss_terms, soft_cross_entropy, split_predictions
from .metrics import evaluate
from .mixup import PlanSampler
from .net import SegNet, build_net, make_checkpoint, net_from_checkpoint, rng_snapshot
from .types import Layer, MixupPlan, one_hot_encode

log = logging.getLogger(__name__)

STREAMS = ("init", "labeled", "unlabeled", "kappa", "lambda", "perm")
SUPERVISED_ROAM_MODES = (Mode.SUP_ROAM_LB, Mode.SUP_ROAM_UB, Mode.FULLY_SUP_ROAM)


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def streams(seed: int) -> dict[str, np.random.Generator]:
    return {name: stream(seed, name) for name in STREAMS}


def init_seed(seed: int) -> int:
    return int(stream(seed, "init").integers(2**31 - 1))


class BatchCycler:
    """Endless stream of index batches over ``n`` items, reshuffled every pass."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n < 1:
            raise DatasetError("cannot draw batches from an empty split", code="EMPTY_DATASET")
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self._buf = np.empty(0, dtype=np.int64)

    def next(self) -> np.ndarray:
        while self._buf.size < self.batch_size:
            self._buf = np.concatenate([self._buf, self.rng.permutation(self.n)])
        out, self._buf = self._buf[: self.batch_size], self._buf[self.batch_size:]
        return out


@dataclass
class RunRecord:
    mode: str
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_dice: float | None = None
    guess_calls: int = 0
    rng_state: dict = field(default_factory=dict, repr=False)
    best_state: dict | None = field(default=None, repr=False)

    @property
    def losses(self) -> list[float]:
        return [s["loss"] for s in self.steps]

    @property
    def kappas(self) -> list[str]:
        return [s["kappa"] for s in self.steps]

    def write_events(self, path) -> None:
        with open(path, "w") as fh:
            for s in self.steps:
                fh.write(json.dumps({"event": "step", **s}) + "\n")
            for e in self.epochs:
                fh.write(json.dumps({"event": "epoch", **e}) + "\n")
            fh.write(json.dumps({"event": "selected", "mode": self.mode, "best_epoch": self.best_epoch,
                                 "best_val_dice": self.best_val_dice}) + "\n")


def _tensors(ds: Dataset):
    x = torch.from_numpy(np.ascontiguousarray(ds.images))
    y = one_hot_encode(torch.from_numpy(ds.labels), ds.num_classes) if ds.labels is not None else None
    return x, y


def _optimizer(config: RunConfig, net: torch.nn.Module):
    return torch.optim.Adam(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)


def _load(config: RunConfig, ckpt: dict | None) -> SegNet:
    if ckpt is None:
        return build_net(config.data.num_classes, config.widths, seed=init_seed(config.seed))
    return net_from_checkpoint(ckpt, config.data.num_classes)


class _Loop:
    """Shared epoch/step/model-selection machinery."""

    def __init__(self, config: RunConfig, net: SegNet, record: RunRecord, validation: Dataset | None,
                 select_best: bool = True):
        self.config, self.net, self.record = config, net, record
        self.validation = validation if validation is not None and len(validation) else None
        self.select_best = select_best and self.validation is not None
        self.opt = _optimizer(config, net)
        self.step = 0

    def update(self, loss, ce, mse, plan: MixupPlan | None, epoch: int):
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.opt.step()
        lam = None
        if plan is not None:
            lam = plan.lambda_prime if np.ndim(plan.lambda_prime) == 0 else float(np.mean(plan.lambda_prime))
        self.record.steps.append({
            "step": self.step, "epoch": epoch, "loss": float(loss.detach()), "ce": float(ce.detach()),
            "mse": None if mse is None else float(mse.detach()),
            "kappa": str(plan.kappa) if plan is not None else str(Layer.PASSTHROUGH),
            "lambda_prime": None if lam is None else float(lam),
        })
        self.step += 1

    def end_epoch(self, epoch: int):
        entry = {"epoch": epoch}
        if self.validation is not None:
            val = evaluate(self.net, self.validation, distances=False).mean_dice
            entry["val_dice"] = val
            if self.select_best and (self.record.best_val_dice is None or val > self.record.best_val_dice):
                self.record.best_val_dice = val
                self.record.best_epoch = epoch
                self.record.best_state = copy.deepcopy(self.net.state_dict())
        self.net.train()
        self.record.epochs.append(entry)
        log.info("%s epoch %d %s", self.record.mode, epoch, entry)

    def finish(self) -> SegNet:
        if self.select_best and self.record.best_state is not None:
            self.net.load_state_dict(self.record.best_state)
        else:
            self.record.best_epoch = self.record.epochs[-1]["epoch"] if self.record.epochs else None
            self.record.best_val_dice = self.record.epochs[-1].get("val_dice") if self.record.epochs else None
        self.net.eval()
        return self.net


def train_supervised(config: RunConfig, ckpt: dict | None, labeled: Dataset, validation: Dataset | None,
                     epochs: int, *, mixup: bool = False, select_best: bool = True,
                     mode: str = "SUPERVISED", iters_per_epoch: int | None = None):
    """Plain (or mixup-regularized) supervised training on one labeled stream.

    Returns ``(net, record)``. Each step's loss is the soft cross-entropy on
    the (possibly mixed) labeled batch. ``iters_per_epoch`` defaults to one
    pass over ``labeled``.
    """
    if labeled is None or len(labeled) == 0 or labeled.labels is None:
        raise DatasetError("supervised training needs a non-empty labeled split", code="EMPTY_DATASET")
    net = _load(config, ckpt)
    net.train()
    record = RunRecord(mode)
    rngs = streams(config.seed)
    xl, yl = _tensors(labeled)
    cycler = BatchCycler(len(labeled), config.batch_size, rngs["labeled"])
    sampler = None
    if mixup:
        sampler = PlanSampler(config.kappa_set, config.alpha, config.mix_skips, kappa_rng=rngs["kappa"],
                              lambda_rng=rngs["lambda"], perm_rng=rngs["perm"],
                              per_sample_lambda=config.per_sample_lambda)
    loop = _Loop(config, net, record, validation, select_best)
    iters = iters_per_epoch or math.ceil(len(labeled) / config.batch_size)
    for epoch in range(1, epochs + 1):
        for _ in range(iters):
            idx = torch.from_numpy(cycler.next())
            x, y = xl[idx], yl[idx]
            plan = sampler.plan(len(idx)) if sampler else MixupPlan.passthrough(len(idx))
            logits, y_mixed = net.mixed_forward(x, y, plan)
            ce = soft_cross_entropy(logits, y_mixed)
            loop.update(ce, ce, None, plan, epoch)
        loop.end_epoch(epoch)
    record.rng_state = rng_snapshot(**rngs)
    return loop.finish(), record


def pretrain(config: RunConfig, labeled: Dataset, validation: Dataset | None = None) -> dict:
    """Supervised warm-up on the labeled split; returns a checkpoint.

    With ``pretrain_epochs == 0`` the freshly initialized weights are
    returned untouched.
    """
    if labeled is None or len(labeled) == 0:
        raise DatasetError("pretraining needs labeled data", code="EMPTY_DATASET")
    if config.pretrain_epochs == 0:
        return make_checkpoint(_load(config, None), epoch=0)
    net, record = train_supervised(config, None, labeled, validation, config.pretrain_epochs,
                                   mode=str(Mode.LOWER_BOUND))
    return make_checkpoint(net, epoch=record.best_epoch or config.pretrain_epochs,
                           extra={"best_val_dice": record.best_val_dice, "record": record.epochs})


def train_ssl_roam(config: RunConfig, ckpt: dict, splits: Splits):
    """Pseudo-label, concatenate, mix at a random layer, CE + beta * MSE. Returns ``(net, record)``."""
    if splits.unlabeled is None or len(splits.unlabeled) == 0:
        raise TrainingError("SSL training needs unlabeled data", code="NO_UNLABELED_DATA")
    if ckpt is None:
        raise CheckpointError("SSL training starts from a pretrained checkpoint", code="INCOMPATIBLE_CHECKPOINT")
    net = _load(config, ckpt)
    net.train()
    record = RunRecord(str(Mode.SSL_ROAM))
    rngs = streams(config.seed)
    xl_all, yl_all = _tensors(splits.labeled)
    xu_all, _ = _tensors(splits.unlabeled)
    B = config.batch_size
    lab = BatchCycler(len(splits.labeled), B, rngs["labeled"])
    unl = BatchCycler(len(splits.unlabeled), B, rngs["unlabeled"])
    sampler = PlanSampler(config.kappa_set, config.alpha, config.mix_skips, kappa_rng=rngs["kappa"],
                          lambda_rng=rngs["lambda"], perm_rng=rngs["perm"],
                          per_sample_lambda=config.per_sample_lambda)
    loop = _Loop(config, net, record, splits.validation)
    iters = math.ceil(max(len(splits.labeled), len(splits.unlabeled)) / B)
    C = config.data.num_classes
    for epoch in range(1, config.train_epochs + 1):
        for _ in range(iters):
            il, iu = torch.from_numpy(lab.next()), torch.from_numpy(unl.next())
            xl, yl, xu = xl_all[il], yl_all[il], xu_all[iu]
            guess = pseudo_labels.guess_labels(net, xu, C)
            record.guess_calls += 1
            yu = pseudo_labels.sharpen(guess, config.T) if config.sharpen else guess
            x, y, marker = concat_batches(xl, yl, xu, yu)
            plan = sampler.plan(len(x), block=None if config.concatenate else marker)
            if plan.is_identity and config.beta == 0:
                # the unlabeled half cannot reach the loss: keep it out of the batch statistics
                logits, y_mixed = net.mixed_forward(xl, yl, MixupPlan.passthrough(marker))
                p_l, y_l, p_u, y_u = logits, y_mixed, None, None
            else:
                logits, y_mixed = net.mixed_forward(x, y, plan)
                p_l, y_l, p_u, y_u = split_predictions(logits, y_mixed, marker)
            loss, ce, mse = loss_terms(p_l, y_l, p_u, y_u, config.beta)
            loop.update(loss, ce, mse, plan, epoch)
        loop.end_epoch(epoch)
    record.rng_state = rng_snapshot(**rngs)
    return loop.finish(), record


def train_supervised_roam(config: RunConfig, ckpt: dict | None, splits: Splits):
    """Random-layer mixup as a purely supervised regularizer (no pseudo labels, CE only).

    SUP_ROAM_LB uses the labeled split; SUP_ROAM_UB and FULLY_SUP_ROAM add the
    unlabeled split with its labels revealed. FULLY_SUP_ROAM trains from
    initialization for ``pretrain_epochs + train_epochs`` and keeps the last epoch.
    """
    if config.mode not in SUPERVISED_ROAM_MODES:
        raise ValueError(f"train_supervised_roam does not handle mode {config.mode}")
    data = splits.labeled
    if config.mode in (Mode.SUP_ROAM_UB, Mode.FULLY_SUP_ROAM) and splits.revealed is not None and len(splits.revealed):
        data = splits.labeled.concat(splits.revealed)
    if config.mode is Mode.FULLY_SUP_ROAM:
        return train_supervised(config, None, data, splits.validation,
                                config.pretrain_epochs + config.train_epochs, mixup=True,
                                select_best=False, mode=str(config.mode))
    if ckpt is None:
        raise CheckpointError("supervised ROAM refinement starts from a pretrained checkpoint",
                              code="INCOMPATIBLE_CHECKPOINT")
    return train_supervised(config, ckpt, data, splits.validation, config.train_epochs, mixup=True,
                            mode=str(config.mode))


def train_upper_bound(config: RunConfig, ckpt: dict, splits: Splits):
    data = splits.labeled.concat(splits.revealed) if splits.revealed is not None else splits.labeled
    return train_supervised(config, ckpt, data, splits.validation, config.train_epochs,
                            mode=str(Mode.UPPER_BOUND))


@torch.no_grad()
def hard_pseudo_labels(net: SegNet, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    net.eval()
    out = []
    for i in range(0, len(images), batch_size):
        out.append(net(torch.from_numpy(images[i:i + batch_size])).argmax(dim=1).numpy())
    return np.concatenate(out)


def train_pseudo_baseline(config: RunConfig, ckpt: dict, splits: Splits):
    """Label the unlabeled split once with the pretrained model's argmax, then train on both."""
    if splits.unlabeled is None or len(splits.unlabeled) == 0:
        raise TrainingError("pseudo-label baseline needs unlabeled data", code="NO_UNLABELED_DATA")
    if ckpt is None:
        raise CheckpointError("pseudo-label baseline starts from a pretrained checkpoint",
                              code="INCOMPATIBLE_CHECKPOINT")
    teacher = _load(config, ckpt)
    pseudo = hard_pseudo_labels(teacher, splits.unlabeled.images)
    pseudo_ds = Dataset(splits.unlabeled.images, pseudo, splits.unlabeled.num_classes)
    net, record = train_supervised(config, ckpt, splits.labeled.concat(pseudo_ds), splits.validation,
                                   config.train_epochs, mode=str(Mode.SSL_PSEUDO_BASELINE))
    record.guess_calls += 1
    return net, record


def run_mode(config: RunConfig, splits: Splits, pretrained: dict | None = None):
    """Execute ``config.mode``; returns ``(net, record, pretrained_checkpoint)``.

    ``pretrained`` may be passed to share one lower-bound model between runs.
    """
    needs_pretrain = config.mode is not Mode.FULLY_SUP_ROAM
    if needs_pretrain and pretrained is None:
        pretrained = pretrain(config, splits.labeled, splits.validation)
    if config.mode is Mode.LOWER_BOUND:
        net = net_from_checkpoint(pretrained, config.data.num_classes).eval()
        record = RunRecord(str(Mode.LOWER_BOUND), epochs=pretrained["extra"].get("record", []),
                           best_epoch=pretrained["epoch"], best_val_dice=pretrained["extra"].get("best_val_dice"))
        return net, record, pretrained
    if config.mode is Mode.UPPER_BOUND:
        net, record = train_upper_bound(config, pretrained, splits)
    elif config.mode is Mode.SSL_ROAM:
        net, record = train_ssl_roam(config, pretrained, splits)
    elif config.mode is Mode.SSL_PSEUDO_BASELINE:
        net, record = train_pseudo_baseline(config, pretrained, splits)
    else:
        net, record = train_supervised_roam(config, pretrained, splits)
    return net, record, pretrained


def final_checkpoint(net: SegNet, record: RunRecord, config: RunConfig) -> dict:
    return make_checkpoint(net, epoch=record.best_epoch or 0, rng_state=record.rng_state,
                           extra={"mode": record.mode, "seed": config.seed, "best_val_dice": record.best_val_dice})


def save_record(record: RunRecord, path) -> Path:
    p = Path(path)
    record.write_events(p)
    return p
