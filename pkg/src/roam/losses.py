"""Supervised cross-entropy plus beta-weighted consistency MSE, and batch bookkeeping."""
from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ShapeMismatch, SplitError


def concat_batches(xl, yl, xu, yu):
    """Stack labeled then unlabeled samples; returns ``(x, y, marker)`` with marker = B_L."""
    if xu is None or xu.shape[0] == 0:
        return xl, yl, xl.shape[0]
    if xl.shape[1:] != xu.shape[1:]:
        raise ShapeMismatch(f"image shapes differ: {tuple(xl.shape)} vs {tuple(xu.shape)}")
    if yl.shape[1:] != yu.shape[1:]:
        raise ShapeMismatch(f"label shapes differ: {tuple(yl.shape)} vs {tuple(yu.shape)}")
    return torch.cat([xl, xu]), torch.cat([yl, yu]), xl.shape[0]


def split_predictions(p, y_mixed, marker: int):
    """Inverse of :func:`concat_batches`: ``(P_L, Y_L, P_U, Y_U)``."""
    if not 0 <= marker <= p.shape[0] or p.shape[0] != y_mixed.shape[0]:
        raise SplitError(f"marker {marker} invalid for batch of {p.shape[0]}")
    return p[:marker], y_mixed[:marker], p[marker:], y_mixed[marker:]


def _check(logits, targets):
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")


def soft_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over samples and pixels of ``-sum_c t_c log softmax(z)_c``."""
    _check(logits, targets)
    if logits.shape[0] == 0:
        return logits.sum() * 0
    return -(targets * F.log_softmax(logits, dim=1)).sum(dim=1).mean()


def consistency_mse(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over samples, classes and pixels of ``(softmax(z) - t)**2``."""
    _check(logits, targets)
    if logits.shape[0] == 0:
        return logits.sum() * 0
    return (F.softmax(logits, dim=1) - targets).pow(2).mean()


def total_loss(p_l, y_l, p_u, y_u, beta: float) -> torch.Tensor:
    """``CE(P_L, Y'_L) + beta * MSE(P_U, Y'_U)``."""
    return loss_terms(p_l, y_l, p_u, y_u, beta)[0]


def loss_terms(p_l, y_l, p_u, y_u, beta: float):
    """``(total, ce, mse)``; ``mse`` is None when there is no unlabeled part."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    ce = soft_cross_entropy(p_l, y_l)
    if p_u is None or p_u.shape[0] == 0:
        return ce, ce, None
    mse = consistency_mse(p_u, y_u)
    return ce + beta * mse, ce, mse
