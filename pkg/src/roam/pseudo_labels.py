"""Initial label guesses for unlabeled images and temperature sharpening."""
from __future__ import annotations

import torch

from .errors import ChannelMismatch, DegeneratePixel, ShapeMismatch

CLAMP_MIN = 1e-12


@torch.no_grad()
def guess_labels(model, x: torch.Tensor, num_classes: int | None = None) -> torch.Tensor:
    """Per-pixel class probabilities from the current model, without autograd.

    The model is run in whatever mode it is in. In train mode normalization
    uses the batch's own statistics, so the guess matches the regime of the
    prediction it will later be compared with; running statistics and other
    buffers are restored afterwards, so guessing never changes the model.
    """
    saved = [b.clone() for b in model.buffers()] if model.training else None
    try:
        logits = model(x)
    finally:
        if saved is not None:
            for b, v in zip(model.buffers(), saved):
                b.copy_(v)
    if num_classes is not None and logits.shape[1] != num_classes:
        raise ChannelMismatch(f"model predicts {logits.shape[1]} classes, expected {num_classes}")
    return torch.softmax(logits, dim=1)


def sharpen(p: torch.Tensor, T: float) -> torch.Tensor:
    """``p**(1/T)`` renormalized over the class axis (dim 1).

    Probabilities below 1e-12 are clamped before exponentiation, except
    exact zeros, which stay zero. An all-zero pixel cannot be normalized.
    """
    if T <= 0:
        raise ValueError(f"temperature must be > 0, got {T}")
    if p.dim() < 2:
        raise ShapeMismatch("expected a class axis at dim 1")
    zero_pixel = (p <= 0).all(dim=1)
    if zero_pixel.any():
        idx = tuple(int(i) for i in zero_pixel.nonzero()[0])
        raise DegeneratePixel(f"pixel {idx} has no probability mass")
    if T == 1:
        return p / p.sum(dim=1, keepdim=True)
    q = torch.where(p > 0, p.clamp_min(CLAMP_MIN), torch.zeros_like(p))
    # work relative to the pixel maximum so q**(1/T) cannot underflow to all-zero
    q = q / q.amax(dim=1, keepdim=True)
    q = q.pow(1.0 / T)
    return q / q.sum(dim=1, keepdim=True)
