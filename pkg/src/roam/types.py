"""Shared data model: layer identifiers, batch checks, one-hot labels, mixup plans.

Batches are plain ``torch.Tensor`` objects in channel-first layout:
images are ``(B, 1, H, W)`` in ``[0, 1]`` and soft labels are ``(B, C, H, W)``
per-pixel distributions. The helpers here check those invariants.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import LabelRangeError, ShapeMismatch

PROB_SUM_TOL = 1e-5


class Layer(str, enum.Enum):
    """Named injection points of the segmentation network.

    ``PASSTHROUGH`` is the no-mix sentinel: the batch flows through the
    network untouched (lambda' = 1, identity pairing).
    """

    INPUT = "INPUT"
    ENC1 = "ENC1"
    ENC2 = "ENC2"
    BOTTLENECK = "BOTTLENECK"
    DEC1 = "DEC1"
    DEC2 = "DEC2"
    LAST = "LAST"
    PASSTHROUGH = "PASSTHROUGH"

    def __str__(self) -> str:
        return self.value

    @property
    def index(self) -> str:
        return _INDEX[self]


_INDEX = {
    Layer.INPUT: "0",
    Layer.ENC1: "1",
    Layer.ENC2: "2",
    Layer.BOTTLENECK: "3",
    Layer.DEC1: "4",
    Layer.DEC2: "5",
    Layer.LAST: "L",
    Layer.PASSTHROUGH: "PHI",
}

# Network order, excluding the sentinel.
LAYER_ORDER = (Layer.INPUT, Layer.ENC1, Layer.ENC2, Layer.BOTTLENECK,
               Layer.DEC1, Layer.DEC2, Layer.LAST)
HIDDEN_LAYERS = LAYER_ORDER[1:]

_ALIASES = {v: k for k, v in _INDEX.items()}
_ALIASES.update({"Φ": Layer.PASSTHROUGH, "PHI": Layer.PASSTHROUGH})


def parse_layer(token: str) -> Layer:
    """Accept a symbolic name (``ENC1``) or a numeric alias (``1``, ``L``, ``PHI``)."""
    t = token.strip()
    if t.upper() in Layer.__members__:
        return Layer[t.upper()]
    if t.upper() in _ALIASES:
        return _ALIASES[t.upper()]
    if t in _ALIASES:
        return _ALIASES[t]
    raise ValueError(f"unknown layer identifier {token!r}")


def parse_kappa_set(text: str) -> tuple[Layer, ...]:
    """Parse ``"0,1,L"`` / ``"INPUT,ENC1,LAST"`` / ``"ALL"`` into an ordered tuple."""
    t = text.strip().strip("{}")
    if t.upper() == "ALL":
        return HIDDEN_LAYERS
    layers = []
    for tok in t.split(","):
        if not tok.strip():
            continue
        layer = parse_layer(tok)
        if layer not in layers:
            layers.append(layer)
    return tuple(layers)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    index: tuple[int, ...] | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def validate_soft_labels(labels: torch.Tensor, tol: float = PROB_SUM_TOL) -> ValidationReport:
    """Check that ``labels`` holds per-pixel probability distributions.

    Returns a report naming the first offending ``(b, h, w)`` pixel (or
    ``(b, c, h, w)`` element for range violations). Raises
    :class:`ShapeMismatch` if the tensor is not rank 4.
    """
    if labels.dim() != 4:
        raise ShapeMismatch(f"soft labels must be (B, C, H, W), got shape {tuple(labels.shape)}")
    t = labels.detach()
    bad_range = (t < 0) | (t > 1) | ~torch.isfinite(t)
    if bad_range.any():
        idx = tuple(int(i) for i in bad_range.nonzero()[0])
        return ValidationReport(False, idx, "value outside [0, 1]")
    sums = t.sum(dim=1)
    bad_sum = (sums - 1).abs() > tol
    if bad_sum.any():
        idx = tuple(int(i) for i in bad_sum.nonzero()[0])
        return ValidationReport(False, idx, f"channel sum {float(sums[idx]):.6g} != 1")
    return ValidationReport(True)


def check_image_batch(x: torch.Tensor, depth: int = 2) -> None:
    """Raise unless ``x`` is a ``(B, 1, H, W)`` batch in ``[0, 1]`` with H, W usable at ``depth`` poolings."""
    if x.dim() != 4 or x.shape[1] != 1 or x.shape[0] < 1:
        raise ShapeMismatch(f"image batch must be (B, 1, H, W), got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    step = 2 ** depth
    if h < 16 or w < 16 or h % step or w % step:
        raise ShapeMismatch(f"H, W must be >= 16 and divisible by {step}, got {h}x{w}")
    if x.min() < 0 or x.max() > 1:
        raise ValueError("image intensities must lie in [0, 1]")


def one_hot_encode(labels, num_classes: int) -> torch.Tensor:
    """Integer label maps ``(B, H, W)`` -> float one-hot ``(B, C, H, W)``."""
    lab = torch.as_tensor(labels)
    if lab.dim() != 3:
        raise ShapeMismatch(f"label maps must be (B, H, W), got {tuple(lab.shape)}")
    lab = lab.long()
    if lab.numel() and (lab.min() < 0 or lab.max() >= num_classes):
        raise LabelRangeError(
            f"label values must be in [0, {num_classes - 1}], got [{int(lab.min())}, {int(lab.max())}]")
    out = torch.nn.functional.one_hot(lab, num_classes)
    return out.permute(0, 3, 1, 2).to(torch.float32).contiguous()


@dataclass(frozen=True)
class MixupPlan:
    """Sampled decisions for one training step."""

    kappa: Layer
    lambda_prime: float
    permutation: np.ndarray = field(repr=False)
    mix_skips: bool = False

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=np.int64)
        object.__setattr__(self, "permutation", perm)
        if not 0.5 <= self.lambda_prime <= 1.0:
            raise ValueError(f"lambda_prime must be in [0.5, 1], got {self.lambda_prime}")
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("permutation must be a bijection on 0..B-1")
        if self.kappa is Layer.PASSTHROUGH:
            if self.lambda_prime != 1.0 or not np.array_equal(perm, np.arange(perm.size)):
                raise ValueError("PASSTHROUGH plans require lambda_prime=1 and the identity permutation")

    @classmethod
    def passthrough(cls, batch_size: int) -> "MixupPlan":
        return cls(Layer.PASSTHROUGH, 1.0, np.arange(batch_size))

    @property
    def is_identity(self) -> bool:
        return self.kappa is Layer.PASSTHROUGH or self.lambda_prime == 1.0 and bool(
            np.array_equal(self.permutation, np.arange(self.permutation.size)))
