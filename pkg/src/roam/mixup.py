"""Mixing coefficient, pairing and layer sampling, and linear interpolation."""
from __future__ import annotations

import numpy as np
import torch

from .errors import MixupError, ShapeMismatch
from .types import Layer, MixupPlan


def sample_lambda(alpha: float, rng: np.random.Generator, size=None):
    """Beta(alpha, alpha) via the two-Gamma construction."""
    if alpha <= 0:
        raise MixupError(f"alpha must be > 0, got {alpha}", code="NONPOSITIVE_ALPHA")
    g1 = rng.standard_gamma(alpha, size=size)
    g2 = rng.standard_gamma(alpha, size=size)
    return g1 / (g1 + g2)


def sample_lambda_prime(alpha: float, rng: np.random.Generator) -> float:
    """``max(lam, 1 - lam)`` with ``lam ~ Beta(alpha, alpha)``; always in [0.5, 1]."""
    lam = float(sample_lambda(alpha, rng))
    return max(lam, 1.0 - lam)


def make_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("batch must contain at least one sample")
    return rng.permutation(n)


def select_kappa(kappa_set, rng: np.random.Generator) -> Layer:
    layers = tuple(kappa_set)
    if not layers:
        raise MixupError("kappa_set is empty", code="EMPTY_KAPPA_SET")
    return layers[int(rng.integers(len(layers)))]


def mix(h, h_perm, y, y_perm, lambda_prime):
    """``lambda' * h + (1 - lambda') * h_perm`` and the same for labels.

    ``lambda_prime`` may be a scalar or a per-sample vector of length B.
    The [0.5, 1] range is a property of how plans are sampled and is not
    enforced here.
    """
    if h.shape != h_perm.shape:
        raise ShapeMismatch(f"activation shapes differ: {tuple(h.shape)} vs {tuple(h_perm.shape)}")
    if y.shape != y_perm.shape:
        raise ShapeMismatch(f"label shapes differ: {tuple(y.shape)} vs {tuple(y_perm.shape)}")
    return _lerp(h, h_perm, lambda_prime), _lerp(y, y_perm, lambda_prime)


def _lerp(a: torch.Tensor, b: torch.Tensor, lam) -> torch.Tensor:
    if isinstance(lam, (float, int)):
        if lam == 1:
            return a
        return lam * a + (1 - lam) * b
    lam = torch.as_tensor(lam, dtype=a.dtype, device=a.device).reshape(-1, *([1] * (a.dim() - 1)))
    return lam * a + (1 - lam) * b


def permute_and_mix(h: torch.Tensor, y: torch.Tensor, plan: MixupPlan):
    """Pair every sample with ``plan.permutation`` and interpolate."""
    if plan.is_identity:
        return h, y
    idx = torch.as_tensor(plan.permutation, device=h.device)
    return mix(h, h[idx], y, y[idx], plan.lambda_prime)


class PlanSampler:
    """Draws one :class:`MixupPlan` per step from three independent streams."""

    def __init__(self, kappa_set, alpha: float, mix_skips: bool, *, kappa_rng, lambda_rng, perm_rng,
                 per_sample_lambda: bool = False):
        self.kappa_set = tuple(kappa_set)
        if not self.kappa_set:
            raise MixupError("kappa_set is empty", code="EMPTY_KAPPA_SET")
        if alpha <= 0:
            raise MixupError(f"alpha must be > 0, got {alpha}", code="NONPOSITIVE_ALPHA")
        self.alpha = alpha
        self.mix_skips = mix_skips
        self.per_sample_lambda = per_sample_lambda
        self.kappa_rng, self.lambda_rng, self.perm_rng = kappa_rng, lambda_rng, perm_rng

    def plan(self, batch_size: int, block: int | None = None) -> "MixupPlan | SampleMixPlan":
        """Sample kappa, lambda' and a pairing for ``batch_size`` samples.

        With ``block`` set, samples ``[0, block)`` are paired only among
        themselves, and likewise ``[block, batch_size)``.
        """
        kappa = select_kappa(self.kappa_set, self.kappa_rng)
        if kappa is Layer.PASSTHROUGH:
            return MixupPlan.passthrough(batch_size)
        if block is None or block in (0, batch_size):
            perm = make_permutation(batch_size, self.perm_rng)
        else:
            perm = np.concatenate([make_permutation(block, self.perm_rng),
                                   block + make_permutation(batch_size - block, self.perm_rng)])
        if self.per_sample_lambda:
            lam = sample_lambda(self.alpha, self.lambda_rng, size=batch_size)
            return SampleMixPlan(kappa, np.maximum(lam, 1 - lam), perm, self.mix_skips)
        return MixupPlan(kappa, sample_lambda_prime(self.alpha, self.lambda_rng), perm, self.mix_skips)


class SampleMixPlan(MixupPlan):
    """Plan variant carrying one lambda' per sample (config extension, off by default)."""

    def __post_init__(self):
        lam = np.asarray(self.lambda_prime, dtype=np.float64)
        object.__setattr__(self, "lambda_prime", lam)
        object.__setattr__(self, "permutation", np.asarray(self.permutation, dtype=np.int64))
        if lam.shape != self.permutation.shape or (lam < 0.5).any() or (lam > 1).any():
            raise ValueError("per-sample lambda_prime must be one value in [0.5, 1] per sample")

    @property
    def is_identity(self) -> bool:
        return bool((self.lambda_prime == 1).all() and np.array_equal(
            self.permutation, np.arange(self.permutation.size)))
