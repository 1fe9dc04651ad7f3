"""Encoder-decoder segmentation network with named injection points.

Stage layout (widths ``w0 < w1 < w2``)::

    INPUT -> ENC1 (w0, full res) -> ENC2 (w1, 1/2) -> BOTTLENECK (w2, 1/4)
          -> DEC1 (w1, 1/2, + skip ENC2) -> DEC2 (w0, full, + skip ENC1)
          -> LAST (w0, full) -> 1x1 classifier (C logits)

A forward pass can be cut after any stage with :meth:`SegNet.forward_to`
and resumed with :meth:`SegNet.forward_from`. The skip store returned by
``forward_to(x, k)`` holds the skip activations of encoder stages strictly
before ``k``; if ``k`` is itself a skip source, ``forward_from`` takes that
skip from the (possibly mixed) activation it resumes with.
"""
from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, LayerError, ShapeMismatch
from .mixup import permute_and_mix
from .types import LAYER_ORDER, Layer, MixupPlan

SKIP_SOURCES = (Layer.ENC1, Layer.ENC2)
# decoder stage -> encoder stage whose activation it concatenates
SKIP_LINKS = {Layer.DEC1: Layer.ENC2, Layer.DEC2: Layer.ENC1}
CHECKPOINT_VERSION = 1


def conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class SegNet(nn.Module):
    def __init__(self, num_classes: int = 4, widths=(32, 64, 128), in_channels: int = 1):
        super().__init__()
        w0, w1, w2 = widths
        self.num_classes = num_classes
        self.widths = tuple(widths)
        self.in_channels = in_channels
        self.enc1 = conv_block(in_channels, w0)
        self.enc2 = nn.Sequential(nn.MaxPool2d(2), conv_block(w0, w1))
        self.bottleneck = nn.Sequential(nn.MaxPool2d(2), conv_block(w1, w2))
        self.up1 = nn.ConvTranspose2d(w2, w1, kernel_size=2, stride=2)
        self.dec1 = conv_block(2 * w1, w1)
        self.up2 = nn.ConvTranspose2d(w1, w0, kernel_size=2, stride=2)
        self.dec2 = conv_block(2 * w0, w0)
        self.last = conv_block(w0, w0)
        self.classifier = nn.Conv2d(w0, num_classes, kernel_size=1)
        self.depth = 2

    # -- introspection -----------------------------------------------------
    def arch(self) -> dict:
        return {"name": "SegNet", "num_classes": self.num_classes, "widths": list(self.widths),
                "in_channels": self.in_channels}

    def channels_at(self, layer: Layer) -> int:
        w0, w1, w2 = self.widths
        return {Layer.INPUT: self.in_channels, Layer.ENC1: w0, Layer.ENC2: w1, Layer.BOTTLENECK: w2,
                Layer.DEC1: w1, Layer.DEC2: w0, Layer.LAST: w0}[layer]

    def scale_at(self, layer: Layer) -> int:
        return {Layer.ENC2: 2, Layer.BOTTLENECK: 4, Layer.DEC1: 2}.get(layer, 1)

    # -- stages ------------------------------------------------------------
    def _stage(self, layer: Layer, h: torch.Tensor, skips: dict) -> torch.Tensor:
        if layer is Layer.ENC1:
            return self.enc1(h)
        if layer is Layer.ENC2:
            return self.enc2(h)
        if layer is Layer.BOTTLENECK:
            return self.bottleneck(h)
        if layer is Layer.DEC1:
            return self.dec1(torch.cat([self.up1(h), skips[Layer.ENC2]], dim=1))
        if layer is Layer.DEC2:
            return self.dec2(torch.cat([self.up2(h), skips[Layer.ENC1]], dim=1))
        if layer is Layer.LAST:
            return self.last(h)
        raise LayerError(f"no stage named {layer}", code="UNKNOWN_LAYER")

    @staticmethod
    def _position(layer) -> int:
        try:
            return LAYER_ORDER.index(Layer(layer))
        except ValueError:
            raise LayerError(f"{layer!r} is not an injection point", code="UNKNOWN_LAYER") from None

    def forward_to(self, x: torch.Tensor, kappa: Layer):
        """Run the network up to and including stage ``kappa``."""
        stop = self._position(kappa)
        h, skips = x, {}
        for layer in LAYER_ORDER[1:stop + 1]:
            h = self._stage(layer, h, skips)
            if layer in SKIP_SOURCES and layer is not LAYER_ORDER[stop]:
                skips[layer] = h
        return h, skips

    def forward_from(self, h: torch.Tensor, skips: dict, kappa: Layer) -> torch.Tensor:
        """Resume after stage ``kappa`` and return logits."""
        start = self._position(kappa)
        kappa = LAYER_ORDER[start]
        expected = self.channels_at(kappa)
        if h.dim() != 4 or h.shape[1] != expected:
            raise ShapeMismatch(f"activation at {kappa} must have {expected} channels, got {tuple(h.shape)}")
        skips = dict(skips)
        if kappa in SKIP_SOURCES:
            skips[kappa] = h
        remaining = LAYER_ORDER[start + 1:]
        for dec, enc in SKIP_LINKS.items():
            if dec in remaining and enc not in remaining and enc not in skips:
                raise LayerError(f"resuming after {kappa} needs the {enc} skip activation", code="MISSING_SKIP")
        for layer in remaining:
            if layer in SKIP_LINKS:
                s = skips[SKIP_LINKS[layer]]
                if s.shape[0] != h.shape[0]:
                    raise ShapeMismatch(f"skip {SKIP_LINKS[layer]} batch {s.shape[0]} != activation batch {h.shape[0]}")
            h = self._stage(layer, h, skips)
            if layer in SKIP_SOURCES:
                skips[layer] = h
        return self.classifier(h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, skips = self.forward_to(x, Layer.LAST)
        return self.classifier(h)

    def mixed_forward(self, x: torch.Tensor, y: torch.Tensor, plan: MixupPlan):
        """Mix activations and labels at ``plan.kappa`` and finish the pass.

        Returns ``(logits, mixed_labels)``. With ``plan.mix_skips`` the stored
        skip activations are mixed with the same pairing and coefficient.
        """
        if plan.kappa is Layer.PASSTHROUGH:
            return self(x), y
        h, skips = self.forward_to(x, plan.kappa)
        h_mixed, y_mixed = permute_and_mix(h, y, plan)
        if plan.mix_skips:
            skips = {k: permute_and_mix(v, y, plan)[0] for k, v in skips.items()}
        return self.forward_from(h_mixed, skips, plan.kappa), y_mixed


def xavier_init(net: nn.Module, generator: torch.Generator | None = None) -> nn.Module:
    """Xavier-uniform conv weights, zero biases, unit/zero batch-norm affine."""
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.xavier_uniform_(m.weight, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return net


def build_net(num_classes: int, widths=(32, 64, 128), seed: int | None = None) -> SegNet:
    net = SegNet(num_classes, widths)
    gen = None
    if seed is not None:
        gen = torch.Generator().manual_seed(int(seed))
    return xavier_init(net, gen)


# -- checkpoints -----------------------------------------------------------

def make_checkpoint(net: SegNet, epoch: int = 0, rng_state: dict | None = None, extra: dict | None = None) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "arch": net.arch(),
        "state": {k: v.detach().clone() for k, v in net.state_dict().items()},
        "epoch": int(epoch),
        "rng_state": rng_state or {},
        "extra": extra or {},
    }


def net_from_checkpoint(ckpt: dict, num_classes: int | None = None) -> SegNet:
    if ckpt.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {ckpt.get('format_version')!r}",
                              code="INCOMPATIBLE_CHECKPOINT")
    arch = ckpt["arch"]
    if arch.get("name") != "SegNet":
        raise CheckpointError(f"unknown architecture {arch.get('name')!r}", code="INCOMPATIBLE_CHECKPOINT")
    if num_classes is not None and arch["num_classes"] != num_classes:
        raise CheckpointError(f"checkpoint predicts {arch['num_classes']} classes, run expects {num_classes}",
                              code="INCOMPATIBLE_CHECKPOINT")
    net = SegNet(arch["num_classes"], tuple(arch["widths"]), arch.get("in_channels", 1))
    net.load_state_dict(ckpt["state"])
    return net


def save_checkpoint(ckpt: dict, path) -> None:
    torch.save(ckpt, path)


def load_checkpoint(path) -> dict:
    try:
        return torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise CheckpointError(f"no checkpoint at {path}", code="MISSING_CHECKPOINT") from None


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def rng_snapshot(**generators) -> dict:
    """Serializable state of named numpy generators."""
    return {k: g.bit_generator.state for k, g in generators.items() if isinstance(g, np.random.Generator)}
