"""Overlap and surface-distance metrics, and summary reports.

Distances are in pixels. A mask's boundary is the set of foreground pixels
with at least one 4-neighbour in the background (outside the image counts
as background).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import EmptyMask, ShapeMismatch


def dice(pred, gt, num_classes: int):
    """Per-class Dice and the mean over foreground classes (1..C-1).

    A class absent from both maps scores 1.0.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    scores = np.empty(num_classes)
    for c in range(num_classes):
        p, g = pred == c, gt == c
        denom = p.sum() + g.sum()
        scores[c] = 1.0 if denom == 0 else 2.0 * np.logical_and(p, g).sum() / denom
    fg = scores[1:] if num_classes > 1 else scores
    return scores, float(fg.mean())


def boundary(mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    padded = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return m & ~interior


def _boundary_points(mask) -> np.ndarray:
    pts = np.array(np.nonzero(boundary(mask)), dtype=np.float64).T
    if not len(pts):
        raise EmptyMask("mask has no foreground pixels")
    return pts


def _nearest(a: np.ndarray, b: np.ndarray):
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return d.min(axis=1), d.min(axis=0)


def hausdorff(pred_mask, gt_mask) -> float:
    """Symmetric Hausdorff distance between mask boundaries."""
    a, b = _boundary_points(pred_mask), _boundary_points(gt_mask)
    ab, ba = _nearest(a, b)
    return float(max(ab.max(), ba.max()))


def mean_surface_distance(pred_mask, gt_mask) -> float:
    """Mean of all boundary-to-nearest-boundary distances, pooled over both directions."""
    a, b = _boundary_points(pred_mask), _boundary_points(gt_mask)
    ab, ba = _nearest(a, b)
    return float((ab.sum() + ba.sum()) / (ab.size + ba.size))


def relative_improvement(score: float, baseline: float) -> float:
    if baseline <= 0:
        raise ValueError("baseline must be > 0")
    return 100.0 * (score - baseline) / baseline


# -- model evaluation --------------------------------------------------------

@dataclass
class EvalResult:
    """Per-sample metrics; HD/MSD entries are NaN where a mask was empty."""

    dice: np.ndarray          # (N, C)
    hd: np.ndarray            # (N, C)
    msd: np.ndarray           # (N, C)
    num_classes: int

    @property
    def mean_fg_dice_per_sample(self) -> np.ndarray:
        return self.dice[:, 1:].mean(axis=1)

    @property
    def mean_dice(self) -> float:
        return float(self.mean_fg_dice_per_sample.mean())

    def summary(self) -> dict[str, "Summary"]:
        out = {"dice": Summary.of(self.mean_fg_dice_per_sample)}
        with np.errstate(all="ignore"):
            out["hd"] = Summary.of(_nanmean_rows(self.hd[:, 1:]))
            out["msd"] = Summary.of(_nanmean_rows(self.msd[:, 1:]))
        return out

    def per_class_dice(self) -> np.ndarray:
        return self.dice.mean(axis=0)


def _nanmean_rows(a: np.ndarray) -> np.ndarray:
    ok = ~np.isnan(a)
    counts = ok.sum(axis=1)
    sums = np.where(ok, a, 0).sum(axis=1)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


@dataclass(frozen=True)
class Summary:
    mean: float
    median: float
    std: float
    n: int

    @classmethod
    def of(cls, values) -> "Summary":
        v = np.asarray(values, dtype=np.float64)
        v = v[~np.isnan(v)]
        if v.size == 0:
            return cls(math.nan, math.nan, math.nan, 0)
        return cls(float(v.mean()), float(np.median(v)), float(v.std()), int(v.size))

    def __str__(self) -> str:
        return f"{self.mean:.3f}({self.median:.3f})±{self.std:.3f}"


@torch.no_grad()
def predict(net, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    net.eval()
    out = []
    for i in range(0, len(images), batch_size):
        x = torch.from_numpy(images[i:i + batch_size])
        out.append(net(x).argmax(dim=1).numpy())
    return np.concatenate(out)


def evaluate(net, dataset, distances: bool = True) -> EvalResult:
    preds = predict(net, dataset.images)
    return evaluate_predictions(preds, dataset.labels, dataset.num_classes, distances)


def evaluate_predictions(preds, labels, num_classes: int, distances: bool = True) -> EvalResult:
    n = len(preds)
    d = np.empty((n, num_classes))
    hd = np.full((n, num_classes), np.nan)
    msd = np.full((n, num_classes), np.nan)
    for i in range(n):
        d[i], _ = dice(preds[i], labels[i], num_classes)
        if not distances:
            continue
        for c in range(1, num_classes):
            p, g = preds[i] == c, labels[i] == c
            if p.any() and g.any():
                a, b = _boundary_points(p), _boundary_points(g)
                ab, ba = _nearest(a, b)
                hd[i, c] = max(ab.max(), ba.max())
                msd[i, c] = (ab.sum() + ba.sum()) / (ab.size + ba.size)
    return EvalResult(d, hd, msd, num_classes)


# -- reports -----------------------------------------------------------------

REPORT_COLUMNS = ["model", "split", "metric", "mean", "median", "std", "n", "ri_percent"]


@dataclass
class MetricsReport:
    """Rows of (model, split) -> summaries, rendered as text and CSV."""

    rows: list[tuple[str, str, dict[str, Summary]]] = field(default_factory=list)
    baseline: str | None = None

    def add(self, model: str, split: str, result: EvalResult) -> None:
        self.rows.append((model, split, result.summary()))

    def _ri(self, split: str, summary: Summary) -> float:
        if self.baseline is None:
            return math.nan
        for model, s, summ in self.rows:
            if model == self.baseline and s == split:
                return relative_improvement(summary.mean, summ["dice"].mean)
        return math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for model, split, summ in self.rows:
            for metric, s in summ.items():
                ri = self._ri(split, s) if metric == "dice" else math.nan
                w.writerow([model, split, metric, repr(s.mean), repr(s.median), repr(s.std), s.n,
                            "" if math.isnan(ri) else repr(ri)])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'Model':<28}{'Split':<12}{'Dice mean(median)±std':<24}{'RI(%)':>8}  {'HD (px)':<20}{'MSD (px)':<20}"
        lines = [head, "-" * len(head)]
        for model, split, summ in self.rows:
            ri = self._ri(split, summ["dice"])
            ri_s = "" if math.isnan(ri) else f"{ri:.2f}"
            hd, msd = summ["hd"], summ["msd"]
            lines.append(f"{model:<28}{split:<12}{str(summ['dice']):<24}{ri_s:>8}  "
                         f"{hd.mean:.2f}±{hd.std:.2f}{'':<9}{msd.mean:.2f}±{msd.std:.2f}")
        return "\n".join(lines) + "\n"
