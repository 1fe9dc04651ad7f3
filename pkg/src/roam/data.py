"""Synthetic segmentation tasks, dataset splits and a raster-file loader.

The synthetic generator draws non-overlapping shapes, one kind per
foreground class (disk, square, ring, diamond, ...), with class intensity
bands that overlap so a threshold alone cannot segment the image.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError

SHAPE_KINDS = ("disk", "square", "ring", "diamond", "cross")
MANIFEST_NAME = "manifest.txt"


@dataclass(frozen=True)
class DomainShift:
    """Intensity gamma, contrast scale about 0.5, and relative shape-size bias."""

    gamma: float = 1.0
    contrast: float = 1.0
    size_bias: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.gamma == 1.0 and self.contrast == 1.0 and self.size_bias == 0.0


def _default_bands(num_classes: int) -> tuple[tuple[float, float], ...]:
    bands = [(0.05, 0.40)]
    n_fg = num_classes - 1
    for k in range(n_fg):
        lo = 0.30 + 0.30 * k / max(n_fg - 1, 1)
        bands.append((round(lo, 4), round(lo + 0.30, 4)))
    return tuple(bands)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 4
    # instances of every foreground class per image (inclusive range)
    shapes_per_class: tuple[int, int] = (1, 1)
    # shape radius as a fraction of min(height, width)
    radius_range: tuple[float, float] = (0.09, 0.16)
    noise_sigma: float = 0.08
    bands: tuple[tuple[float, float], ...] | None = None
    shift: DomainShift = field(default_factory=DomainShift)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.bands is None:
            object.__setattr__(self, "bands", _default_bands(self.num_classes))
        if len(self.bands) != self.num_classes:
            raise ValueError("need one intensity band per class")
        lo, hi = self.shapes_per_class
        if not 1 <= lo <= hi:
            raise ValueError("shapes_per_class must satisfy 1 <= min <= max")


@dataclass
class Dataset:
    """Images ``(N, 1, H, W)`` float32 in [0, 1]; labels ``(N, H, W)`` int64 or None."""

    images: np.ndarray
    labels: np.ndarray | None
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise DatasetError(f"images must be (N, 1, H, W), got {self.images.shape}", code="MALFORMED_FILE")
        if self.labels is not None and self.labels.shape != (self.images.shape[0],) + self.images.shape[2:]:
            raise DatasetError("labels must be (N, H, W) matching images", code="MALFORMED_FILE")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx, keep_labels: bool = True) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        labels = self.labels[idx] if keep_labels and self.labels is not None else None
        return Dataset(self.images[idx], labels, self.num_classes)

    def concat(self, other: "Dataset") -> "Dataset":
        if self.labels is None or other.labels is None:
            raise DatasetError("cannot concatenate unlabeled datasets", code="LABEL_RANGE")
        return Dataset(np.concatenate([self.images, other.images]),
                       np.concatenate([self.labels, other.labels]), self.num_classes)


def _shape_mask(kind: str, yy, xx, cy: float, cx: float, r: float) -> np.ndarray:
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy * dy + dx * dx <= r * r
    if kind == "square":
        s = r * 0.886  # equal area with the disk
        return (np.abs(dy) <= s) & (np.abs(dx) <= s)
    if kind == "ring":
        d2 = dy * dy + dx * dx
        return (d2 <= r * r) & (d2 >= (0.5 * r) ** 2)
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= r * 1.25
    if kind == "cross":
        w = r * 0.4
        return ((np.abs(dy) <= r) & (np.abs(dx) <= w)) | ((np.abs(dx) <= r) & (np.abs(dy) <= w))
    raise ValueError(kind)


def _apply_intensity_shift(img: np.ndarray, shift: DomainShift) -> np.ndarray:
    if shift.gamma != 1.0:
        img = np.power(img, shift.gamma)
    if shift.contrast != 1.0:
        img = np.clip(0.5 + (img - 0.5) * shift.contrast, 0.0, 1.0)
    return img


def _draw_sample(spec: SyntheticTaskSpec, rng: np.random.Generator):
    H, W = spec.height, spec.width
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    label = np.zeros((H, W), dtype=np.int64)
    occupied = np.zeros((H, W), dtype=bool)
    bg = rng.uniform(*spec.bands[0])
    img = np.full((H, W), bg)
    scale = min(H, W) * (1.0 + spec.shift.size_bias)
    placements = []
    for c in range(1, spec.num_classes):
        lo, hi = spec.shapes_per_class
        placements += [c] * int(rng.integers(lo, hi + 1))
    rng.shuffle(placements)
    for c in placements:
        kind = SHAPE_KINDS[(c - 1) % len(SHAPE_KINDS)]
        intensity = rng.uniform(*spec.bands[c])
        while abs(intensity - bg) < 0.05:
            intensity = rng.uniform(*spec.bands[c])
        for _ in range(200):
            r = rng.uniform(*spec.radius_range) * scale
            reach = 1.25 * r + 1
            if 2 * reach > min(H, W) - 1:
                continue
            cy = rng.uniform(reach, H - 1 - reach)
            cx = rng.uniform(reach, W - 1 - reach)
            m = _shape_mask(kind, yy, xx, cy, cx, r)
            # one-pixel gap between shapes
            grown = m.copy()
            grown[1:] |= m[:-1]; grown[:-1] |= m[1:]
            grown[:, 1:] |= m[:, :-1]; grown[:, :-1] |= m[:, 1:]
            if m.any() and not (grown & occupied).any():
                break
        else:
            raise DatasetError(f"cannot place a class-{c} shape in a {H}x{W} image",
                               code="UNSATISFIABLE_SPEC")
        occupied |= m
        label[m] = c
        img[m] = intensity
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    img = _apply_intensity_shift(img, spec.shift)
    return img.astype(np.float32), label


def generate(spec: SyntheticTaskSpec, n: int, seed: int) -> Dataset:
    """Draw ``n`` (image, label) pairs; pure in ``(spec, seed)``."""
    if n < 1:
        raise DatasetError("n must be >= 1", code="EMPTY_DATASET")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    images = np.empty((n, 1, spec.height, spec.width), dtype=np.float32)
    labels = np.empty((n, spec.height, spec.width), dtype=np.int64)
    for i in range(n):
        images[i, 0], labels[i] = _draw_sample(spec, rng)
    present = np.stack([(labels == c).any(axis=(1, 2)) for c in range(spec.num_classes)], axis=1)
    if (present.mean(axis=0) < 0.8).any():
        raise DatasetError("class balance guard failed: some class is missing from >20% of images",
                           code="UNSATISFIABLE_SPEC")
    return Dataset(images, labels, spec.num_classes)


def with_shift(spec: SyntheticTaskSpec, shift: DomainShift) -> SyntheticTaskSpec:
    return replace(spec, shift=shift)


@dataclass
class Splits:
    labeled: Dataset
    unlabeled: Dataset
    validation: Dataset
    test: Dataset
    indices: dict[str, np.ndarray]
    # unlabeled split with its labels, for upper-bound style runs
    revealed: Dataset = field(repr=False, default=None)


def _partition(dataset: Dataset, counts, seed: int) -> Splits:
    n = len(dataset)
    if sum(counts) > n:
        raise DatasetError(f"split sizes {counts} exceed dataset size {n}", code="FRACTION_SUM")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B11]))
    order = rng.permutation(n)
    bounds = np.cumsum([0, *counts])
    names = ("labeled", "unlabeled", "validation", "test")
    idx = {k: np.sort(order[bounds[i]:bounds[i + 1]]) for i, k in enumerate(names)}
    return Splits(
        labeled=dataset.subset(idx["labeled"]),
        unlabeled=dataset.subset(idx["unlabeled"], keep_labels=False),
        validation=dataset.subset(idx["validation"]),
        test=dataset.subset(idx["test"]),
        indices=idx,
        revealed=dataset.subset(idx["unlabeled"]),
    )


def split(dataset: Dataset, fractions, seed: int) -> Splits:
    """Random disjoint split into (labeled, unlabeled, validation, test) by fractions summing to 1."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (4,) or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise DatasetError(f"fractions must be four non-negative numbers summing to 1, got {fractions}",
                           code="FRACTION_SUM")
    n = len(dataset)
    counts = np.floor(fr * n).astype(int)
    # leftover samples go to the largest fractional remainders
    rem = fr * n - counts
    for i in np.argsort(-rem, kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return _partition(dataset, [int(c) for c in counts], seed)


def split_counts(dataset: Dataset, n_labeled: int, n_unlabeled: int, n_validation: int, n_test: int,
                 seed: int) -> Splits:
    return _partition(dataset, [n_labeled, n_unlabeled, n_validation, n_test], seed)


def save_external(dataset: Dataset, directory) -> Path:
    """Write 16-bit PNG image/label pairs plus ``manifest.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if dataset.labels is None:
        raise DatasetError("only labeled datasets can be exported", code="LABEL_RANGE")
    lines = [f"classes={dataset.num_classes}"]
    for i in range(len(dataset)):
        img = np.round(dataset.images[i, 0].astype(np.float64) * 65535).astype(np.uint16)
        Image.fromarray(img).save(d / f"img_{i:05d}.png")
        Image.fromarray(dataset.labels[i].astype(np.uint16)).save(d / f"lbl_{i:05d}.png")
        lines.append(f"img_{i:05d}.png\tlbl_{i:05d}.png")
    (d / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    return d / MANIFEST_NAME


def _read_raster(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except (OSError, ValueError) as e:
        raise DatasetError(f"cannot read raster {path}: {e}", code="MALFORMED_FILE") from e
    if arr.ndim != 2:
        raise DatasetError(f"{path} is not single-channel", code="MALFORMED_FILE")
    return arr


def load_external(directory) -> Dataset:
    """Load a manifest-described raster dataset; intensities are min-max normalized per image."""
    d = Path(directory)
    manifest = d / MANIFEST_NAME
    if not manifest.exists():
        if d.is_dir() and not any(d.iterdir()):
            raise DatasetError(f"{d} is empty", code="EMPTY_DATASET")
        raise DatasetError(f"no {MANIFEST_NAME} in {d}", code="MALFORMED_FILE")
    lines = [ln for ln in manifest.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("classes="):
        raise DatasetError("manifest must start with 'classes=C'", code="MALFORMED_FILE")
    try:
        num_classes = int(lines[0].split("=", 1)[1])
    except ValueError as e:
        raise DatasetError(f"bad header {lines[0]!r}", code="MALFORMED_FILE") from e
    pairs = lines[1:]
    if not pairs:
        raise DatasetError(f"{manifest} lists no samples", code="EMPTY_DATASET")
    images, labels = [], []
    for ln in pairs:
        parts = ln.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"manifest line {ln!r} is not 'image<TAB>label'", code="MALFORMED_FILE")
        img = _read_raster(d / parts[0]).astype(np.float64)
        lbl = _read_raster(d / parts[1]).astype(np.int64)
        if img.shape != lbl.shape:
            raise DatasetError(f"image/label shape mismatch for {parts[0]}", code="MALFORMED_FILE")
        if lbl.min() < 0 or lbl.max() >= num_classes:
            raise DatasetError(f"{parts[1]} has labels outside [0, {num_classes - 1}]", code="LABEL_RANGE")
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
        images.append(img.astype(np.float32))
        labels.append(lbl)
    if len({im.shape for im in images}) != 1:
        raise DatasetError("all images must share one size", code="MALFORMED_FILE")
    return Dataset(np.stack(images)[:, None], np.stack(labels), num_classes)
