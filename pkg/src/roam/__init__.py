"""Semi-supervised segmentation with random-layer mixup."""

__version__ = "0.1.0"
