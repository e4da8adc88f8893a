"""One-shot exporter: torchvision VGG-16 -> CSFW weight file + manifest."""

__version__ = "0.1.0"
