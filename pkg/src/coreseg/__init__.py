"""coreseg: pixel-wise image labeling from pretrained-CNN hypercolumn
features, classified by a Deep Belief Network.

A pretrained CNN (CSFW weight file) acts as a fixed feature extractor:
intermediate activation maps are tapped, upscaled to image size, and stacked
with the raw input channels so every pixel owns one feature row
(a hypercolumn). Random rows train stacked RBMs plus a supervised head; at
prediction time every pixel is classified and the label image reassembled.
"""
from .kernels import BACKEND, ConvSpec, bilinear_resize, conv2d, maxpool, relu

__all__ = ["BACKEND", "ConvSpec", "bilinear_resize", "conv2d", "maxpool", "relu"]

__version__ = "0.1.0"
