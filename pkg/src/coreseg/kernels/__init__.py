"""Dense tensor kernels: 2-D convolution, ReLU, max-pooling, bilinear resize.

Tensors are plain C-contiguous float64 numpy arrays of shape
(channels, height, width). Two interchangeable backends exist:

* ``ext``   -- compiled Cython loops (built by setup.py when possible)
* ``numpy`` -- vectorized pure-numpy fallback

Selection happens once at import: the extension is used if importable,
otherwise numpy. Set ``CORESEG_KERNELS=numpy`` (or ``ext``) to force one.
Both backends implement identical semantics; ``benchmarks/bench_kernels.py``
compares their speed and agreement.

Conventions (fixed, so file formats stay portable):
* convolution is cross-correlation -- no kernel flip;
* conv/pool output sizes must divide exactly, otherwise ConfigError;
* bilinear resize uses half-pixel centers with edge clamping.
"""
import os
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError

_requested = os.environ.get("CORESEG_KERNELS", "auto")
if _requested in ("auto", "ext"):
    try:
        from . import _fastkernels as _impl
        BACKEND = "ext"
    except ImportError:
        if _requested == "ext":
            raise
        from . import _numpy_backend as _impl
        BACKEND = "numpy"
elif _requested == "numpy":
    from . import _numpy_backend as _impl
    BACKEND = "numpy"
else:
    raise ConfigError(f"unknown CORESEG_KERNELS value {_requested!r}")


def as_tensor(x):
    """Coerce to a C-contiguous float64 (C, H, W) array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"expected rank-3 tensor, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all tensor dimensions must be >= 1, got {arr.shape}")
    return arr


@dataclass
class ConvSpec:
    """One convolution layer: weights in (out, in, kh, kw) order plus bias."""

    out_channels: int
    in_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    padding: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.stride < 1 or self.padding < 0:
            raise ConfigError(
                f"stride must be >= 1 and padding >= 0, got stride={self.stride} "
                f"padding={self.padding}")
        shape = (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(shape)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64).reshape(
            (self.out_channels,))


def _out_dim(size, kernel, stride, padding, axis):
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        raise ConfigError(
            f"{axis}: ({size} + 2*{padding} - {kernel}) not an exact multiple "
            f"of stride {stride}")
    out = span // stride + 1
    if out < 1:
        raise ConfigError(f"{axis}: computed output size {out} < 1")
    return out


def conv2d(x, spec: ConvSpec):
    """Cross-correlate ``x`` with the layer in ``spec``."""
    x = as_tensor(x)
    if x.shape[0] != spec.in_channels:
        raise ShapeError(
            f"channel axis: input has {x.shape[0]} channels, "
            f"layer expects {spec.in_channels}")
    _out_dim(x.shape[1], spec.kernel_h, spec.stride, spec.padding, "height axis")
    _out_dim(x.shape[2], spec.kernel_w, spec.stride, spec.padding, "width axis")
    return _impl.conv2d(x, spec.weights, spec.bias, spec.stride, spec.padding)


def relu(x):
    """Elementwise max(0, x); shape preserved."""
    return np.maximum(as_tensor(x), 0.0)


def maxpool(x, window, stride):
    """Per-channel max over window x window blocks stepped by ``stride``."""
    x = as_tensor(x)
    if window < 1 or stride < 1:
        raise ConfigError(f"window and stride must be >= 1, got {window}, {stride}")
    for axis, size in (("height axis", x.shape[1]), ("width axis", x.shape[2])):
        if size < window:
            raise ConfigError(f"{axis}: size {size} smaller than window {window}")
        if (size - window) % stride != 0:
            raise ConfigError(
                f"{axis}: ({size} - {window}) not divisible by stride {stride}")
    return _impl.maxpool(x, window, stride)


def bilinear_resize(x, target_w, target_h):
    """Resize every channel to (target_h, target_w).

    Source coordinate of output pixel d: (d + 0.5) * src/dst - 0.5, clamped
    to [0, src - 1]; output is the bilinear blend of the four neighbours.
    """
    x = as_tensor(x)
    if target_w < 1 or target_h < 1:
        raise ShapeError(f"target size must be >= 1, got {target_w}x{target_h}")
    return _impl.bilinear_resize(x, target_h, target_w)
