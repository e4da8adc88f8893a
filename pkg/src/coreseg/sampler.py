"""From raw images to normalized training rows.

An image is tiled into 224x224 windows, each window is pushed through the
pretrained network, the tapped maps are upscaled back to window size and
mosaicked over the image, and the raw input channels are appended. The
result is a "core": one feature row (hypercolumn) per pixel. Training draws
random rows from cores; prediction consumes every row.

Fixed conventions:
* feature columns = tapped maps in layer order, then raw input channels last;
* padding for small images is symmetric (content centered) with the channel
  mean in raw space, i.e. zeros after mean subtraction;
* overlapping tiles: the later tile in iteration order wins;
* feature scaling is min-max to [0, 1] with train-time parameters, clamped
  at test time; a constant feature maps to 0.
"""
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import CoresegError, FormatError, ShapeError, ValidationError
from .images import Palette, labels_from_image
from .network import INPUT_SIZE, NetworkModel, TapSet, forward_with_taps


@dataclass
class Core:
    """All hypercolumns of one image: rows[y * width + x] is pixel (x, y)."""

    width: int
    height: int
    k: int
    rows: np.ndarray  # (width * height, k) float64


@dataclass
class CoreSample:
    features: np.ndarray  # (n, k)
    targets: np.ndarray | None  # (n,) class indices or real values
    coords: np.ndarray  # (n, 3) of (image_id, x, y)


@dataclass
class Normalizer:
    feature_min: np.ndarray
    feature_max: np.ndarray

    @property
    def k(self):
        return self.feature_min.shape[0]


def _tile_offsets(size, stride):
    if size <= INPUT_SIZE:
        # symmetric padding, content centered: single window, negative offset
        return [-((INPUT_SIZE - size) // 2)]
    offsets = list(range(0, size - INPUT_SIZE + 1, stride))
    if offsets[-1] != size - INPUT_SIZE:
        offsets.append(size - INPUT_SIZE)
    return offsets


def preprocess(image, model: NetworkModel, stride=112):
    """Cut an image into mean-subtracted 224x224 tiles.

    Returns (tile, (x, y)) pairs; offsets are in original-image coordinates
    and negative where the tile extends into padding.
    """
    image = kernels.as_tensor(image)
    if image.shape[0] != model.input_channels:
        raise ShapeError(
            f"image has {image.shape[0]} channels, model expects "
            f"{model.input_channels}")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    _, height, width = image.shape
    shifted = image - model.channel_means[:, None, None]
    tiles = []
    for oy in _tile_offsets(height, stride):
        for ox in _tile_offsets(width, stride):
            tile = np.zeros((image.shape[0], INPUT_SIZE, INPUT_SIZE))
            y0, y1 = max(oy, 0), min(oy + INPUT_SIZE, height)
            x0, x1 = max(ox, 0), min(ox + INPUT_SIZE, width)
            tile[:, y0 - oy:y1 - oy, x0 - ox:x1 - ox] = shifted[:, y0:y1, x0:x1]
            tiles.append((tile, (ox, oy)))
    return tiles


def augment_contrast(image, factors):
    """Scale deviation from the per-channel mean: out = m + f * (image - m)."""
    if not factors:
        raise ValidationError("contrast factor list is empty")
    image = kernels.as_tensor(image)
    mean = image.mean(axis=(1, 2), keepdims=True)
    return [mean + f * (image - mean) for f in factors]


def build_core(image, tiles_with_maps) -> Core:
    """Mosaic per-tile tap maps into one hypercolumn row per image pixel.

    ``tiles_with_maps``: list of ((x, y) offset, list of tap tensors), all
    tiles structurally identical. Overlaps resolve last-writer-wins.
    """
    image = kernels.as_tensor(image)
    channels, height, width = image.shape
    if not tiles_with_maps:
        raise ValidationError("no tiles supplied")
    structure = [(m.shape[0] for m in maps) for _, maps in tiles_with_maps]
    signatures = {tuple(s) for s in structure}
    if len(signatures) != 1:
        raise ValidationError("tiles carry differing map structures")
    map_channels = list(signatures.pop())
    total_maps = sum(map_channels)
    k = total_maps + channels

    canvas = np.zeros((total_maps, height, width))
    for (ox, oy), maps in tiles_with_maps:
        y0, y1 = max(oy, 0), min(oy + INPUT_SIZE, height)
        x0, x1 = max(ox, 0), min(ox + INPUT_SIZE, width)
        plane = 0
        for tap in maps:
            upscaled = kernels.bilinear_resize(tap, INPUT_SIZE, INPUT_SIZE)
            canvas[plane:plane + tap.shape[0], y0:y1, x0:x1] = \
                upscaled[:, y0 - oy:y1 - oy, x0 - ox:x1 - ox]
            plane += tap.shape[0]

    stacked = np.concatenate([canvas, image], axis=0)
    rows = np.ascontiguousarray(stacked.reshape(k, height * width).T)
    return Core(width, height, k, rows)


def extract_core(image, model: NetworkModel, taps: TapSet, stride=112) -> Core:
    """preprocess + forward_with_taps + build_core for one image."""
    tiles = preprocess(image, model, stride)
    tiles_with_maps = [(offset, forward_with_taps(model, tile, taps))
                       for tile, offset in tiles]
    return build_core(image, tiles_with_maps)


def fit_normalizer(cores) -> Normalizer:
    if not cores:
        raise ValidationError("need at least one core to fit a normalizer")
    lo = cores[0].rows.min(axis=0)
    hi = cores[0].rows.max(axis=0)
    for core in cores[1:]:
        lo = np.minimum(lo, core.rows.min(axis=0))
        hi = np.maximum(hi, core.rows.max(axis=0))
    return Normalizer(lo.copy(), hi.copy())


def apply_normalizer(norm: Normalizer, rows):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[1] != norm.k:
        raise ShapeError(f"rows have {rows.shape[1]} features, normalizer has {norm.k}")
    span = norm.feature_max - norm.feature_min
    degenerate = span == 0
    safe_span = np.where(degenerate, 1.0, span)
    scaled = (rows - norm.feature_min) / safe_span
    scaled[:, degenerate] = 0.0
    return np.clip(scaled, 0.0, 1.0)


def sample_core(core: Core, n, seed, targets=None, stratified=False,
                image_id=0) -> CoreSample:
    """Draw n distinct pixel rows (seeded, without replacement).

    Stratified mode draws ceil(n / num_classes) pixels per class where that
    many exist, trimming the concatenated draw back to n if it overshoots.
    """
    total = core.width * core.height
    if not 1 <= n <= total:
        raise ValidationError(f"sample size {n} outside [1, {total}]")
    if targets is not None:
        targets = np.asarray(targets)
        if targets.shape[0] != total:
            raise ShapeError(
                f"targets length {targets.shape[0]} != pixel count {total}")
    rng = np.random.default_rng(seed)
    if stratified:
        if targets is None:
            raise ValidationError("stratified sampling requires targets")
        classes = np.unique(targets)
        quota = -(-n // len(classes))  # ceil
        picks = []
        for cls in classes:
            members = np.flatnonzero(targets == cls)
            take = min(quota, len(members))
            picks.append(rng.choice(members, size=take, replace=False))
        indices = np.concatenate(picks)[:n]
    else:
        indices = rng.choice(total, size=n, replace=False)
    xs = indices % core.width
    ys = indices // core.width
    coords = np.stack([np.full(len(indices), image_id), xs, ys], axis=1)
    picked_targets = targets[indices] if targets is not None else None
    return CoreSample(core.rows[indices].copy(), picked_targets, coords)


def create_targets(label_image, palette: Palette, expect_shape=None):
    """Row-major per-pixel class indices from a label image."""
    label_image = kernels.as_tensor(label_image)
    if expect_shape is not None and label_image.shape[1:] != tuple(expect_shape):
        raise ShapeError(
            f"label image is {label_image.shape[1:]}, input image is "
            f"{tuple(expect_shape)}")
    return labels_from_image(label_image, palette).reshape(-1)


CACHE_MAGIC = b"CSCC"
CACHE_VERSION = 1


def save_core(path, core: Core):
    """Persist a core to disk (f32 rows; lossy versus the f64 pipeline)."""
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<4I", CACHE_VERSION, core.k, core.width, core.height))
        fh.write(core.rows.astype("<f4").tobytes())


def load_core(path) -> Core:
    with open(path, "rb") as fh:
        if fh.read(4) != CACHE_MAGIC:
            raise FormatError(f"{path}: not a core cache file")
        header = fh.read(16)
        if len(header) != 16:
            raise FormatError(f"{path}: truncated cache header")
        version, k, width, height = struct.unpack("<4I", header)
        if version != CACHE_VERSION:
            raise FormatError(f"{path}: unsupported cache version {version}")
        payload = fh.read(4 * k * width * height)
    if len(payload) != 4 * k * width * height:
        raise FormatError(f"{path}: truncated cache payload")
    rows = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return Core(width, height, k, rows.reshape(width * height, k))
