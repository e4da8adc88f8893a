"""Pretrained-CNN loading and forward inference with activation taps.

The weight file is the CSFW binary format (little-endian):

    magic "CSFW" (4 bytes)
    u32 version = 1
    u32 input_channels
    f32 channel_means[input_channels]
    u32 layer_count
    per layer:
        u8  kind            0 = conv, 1 = relu, 2 = maxpool
        u16 name_length, then UTF-8 name
        conv:    u32 out, in, kh, kw, stride, pad
                 f32 weights in (out, in, kh, kw) order, f32 biases[out]
        maxpool: u32 window, stride
        relu:    no payload

Weights are stored single precision and widened to float64 on load.
Convolution weights follow the cross-correlation convention (no flip).
"""
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import FormatError, ShapeError, ValidationError

MAGIC = b"CSFW"
VERSION = 1
INPUT_SIZE = 224

KIND_CONV = 0
KIND_RELU = 1
KIND_MAXPOOL = 2
_KIND_NAMES = {KIND_CONV: "conv", KIND_RELU: "relu", KIND_MAXPOOL: "maxpool"}


@dataclass
class LayerDef:
    kind: str  # "conv" | "relu" | "maxpool"
    name: str
    conv_spec: kernels.ConvSpec | None = None
    window: int = 0
    stride: int = 0


@dataclass
class NetworkModel:
    layers: list[LayerDef]
    channel_means: np.ndarray
    input_channels: int

    @property
    def expected_input(self):
        return (self.input_channels, INPUT_SIZE, INPUT_SIZE)

    def layer_names(self):
        return [layer.name for layer in self.layers]


@dataclass
class TapSet:
    """Layer names whose outputs are captured during a forward pass.

    Capture happens after the named layer runs, so post-activation maps are
    obtained by tapping relu layers.
    """

    tap_names: list[str] = field(default_factory=list)

    def validate(self, model: NetworkModel):
        known = set(model.layer_names())
        for name in self.tap_names:
            if name not in known:
                raise ValidationError(f"tap {name!r} names no layer in the model")


def default_taps(model: NetworkModel) -> TapSet:
    """One tap per pooling block: the relu immediately before each maxpool."""
    names = []
    prev = None
    for layer in model.layers:
        if layer.kind == "maxpool" and prev is not None and prev.kind == "relu":
            names.append(prev.name)
        prev = layer
    return TapSet(names)


def tap_channel_counts(model: NetworkModel, taps: TapSet) -> list[int]:
    """Output channel count at each tapped layer, in layer order."""
    taps.validate(model)
    wanted = set(taps.tap_names)
    counts = []
    channels = model.input_channels
    for layer in model.layers:
        if layer.kind == "conv":
            channels = layer.conv_spec.out_channels
        if layer.name in wanted:
            counts.append(channels)
    return counts


def _read(buf, fmt):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise FormatError("truncated weight file")
    return struct.unpack(fmt, raw)


def _read_f32(buf, count):
    raw = buf.read(4 * count)
    if len(raw) != 4 * count:
        raise FormatError("truncated weight file")
    return np.frombuffer(raw, dtype="<f4", count=count).astype(np.float64)


def load_weights(path) -> NetworkModel:
    """Parse and validate a CSFW weight file."""
    with open(path, "rb") as fh:
        data = fh.read()
    buf = io.BytesIO(data)
    if buf.read(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a CSFW weight file")
    (version,) = _read(buf, "<I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported CSFW version {version}")
    (input_channels,) = _read(buf, "<I")
    if input_channels < 1:
        raise FormatError(f"{path}: input_channels must be >= 1")
    means = _read_f32(buf, input_channels)
    (layer_count,) = _read(buf, "<I")

    layers = []
    channels = input_channels
    for index in range(layer_count):
        (kind_code,) = _read(buf, "<B")
        if kind_code not in _KIND_NAMES:
            raise FormatError(f"{path}: layer {index}: unknown kind {kind_code}")
        (name_len,) = _read(buf, "<H")
        name = buf.read(name_len).decode("utf-8")
        kind = _KIND_NAMES[kind_code]
        if kind == "conv":
            out_c, in_c, kh, kw, stride, pad = _read(buf, "<6I")
            if in_c != channels:
                raise ValidationError(
                    f"layer {name!r}: declares {in_c} input channels but the "
                    f"preceding layer produces {channels}")
            weights = _read_f32(buf, out_c * in_c * kh * kw)
            bias = _read_f32(buf, out_c)
            spec = kernels.ConvSpec(out_c, in_c, kh, kw, stride, pad, weights, bias)
            layers.append(LayerDef("conv", name, conv_spec=spec))
            channels = out_c
        elif kind == "maxpool":
            window, stride = _read(buf, "<2I")
            layers.append(LayerDef("maxpool", name, window=window, stride=stride))
        else:
            layers.append(LayerDef("relu", name))

    if buf.read(1):
        raise FormatError(f"{path}: trailing bytes after last layer")

    model = NetworkModel(layers, means, input_channels)
    _probe_shapes(model)
    return model


def _probe_shapes(model: NetworkModel):
    """Type-check the layer chain on the declared 224x224 input."""
    channels = model.input_channels
    h = w = INPUT_SIZE
    for layer in model.layers:
        if layer.kind == "conv":
            spec = layer.conv_spec
            try:
                h = kernels._out_dim(h, spec.kernel_h, spec.stride, spec.padding, "height")
                w = kernels._out_dim(w, spec.kernel_w, spec.stride, spec.padding, "width")
            except Exception as exc:
                raise ValidationError(f"layer {layer.name!r}: {exc}") from exc
            channels = spec.out_channels
        elif layer.kind == "maxpool":
            for size in (h, w):
                if size < layer.window or (size - layer.window) % layer.stride:
                    raise ValidationError(
                        f"layer {layer.name!r}: pool window {layer.window}/stride "
                        f"{layer.stride} does not tile a {h}x{w} map")
            h = (h - layer.window) // layer.stride + 1
            w = (w - layer.window) // layer.stride + 1


def write_weights(path, model: NetworkModel):
    """Serialize a NetworkModel to CSFW (used for fixtures and round trips)."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", model.input_channels)
    out += np.asarray(model.channel_means, dtype="<f4").tobytes()
    out += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        kind_code = {"conv": KIND_CONV, "relu": KIND_RELU, "maxpool": KIND_MAXPOOL}[layer.kind]
        name = layer.name.encode("utf-8")
        out += struct.pack("<BH", kind_code, len(name))
        out += name
        if layer.kind == "conv":
            spec = layer.conv_spec
            out += struct.pack("<6I", spec.out_channels, spec.in_channels,
                               spec.kernel_h, spec.kernel_w, spec.stride, spec.padding)
            out += np.asarray(spec.weights, dtype="<f4").tobytes()
            out += np.asarray(spec.bias, dtype="<f4").tobytes()
        elif layer.kind == "maxpool":
            out += struct.pack("<2I", layer.window, layer.stride)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def forward_with_taps(model: NetworkModel, tile, taps: TapSet):
    """Run the layer chain on one preprocessed tile, capturing tapped outputs.

    Returns the captured tensors in layer order. The tile must already be
    mean-subtracted and exactly 224x224.
    """
    tile = kernels.as_tensor(tile)
    if tile.shape != model.expected_input:
        raise ShapeError(
            f"tile shape {tile.shape} does not match expected {model.expected_input}")
    taps.validate(model)
    wanted = set(taps.tap_names)
    captured = []
    current = tile
    for layer in model.layers:
        if layer.kind == "conv":
            current = kernels.conv2d(current, layer.conv_spec)
        elif layer.kind == "relu":
            current = kernels.relu(current)
        else:
            current = kernels.maxpool(current, layer.window, layer.stride)
        if layer.name in wanted:
            captured.append(current.copy())
    return captured
