"""Standalone CSFW serializer.

Byte layout (little-endian), version 1:

    magic "CSFW"
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

Convolution weights use the cross-correlation convention (no kernel flip),
which matches both torch and the consumer of this format. This module is
deliberately self-contained so the exporter shares no code with the
inference engine it feeds.
"""
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"CSFW"
VERSION = 1

KIND_CONV = 0
KIND_RELU = 1
KIND_MAXPOOL = 2


@dataclass
class ConvRecord:
    name: str
    weights: np.ndarray  # (out, in, kh, kw) float
    bias: np.ndarray  # (out,)
    stride: int = 1
    padding: int = 1


@dataclass
class ReluRecord:
    name: str


@dataclass
class PoolRecord:
    name: str
    window: int = 2
    stride: int = 2


def serialize(records, channel_means) -> bytes:
    means = np.asarray(channel_means, dtype="<f4")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", means.size)
    out += means.tobytes()
    out += struct.pack("<I", len(records))
    for record in records:
        name = record.name.encode("utf-8")
        if isinstance(record, ConvRecord):
            w = np.asarray(record.weights, dtype="<f4")
            b = np.asarray(record.bias, dtype="<f4")
            out += struct.pack("<BH", KIND_CONV, len(name)) + name
            out += struct.pack("<6I", w.shape[0], w.shape[1], w.shape[2],
                               w.shape[3], record.stride, record.padding)
            out += w.tobytes() + b.tobytes()
        elif isinstance(record, ReluRecord):
            out += struct.pack("<BH", KIND_RELU, len(name)) + name
        elif isinstance(record, PoolRecord):
            out += struct.pack("<BH", KIND_MAXPOOL, len(name)) + name
            out += struct.pack("<2I", record.window, record.stride)
        else:
            raise TypeError(f"unknown record type {type(record).__name__}")
    return bytes(out)
