"""CSDM model-file persistence (the trained artifact).

Layout (little-endian):

    magic "CSDM" (4 bytes) · u32 version = 1
    u32 n_sizes · u32 sizes[n_sizes]        layer widths, visible k first
    u8 head_kind (0 = logistic, 1 = linear) · u32 n_out
    f64 dropout[n_hidden] · f64 l1 · f64 l2
    f64 norm_min[k] · f64 norm_max[k]
    f64 parameters: per hidden layer W (row-major) then bias,
                    then head W and head bias
    u32 provenance_length · UTF-8 JSON (seed, hyperparameters, taps, ...)
    u32 CRC32 of every preceding byte

Round trips are lossless: parameters are stored in the same float64 the
model computes with, and serialization is deterministic (sorted JSON keys),
so identical models produce identical bytes.
"""
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .dbn import DbnModel
from .errors import FormatError
from .sampler import Normalizer

MAGIC = b"CSDM"
VERSION = 1
_HEAD_CODES = {"logistic": 0, "linear": 1}
_HEAD_NAMES = {v: k for k, v in _HEAD_CODES.items()}


@dataclass
class TrainedModel:
    dbn: DbnModel
    normalizer: Normalizer
    provenance: dict

    @property
    def k(self):
        return self.normalizer.k


def save_model(path, trained: TrainedModel):
    dbn = trained.dbn
    if dbn.head_kind is None:
        raise FormatError("refusing to save a model with an uninitialized head")
    sizes = dbn.layer_sizes
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(sizes))
    out += struct.pack(f"<{len(sizes)}I", *sizes)
    out += struct.pack("<BI", _HEAD_CODES[dbn.head_kind], dbn.n_out)
    dropout = dbn.dropout or [0.0] * len(dbn.weights)
    out += np.asarray(dropout, dtype="<f8").tobytes()
    out += struct.pack("<2d", dbn.l1, dbn.l2)
    out += np.asarray(trained.normalizer.feature_min, dtype="<f8").tobytes()
    out += np.asarray(trained.normalizer.feature_max, dtype="<f8").tobytes()
    for W, b in zip(dbn.weights, dbn.biases):
        out += np.asarray(W, dtype="<f8").tobytes()
        out += np.asarray(b, dtype="<f8").tobytes()
    out += np.asarray(dbn.head_W, dtype="<f8").tobytes()
    out += np.asarray(dbn.head_b, dtype="<f8").tobytes()
    blob = json.dumps(trained.provenance, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(blob))
    out += blob
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, size):
        chunk = self.data[self.pos:self.pos + size]
        if len(chunk) != size:
            raise FormatError(f"{self.path}: truncated model file")
        self.pos += size
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f64(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a CSDM model file")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise FormatError(f"{path}: checksum mismatch, file is corrupt")

    r = _Reader(data[4:-4], path)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported CSDM version {version}")
    (n_sizes,) = r.unpack("<I")
    sizes = list(r.unpack(f"<{n_sizes}I"))
    head_code, n_out = r.unpack("<BI")
    if head_code not in _HEAD_NAMES:
        raise FormatError(f"{path}: unknown head kind {head_code}")
    n_hidden = n_sizes - 1
    dropout = list(r.f64(n_hidden))
    l1, l2 = r.unpack("<2d")
    k = sizes[0]
    norm = Normalizer(r.f64(k), r.f64(k))
    weights, biases = [], []
    for n_in, n_units in zip(sizes[:-1], sizes[1:]):
        weights.append(r.f64(n_in * n_units).reshape(n_in, n_units))
        biases.append(r.f64(n_units))
    head_W = r.f64(sizes[-1] * n_out).reshape(sizes[-1], n_out)
    head_b = r.f64(n_out)
    (blob_len,) = r.unpack("<I")
    provenance = json.loads(r.take(blob_len).decode("utf-8"))
    if r.pos != len(r.data):
        raise FormatError(f"{path}: trailing bytes after provenance")

    dbn = DbnModel(weights, biases, _HEAD_NAMES[head_code], head_W, head_b,
                   dropout, l1, l2)
    return TrainedModel(dbn, norm, provenance)
