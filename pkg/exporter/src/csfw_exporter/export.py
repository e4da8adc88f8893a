"""Map a torchvision VGG-16 onto the CSFW layout and emit a manifest.

The source model normalizes inputs as ((x / 255) - mean) / std per channel.
The consumer of the CSFW file only subtracts per-channel means from raw
0..255 pixels, so the 1 / (255 * std_c) scale is folded into the first
convolution's weights and the embedded means are 255 * mean. After the
first layer both pipelines compute identical values.
"""
import hashlib
import json
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from . import writer

INPUT_SIZE = 224

# torchvision's published ImageNet preprocessing constants
SOURCE_MEAN = np.array([0.485, 0.456, 0.406])
SOURCE_STD = np.array([0.229, 0.224, 0.225])

SUPPORTED = ("vgg16",)


class ExportError(Exception):
    pass


@dataclass
class ExportResult:
    csfw_path: str
    manifest: dict


def _load_source(model_name, source_weights=None):
    import torchvision.models as models

    if model_name not in SUPPORTED:
        raise ExportError(f"unsupported source model {model_name!r}, "
                          f"supported: {', '.join(SUPPORTED)}")
    if source_weights:
        net = models.vgg16(weights=None)
        state = torch.load(source_weights, map_location="cpu",
                           weights_only=True)
        net.load_state_dict(state)
    else:
        try:
            net = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise ExportError(
                "could not obtain pretrained weights; pass --source-weights "
                f"with a local checkpoint ({exc})") from exc
    net.eval()
    return net


def _map_layers(net):
    """Walk net.features and name each layer conv{b}_{i} / relu{b}_{i} / pool{b}.

    Returns (records, layer_mapping, dropped). Conv weights stay in torch's
    (out, in, kh, kw) order, which is already the CSFW order.
    """
    records = []
    mapping = {}
    block, conv_idx = 1, 0
    for idx, module in enumerate(net.features):
        source = f"features.{idx}"
        if isinstance(module, torch.nn.Conv2d):
            if module.kernel_size != (3, 3) or module.stride != (1, 1) \
                    or module.padding != (1, 1):
                raise ExportError(f"{source}: unexpected conv geometry "
                                  f"{module.kernel_size}/{module.stride}/"
                                  f"{module.padding}")
            conv_idx += 1
            name = f"conv{block}_{conv_idx}"
            records.append(writer.ConvRecord(
                name,
                module.weight.detach().numpy().astype(np.float64),
                module.bias.detach().numpy().astype(np.float64)))
        elif isinstance(module, torch.nn.ReLU):
            name = f"relu{block}_{conv_idx}"
            records.append(writer.ReluRecord(name))
        elif isinstance(module, torch.nn.MaxPool2d):
            name = f"pool{block}"
            records.append(writer.PoolRecord(name, int(module.kernel_size),
                                             int(module.stride)))
            block += 1
            conv_idx = 0
        else:
            raise ExportError(f"{source}: unexpected layer "
                              f"{type(module).__name__}")
        mapping[source] = name
    dropped = [f"classifier.{i}" for i, _ in enumerate(net.classifier)]
    return records, mapping, dropped


def _fold_normalization(records):
    """Scale first-conv weights by 1/(255*std_c); returns the channel means."""
    first = next(r for r in records if isinstance(r, writer.ConvRecord))
    scale = 1.0 / (255.0 * SOURCE_STD)
    first.weights = first.weights * scale[None, :, None, None]
    return 255.0 * SOURCE_MEAN


def default_tap_indices(net):
    """features indices of the ReLU immediately before each MaxPool2d."""
    indices = []
    prev = None
    for idx, module in enumerate(net.features):
        if isinstance(module, torch.nn.MaxPool2d) \
                and isinstance(prev, torch.nn.ReLU):
            indices.append(idx - 1)
        prev = module
    return indices


def _spot_grid(tensor):
    """16 deterministic probe values: channel 0 on an even 4x4 spatial grid."""
    _, h, w = tensor.shape
    ys = np.linspace(0, h - 1, 4).round().astype(int)
    xs = np.linspace(0, w - 1, 4).round().astype(int)
    return [float(tensor[0, y, x]) for y in ys for x in xs]


def probe_statistics(net, image_path, mapping):
    """Run the probe through the source pipeline and record per-tap stats."""
    image = Image.open(image_path).convert("RGB")
    if image.size != (INPUT_SIZE, INPUT_SIZE):
        raise ExportError(f"probe image must be {INPUT_SIZE}x{INPUT_SIZE}, "
                          f"got {image.size[0]}x{image.size[1]}")
    raw = np.asarray(image, dtype=np.float64).transpose(2, 0, 1)
    normalized = (raw / 255.0 - SOURCE_MEAN[:, None, None]) \
        / SOURCE_STD[:, None, None]
    x = torch.from_numpy(normalized[None]).float()

    tap_indices = set(default_tap_indices(net))
    taps = {}
    with torch.no_grad():
        current = x
        for idx, module in enumerate(net.features):
            current = module(current)
            if idx in tap_indices:
                out = current[0].numpy().astype(np.float64)
                taps[mapping[f"features.{idx}"]] = {
                    "shape": list(out.shape),
                    "mean": float(out.mean()),
                    "max": float(out.max()),
                    "spot_grid": _spot_grid(out),
                }
    return {
        "image_sha256": hashlib.sha256(open(image_path, "rb").read()).hexdigest(),
        "taps": taps,
    }


def export(model_name, out_path, source_weights=None, probe_image=None,
           fixture_path=None, source_id=None):
    net = _load_source(model_name, source_weights)
    records, mapping, dropped = _map_layers(net)
    means = _fold_normalization(records)

    payload = writer.serialize(records, means)
    with open(out_path, "wb") as fh:
        fh.write(payload)

    manifest = {
        "source_model": source_id or model_name,
        "layer_mapping": mapping,
        "dropped_layers": dropped,
        "channel_means": [float(m) for m in means],
        "weight_order": "out,in,kh,kw",
        "convolution_convention": "cross-correlation (no kernel flip)",
        "normalization_folding": "first conv weights scaled by 1/(255*std)",
        "csfw_sha256": hashlib.sha256(payload).hexdigest(),
    }
    if probe_image:
        fixture = probe_statistics(net, probe_image, mapping)
        if fixture_path:
            with open(fixture_path, "w", encoding="utf-8") as fh:
                json.dump(fixture, fh, sort_keys=True, indent=2)
        manifest["probe"] = fixture

    manifest_path = str(out_path) + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return ExportResult(str(out_path), manifest)
