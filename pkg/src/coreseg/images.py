"""Image I/O: PNG, the raw float32 single-channel format, and palettes.

Images are float64 arrays of shape (channels, height, width) holding raw
pixel values (0..255 for PNG, unscaled sensor values for the raw format).

Raw format (for SAR-like single-channel data), little-endian:
    u32 width, u32 height, then f32 values in row-major order.

Palette file: one class per line, "R,G,B name" (or "V name" for grayscale
labels), in index order. A line starting with "rest" declares the catch-all
class for colors not listed; it may optionally carry its own color:
"rest" | "rest name" | "rest R,G,B name". Exactly one rest line is required.
"""
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import FormatError, ShapeError, ValidationError


def load_image(path):
    """Load a PNG (RGB or grayscale) or .raw image as a (C, H, W) array."""
    path = str(path)
    if path.endswith(".raw"):
        return read_raw(path)
    img = Image.open(path)
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB" if img.mode in ("RGBA", "P", "CMYK") else "L")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def read_raw(path):
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise FormatError(f"{path}: truncated raw header")
        width, height = struct.unpack("<2I", header)
        payload = fh.read(4 * width * height)
    if len(payload) != 4 * width * height:
        raise FormatError(f"{path}: truncated raw payload")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return values.reshape(1, height, width)


def write_raw(path, image):
    """Write a single-channel (1, H, W) or (H, W) array as .raw float32."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        if image.shape[0] != 1:
            raise ShapeError(f"raw format is single-channel, got {image.shape}")
        image = image[0]
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<2I", width, height))
        fh.write(image.astype("<f4").tobytes())


@dataclass
class PaletteEntry:
    color: tuple
    index: int
    name: str


@dataclass
class Palette:
    entries: list[PaletteEntry]  # colored classes only, excludes rest
    rest_class: int
    rest_name: str = "rest"
    rest_color: tuple | None = None

    @property
    def num_classes(self):
        return len(self.entries) + 1

    @property
    def class_names(self):
        names = [None] * self.num_classes
        names[self.rest_class] = self.rest_name
        for entry in self.entries:
            names[entry.index] = entry.name
        return names

    def color_components(self):
        return len(self.entries[0].color) if self.entries else 1

    def index_to_color(self):
        """Color per class index; rest defaults to all-zero if not given."""
        comps = self.color_components()
        colors = [None] * self.num_classes
        colors[self.rest_class] = self.rest_color or (0,) * comps
        for entry in self.entries:
            colors[entry.index] = entry.color
        return colors


def _parse_color(text):
    return tuple(int(part) for part in text.split(","))


def load_palette(path):
    entries = []
    rest_class = None
    rest_name = "rest"
    rest_color = None
    index = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 2)
            if parts[0] == "rest":
                if rest_class is not None:
                    raise ValidationError(f"{path}:{lineno}: second rest line")
                rest_class = index
                if len(parts) >= 2 and "," in parts[1]:
                    rest_color = _parse_color(parts[1])
                    if len(parts) == 3:
                        rest_name = parts[2]
                elif len(parts) >= 2:
                    rest_name = " ".join(parts[1:])
            else:
                if len(parts) < 2:
                    raise ValidationError(f"{path}:{lineno}: expected 'COLOR name'")
                entries.append(PaletteEntry(_parse_color(parts[0]), index,
                                            " ".join(parts[1:])))
            index += 1
    if rest_class is None:
        raise ValidationError(f"{path}: palette has no rest line")
    comps = {len(e.color) for e in entries}
    if len(comps) > 1:
        raise ValidationError(f"{path}: mixed color arities {sorted(comps)}")
    return Palette(entries, rest_class, rest_name, rest_color)


def _pack_colors(arr):
    # arr: (C, H, W) integer-valued; pack channels into one int per pixel
    packed = np.zeros(arr.shape[1:], dtype=np.int64)
    for c in range(arr.shape[0]):
        packed |= arr[c].astype(np.int64) << (8 * c)
    return packed


def labels_from_image(label_image, palette: Palette):
    """Map a (C, H, W) label image to a (H, W) class-index array."""
    comps = palette.color_components()
    if label_image.shape[0] != comps:
        raise ShapeError(
            f"label image has {label_image.shape[0]} channels, palette colors "
            f"have {comps} components")
    packed = _pack_colors(np.rint(label_image).astype(np.int64))
    out = np.full(packed.shape, palette.rest_class, dtype=np.int64)
    for entry in palette.entries:
        key = sum(v << (8 * i) for i, v in enumerate(entry.color))
        out[packed == key] = entry.index
    return out


def save_label_png(path, class_image, palette: Palette):
    """Render a (H, W) class-index array to PNG using the palette colors."""
    colors = palette.index_to_color()
    comps = palette.color_components()
    lut = np.zeros((palette.num_classes, comps), dtype=np.uint8)
    for idx, color in enumerate(colors):
        lut[idx] = color
    rendered = lut[class_image]
    if comps == 1:
        Image.fromarray(rendered[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(rendered, mode="RGB").save(path)
