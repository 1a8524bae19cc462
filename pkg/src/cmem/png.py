"""8-bit PNG read/write for float images in [0, 1]."""

import numpy as np
from PIL import Image


def to_bytes(image):
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image):
    """Write a (h, w) grayscale or (h, w, 3) RGB float image."""
    arr = to_bytes(np.asarray(image))
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(arr, mode=mode).save(path, format="PNG")
    return path


def read_png(path):
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float32) / 255.0
