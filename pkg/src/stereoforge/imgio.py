"""Image files and resampling.

PNG goes through Pillow; binary PPM (P6) is read and written natively so
tests have a zero-dependency image path. Pixels are float32 RGB in [0, 1]
as (H, W, 3) arrays; 8-bit channels map to float via /255.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


class ImageError(ValueError):
    """Unreadable or unsupported image file."""


def read_image(path):
    """Decode a PNG or P6 PPM file to (H, W, 3) float32 in [0, 1]."""
    path = str(path)
    if path.lower().endswith(".ppm"):
        return _read_ppm(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as e:
        raise ImageError(f"cannot decode {path}: {e}") from None
    return arr / np.float32(255.0)


def write_image(path, image):
    """Encode a [0, 1] float image as 8-bit PNG or P6 PPM by extension."""
    path = str(path)
    arr = to_uint8(image)
    if path.lower().endswith(".ppm"):
        _write_ppm(path, arr)
        return
    Image.fromarray(arr, mode="RGB").save(path)


def to_uint8(image):
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"expected (H, W, 3) image, got shape {img.shape}")
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    i = 0
    while len(fields) < 4:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i < len(data) and data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ImageError(f"truncated PPM header in {path}")
        fields.append(data[i:j])
        i = j
    if fields[0] != b"P6":
        raise ImageError(f"{path}: only binary P6 PPM is supported")
    try:
        w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError:
        raise ImageError(f"malformed PPM header in {path}") from None
    if maxval != 255:
        raise ImageError(f"{path}: only maxval 255 PPM is supported")
    i += 1  # single whitespace byte after maxval
    pixels = data[i:i + w * h * 3]
    if len(pixels) < w * h * 3:
        raise ImageError(f"truncated PPM pixel data in {path}")
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)
    return arr.astype(np.float32) / np.float32(255.0)


def _write_ppm(path, arr):
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def bilinear_resize(image, out_hw):
    """Bilinear resample to (out_h, out_w) with half-pixel alignment.

    Source coordinate for output index t is (t + 0.5) * in/out - 0.5,
    clamped at the borders. Works on (H, W) maps and (H, W, C) images; a
    same-size call is an exact copy.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C), got shape {img.shape}")
    h, w = img.shape[:2]
    oh, ow = int(out_hw[0]), int(out_hw[1])
    if oh < 1 or ow < 1:
        raise ValueError(f"output dims must be >= 1, got {(oh, ow)}")
    if (oh, ow) == (h, w):
        return img.copy()

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(src).astype(np.int64)
        frac = (src - lo).astype(np.float32)
        lo0 = np.clip(lo, 0, n_in - 1)
        lo1 = np.clip(lo + 1, 0, n_in - 1)
        return lo0, lo1, frac

    y0, y1, fy = axis_weights(h, oh)
    x0, x1, fx = axis_weights(w, ow)
    fy = fy.reshape(oh, 1) if img.ndim == 2 else fy.reshape(oh, 1, 1)
    fx = fx.reshape(1, ow) if img.ndim == 2 else fx.reshape(1, ow, 1)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def nearest_resize(image, out_hw):
    """Nearest-neighbor resample (used for label maps)."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    oh, ow = int(out_hw[0]), int(out_hw[1])
    ys = np.clip(np.floor((np.arange(oh) + 0.5) * (h / oh)).astype(np.int64), 0, h - 1)
    xs = np.clip(np.floor((np.arange(ow) + 0.5) * (w / ow)).astype(np.int64), 0, w - 1)
    return img[ys][:, xs].copy()


def to_nchw(images):
    """Stack (H, W, 3) images into a network batch array (N, 3, H, W)."""
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    if arr.ndim != 4 or arr.shape[3] != 3:
        raise ValueError(f"expected (H, W, 3) images, got stacked shape {arr.shape}")
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def from_nchw(batch):
    """Split a (N, 3, H, W) array back into a list of (H, W, 3) images."""
    arr = np.asarray(batch, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValueError(f"expected (N, 3, H, W), got {arr.shape}")
    return [np.ascontiguousarray(a.transpose(1, 2, 0)) for a in arr]
