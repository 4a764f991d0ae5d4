"""Reading and writing RGB images as (3, H, W) float arrays in [0, 1]."""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import ContractError

_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def write_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    """Binary 8-bit PPM (P6); values are clipped to [0, 1] and rounded."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ContractError(f"write_ppm expects (3, H, W), got {img.shape}")
    _, H, W = img.shape
    pixels = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (W, H))
        fh.write(pixels.tobytes())


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    m = _PPM_HEADER.match(raw)
    if not m:
        raise ContractError(f"{path}: not a binary P6 PPM")
    W, H, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ContractError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    body = np.frombuffer(raw, dtype=np.uint8, count=W * H * 3, offset=m.end())
    return body.reshape(H, W, 3).transpose(2, 0, 1).astype(float) / 255.0


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Load a PPM or PNG (any mode Pillow can convert to RGB)."""
    path = os.fspath(path)
    if path.lower().endswith((".ppm", ".pnm")):
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    return arr.transpose(2, 0, 1)


def write_png(path: str | os.PathLike, img: np.ndarray) -> None:
    from PIL import Image

    pixels = np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(pixels, "RGB").save(path)
