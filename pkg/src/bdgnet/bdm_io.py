"""File formats for masks and boundary distribution maps.

Masks travel as 8-bit single-channel images (>= 128 means foreground).
BDMs can be written two ways: an 8-bit preview image scaled by 255 for
eyeballing, and a raw grid that round-trips exactly. The raw file is a
single ASCII header line

    bdm <height> <width> <sigma> <normalized>\\n

followed by height*width little-endian float32 values in row-major order.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .bdm import BoundaryDistributionMap, as_binary_mask

_RAW_MAGIC = "bdm"


def load_mask(path) -> np.ndarray:
    """Read an image file as a binary mask (threshold at 128 after
    conversion to 8-bit grayscale).

    16-bit inputs are reduced to 8-bit by dropping the low byte; color
    inputs go through the standard luma conversion. Both rules are fixed
    so ingestion is deterministic across sources.
    """
    img = Image.open(path)
    if img.mode in ("I", "I;16", "I;16B", "I;16L"):
        arr = np.asarray(img, dtype=np.int64)
        arr = np.clip(arr // 256, 0, 255).astype(np.uint8)
    else:
        arr = np.asarray(img.convert("L"))
    return (arr >= 128).astype(np.uint8)


def save_mask(path, mask) -> None:
    m = as_binary_mask(mask)
    Image.fromarray((m * 255).astype(np.uint8)).save(path)


def save_bdm_preview(path, bdm: BoundaryDistributionMap) -> None:
    """Write an 8-bit inspection image of the BDM (values scaled by 255).

    Unnormalized maps peak well below 1, so the preview of those is dim
    by design; use the raw format when exact values matter.
    """
    scaled = np.clip(np.rint(bdm.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(scaled).save(path)


def save_bdm_raw(path, bdm: BoundaryDistributionMap) -> None:
    header = f"{_RAW_MAGIC} {bdm.height} {bdm.width} {bdm.sigma!r} {int(bdm.normalized)}\n"
    payload = np.ascontiguousarray(bdm.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)


def load_bdm_raw(path) -> BoundaryDistributionMap:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 5 or header[0] != _RAW_MAGIC:
            raise ValueError(f"{path}: not a raw BDM file")
        height, width = int(header[1]), int(header[2])
        sigma = float(header[3])
        normalized = bool(int(header[4]))
        payload = fh.read(4 * height * width)
    if len(payload) != 4 * height * width:
        raise ValueError(f"{path}: truncated BDM payload")
    values = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return BoundaryDistributionMap(values=values.copy(), sigma=sigma, normalized=normalized)
