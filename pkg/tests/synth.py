"""Synthetic blob datasets for training and CLI tests."""

from __future__ import annotations

import numpy as np
from PIL import Image

from bdgnet.data import SampleRecord


def blob_record(seed: int, size: int = 128, name: str | None = None) -> SampleRecord:
    """One image with a bright elliptical blob on textured background;
    the mask marks the blob."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.integers(size // 4, 3 * size // 4, size=2)
    ry = rng.integers(size // 8, size // 4)
    rx = rng.integers(size // 8, size // 4)
    mask = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0).astype(np.uint8)

    background = rng.integers(20, 90, size=(size, size, 3)).astype(np.float64)
    foreground = np.array([180.0, 90.0, 120.0]) + rng.normal(0, 12, size=(size, size, 3))
    image = np.where(mask[..., None] == 1, foreground, background)
    image = np.clip(image, 0, 255).astype(np.uint8)
    return SampleRecord(
        image_id=name or f"blob{seed:03d}",
        image=image,
        mask=mask,
        source_dataset="synthetic",
    )


def write_blob_dataset(root, count: int = 8, size: int = 128, seed0: int = 100):
    """Materialize blob records as an on-disk dataset with a layout file."""
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    records = [blob_record(seed0 + i, size=size) for i in range(count)]
    for record in records:
        Image.fromarray(record.image).save(root / "images" / f"{record.image_id}.png")
        Image.fromarray((record.mask * 255).astype(np.uint8)).save(
            root / "masks" / f"{record.image_id}.png"
        )
    layout = root / "layout.ini"
    layout.write_text(
        "[synthetic]\nimages = images\nmasks = masks\n"
        "image_glob = *.png\nmask_glob = *.png\n"
    )
    return layout, records
