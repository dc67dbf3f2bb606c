"""Corpus ingestion, deterministic splits, preprocessing, augmentation.

Dataset layouts are described by a small INI file mapping each dataset
name to its image directory, mask directory, and filename globs::

    [kvasir]
    images = images
    masks = masks
    image_glob = *.jpg
    mask_glob = *.jpg

Images and masks are paired by filename stem; ingestion is sorted by stem
so results do not depend on filesystem order.
"""

from __future__ import annotations

import configparser
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .bdm import ideal_bdm
from .bdm_io import load_mask

DEFAULT_CHANNEL_MEAN = (0.485, 0.456, 0.406)
DEFAULT_CHANNEL_STD = (0.229, 0.224, 0.225)


class DataError(Exception):
    """Raised for unreadable, unpaired, or inconsistent dataset files."""


@dataclass
class DatasetLayout:
    name: str
    image_dir: str
    mask_dir: str
    image_glob: str = "*.png"
    mask_glob: str = "*.png"


@dataclass
class SampleRecord:
    image_id: str
    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    source_dataset: str


@dataclass
class SplitManifest:
    seed: int
    train: dict[str, list[str]] = field(default_factory=dict)
    test: dict[str, list[str]] = field(default_factory=dict)


def read_layout(path) -> list[DatasetLayout]:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise DataError(f"layout file not found or unreadable: {path}")
    layouts = []
    for section in parser.sections():
        entry = parser[section]
        try:
            layouts.append(
                DatasetLayout(
                    name=section,
                    image_dir=entry["images"],
                    mask_dir=entry["masks"],
                    image_glob=entry.get("image_glob", "*.png"),
                    mask_glob=entry.get("mask_glob", "*.png"),
                )
            )
        except KeyError as exc:
            raise DataError(f"layout section [{section}] missing key {exc}") from exc
    if not layouts:
        raise DataError(f"layout file declares no datasets: {path}")
    return layouts


def ingest(root, layouts) -> list[SampleRecord]:
    """Load every image/mask pair for the given layouts.

    Pairs are matched by stem. An image without a mask, a mask without an
    image, or a size mismatch raises a DataError naming the offender.
    """
    if isinstance(layouts, (str, Path)):
        layouts = read_layout(layouts)
    root = Path(root)
    records: list[SampleRecord] = []
    for layout in layouts:
        image_dir = root / layout.image_dir
        mask_dir = root / layout.mask_dir
        if not image_dir.is_dir():
            raise DataError(f"{layout.name}: image directory missing: {image_dir}")
        if not mask_dir.is_dir():
            raise DataError(f"{layout.name}: mask directory missing: {mask_dir}")
        images = {p.stem: p for p in image_dir.glob(layout.image_glob)}
        masks = {p.stem: p for p in mask_dir.glob(layout.mask_glob)}
        missing_masks = sorted(set(images) - set(masks))
        if missing_masks:
            raise DataError(f"{layout.name}: no mask for stems {missing_masks}")
        missing_images = sorted(set(masks) - set(images))
        if missing_images:
            raise DataError(f"{layout.name}: no image for stems {missing_images}")
        if not images:
            raise DataError(f"{layout.name}: no files match {layout.image_glob} in {image_dir}")
        for stem in sorted(images):
            image = np.asarray(Image.open(images[stem]).convert("RGB"))
            mask = load_mask(masks[stem])
            if image.shape[:2] != mask.shape:
                raise DataError(
                    f"{layout.name}/{stem}: image {image.shape[:2]} vs mask {mask.shape}"
                )
            records.append(
                SampleRecord(
                    image_id=stem, image=image, mask=mask, source_dataset=layout.name
                )
            )
    return records


def make_split(records, train_count: int, seed: int) -> SplitManifest:
    """Deterministic shuffle under the seed; the first ``train_count``
    records form the training set, the rest the test set."""
    by_dataset: dict[str, list[str]] = {}
    for record in records:
        by_dataset.setdefault(record.source_dataset, []).append(record.image_id)
    manifest = SplitManifest(seed=seed)
    for name, ids in sorted(by_dataset.items()):
        if not 0 <= train_count <= len(ids):
            raise DataError(
                f"{name}: train_count {train_count} out of range for {len(ids)} records"
            )
        order = sorted(ids)
        random.Random(seed).shuffle(order)
        manifest.train[name] = sorted(order[:train_count])
        manifest.test[name] = sorted(order[train_count:])
    return manifest


def save_split(manifest: SplitManifest, path) -> None:
    lines = [f"seed = {manifest.seed}", ""]
    for name in sorted(manifest.train):
        lines.append(f"[{name}.train]")
        lines.extend(manifest.train[name])
        lines.append("")
        lines.append(f"[{name}.test]")
        lines.extend(manifest.test.get(name, []))
        lines.append("")
    Path(path).write_text("\n".join(lines))


def load_split(path) -> SplitManifest:
    manifest = SplitManifest(seed=0)
    section = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("seed"):
            manifest.seed = int(line.split("=")[1])
        elif line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            name, kind = section.rsplit(".", 1)
            target = manifest.train if kind == "train" else manifest.test
            target.setdefault(name, [])
        elif section is not None:
            name, kind = section.rsplit(".", 1)
            (manifest.train if kind == "train" else manifest.test)[name].append(line)
    return manifest


def preprocess_image(
    image: np.ndarray, size: int, mean=DEFAULT_CHANNEL_MEAN, std=DEFAULT_CHANNEL_STD
) -> torch.Tensor:
    """Bilinear resize to size x size, scale to [0,1], standardize per
    channel; returns a (3, size, size) float32 tensor."""
    img = Image.fromarray(image).resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def preprocess(
    record: SampleRecord,
    size: int,
    sigma: float = 5.0,
    normalized_bdm: bool = True,
    mean=DEFAULT_CHANNEL_MEAN,
    std=DEFAULT_CHANNEL_STD,
):
    """Resize and standardize one record into training tensors.

    The image is resized bilinearly and standardized per channel; the
    mask is resized with nearest neighbor so it stays binary; the ideal
    BDM is computed from the resized mask, never by resizing a BDM.
    Returns (image (3,s,s), mask (1,s,s), bdm (1,s,s)) float32 tensors.
    """
    image_t = preprocess_image(record.image, size, mean=mean, std=std)

    mask_img = Image.fromarray((record.mask * 255).astype(np.uint8)).resize(
        (size, size), Image.NEAREST
    )
    mask = (np.asarray(mask_img) >= 128).astype(np.float32)
    mask_t = torch.from_numpy(mask)[None]

    bdm = ideal_bdm(mask.astype(np.uint8), sigma=sigma, normalized=normalized_bdm)
    bdm_t = torch.from_numpy(bdm.values.astype(np.float32))[None]
    return image_t, mask_t, bdm_t


def augment(triple, seed: int):
    """Random horizontal/vertical flips and a 90-degree rotation applied
    identically to image, mask, and BDM; deterministic under the seed.

    The transforms are grid isometries, so the transformed BDM equals the
    BDM regenerated from the transformed mask.
    """
    image, mask, bdm = triple
    rng = random.Random(seed)
    flip_h = rng.random() < 0.5
    flip_v = rng.random() < 0.5
    quarter_turns = rng.randrange(4)

    def apply(t):
        if flip_h:
            t = torch.flip(t, dims=(-1,))
        if flip_v:
            t = torch.flip(t, dims=(-2,))
        if quarter_turns:
            t = torch.rot90(t, k=quarter_turns, dims=(-2, -1))
        return t.contiguous()

    return apply(image), apply(mask), apply(bdm)
