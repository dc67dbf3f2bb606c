"""Evaluation suite: mean Dice, mean IoU, weighted F-measure, S-measure,
max E-measure, and MAE.

All metrics are computed per image on a prediction map in [0, 1] against
a binary ground truth, then averaged arithmetically over a dataset.
Dice and IoU binarize the prediction (threshold 0.5 by default); the
other four consume the continuous map. Degenerate ground truths follow
the conventions listed on each function; rows hitting the undefined
weighted-F case are flagged but keep their convention value so dataset
means stay well defined.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .bdm import as_binary_mask

EPS = float(np.finfo(np.float64).eps)

CSV_COLUMNS = ("image_id", "dice", "iou", "fbw", "smeasure", "emeasure", "mae")


def as_prediction_map(pred) -> np.ndarray:
    arr = np.asarray(pred, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"prediction map must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("prediction map must be non-empty")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("prediction values must lie in [0, 1]")
    return arr


def binarize(pred, threshold: float) -> np.ndarray:
    """Threshold a prediction map: 1 where value >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return (as_prediction_map(pred) >= threshold).astype(np.uint8)


def _counts(pred_bin, gt):
    p = as_binary_mask(pred_bin).astype(bool)
    g = as_binary_mask(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    inter = int(np.logical_and(p, g).sum())
    return inter, int(p.sum()), int(g.sum())


def dice(pred_bin, gt) -> float:
    """2|P n G| / (|P| + |G|); 1 when both masks are empty."""
    inter, np_, ng = _counts(pred_bin, gt)
    if np_ + ng == 0:
        return 1.0
    return 2.0 * inter / (np_ + ng)


def iou(pred_bin, gt) -> float:
    """|P n G| / |P u G|; 1 when both masks are empty."""
    inter, np_, ng = _counts(pred_bin, gt)
    union = np_ + ng - inter
    if union == 0:
        return 1.0
    return inter / union


def mae(pred, gt) -> float:
    """Mean absolute per-pixel error."""
    p = as_prediction_map(pred)
    g = as_binary_mask(gt).astype(np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.abs(p - g).mean())


def _fspecial_gaussian(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    kernel = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def f_beta_weighted(pred, gt, beta2: float = 1.0) -> float:
    """Weighted F-measure.

    Errors at background pixels are replaced by the error at their
    nearest foreground pixel, blurred with a 7x7 Gaussian (sigma 5) to
    model spatial dependency, kept only where that lowers a foreground
    pixel's error, and background errors are further scaled by a
    distance-decay term before weighted precision/recall are combined.
    An empty ground truth leaves the measure undefined; 0 is reported.
    """
    p = as_prediction_map(pred)
    g = as_binary_mask(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    fg = g.astype(bool)
    if not fg.any():
        return 0.0

    err = np.abs(p - g.astype(np.float64))
    dist, nearest = ndimage.distance_transform_edt(~fg, return_indices=True)
    err_prop = err.copy()
    bg = ~fg
    err_prop[bg] = err[nearest[0][bg], nearest[1][bg]]

    kernel = _fspecial_gaussian(7, 5.0)
    blurred = ndimage.correlate(err_prop, kernel, mode="constant", cval=0.0)
    min_err = err.copy()
    take = fg & (blurred < err)
    min_err[take] = blurred[take]

    decay = np.ones_like(err)
    decay[bg] = 2.0 - np.exp(math.log(0.5) / 5.0 * dist[bg])
    weighted_err = min_err * decay

    n_fg = float(fg.sum())
    tp_w = n_fg - float(weighted_err[fg].sum())
    fp_w = float(weighted_err[bg].sum())
    recall = 1.0 - float(weighted_err[fg].mean())
    precision = tp_w / (EPS + tp_w + fp_w)
    return float((1.0 + beta2) * precision * recall / (EPS + beta2 * precision + recall))


def _object_similarity(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    if values.size > 1:
        sigma = float(values.std(ddof=1))
    else:
        sigma = 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def _region_ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x = float(p.mean())
    y = float(g.mean())
    sigma_x = float(((p - x) ** 2).sum()) / (n - 1 + EPS)
    sigma_y = float(((g - y) ** 2).sum()) / (n - 1 + EPS)
    sigma_xy = float(((p - x) * (g - y)).sum()) / (n - 1 + EPS)
    aleph = 4.0 * x * y * sigma_xy
    beth = (x * x + y * y) * (sigma_x + sigma_y)
    if aleph != 0.0:
        return aleph / (beth + EPS)
    if beth == 0.0:
        return 1.0
    return 0.0


def _centroid_1based(g: np.ndarray) -> tuple[int, int]:
    h, w = g.shape
    total = g.sum()
    rows = np.arange(1, h + 1, dtype=np.float64)
    cols = np.arange(1, w + 1, dtype=np.float64)
    row_c = math.floor(float((g.sum(axis=1) * rows).sum()) / total + 0.5)
    col_c = math.floor(float((g.sum(axis=0) * cols).sum()) / total + 0.5)
    return int(row_c), int(col_c)


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structural similarity between map and mask.

    Combines an object term (foreground/background mean-and-dispersion
    similarity) with a region term (per-quadrant SSIM around the ground
    truth centroid), equally weighted by default. All-background ground
    truth scores 1 - mean(pred); all-foreground scores mean(pred).
    """
    p = as_prediction_map(pred)
    g = as_binary_mask(gt).astype(np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    y = g.mean()
    if y == 0.0:
        return float(1.0 - p.mean())
    if y == 1.0:
        return float(p.mean())

    fg = g == 1.0
    object_term = y * _object_similarity(p[fg]) + (1.0 - y) * _object_similarity(
        (1.0 - p)[~fg]
    )

    row_c, col_c = _centroid_1based(g)
    h, w = g.shape
    area = float(h * w)
    blocks = []
    for pm, gm in (
        (p[:row_c, :col_c], g[:row_c, :col_c]),
        (p[:row_c, col_c:], g[:row_c, col_c:]),
        (p[row_c:, :col_c], g[row_c:, :col_c]),
        (p[row_c:, col_c:], g[row_c:, col_c:]),
    ):
        blocks.append((pm, gm, pm.size / area))
    region_term = sum(weight * _region_ssim(pm, gm) for pm, gm, weight in blocks)

    score = alpha * object_term + (1.0 - alpha) * region_term
    return float(max(score, 0.0))


def _alignment_score(pred_bin: np.ndarray, g: np.ndarray) -> float:
    if g.sum() == 0:
        enhanced = 1.0 - pred_bin
    elif (1 - g).sum() == 0:
        enhanced = pred_bin.astype(np.float64)
    else:
        g_c = g - g.mean()
        p_c = pred_bin - pred_bin.mean()
        align = 2.0 * g_c * p_c / (g_c * g_c + p_c * p_c + EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def e_measure_max(pred, gt) -> float:
    """Max enhanced-alignment measure over the 256 thresholds k/255.

    Each threshold binarizes the prediction; the alignment compares the
    mean-centered binary map with the mean-centered ground truth, and
    the enhanced score averages (1 + alignment)^2 / 4 over pixels.
    Degenerate ground truths score the enhanced matrix directly as
    1 - map (all background) or map (all foreground).
    """
    p = as_prediction_map(pred)
    g = as_binary_mask(gt).astype(np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    best = 0.0
    for k in range(256):
        binary = (p >= k / 255.0).astype(np.float64)
        best = max(best, _alignment_score(binary, g))
    return best


@dataclass
class MetricRow:
    image_id: str
    dice: float
    iou: float
    fbw: float
    smeasure: float
    emeasure: float
    mae: float
    degenerate: bool = False  # empty-GT weighted-F convention applied

    def values(self) -> tuple[float, ...]:
        return (self.dice, self.iou, self.fbw, self.smeasure, self.emeasure, self.mae)


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.rows)

    def means(self) -> dict[str, float]:
        if not self.rows:
            raise ValueError("empty report has no means")
        stacked = np.array([row.values() for row in self.rows], dtype=np.float64)
        keys = CSV_COLUMNS[1:]
        return dict(zip(keys, stacked.mean(axis=0)))


def _resample_to(pred: np.ndarray, shape) -> np.ndarray:
    if pred.shape == tuple(shape):
        return pred
    from PIL import Image

    img = Image.fromarray(pred.astype(np.float32), mode="F")
    resized = img.resize((shape[1], shape[0]), Image.BILINEAR)
    return np.clip(np.asarray(resized, dtype=np.float64), 0.0, 1.0)


def evaluate_pair(pred, gt, image_id: str = "", threshold: float = 0.5) -> MetricRow:
    g = as_binary_mask(gt)
    p = _resample_to(as_prediction_map(pred), g.shape)
    p_bin = binarize(p, threshold)
    return MetricRow(
        image_id=image_id,
        dice=dice(p_bin, g),
        iou=iou(p_bin, g),
        fbw=f_beta_weighted(p, g),
        smeasure=s_measure(p, g),
        emeasure=e_measure_max(p, g),
        mae=mae(p, g),
        degenerate=bool(g.sum() == 0),
    )


def evaluate_dataset(pairs, ids=None, threshold: float = 0.5) -> MetricsReport:
    """Evaluate (prediction, ground truth) pairs; predictions whose size
    differs from the ground truth are bilinearly resampled first."""
    report = MetricsReport()
    for index, (pred, gt) in enumerate(pairs):
        image_id = ids[index] if ids is not None else f"image_{index:04d}"
        report.rows.append(evaluate_pair(pred, gt, image_id=image_id, threshold=threshold))
    return report


def write_report_csv(report: MetricsReport, path) -> None:
    means = report.means()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            writer.writerow([row.image_id] + [f"{v:.6f}" for v in row.values()])
        writer.writerow(["mean"] + [f"{means[k]:.6f}" for k in CSV_COLUMNS[1:]])


def format_report_table(report: MetricsReport) -> str:
    """Aligned text table, one row per image plus the dataset means."""
    header = ["image", "mean Dice", "mean IoU", "wFmeasure", "Smeasure", "maxEmeasure", "MAE"]
    lines = [" ".join(f"{h:>12}" for h in header)]
    for row in report.rows:
        cells = [f"{row.image_id:>12}"] + [f"{v:>12.4f}" for v in row.values()]
        lines.append(" ".join(cells))
    means = report.means()
    cells = [f"{'mean':>12}"] + [f"{means[k]:>12.4f}" for k in CSV_COLUMNS[1:]]
    lines.append(" ".join(cells))
    return "\n".join(lines)
