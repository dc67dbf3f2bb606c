"""Training loop: seeded, single worker, fully reproducible.

Samples are preprocessed once at the configured resolution; every
iteration draws a batch from a seeded shuffle, applies seeded
augmentation, and takes one optimizer step on the composite loss. Loss
components are logged per iteration and written as CSV.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .data import DEFAULT_CHANNEL_MEAN, DEFAULT_CHANNEL_STD, SampleRecord, augment, preprocess
from .losses import LossConfig, total_loss
from .metrics import binarize, dice
from .network import BDGNet, NetworkConfig, build_network

LOG_COLUMNS = ("iteration", "total", "bdm", "wbce", "wiou")


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-4
    batch_size: int = 16
    iterations: int = 1000
    seed: int = 0
    checkpoint_every: int = 0  # 0 means only at the end
    augment: bool = True

    def validate(self) -> "TrainConfig":
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.iterations < 1:
            raise ValueError("lr must be positive; batch_size and iterations >= 1")
        return self


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces a NaN or infinite loss."""

    def __init__(self, iteration: int, batch_ids: list[str]):
        super().__init__(
            f"non-finite loss at iteration {iteration}; offending batch: {batch_ids}"
        )
        self.iteration = iteration
        self.batch_ids = batch_ids


@dataclass
class TrainResult:
    net: BDGNet
    log_rows: list[dict] = field(default_factory=list)
    checkpoint_dir: Path | None = None
    final_train_dice: float | None = None


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed & 0xFFFFFFFF)
    torch.manual_seed(seed)


def _batch_order(n: int, iterations: int, batch_size: int, seed: int) -> list[list[int]]:
    rng = random.Random(seed)
    order: list[int] = []
    batches = []
    for _ in range(iterations):
        while len(order) < batch_size:
            epoch = list(range(n))
            rng.shuffle(epoch)
            order.extend(epoch)
        batches.append(order[:batch_size])
        order = order[batch_size:]
    return batches


def training_dice(net: BDGNet, tensors, batch_size: int = 4) -> float:
    """Mean Dice of the network over preprocessed (image, mask, bdm)
    triples, at training resolution, threshold 0.5."""
    net.eval()
    scores = []
    with torch.no_grad():
        for start in range(0, len(tensors), batch_size):
            chunk = tensors[start : start + batch_size]
            images = torch.stack([t[0] for t in chunk])
            probs = torch.sigmoid(net(images).seg_logits)
            for (_, mask, _), prob in zip(chunk, probs):
                pred_bin = binarize(prob[0].numpy().astype(np.float64), 0.5)
                scores.append(dice(pred_bin, mask[0].numpy().astype(np.uint8)))
    return float(np.mean(scores))


def train(
    records: list[SampleRecord],
    net_cfg: NetworkConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    out_dir,
    encoder=None,
    stop_dice: float | None = None,
    stop_check_every: int = 25,
    channel_mean=DEFAULT_CHANNEL_MEAN,
    channel_std=DEFAULT_CHANNEL_STD,
) -> TrainResult:
    """Run the training loop and write ``loss_log.csv`` plus a final
    checkpoint under ``out_dir``.

    ``stop_dice`` optionally ends training early once the train-set mean
    Dice reaches the given value (checked every ``stop_check_every``
    iterations); the iteration budget is an upper bound either way.
    """
    net_cfg.validate()
    loss_cfg.validate()
    train_cfg.validate()
    if not records:
        raise ValueError("no training records")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    seed_everything(train_cfg.seed)
    tensors = [
        preprocess(
            r,
            net_cfg.input_size,
            sigma=net_cfg.sigma,
            normalized_bdm=True,
            mean=channel_mean,
            std=channel_std,
        )
        for r in records
    ]
    ids = [r.image_id for r in records]

    net = build_network(net_cfg, encoder=encoder)
    optimizer = torch.optim.Adam(net.parameters(), lr=train_cfg.lr)
    batches = _batch_order(len(records), train_cfg.iterations, train_cfg.batch_size, train_cfg.seed)

    log_rows: list[dict] = []
    final_dice = None
    for iteration, batch_idx in enumerate(batches, start=1):
        batch = []
        for slot, index in enumerate(batch_idx):
            triple = tensors[index]
            if train_cfg.augment:
                aug_seed = train_cfg.seed * 1_000_003 + iteration * 131 + slot
                triple = augment(triple, seed=aug_seed)
            batch.append(triple)
        images = torch.stack([t[0] for t in batch])
        masks = torch.stack([t[1] for t in batch])
        bdms = torch.stack([t[2] for t in batch])

        net.train()
        optimizer.zero_grad()
        output = net(images)
        breakdown = total_loss(output, masks, bdms, loss_cfg)
        if net_cfg.use_bdgm:
            loss = breakdown.total
            bdm_val = breakdown.bdm.item()
        else:
            loss = breakdown.wbce + breakdown.wiou
            bdm_val = 0.0
        if not torch.isfinite(loss):
            raise NonFiniteLossError(iteration, [ids[i] for i in batch_idx])
        loss.backward()
        optimizer.step()

        wbce_val = breakdown.wbce.item()
        wiou_val = breakdown.wiou.item()
        log_rows.append(
            {
                "iteration": iteration,
                "total": bdm_val + wbce_val + wiou_val,
                "bdm": bdm_val,
                "wbce": wbce_val,
                "wiou": wiou_val,
            }
        )

        if train_cfg.checkpoint_every and iteration % train_cfg.checkpoint_every == 0:
            save_checkpoint(net, out_dir / f"checkpoint_{iteration:06d}")
        if stop_dice is not None and iteration % stop_check_every == 0:
            final_dice = training_dice(net, tensors)
            if final_dice >= stop_dice:
                break

    write_loss_log(log_rows, out_dir / "loss_log.csv")
    checkpoint_dir = save_checkpoint(net, out_dir / "checkpoint_final")
    net.eval()
    return TrainResult(
        net=net, log_rows=log_rows, checkpoint_dir=checkpoint_dir, final_train_dice=final_dice
    )


def write_loss_log(rows: list[dict], path) -> None:
    # full-precision reprs so the total = bdm + wbce + wiou identity
    # survives the round trip through text exactly
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (row[k] if k == "iteration" else repr(row[k])) for k in LOG_COLUMNS})
