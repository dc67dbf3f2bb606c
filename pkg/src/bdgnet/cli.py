"""Command line interface.

Subcommands:
  gen-bdm   ideal boundary distribution maps from a directory of masks
  train     fit the network on an ingested dataset
  eval      six-metric report for a checkpoint on a dataset
  infer     predicted masks and boundary maps for a directory of images

Every option of the flat ``key = value`` config file (sections
``[network]``, ``[loss]``, ``[train]``, ``[data]``) can be overridden by
the command line flag of the same name.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .bdm import BoundaryDistributionMap, ideal_bdm
from .bdm_io import load_mask, save_bdm_preview, save_bdm_raw
from .checkpoint import load_checkpoint
from .data import (
    DEFAULT_CHANNEL_MEAN,
    DEFAULT_CHANNEL_STD,
    DataError,
    ingest,
    load_split,
    preprocess_image,
)
from .flops import network_flops
from .losses import LossConfig
from .metrics import evaluate_dataset, format_report_table, write_report_csv
from .network import NetworkConfig
from .train import NonFiniteLossError, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _parse_levels(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def load_run_config(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise DataError(f"config file not found: {path}")
    return {section: dict(parser[section]) for section in parser.sections()}


def _merge_network_config(file_cfg: dict, args) -> NetworkConfig:
    section = file_cfg.get("network", {})
    cfg = NetworkConfig(
        decoder_channels=int(section.get("decoder_channels", 32)),
        skip_levels=_parse_levels(section.get("skip_levels", "3,4")),
        sigma=float(section.get("sigma", 5.0)),
        bdgd_a_stages=int(section.get("bdgd_a_stages", 2)),
        input_size=int(section.get("input_size", 352)),
        encoder_kind=section.get("encoder_kind", "toy"),
        use_bdgm=section.get("use_bdgm", "true") == "true",
        use_bdgd=section.get("use_bdgd", "true") == "true",
    )
    if getattr(args, "sigma", None) is not None:
        cfg.sigma = args.sigma
    if getattr(args, "skip_levels", None) is not None:
        cfg.skip_levels = _parse_levels(args.skip_levels)
    if getattr(args, "bdgd_a_stages", None) is not None:
        cfg.bdgd_a_stages = args.bdgd_a_stages
    if getattr(args, "input_size", None) is not None:
        cfg.input_size = args.input_size
    if getattr(args, "decoder_channels", None) is not None:
        cfg.decoder_channels = args.decoder_channels
    if getattr(args, "no_bdgm", False):
        cfg.use_bdgm = False
    if getattr(args, "no_bdgd", False):
        cfg.use_bdgd = False
    return cfg.validate()


def _merge_loss_config(file_cfg: dict, args) -> LossConfig:
    section = file_cfg.get("loss", {})
    cfg = LossConfig(
        lam=float(section.get("lambda", 0.01)),
        weight_kernel=int(section.get("weight_kernel", 31)),
        weight_gain=float(section.get("weight_gain", 5.0)),
        wbce_normalize=section.get("wbce_normalize", "true") == "true",
        bdm_reduction=section.get("bdm_reduction", "mean"),
    )
    if getattr(args, "loss_lambda", None) is not None:
        cfg.lam = args.loss_lambda
    if getattr(args, "weight_kernel", None) is not None:
        cfg.weight_kernel = args.weight_kernel
    if getattr(args, "weight_gain", None) is not None:
        cfg.weight_gain = args.weight_gain
    return cfg.validate()


def _merge_train_config(file_cfg: dict, args) -> TrainConfig:
    section = file_cfg.get("train", {})
    cfg = TrainConfig(
        optimizer=section.get("optimizer", "adam"),
        lr=float(section.get("lr", 1e-4)),
        batch_size=int(section.get("batch_size", 16)),
        iterations=int(section.get("iterations", 1000)),
        seed=int(section.get("seed", 0)),
        checkpoint_every=int(section.get("checkpoint_every", 0)),
        augment=section.get("augment", "true") == "true",
    )
    if getattr(args, "lr", None) is not None:
        cfg.lr = args.lr
    if getattr(args, "batch_size", None) is not None:
        cfg.batch_size = args.batch_size
    if getattr(args, "iterations", None) is not None:
        cfg.iterations = args.iterations
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "checkpoint_every", None) is not None:
        cfg.checkpoint_every = args.checkpoint_every
    if getattr(args, "no_augment", False):
        cfg.augment = False
    return cfg.validate()


def _channel_stats(file_cfg: dict):
    section = file_cfg.get("data", {})
    mean = tuple(float(v) for v in section.get("channel_mean", "").split(",") if v)
    std = tuple(float(v) for v in section.get("channel_std", "").split(",") if v)
    return mean or DEFAULT_CHANNEL_MEAN, std or DEFAULT_CHANNEL_STD


def _select_records(args, file_cfg: dict):
    section = file_cfg.get("data", {})
    root = getattr(args, "data_root", None) or section.get("root")
    layout = getattr(args, "layout", None) or section.get("layout")
    if not root or not layout:
        raise DataError("both a data root and a layout file are required")
    records = ingest(root, layout)
    dataset = getattr(args, "dataset", None)
    if dataset:
        records = [r for r in records if r.source_dataset == dataset]
        if not records:
            raise DataError(f"no records for dataset {dataset!r}")
    split_path = getattr(args, "split", None) or section.get("split")
    subset = getattr(args, "subset", None)
    if split_path and subset:
        manifest = load_split(split_path)
        chosen = set()
        source = manifest.train if subset == "train" else manifest.test
        for name, ids in source.items():
            chosen.update((name, i) for i in ids)
        records = [r for r in records if (r.source_dataset, r.image_id) in chosen]
        if not records:
            raise DataError(f"split subset {subset!r} selected no records")
    return records


def _list_images(directory: Path):
    files = [p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_EXTENSIONS]
    if not files:
        raise DataError(f"no image files in {directory}")
    return files


def cmd_gen_bdm(args) -> int:
    mask_dir = Path(args.mask_dir)
    if not mask_dir.is_dir():
        raise DataError(f"mask directory missing: {mask_dir}")
    out_root = Path(args.out)
    sigmas = args.sigma or [5.0]
    for sigma in sigmas:
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
    files = _list_images(mask_dir)
    for sigma in sigmas:
        out_dir = out_root if len(sigmas) == 1 else out_root / f"sigma_{sigma:g}"
        out_dir.mkdir(parents=True, exist_ok=True)
        for path in files:
            mask = load_mask(path)
            bdm = ideal_bdm(
                mask,
                sigma=sigma,
                normalized=not args.literal_scale,
                symmetric_boundary=args.symmetric_boundary,
            )
            save_bdm_preview(out_dir / f"{path.stem}.png", bdm)
            save_bdm_raw(out_dir / f"{path.stem}.bdm", bdm)
    count = len(files) * len(sigmas)
    print(f"wrote {count} boundary maps to {out_root}")
    return EXIT_OK


def cmd_train(args) -> int:
    file_cfg = load_run_config(args.config) if args.config else {}
    net_cfg = _merge_network_config(file_cfg, args)
    loss_cfg = _merge_loss_config(file_cfg, args)
    train_cfg = _merge_train_config(file_cfg, args)
    mean, std = _channel_stats(file_cfg)
    records = _select_records(args, file_cfg)
    result = train(
        records,
        net_cfg,
        loss_cfg,
        train_cfg,
        args.out,
        channel_mean=mean,
        channel_std=std,
    )
    last = result.log_rows[-1]
    print(
        f"trained {len(result.log_rows)} iterations on {len(records)} records; "
        f"final loss {last['total']:.4f}"
    )
    print(f"checkpoint: {result.checkpoint_dir}")
    return EXIT_OK


def _predict_probability(net, image: np.ndarray, mean, std):
    """Forward one RGB image; returns (probability map, boundary map) at
    the network's input resolution as float64 arrays."""
    tensor = preprocess_image(image, net.cfg.input_size, mean=mean, std=std)[None]
    with torch.no_grad():
        output = net(tensor)
        prob = torch.sigmoid(output.seg_logits)[0, 0].numpy().astype(np.float64)
        bdm = output.generated_bdm[0, 0].numpy().astype(np.float64)
    return np.clip(prob, 0.0, 1.0), np.clip(bdm, 0.0, 1.0)


def cmd_eval(args) -> int:
    file_cfg = load_run_config(args.config) if args.config else {}
    mean, std = _channel_stats(file_cfg)
    net = load_checkpoint(args.checkpoint)
    records = _select_records(args, file_cfg)
    pairs = []
    ids = []
    for record in records:
        prob, _ = _predict_probability(net, record.image, mean, std)
        pairs.append((prob, record.mask))
        ids.append(record.image_id)
    report = evaluate_dataset(pairs, ids=ids, threshold=args.threshold)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out_dir / "report.csv")
    print(format_report_table(report))
    print(f"FLOPs: {network_flops(net)}")
    print(f"report: {out_dir / 'report.csv'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    file_cfg = load_run_config(args.config) if args.config else {}
    mean, std = _channel_stats(file_cfg)
    net = load_checkpoint(args.checkpoint)
    image_dir = Path(args.image_dir)
    if not image_dir.is_dir():
        raise DataError(f"image directory missing: {image_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in _list_images(image_dir):
        image = np.asarray(Image.open(path).convert("RGB"))
        prob, bdm = _predict_probability(net, image, mean, std)
        original = (image.shape[1], image.shape[0])  # PIL size is (w, h)
        prob_full = np.asarray(
            Image.fromarray(prob.astype(np.float32), mode="F").resize(original, Image.BILINEAR)
        )
        mask8 = ((prob_full >= args.threshold) * 255).astype(np.uint8)
        Image.fromarray(mask8).save(out_dir / f"{path.stem}_mask.png")
        bdm_full = np.asarray(
            Image.fromarray(bdm.astype(np.float32), mode="F").resize(original, Image.BILINEAR)
        )
        save_bdm_preview(
            out_dir / f"{path.stem}_bdm.png",
            BoundaryDistributionMap(
                values=np.clip(bdm_full, 0.0, 1.0), sigma=net.cfg.sigma, normalized=True
            ),
        )
    print(f"wrote predictions to {out_dir}")
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(
        prog="bdgnet",
        description="Boundary-distribution-guided polyp segmentation: "
        "BDM generation, training, evaluation, inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-bdm", help="ideal boundary maps from masks")
    gen.add_argument("--mask-dir", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--sigma", type=float, action="append",
                     help="may be given multiple times; each value gets a subdirectory")
    gen.add_argument("--literal-scale", action="store_true",
                     help="use the Gaussian density scale instead of peak 1")
    gen.add_argument("--symmetric-boundary", action="store_true",
                     help="include background pixels adjacent to foreground")

    def add_data_flags(p):
        p.add_argument("--data-root")
        p.add_argument("--layout")
        p.add_argument("--dataset")
        p.add_argument("--split")
        p.add_argument("--config")

    tr = sub.add_parser("train", help="fit the network")
    add_data_flags(tr)
    tr.add_argument("--subset", choices=("train", "test"), default="train")
    tr.add_argument("--out", required=True)
    tr.add_argument("--iterations", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--checkpoint-every", type=int)
    tr.add_argument("--no-augment", action="store_true")
    tr.add_argument("--sigma", type=float)
    tr.add_argument("--skip-levels", help="comma separated encoder levels, e.g. 3,4")
    tr.add_argument("--bdgd-a-stages", type=int)
    tr.add_argument("--input-size", type=int)
    tr.add_argument("--decoder-channels", type=int)
    tr.add_argument("--no-bdgm", action="store_true", help="ablation: unit boundary map")
    tr.add_argument("--no-bdgd", action="store_true", help="ablation: plain upsample-add decoder")
    tr.add_argument("--lambda", dest="loss_lambda", type=float)
    tr.add_argument("--weight-kernel", type=int)
    tr.add_argument("--weight-gain", type=float)

    ev = sub.add_parser("eval", help="metric report for a checkpoint")
    add_data_flags(ev)
    ev.add_argument("--subset", choices=("train", "test"), default="test")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--threshold", type=float, default=0.5)

    inf = sub.add_parser("infer", help="predict masks for a directory of images")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--image-dir", required=True)
    inf.add_argument("--out", required=True)
    inf.add_argument("--threshold", type=float, default=0.5)
    inf.add_argument("--config")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-bdm": cmd_gen_bdm,
        "train": cmd_train,
        "eval": cmd_eval,
        "infer": cmd_infer,
    }
    try:
        return handlers[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
