"""Checkpoint format: a human-readable manifest plus a raw weight blob.

``manifest.txt`` records the network configuration and, per state-dict
entry, its name, shape, dtype, byte offset, and byte length inside
``weights.bin``. Floating tensors are stored as little-endian float32
and integer buffers as little-endian int64, so a save/load cycle
reproduces forward outputs bit for bit.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .network import BDGNet, NetworkConfig, build_network

MANIFEST_NAME = "manifest.txt"
WEIGHTS_NAME = "weights.bin"
FORMAT_TAG = "bdgnet-checkpoint-1"

_DTYPES = {
    torch.float32: "f4",
    torch.int64: "i8",
}
_NUMPY_DTYPES = {"f4": "<f4", "i8": "<i8"}


def _config_lines(cfg: NetworkConfig) -> list[str]:
    return [
        f"decoder_channels = {cfg.decoder_channels}",
        f"skip_levels = {','.join(str(v) for v in cfg.skip_levels)}",
        f"sigma = {cfg.sigma!r}",
        f"bdgd_a_stages = {cfg.bdgd_a_stages}",
        f"input_size = {cfg.input_size}",
        f"encoder_kind = {cfg.encoder_kind}",
        f"use_bdgm = {str(cfg.use_bdgm).lower()}",
        f"use_bdgd = {str(cfg.use_bdgd).lower()}",
        f"align_corners = {str(cfg.align_corners).lower()}",
    ]


def _parse_config(lines: list[str]) -> NetworkConfig:
    raw = {}
    for line in lines:
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    return NetworkConfig(
        decoder_channels=int(raw["decoder_channels"]),
        skip_levels=tuple(int(v) for v in raw["skip_levels"].split(",") if v),
        sigma=float(raw["sigma"]),
        bdgd_a_stages=int(raw["bdgd_a_stages"]),
        input_size=int(raw["input_size"]),
        encoder_kind=raw["encoder_kind"],
        use_bdgm=raw["use_bdgm"] == "true",
        use_bdgd=raw["use_bdgd"] == "true",
        align_corners=raw["align_corners"] == "true",
    )


def save_checkpoint(net: BDGNet, directory) -> Path:
    """Write manifest and weight blob into the directory; returns it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    payload = bytearray()
    for name, tensor in net.state_dict().items():
        if tensor.dtype not in _DTYPES:
            raise ValueError(
                f"{name}: dtype {tensor.dtype} not supported by the checkpoint format"
            )
        tag = _DTYPES[tensor.dtype]
        data = tensor.detach().cpu().numpy().astype(_NUMPY_DTYPES[tag]).tobytes()
        shape = "x".join(str(d) for d in tensor.shape) if tensor.dim() else "-"
        entries.append(f"{name} {shape} {tag} {len(payload)} {len(data)}")
        payload.extend(data)

    lines = [f"format = {FORMAT_TAG}", "", "[config]"]
    lines.extend(_config_lines(net.cfg))
    lines.extend(["", "[tensors]"])
    lines.extend(entries)
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    (directory / WEIGHTS_NAME).write_bytes(bytes(payload))
    return directory


def load_checkpoint(directory, encoder=None) -> BDGNet:
    """Rebuild the network from a checkpoint directory."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    lines = manifest_path.read_text().splitlines()
    if not lines or lines[0].replace(" ", "") != f"format={FORMAT_TAG}":
        raise ValueError(f"{manifest_path}: unknown checkpoint format")

    config_lines: list[str] = []
    tensor_lines: list[str] = []
    section = None
    for line in lines[1:]:
        stripped = line.strip()
        if not stripped:
            continue
        if stripped == "[config]":
            section = "config"
        elif stripped == "[tensors]":
            section = "tensors"
        elif section == "config":
            config_lines.append(stripped)
        elif section == "tensors":
            tensor_lines.append(stripped)

    cfg = _parse_config(config_lines).validate()
    blob = (directory / WEIGHTS_NAME).read_bytes()

    state = {}
    for line in tensor_lines:
        name, shape_s, tag, offset_s, nbytes_s = line.split()
        offset, nbytes = int(offset_s), int(nbytes_s)
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=_NUMPY_DTYPES[tag])
        shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split("x"))
        state[name] = torch.from_numpy(arr.reshape(shape).copy())

    net = build_network(cfg, encoder=encoder)
    net.load_state_dict(state, strict=True)
    net.eval()
    return net
