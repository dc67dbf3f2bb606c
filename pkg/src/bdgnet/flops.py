"""Analytic FLOP counts for the network, mirrored off the module tree.

Accounting conventions (floating point ops per output element):
  - convolution: 2 per multiply-accumulate, i.e. 2*kh*kw*cin/groups per
    output element, plus 1 per element when a bias is present
  - batch norm (inference form): 2 (scale and shift)
  - ReLU: 1; sigmoid: 4
  - average pooling: k*k
  - bilinear interpolation: 8 (four taps, weighted sum)
  - elementwise add or multiply: 1
Counts are exact sums under these conventions, so the count of a
composition equals the sum of its parts.
"""

from __future__ import annotations

import torch.nn as nn

from .network import (
    Aggregation,
    BDGNet,
    BdmGenerator,
    ConvBlock,
    GuidedDecoderA,
    GuidedDecoderB,
    NetworkConfig,
    PlainDecoderStage,
    RFB,
    ToyEncoder,
    _ConvBN,
    build_network,
)


def conv2d_flops(conv: nn.Conv2d, h_in: int, w_in: int) -> tuple[int, int, int]:
    """FLOPs and output size of a Conv2d applied at the given input size."""
    kh, kw = conv.kernel_size
    sh, sw = conv.stride
    ph, pw = conv.padding if isinstance(conv.padding, tuple) else (conv.padding, conv.padding)
    dh, dw = conv.dilation
    h_out = (h_in + 2 * ph - dh * (kh - 1) - 1) // sh + 1
    w_out = (w_in + 2 * pw - dw * (kw - 1) - 1) // sw + 1
    macs = 2 * kh * kw * (conv.in_channels // conv.groups) * conv.out_channels
    count = macs * h_out * w_out
    if conv.bias is not None:
        count += conv.out_channels * h_out * w_out
    return count, h_out, w_out


def batchnorm_flops(channels: int, h: int, w: int) -> int:
    return 2 * channels * h * w


def relu_flops(channels: int, h: int, w: int) -> int:
    return channels * h * w


def sigmoid_flops(channels: int, h: int, w: int) -> int:
    return 4 * channels * h * w


def avgpool_flops(kernel: int, channels: int, h_out: int, w_out: int) -> int:
    return kernel * kernel * channels * h_out * w_out


def bilinear_flops(channels: int, h_out: int, w_out: int) -> int:
    return 8 * channels * h_out * w_out


def eltwise_flops(channels: int, h: int, w: int) -> int:
    return channels * h * w


def convblock_flops(block: ConvBlock, h: int, w: int) -> tuple[int, int, int]:
    count, h_out, w_out = conv2d_flops(block.conv, h, w)
    c = block.conv.out_channels
    count += batchnorm_flops(c, h_out, w_out) + relu_flops(c, h_out, w_out)
    return count, h_out, w_out


def _convbn_flops(block: _ConvBN, h: int, w: int) -> tuple[int, int, int]:
    count, h_out, w_out = conv2d_flops(block.conv, h, w)
    count += batchnorm_flops(block.conv.out_channels, h_out, w_out)
    return count, h_out, w_out


def rfb_flops(block: RFB, h: int, w: int) -> int:
    total = 0
    for branch in (block.branch0, block.branch1, block.branch2, block.branch3):
        parts = branch if isinstance(branch, nn.Sequential) else [branch]
        for part in parts:
            count, h, w = _convbn_flops(part, h, w)  # spatial size preserved
            total += count
    c = block.project.conv.out_channels
    total += _convbn_flops(block.project, h, w)[0]
    total += _convbn_flops(block.shortcut, h, w)[0]
    total += eltwise_flops(c, h, w)  # residual add
    total += relu_flops(c, h, w)
    return total


def aggregation_flops(block: Aggregation, h_high: int, w_high: int) -> int:
    c = block.refine_high.conv.out_channels
    h_low, w_low = h_high // 2, w_high // 2
    total = avgpool_flops(2, c, h_low, w_low)  # high -> low
    total += bilinear_flops(c, h_high, w_high)  # low -> high
    total += convblock_flops(block.refine_high, h_high, w_high)[0]
    total += convblock_flops(block.refine_from_low, h_high, w_high)[0]
    total += eltwise_flops(c, h_high, w_high)
    total += convblock_flops(block.refine_low, h_low, w_low)[0]
    total += convblock_flops(block.refine_from_high, h_low, w_low)[0]
    total += eltwise_flops(c, h_low, w_low)
    total += convblock_flops(block.out_high, h_high, w_high)[0]
    total += bilinear_flops(c, h_high, w_high)  # upsample mixed_low
    total += convblock_flops(block.out_low, h_high, w_high)[0]
    total += eltwise_flops(c, h_high, w_high)
    return total


def bdm_generator_flops(block: BdmGenerator, input_h: int, input_w: int) -> int:
    h8, w8 = input_h // 8, input_w // 8
    h16, w16 = input_h // 16, input_w // 16
    h32, w32 = input_h // 32, input_w // 32
    total = rfb_flops(block.reduce2, h8, w8)
    total += rfb_flops(block.reduce3, h16, w16)
    total += rfb_flops(block.reduce4, h32, w32)
    total += aggregation_flops(block.agg_deep, h16, w16)
    total += aggregation_flops(block.agg_shallow, h8, w8)
    total += conv2d_flops(block.project, h8, w8)[0]
    total += bilinear_flops(1, input_h, input_w)
    total += sigmoid_flops(1, input_h, input_w)
    return total


def guided_a_flops(block: GuidedDecoderA, h_prev: int, w_prev: int) -> int:
    c = block.transform_prev.conv.out_channels
    h_out, w_out = 2 * h_prev, 2 * w_prev
    total = bilinear_flops(1, h_out, w_out)  # gate to skip resolution
    total += avgpool_flops(2, 1, h_prev, w_prev)  # gate pooled down
    total += convblock_flops(block.transform_skip, h_out, w_out)[0]
    total += convblock_flops(block.transform_prev, h_prev, w_prev)[0]
    total += eltwise_flops(c, h_out, w_out)  # skip gating
    total += eltwise_flops(c, h_prev, w_prev)  # prev gating
    total += bilinear_flops(c, h_out, w_out)  # upsample prev_t
    total += convblock_flops(block.fuse_up, h_out, w_out)[0]
    total += eltwise_flops(c, h_out, w_out)
    total += avgpool_flops(2, c, h_prev, w_prev)  # downsample skip_t
    total += convblock_flops(block.fuse_down, h_prev, w_prev)[0]
    total += eltwise_flops(c, h_prev, w_prev)
    total += bilinear_flops(c, h_out, w_out)  # upsample fused_low
    total += eltwise_flops(c, h_out, w_out)  # combine
    total += convblock_flops(block.refine, h_out, w_out)[0]
    total += eltwise_flops(c, h_out, w_out)  # residual add
    return total


def guided_b_flops(block: GuidedDecoderB, h_prev: int, w_prev: int) -> int:
    c = block.transform_prev.conv.out_channels
    h_out, w_out = 2 * h_prev, 2 * w_prev
    total = bilinear_flops(1, h_out, w_out)
    total += avgpool_flops(2, 1, h_prev, w_prev)
    total += convblock_flops(block.transform_prev, h_prev, w_prev)[0]
    total += eltwise_flops(c, h_prev, w_prev)  # gating
    total += bilinear_flops(c, h_out, w_out)  # upsample prev_t
    total += convblock_flops(block.fuse_up, h_out, w_out)[0]
    total += bilinear_flops(c, h_out, w_out)  # upsample gated branch
    total += eltwise_flops(c, h_out, w_out)  # combine
    total += convblock_flops(block.refine, h_out, w_out)[0]
    total += eltwise_flops(c, h_out, w_out)  # residual add
    return total


def plain_stage_flops(block: PlainDecoderStage, h_prev: int, w_prev: int) -> int:
    c = block.fuse_up.conv.out_channels
    h_out, w_out = 2 * h_prev, 2 * w_prev
    total = bilinear_flops(c, h_out, w_out)
    total += convblock_flops(block.fuse_up, h_out, w_out)[0]
    if block.transform_skip is not None:
        total += convblock_flops(block.transform_skip, h_out, w_out)[0]
        total += eltwise_flops(c, h_out, w_out)
    return total


def toy_encoder_flops(encoder: ToyEncoder, h: int, w: int) -> int:
    total = 0
    for stage in (encoder.stage1, encoder.stage2, encoder.stage3, encoder.stage4):
        for block in stage:
            count, h, w = convblock_flops(block, h, w)
            total += count
    return total


def network_flops(net: BDGNet, input_size: int | None = None, encoder_flops=None) -> int:
    """Total analytic FLOPs of one forward pass at the given input size."""
    size = input_size or net.cfg.input_size
    if size % 32 != 0:
        raise ValueError("input size must be divisible by 32")
    if isinstance(net.encoder, ToyEncoder):
        total = toy_encoder_flops(net.encoder, size, size)
    elif encoder_flops is not None:
        total = int(encoder_flops)
    elif hasattr(net.encoder, "flops"):
        total = int(net.encoder.flops(size, size))
    else:
        raise ValueError(
            "external encoder provides no FLOP count; pass encoder_flops explicitly"
        )

    if net.bdm_generator is not None:
        total += bdm_generator_flops(net.bdm_generator, size, size)

    h = w = size // 32
    total += convblock_flops(net.bottom, h, w)[0]

    strides = {1: 4, 2: 8, 3: 16, 4: 32}
    for stage, level in zip(net.decoder_stages, net.stage_skip_levels):
        if level is not None:
            target = 2 * h
            native = size // strides[level]
            if native != target:
                skip_channels = net.encoder.channels[level - 1]
                total += bilinear_flops(skip_channels, target, target)
        if isinstance(stage, GuidedDecoderA):
            total += guided_a_flops(stage, h, w)
        elif isinstance(stage, GuidedDecoderB):
            total += guided_b_flops(stage, h, w)
        else:
            total += plain_stage_flops(stage, h, w)
        h, w = 2 * h, 2 * w

    total += conv2d_flops(net.head, h, w)[0]
    total += bilinear_flops(1, 2 * h, 2 * w)
    return total


def count_flops(cfg: NetworkConfig, encoder=None, encoder_flops=None) -> int:
    """Analytic multiply-add count (2 FLOPs per MAC) of the configured
    network at its configured input size."""
    net = build_network(cfg, encoder=encoder)
    return network_flops(net, encoder_flops=encoder_flops)
