"""BDG-Net forward computation.

Encoder stages at strides 4/8/16/32 feed two consumers: a boundary
distribution generator (BDGM) that aggregates the three deepest stages
into a full-resolution boundary map, and a U-shaped decoder whose blocks
(BDGD) are multiplicatively gated by that map. The decoder doubles
resolution per stage from 1/32 up to 1/2, and a 1-channel head plus a
final x2 bilinear upsample produces full-resolution segmentation logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class NetworkConfig:
    decoder_channels: int = 32
    skip_levels: tuple[int, ...] = (3, 4)
    sigma: float = 5.0
    bdgd_a_stages: int = 2
    input_size: int = 352
    encoder_kind: str = "toy"
    use_bdgm: bool = True
    use_bdgd: bool = True
    align_corners: bool = False  # fixed convention, recorded in checkpoints

    def __post_init__(self):
        self.skip_levels = tuple(sorted(set(int(v) for v in self.skip_levels)))

    def validate(self) -> "NetworkConfig":
        if self.input_size % 32 != 0 or self.input_size < 32:
            raise ValueError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if not self.skip_levels:
            raise ValueError("skip_levels must be non-empty")
        if any(lv not in (1, 2, 3, 4) for lv in self.skip_levels):
            raise ValueError(f"skip_levels must be a subset of {{1,2,3,4}}, got {self.skip_levels}")
        if self.decoder_channels < 1:
            raise ValueError("decoder_channels must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.bdgd_a_stages <= 4:
            raise ValueError("bdgd_a_stages must be in 0..4")
        if self.encoder_kind not in ("toy", "external"):
            raise ValueError(f"unknown encoder_kind {self.encoder_kind!r}")
        if self.align_corners:
            raise ValueError("align_corners=True is not supported; the convention is fixed")
        return self


@dataclass
class EncoderOutput:
    stages: list[torch.Tensor] = field(default_factory=list)
    channels: tuple[int, ...] = ()


@dataclass
class SegmentationOutput:
    seg_logits: torch.Tensor
    generated_bdm: torch.Tensor


def upsample2(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def resize_to(x, size):
    if x.shape[-2:] == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def downsample2(x):
    return F.avg_pool2d(x, kernel_size=2, stride=2)


class ConvBlock(nn.Module):
    """3x3 convolution + batch norm + ReLU."""

    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class _ConvBN(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, padding=0, dilation=1):
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels, out_channels, kernel_size, padding=padding, dilation=dilation, bias=False
        )
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        return self.bn(self.conv(x))


class RFB(nn.Module):
    """Receptive field block: four parallel branches with growing
    separable kernels and dilations, concatenated, projected back to the
    target width, and residual-added. Reduces channels while enlarging
    context; spatial size is unchanged."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        c = out_channels
        self.branch0 = _ConvBN(in_channels, c, 1)
        self.branch1 = nn.Sequential(
            _ConvBN(in_channels, c, 1),
            _ConvBN(c, c, (1, 3), padding=(0, 1)),
            _ConvBN(c, c, (3, 1), padding=(1, 0)),
            _ConvBN(c, c, 3, padding=3, dilation=3),
        )
        self.branch2 = nn.Sequential(
            _ConvBN(in_channels, c, 1),
            _ConvBN(c, c, (1, 5), padding=(0, 2)),
            _ConvBN(c, c, (5, 1), padding=(2, 0)),
            _ConvBN(c, c, 3, padding=5, dilation=5),
        )
        self.branch3 = nn.Sequential(
            _ConvBN(in_channels, c, 1),
            _ConvBN(c, c, (1, 7), padding=(0, 3)),
            _ConvBN(c, c, (7, 1), padding=(3, 0)),
            _ConvBN(c, c, 3, padding=7, dilation=7),
        )
        self.project = _ConvBN(4 * c, c, 1)
        self.shortcut = _ConvBN(in_channels, c, 1)

    def forward(self, x):
        merged = torch.cat(
            [self.branch0(x), self.branch1(x), self.branch2(x), self.branch3(x)], dim=1
        )
        return F.relu(self.project(merged) + self.shortcut(x))


class Aggregation(nn.Module):
    """Fuse a high-resolution feature with one at exactly half its size.

    Both inputs are first exchanged across scales (average pooling down,
    bilinear up), refined per scale, and recombined at the high
    resolution. All six convolutions are 3x3 + BN + ReLU.
    """

    def __init__(self, channels):
        super().__init__()
        self.refine_high = ConvBlock(channels, channels)
        self.refine_from_low = ConvBlock(channels, channels)
        self.refine_low = ConvBlock(channels, channels)
        self.refine_from_high = ConvBlock(channels, channels)
        self.out_high = ConvBlock(channels, channels)
        self.out_low = ConvBlock(channels, channels)

    def forward(self, feat_high, feat_low):
        hh, hw = feat_high.shape[-2:]
        lh, lw = feat_low.shape[-2:]
        if (hh, hw) != (2 * lh, 2 * lw):
            raise ValueError(f"high-res input must be exactly 2x the low-res one, got {(hh, hw)} vs {(lh, lw)}")
        if feat_high.shape[1] != feat_low.shape[1]:
            raise ValueError("inputs must have equal channel counts")
        high_to_low = downsample2(feat_high)
        low_to_high = upsample2(feat_low)
        mixed_high = self.refine_high(feat_high) + self.refine_from_low(low_to_high)
        mixed_low = self.refine_low(feat_low) + self.refine_from_high(high_to_low)
        return self.out_high(mixed_high) + self.out_low(upsample2(mixed_low))


class BdmGenerator(nn.Module):
    """Aggregate the three deepest encoder stages into a boundary
    distribution map at full input resolution, values in [0, 1]."""

    def __init__(self, stage_channels, channels):
        super().__init__()
        c2, c3, c4 = stage_channels
        self.reduce2 = RFB(c2, channels)
        self.reduce3 = RFB(c3, channels)
        self.reduce4 = RFB(c4, channels)
        self.agg_deep = Aggregation(channels)
        self.agg_shallow = Aggregation(channels)
        self.project = nn.Conv2d(channels, 1, 1)

    def aggregate_stages(self, enc2, enc3, enc4):
        deep = self.agg_deep(self.reduce3(enc3), self.reduce4(enc4))
        shallow = self.agg_shallow(self.reduce2(enc2), deep)
        return deep, shallow

    def forward(self, enc2, enc3, enc4):
        _, shallow = self.aggregate_stages(enc2, enc3, enc4)
        logits = F.interpolate(
            self.project(shallow), scale_factor=8, mode="bilinear", align_corners=False
        )
        return torch.sigmoid(logits)


class GuidedDecoderA(nn.Module):
    """Decoder block fusing an encoder skip with the previous decoder
    output under multiplicative boundary-map gating.

    The skip must arrive at exactly twice the previous decoder output's
    resolution; the boundary map is resized to the skip's resolution and
    average-pooled once for the low-resolution branch. Output resolution
    equals the skip's.
    """

    def __init__(self, skip_channels, channels):
        super().__init__()
        self.transform_skip = ConvBlock(skip_channels, channels)
        self.transform_prev = ConvBlock(channels, channels)
        self.fuse_up = ConvBlock(channels, channels)
        self.fuse_down = ConvBlock(channels, channels)
        self.refine = ConvBlock(channels, channels)

    def forward(self, skip, prev, bdm):
        sh, sw = skip.shape[-2:]
        ph, pw = prev.shape[-2:]
        if (sh, sw) != (2 * ph, 2 * pw):
            raise ValueError(f"skip must be exactly 2x the previous decoder output, got {(sh, sw)} vs {(ph, pw)}")
        gate_high = resize_to(bdm, (sh, sw))
        gate_low = downsample2(gate_high)
        skip_t = self.transform_skip(skip)
        prev_t = self.transform_prev(prev)
        skip_gated = skip_t * gate_high
        prev_gated = prev_t * gate_low
        fused_high = self.fuse_up(upsample2(prev_t)) + skip_gated
        fused_low = self.fuse_down(downsample2(skip_t)) + prev_gated
        combined = upsample2(fused_low) + fused_high
        return combined + self.refine(combined)


class GuidedDecoderB(nn.Module):
    """GuidedDecoderA with the encoder-skip branch removed; upsamples the
    previous decoder output by 2 under the same boundary-map gating."""

    def __init__(self, channels):
        super().__init__()
        self.transform_prev = ConvBlock(channels, channels)
        self.fuse_up = ConvBlock(channels, channels)
        self.refine = ConvBlock(channels, channels)

    def forward(self, prev, bdm):
        ph, pw = prev.shape[-2:]
        gate_high = resize_to(bdm, (2 * ph, 2 * pw))
        gate_low = downsample2(gate_high)
        prev_t = self.transform_prev(prev)
        prev_gated = prev_t * gate_low
        fused_high = self.fuse_up(upsample2(prev_t))
        combined = upsample2(prev_gated) + fused_high
        return combined + self.refine(combined)


class PlainDecoderStage(nn.Module):
    """Ungated upsample-add stage used when boundary guidance is ablated."""

    def __init__(self, channels, skip_channels=None):
        super().__init__()
        self.transform_skip = ConvBlock(skip_channels, channels) if skip_channels else None
        self.fuse_up = ConvBlock(channels, channels)

    def forward(self, prev, skip=None):
        out = self.fuse_up(upsample2(prev))
        if self.transform_skip is not None:
            if skip is None:
                raise ValueError("stage was built with a skip input")
            out = out + self.transform_skip(skip)
        return out


class ToyEncoder(nn.Module):
    """Small stand-in backbone: a stride-4 stem and three stride-2 stages,
    two 3x3 convolutions each, channels 16/32/64/128. Any encoder exposing
    ``channels`` and returning four maps at strides 4/8/16/32 can replace it."""

    channels = (16, 32, 64, 128)

    def __init__(self):
        super().__init__()
        c1, c2, c3, c4 = self.channels
        self.stage1 = nn.Sequential(ConvBlock(3, c1, stride=2), ConvBlock(c1, c1, stride=2))
        self.stage2 = nn.Sequential(ConvBlock(c1, c2, stride=2), ConvBlock(c2, c2))
        self.stage3 = nn.Sequential(ConvBlock(c2, c3, stride=2), ConvBlock(c3, c3))
        self.stage4 = nn.Sequential(ConvBlock(c3, c4, stride=2), ConvBlock(c4, c4))

    def forward(self, x):
        s1 = self.stage1(x)
        s2 = self.stage2(s1)
        s3 = self.stage3(s2)
        s4 = self.stage4(s3)
        return [s1, s2, s3, s4]


def encoder_forward(image, cfg: NetworkConfig, encoder=None) -> EncoderOutput:
    """Run the configured encoder and validate the four-stage contract:
    strides 4/8/16/32, declared channel counts, preserved batch size."""
    if encoder is None:
        if cfg.encoder_kind != "toy":
            raise ValueError("an encoder instance is required for encoder_kind='external'")
        encoder = ToyEncoder().eval()  # throwaway instance, frozen statistics
    h, w = image.shape[-2:]
    if h % 32 != 0 or w % 32 != 0:
        raise ValueError(f"input spatial dims must be divisible by 32, got {(h, w)}")
    stages = encoder(image)
    declared = tuple(encoder.channels)
    if len(stages) != 4 or len(declared) != 4:
        raise ValueError("encoder must produce exactly 4 stages with declared channels")
    for i, feat in enumerate(stages):
        stride = 4 * 2**i
        expect = (image.shape[0], declared[i], h // stride, w // stride)
        if tuple(feat.shape) != expect:
            raise ValueError(f"stage {i + 1} shape {tuple(feat.shape)} != expected {expect}")
    return EncoderOutput(stages=list(stages), channels=declared)


def init_parameters(module: nn.Module) -> None:
    """Fan-in-scaled normal weights, zero biases, identity batch norms."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class BDGNet(nn.Module):
    """Full architecture: encoder, boundary map generator, gated decoder.

    The decoder runs four stages doubling resolution from 1/32 to 1/2.
    The ``bdgd_a_stages`` deepest stages use the skip-fusing variant, each
    consuming one encoder level from ``skip_levels`` (deepest level first,
    bilinearly resized when its native resolution differs from the stage's
    target); remaining stages use the skip-free variant. A 1-channel head
    and a x2 bilinear upsample produce full-resolution logits.
    """

    def __init__(self, cfg: NetworkConfig, encoder: nn.Module | None = None):
        super().__init__()
        self.cfg = cfg.validate()
        if encoder is None:
            if cfg.encoder_kind != "toy":
                raise ValueError("an encoder instance is required for encoder_kind='external'")
            encoder = ToyEncoder()
        self.encoder = encoder
        enc_ch = tuple(encoder.channels)
        ch = cfg.decoder_channels

        self.bdm_generator = (
            BdmGenerator((enc_ch[1], enc_ch[2], enc_ch[3]), ch) if cfg.use_bdgm else None
        )
        self.bottom = ConvBlock(enc_ch[3], ch)

        selected = sorted(cfg.skip_levels, reverse=True)
        n_skip_stages = min(cfg.bdgd_a_stages, len(selected))
        self.stage_skip_levels: list[int | None] = []
        stages = []
        for idx in range(4):
            level = selected[idx] if idx < n_skip_stages else None
            self.stage_skip_levels.append(level)
            if cfg.use_bdgd:
                if level is not None:
                    stages.append(GuidedDecoderA(enc_ch[level - 1], ch))
                else:
                    stages.append(GuidedDecoderB(ch))
            else:
                stages.append(PlainDecoderStage(ch, enc_ch[level - 1] if level else None))
        self.decoder_stages = nn.ModuleList(stages)
        self.head = nn.Conv2d(ch, 1, 3, padding=1)
        init_parameters(self)

    def forward(self, image) -> SegmentationOutput:
        enc = encoder_forward(image, self.cfg, self.encoder)
        e1, e2, e3, e4 = enc.stages
        h, w = image.shape[-2:]

        if self.bdm_generator is not None:
            bdm = self.bdm_generator(e2, e3, e4)
        else:
            bdm = torch.ones(image.shape[0], 1, h, w, dtype=image.dtype, device=image.device)

        current = self.bottom(e4)
        for stage, level in zip(self.decoder_stages, self.stage_skip_levels):
            if level is not None:
                target = (2 * current.shape[-2], 2 * current.shape[-1])
                skip = resize_to(enc.stages[level - 1], target)
                if self.cfg.use_bdgd:
                    current = stage(skip, current, bdm)
                else:
                    current = stage(current, skip)
            else:
                current = stage(current, bdm) if self.cfg.use_bdgd else stage(current)
        logits = upsample2(self.head(current))
        return SegmentationOutput(seg_logits=logits, generated_bdm=bdm)


def build_network(cfg: NetworkConfig, encoder: nn.Module | None = None) -> BDGNet:
    return BDGNet(cfg, encoder=encoder)


def bdgnet_forward(net: BDGNet, image) -> SegmentationOutput:
    return net(image)
