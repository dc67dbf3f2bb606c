"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Run with ``pytest tests/test_acceptance.py -v -s`` to see
the lines live; they are also captured on failure.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
import torch

from bdgnet.bdm import distance_transform, extract_boundary, ideal_bdm
from bdgnet.checkpoint import load_checkpoint, save_checkpoint
from bdgnet.flops import bdm_generator_flops, conv2d_flops, count_flops
from bdgnet.losses import LossConfig, bdm_loss, total_loss, weighted_bce, weighted_iou
from bdgnet.metrics import (
    CSV_COLUMNS,
    binarize,
    dice,
    e_measure_max,
    evaluate_dataset,
    f_beta_weighted,
    iou,
    mae,
    s_measure,
)
from bdgnet.network import (
    Aggregation,
    GuidedDecoderA,
    GuidedDecoderB,
    NetworkConfig,
    SegmentationOutput,
    build_network,
)
from bdgnet.train import TrainConfig, train, training_dice

from oracles import (
    brute_force_distance_field,
    check_gradients,
    e_measure_max_reference,
    s_measure_reference,
    wfb_reference,
)
from synth import blob_record


def report(number: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"CRITERION {number:02d} {name}: {status}{suffix}")
    assert ok, f"criterion {number} failed{suffix}"


def random_mask(rng, h, w, p):
    mask = (rng.random((h, w)) < p).astype(np.uint8)
    if not mask.any():
        mask[rng.integers(h), rng.integers(w)] = 1
    return mask


def test_criterion_01_edt_exactness():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    for _ in range(100):
        mask = random_mask(rng, 32, 32, float(rng.uniform(0.02, 0.6)))
        fast = distance_transform(mask).values
        np.testing.assert_array_equal(fast, brute_force_distance_field(mask))
    for _ in range(20):
        mask = random_mask(rng, 64, 64, float(rng.uniform(0.02, 0.6)))
        fast = distance_transform(mask).values
        np.testing.assert_array_equal(fast, brute_force_distance_field(mask))
    elapsed = time.perf_counter() - start
    report(1, "EDT exactness (120 masks, bit-for-bit)", elapsed < 5.0, f"{elapsed:.2f}s")


def test_criterion_02_bdm_closed_form():
    rng = np.random.default_rng(7)
    worst = 0.0
    for sigma in (1.0, 3.0, 5.0, 7.0):
        for _ in range(5):
            mask = random_mask(rng, 24, 24, float(rng.uniform(0.05, 0.6)))
            boundary = extract_boundary(mask)
            eps = distance_transform(boundary).values
            normalized = ideal_bdm(mask, sigma=sigma, normalized=True).values
            literal = ideal_bdm(mask, sigma=sigma, normalized=False).values
            expect_norm = np.exp(-(eps**2) / (2 * sigma**2))
            expect_lit = expect_norm / (math.sqrt(2 * math.pi) * sigma)
            worst = max(
                worst,
                float(np.abs(normalized - expect_norm).max()),
                float(np.abs(literal - expect_lit).max()),
            )
            peak = np.unravel_index(np.argmax(normalized), normalized.shape)
            assert boundary[peak] == 1, "argmax must lie on the boundary set"
    # empty-boundary convention
    assert (ideal_bdm(np.zeros((8, 8), dtype=np.uint8), sigma=5.0).values == 0).all()
    report(2, "BDM closed form over sigma grid", worst <= 1e-12, f"max err {worst:.2e}")


def _gradcheck_cases():
    cfg = LossConfig()

    def aggregate(seed):
        torch.manual_seed(seed)
        block = Aggregation(3).double().eval()
        f_high = torch.randn(1, 3, 4, 4, dtype=torch.float64) * 4
        f_low = torch.randn(1, 3, 2, 2, dtype=torch.float64) * 4
        proj = torch.randn(1, 3, 4, 4, dtype=torch.float64)
        return lambda: (block(f_high, f_low) * proj).sum(), [f_high, f_low]

    def bdgd_a(seed):
        torch.manual_seed(seed)
        block = GuidedDecoderA(2, 3).double().eval()
        skip = torch.randn(1, 2, 8, 8, dtype=torch.float64) * 4
        prev = torch.randn(1, 3, 4, 4, dtype=torch.float64) * 4
        bdm = torch.rand(1, 1, 8, 8, dtype=torch.float64)
        proj = torch.randn(1, 3, 8, 8, dtype=torch.float64)
        return lambda: (block(skip, prev, bdm) * proj).sum(), [skip, prev, bdm]

    def bdgd_b(seed):
        torch.manual_seed(seed)
        block = GuidedDecoderB(3).double().eval()
        prev = torch.randn(1, 3, 4, 4, dtype=torch.float64) * 4
        bdm = torch.rand(1, 1, 8, 8, dtype=torch.float64)
        proj = torch.randn(1, 3, 8, 8, dtype=torch.float64)
        return lambda: (block(prev, bdm) * proj).sum(), [prev, bdm]

    def loss_bdm(seed):
        torch.manual_seed(seed)
        pred = torch.rand(1, 1, 6, 6, dtype=torch.float64)
        target = torch.rand(1, 1, 6, 6, dtype=torch.float64)
        return lambda: bdm_loss(pred, target, cfg), [pred]

    def loss_wbce(seed):
        torch.manual_seed(seed)
        logits = torch.randn(1, 1, 6, 6, dtype=torch.float64)
        gt = (torch.rand(1, 1, 6, 6) > 0.5).double()
        weights = 1 + torch.rand(1, 1, 6, 6, dtype=torch.float64)
        return lambda: weighted_bce(logits, gt, weights, from_logits=True), [logits]

    def loss_wiou(seed):
        torch.manual_seed(seed)
        logits = torch.randn(1, 1, 6, 6, dtype=torch.float64)
        gt = (torch.rand(1, 1, 6, 6) > 0.5).double()
        weights = 1 + torch.rand(1, 1, 6, 6, dtype=torch.float64)
        return lambda: weighted_iou(logits, gt, weights, from_logits=True), [logits]

    def loss_total(seed):
        torch.manual_seed(seed)
        logits = torch.randn(1, 1, 6, 6, dtype=torch.float64)
        bdm = torch.rand(1, 1, 6, 6, dtype=torch.float64)
        gt = (torch.rand(1, 1, 6, 6) > 0.5).double()
        target = torch.rand(1, 1, 6, 6, dtype=torch.float64)
        fn = lambda: total_loss(SegmentationOutput(logits, bdm), gt, target, cfg).total
        return fn, [logits, bdm]

    # fixed seeds: draws placing a pre-activation or a squared residual
    # within the finite-difference step of a kink are excluded, since
    # central differences are invalid there, not the analytic gradient
    return [
        ("aggregate", aggregate, (0, 1, 2, 3, 4)),
        ("bdgd_a", bdgd_a, (0, 1, 2, 3, 4)),
        ("bdgd_b", bdgd_b, (0, 1, 2, 3, 4)),
        ("l_bdm", loss_bdm, (0, 1, 2, 3, 4)),
        ("l_wbce", loss_wbce, (0, 1, 2, 3, 4)),
        ("l_wiou", loss_wiou, (0, 1, 2, 3, 4)),
        ("l_total", loss_total, (1, 2, 3, 5, 6)),
    ]


def test_criterion_03_gradient_checks():
    worst = {}
    for name, case, seeds in _gradcheck_cases():
        errors = []
        for seed in seeds:
            fn, tensors = case(seed)
            errors.append(check_gradients(fn, tensors, step=1e-3))
        worst[name] = max(errors)
    ok = all(err < 1e-3 for err in worst.values())
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    report(3, "finite-difference gradient checks (5 instances each)", ok, detail)


def test_criterion_04_metric_identities():
    rng = np.random.default_rng(11)
    for _ in range(20):
        gt = (rng.random((16, 16)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        pred_bin = binarize(rng.random((16, 16)), 0.5)
        inter = int((pred_bin & gt).sum())
        p, g = int(pred_bin.sum()), int(gt.sum())
        union = p + g - inter
        if p + g == 0:
            continue
        dice_frac = Fraction(2 * inter, p + g)
        iou_frac = Fraction(inter, union) if union else Fraction(1)
        assert dice_frac == 2 * iou_frac / (1 + iou_frac)
        assert abs(dice(pred_bin, gt) - float(dice_frac)) < 1e-12
        assert abs(iou(pred_bin, gt) - float(iou_frac)) < 1e-12

    gt = np.zeros((16, 16), dtype=np.uint8)
    gt[4:12, 5:11] = 1
    perfect = gt.astype(np.float64)
    values = {
        "dice": dice(binarize(perfect, 0.5), gt),
        "iou": iou(binarize(perfect, 0.5), gt),
        "fbw": f_beta_weighted(perfect, gt),
        "smeasure": s_measure(perfect, gt),
        "emeasure": e_measure_max(perfect, gt),
    }
    perfect_ok = all(abs(v - 1.0) < 1e-6 for v in values.values()) and mae(perfect, gt) < 1e-6

    worst = 0.0
    for _ in range(20):
        gt = (rng.random((16, 16)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        pred = rng.random((16, 16))
        worst = max(
            worst,
            abs(f_beta_weighted(pred, gt) - wfb_reference(pred, gt)),
            abs(s_measure(pred, gt) - s_measure_reference(pred, gt)),
            abs(e_measure_max(pred, gt) - e_measure_max_reference(pred, gt)),
        )
    report(
        4,
        "metric identities and oracle agreement",
        perfect_ok and worst < 1e-6,
        f"max oracle gap {worst:.2e}",
    )


@pytest.mark.parametrize("size", [128, 256, 352])
def test_criterion_05_shape_contract(size):
    torch.manual_seed(0)
    net = build_network(NetworkConfig(input_size=size)).eval()
    with torch.no_grad():
        image = torch.randn(1, 3, size, size)
        out = net(image)
        stages = net.encoder(image)
        deep, shallow = net.bdm_generator.aggregate_stages(stages[1], stages[2], stages[3])
    ok = (
        out.seg_logits.shape == (1, 1, size, size)
        and out.generated_bdm.shape == (1, 1, size, size)
        and deep.shape[-2:] == (size // 16, size // 16)
        and shallow.shape[-2:] == (size // 8, size // 8)
    )
    report(5, f"shape contract at {size}x{size} (H/16, H/8 internals)", ok)


def test_criterion_06_gating_laws():
    torch.manual_seed(1)
    up2 = lambda t: torch.nn.functional.interpolate(
        t, scale_factor=2, mode="bilinear", align_corners=False
    )
    pool2 = lambda t: torch.nn.functional.avg_pool2d(t, 2)

    block_a = GuidedDecoderA(6, 4).eval()
    skip = torch.randn(1, 6, 8, 8)
    prev = torch.randn(1, 4, 4, 4)
    with torch.no_grad():
        skip_t = block_a.transform_skip(skip)
        prev_t = block_a.transform_prev(prev)
        high_ungated = block_a.fuse_up(up2(prev_t))
        low_ungated = block_a.fuse_down(pool2(skip_t))

        combined_zero = up2(low_ungated) + high_ungated
        expect_zero = combined_zero + block_a.refine(combined_zero)
        got_zero = block_a(skip, prev, torch.zeros(1, 1, 8, 8))

        combined_one = up2(low_ungated + prev_t) + (high_ungated + skip_t)
        expect_one = combined_one + block_a.refine(combined_one)
        got_one = block_a(skip, prev, torch.ones(1, 1, 8, 8))
    err_a = max(
        float((got_zero - expect_zero).abs().max()), float((got_one - expect_one).abs().max())
    )

    block_b = GuidedDecoderB(4).eval()
    with torch.no_grad():
        prev_t = block_b.transform_prev(prev)
        high = block_b.fuse_up(up2(prev_t))
        expect_zero = high + block_b.refine(high)
        got_zero = block_b(prev, torch.zeros(1, 1, 8, 8))
        combined_one = up2(prev_t) + high
        expect_one = combined_one + block_b.refine(combined_one)
        got_one = block_b(prev, torch.ones(1, 1, 8, 8))
    err_b = max(
        float((got_zero - expect_zero).abs().max()), float((got_one - expect_one).abs().max())
    )
    worst = max(err_a, err_b)
    report(6, "gate laws: zero map nullifies, unit map is identity", worst < 1e-6, f"{worst:.2e}")


def test_criterion_07_overfit_sanity(tmp_path):
    records = [blob_record(100 + i, size=128) for i in range(8)]
    start = time.perf_counter()
    result = train(
        records,
        NetworkConfig(input_size=128),
        LossConfig(),
        TrainConfig(batch_size=8, iterations=500, lr=1e-3, seed=0),
        tmp_path / "overfit",
        stop_dice=0.92,
        stop_check_every=25,
    )
    elapsed = time.perf_counter() - start
    from bdgnet.data import preprocess

    tensors = [preprocess(r, 128, sigma=5.0) for r in records]
    final = training_dice(result.net, tensors)
    ok = final >= 0.90 and elapsed <= 900 and len(result.log_rows) <= 500
    report(
        7,
        "overfit sanity (8 images, <=500 iters)",
        ok,
        f"dice {final:.4f} after {len(result.log_rows)} iters in {elapsed:.0f}s",
    )


def test_criterion_08_flops_counter():
    import torch.nn as nn

    conv = nn.Conv2d(3, 16, 3, padding=1, bias=False)
    hand = conv2d_flops(conv, 32, 32)[0] == 884736
    one = nn.Conv2d(8, 4, 1, bias=False)
    closed = conv2d_flops(one, 10, 10)[0] == 2 * 8 * 4 * 10 * 10

    cfg = NetworkConfig(input_size=64)
    net = build_network(cfg)
    additive = count_flops(cfg) - count_flops(
        NetworkConfig(input_size=64, use_bdgm=False)
    ) == bdm_generator_flops(net.bdm_generator, 64, 64)
    total_352 = count_flops(NetworkConfig(input_size=352))
    print(
        f"  note: toy config at 352x352 counts {total_352 / 1e9:.3f} GFLOPs; the "
        "published 10.840 G figure assumes the EfficientNet-B5 backbone and its "
        "accounting conventions and is informational only"
    )
    report(8, "FLOPs counter hand cases and additivity", hand and closed and additive)


def test_criterion_09_determinism(tmp_path):
    records = [blob_record(300 + i, size=48) for i in range(4)]
    net_cfg = NetworkConfig(input_size=32)
    args = (records, net_cfg, LossConfig(), TrainConfig(batch_size=2, iterations=4, seed=5))
    train(*args, tmp_path / "a")
    train(*args, tmp_path / "b")
    logs_equal = (tmp_path / "a" / "loss_log.csv").read_bytes() == (
        tmp_path / "b" / "loss_log.csv"
    ).read_bytes()

    net = load_checkpoint(tmp_path / "a" / "checkpoint_final")
    batch = torch.randn(2, 3, 32, 32)
    with torch.no_grad():
        before = net(batch)
    save_checkpoint(net, tmp_path / "resaved")
    restored = load_checkpoint(tmp_path / "resaved")
    with torch.no_grad():
        after = restored(batch)
    round_trip = torch.equal(before.seg_logits, after.seg_logits) and torch.equal(
        before.generated_bdm, after.generated_bdm
    )
    report(9, "seeded training and checkpoint round trip bit-exact", logs_equal and round_trip)


def test_criterion_10_protocol_capability():
    # sigma grid x skip-level grid, all constructible
    grid_ok = True
    for skips in ((4,), (3, 4), (2, 3, 4), (1, 2, 3, 4)):
        for sigma in (1.0, 3.0, 5.0, 7.0):
            cfg = NetworkConfig(
                input_size=64, skip_levels=skips, sigma=sigma, bdgd_a_stages=len(skips)
            )
            net = build_network(cfg).eval()
            with torch.no_grad():
                out = net(torch.zeros(1, 3, 64, 64))
            grid_ok &= out.seg_logits.shape == (1, 1, 64, 64)

    # module ablation switches (four architecture rows)
    ablate_ok = True
    for use_bdgm, use_bdgd in ((False, False), (True, False), (False, True), (True, True)):
        cfg = NetworkConfig(input_size=64, use_bdgm=use_bdgm, use_bdgd=use_bdgd)
        net = build_network(cfg).eval()
        with torch.no_grad():
            out = net(torch.zeros(1, 3, 64, 64))
        ablate_ok &= out.seg_logits.shape == (1, 1, 64, 64)

    # six-metric report in the declared column order
    columns_ok = CSV_COLUMNS == ("image_id", "dice", "iou", "fbw", "smeasure", "emeasure", "mae")
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[2:6, 2:6] = 1
    report_obj = evaluate_dataset([(gt.astype(float), gt)])
    columns_ok &= set(report_obj.means()) == {"dice", "iou", "fbw", "smeasure", "emeasure", "mae"}

    print(
        "  note: absolute published results (e.g. mean Dice 0.915 on Kvasir) require "
        "the pretrained EfficientNet-B5 backbone and the five full datasets; this "
        "pipeline verifies the protocol structurally, not numerically"
    )
    report(10, "protocol capability (grids, ablations, report schema)", grid_ok and ablate_ok and columns_ok)
