"""Boundary-distribution-guided polyp segmentation toolkit."""

from .bdm import (
    BoundaryDistributionMap,
    DistanceField,
    as_binary_mask,
    distance_transform,
    extract_boundary,
    ideal_bdm,
)
from .bdm_io import load_bdm_raw, load_mask, save_bdm_preview, save_bdm_raw, save_mask
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DataError,
    SampleRecord,
    SplitManifest,
    augment,
    ingest,
    make_split,
    preprocess,
)
from .flops import count_flops, network_flops
from .losses import LossConfig, bdm_loss, total_loss, weight_map, weighted_bce, weighted_iou
from .metrics import (
    MetricsReport,
    binarize,
    dice,
    e_measure_max,
    evaluate_dataset,
    f_beta_weighted,
    iou,
    mae,
    s_measure,
)
from .network import (
    BDGNet,
    EncoderOutput,
    NetworkConfig,
    SegmentationOutput,
    ToyEncoder,
    bdgnet_forward,
    build_network,
    encoder_forward,
)
from .train import TrainConfig, TrainResult, train

__version__ = "0.1.0"
