"""Visual-semantic matching: controlled-inconsistency dataset generation,
contrastive disentanglement of backbone features, and the VSM score."""

from .correspond import (
    argmax_match,
    best_match_scores,
    flatten_layer,
    full_mask,
    normalize_rows,
    row_skewness,
    sample_skewness,
    similarity,
)
from .datagen import (
    PipelineConfig,
    PipelineStats,
    PortBundle,
    run_pipeline,
    synthetic_ports_for,
)
from .disentangle import (
    AggregatorParams,
    ArchConfig,
    LossBreakdown,
    LossConfig,
    PointPartition,
    aggregate,
    contrastive_ce,
    init_params,
    layer_weight_table,
    loss_and_grads,
    partition_points,
    read_params,
    total_loss,
    write_params,
)
from .errors import (
    FormatError,
    IntegrityError,
    NonFiniteError,
    PortError,
    TruncationError,
    VsmatchError,
)
from .evaluate import (
    MetricSeries,
    baseline_cosine,
    correlation_report,
    oracle_score,
    oracle_series,
    pearson,
    spearman,
    vsm_series,
)
from .metric import VsmConfig, VsmReport, inconsistency_map, vsm
from .optim import AdamWConfig, AdamWState, adamw_step, lr_for_epoch
from .store import (
    CorrespondenceSet,
    FeatureStack,
    LayerBlock,
    Mask,
    PairRecord,
    SampleRecord,
    load_manifest,
    load_pairs,
    read_corr,
    read_mask,
    read_stack,
    write_corr,
    write_mask,
    write_stack,
)
from .synth import GeneratorConfig, SynthWorld, SynthWorldConfig, generate_pairs, synth_world
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AdamWConfig",
    "AdamWState",
    "AggregatorParams",
    "ArchConfig",
    "CorrespondenceSet",
    "FeatureStack",
    "FormatError",
    "GeneratorConfig",
    "IntegrityError",
    "LayerBlock",
    "LossBreakdown",
    "LossConfig",
    "Mask",
    "MetricSeries",
    "NonFiniteError",
    "PairRecord",
    "PipelineConfig",
    "PipelineStats",
    "PointPartition",
    "PortBundle",
    "PortError",
    "SampleRecord",
    "SynthWorld",
    "SynthWorldConfig",
    "TrainConfig",
    "TruncationError",
    "VsmConfig",
    "VsmReport",
    "VsmatchError",
    "adamw_step",
    "aggregate",
    "argmax_match",
    "baseline_cosine",
    "best_match_scores",
    "contrastive_ce",
    "correlation_report",
    "flatten_layer",
    "full_mask",
    "generate_pairs",
    "inconsistency_map",
    "init_params",
    "layer_weight_table",
    "load_manifest",
    "load_pairs",
    "loss_and_grads",
    "lr_for_epoch",
    "normalize_rows",
    "oracle_score",
    "oracle_series",
    "partition_points",
    "pearson",
    "read_corr",
    "read_mask",
    "read_params",
    "read_stack",
    "row_skewness",
    "run_pipeline",
    "sample_skewness",
    "similarity",
    "spearman",
    "synth_world",
    "synthetic_ports_for",
    "total_loss",
    "train",
    "vsm",
    "vsm_series",
    "write_corr",
    "write_mask",
    "write_params",
    "write_stack",
]
