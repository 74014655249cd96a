"""Noise-aware prompt alignment with optimal transport, on frozen embeddings."""

from .alignment import (
    AlignmentConfig,
    AlignmentResult,
    PromptBank,
    SampleFeatures,
    align_batch,
    align_sample,
    is_clean,
    predict,
    uot_distance,
)
from .data import EmbeddingDataset
from .objectives import GradientSet, LossValue, gce_loss, itbp_loss, loss_gradients, supervised_loss
from .ot import (
    TransportPlan,
    TransportProblem,
    dykstra_uot,
    entropic_objective,
    exact_ot_oracle,
    sinkhorn_ot,
)
from .refinement import (
    DatasetPartition,
    DenoisedDataset,
    RefinementReport,
    global_ot_pseudolabels,
    partition_dataset,
    refine,
    refinement_metrics,
)
from .synth import SynthConfig, gen_dataset, inject_asymmetric_noise, inject_symmetric_noise
from .tensor_core import cosine_similarity, l2_normalize_rows, tempered_softmax
from .trainer import TrainConfig, TrainHistory, evaluate, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentConfig",
    "AlignmentResult",
    "DatasetPartition",
    "DenoisedDataset",
    "EmbeddingDataset",
    "GradientSet",
    "LossValue",
    "PromptBank",
    "RefinementReport",
    "SampleFeatures",
    "SynthConfig",
    "TrainConfig",
    "TrainHistory",
    "TransportPlan",
    "TransportProblem",
    "align_batch",
    "align_sample",
    "cosine_similarity",
    "dykstra_uot",
    "entropic_objective",
    "evaluate",
    "exact_ot_oracle",
    "gce_loss",
    "gen_dataset",
    "global_ot_pseudolabels",
    "inject_asymmetric_noise",
    "inject_symmetric_noise",
    "is_clean",
    "itbp_loss",
    "l2_normalize_rows",
    "loss_gradients",
    "partition_dataset",
    "predict",
    "refine",
    "refinement_metrics",
    "sgd_step",
    "sinkhorn_ot",
    "supervised_loss",
    "tempered_softmax",
    "train",
    "uot_distance",
]
