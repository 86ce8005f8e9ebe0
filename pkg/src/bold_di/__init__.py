"""Decoupled static/dynamic self-supervised representation learning toolkit.

Per-frame embeddings of synthetic clips are fit with a one-step linear
operator; its eigenmodes are stratified into static and dynamic sets; a
backdoor-adjusted contrastive stage and a dynamics-prediction stage are
combined through bi-level optimization.  Probes evaluate how much static and
temporal information a frozen encoder retains.
"""

from .batch import BatchEmbeddings
from .encoder import (
    Checkpoint,
    EncoderParams,
    embed_clip,
    embed_frames,
    flatten_params,
    grad,
    init_params,
    load_checkpoint,
    save_checkpoint,
    unflatten_params,
)
from .errors import BoldDiError, InvalidInputError, NumericalFailureError, UnsupportedOpError
from .koopman import KoopmanEstimate, dynamic_loss, estimate_koopman, prediction_loss
from .linalg import EigResult, eig, pinv, polar
from .objectives import SimilarityConfig, batch_contrastive_loss, byol_loss, info_nce, momentum_update
from .probes import (
    ProbeReport,
    linear_probe,
    order_discrimination_probe,
    static_degradation_probe,
)
from .static_objective import backdoor_loss, mode_conditional_similarity
from .stratify import EigenMode, ModeSpectrum, dynamic_modes, stratify
from .synth import Clip, GeneratorConfig, generate_dataset, make_static_clip, sample_views, shuffle_clip
from .trainer import TrainerConfig, TrainerState, inner_step, outer_step, train

__version__ = "0.1.0"

__all__ = [
    "BatchEmbeddings",
    "BoldDiError",
    "Checkpoint",
    "Clip",
    "EigResult",
    "EigenMode",
    "EncoderParams",
    "GeneratorConfig",
    "InvalidInputError",
    "KoopmanEstimate",
    "ModeSpectrum",
    "NumericalFailureError",
    "ProbeReport",
    "SimilarityConfig",
    "TrainerConfig",
    "TrainerState",
    "UnsupportedOpError",
    "backdoor_loss",
    "batch_contrastive_loss",
    "byol_loss",
    "dynamic_loss",
    "dynamic_modes",
    "eig",
    "embed_clip",
    "embed_frames",
    "estimate_koopman",
    "flatten_params",
    "generate_dataset",
    "grad",
    "info_nce",
    "init_params",
    "inner_step",
    "linear_probe",
    "load_checkpoint",
    "make_static_clip",
    "mode_conditional_similarity",
    "momentum_update",
    "order_discrimination_probe",
    "outer_step",
    "pinv",
    "polar",
    "prediction_loss",
    "sample_views",
    "save_checkpoint",
    "shuffle_clip",
    "static_degradation_probe",
    "stratify",
    "train",
    "unflatten_params",
]
