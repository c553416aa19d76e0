"""Shapley-guided single-shot pruning of CTR embedding tables.

Pipeline: encode tabular click data (data), train an FM or DeepFM scorer
(model), score every embedding parameter by its average marginal effect on
the loss (attribution), optionally fit a per-field replacement codebook
(codebook), then prune to an exact parameter budget and evaluate (pruner).
"""

from .attribution import (
    MAGNITUDE,
    METHODS,
    SHAPLEY,
    TAYLOR,
    AttributionScores,
    RemovalState,
    estimate_shapley,
    exact_shapley_global,
    exact_shapley_local,
    removal_loss_delta,
    score_magnitude,
    score_taylor,
)
from .codebook import Codebook, codebook_objective, compute_codebook, impute
from .data import (
    CATEGORICAL,
    MISSING_TOKEN,
    NUMERIC_BUCKETED,
    OOV_TOKEN,
    DataError,
    Dataset,
    FieldSchema,
    Instance,
    Vocabulary,
    bucketize_numeric,
    build_vocabulary,
    dataset_from_encoded,
    decode_rows,
    encode_rows,
    load_csv_dataset,
    read_csv_rows,
    write_csv_rows,
)
from .model import (
    DEEPFM,
    FM,
    BackboneParams,
    EmbeddingTable,
    Gradients,
    Model,
    NonFiniteError,
    PruneMask,
    TrainConfig,
    TrainingDiverged,
    backward,
    clamp_probability,
    embed_lookup,
    forward,
    init_model,
    load_model,
    log_loss,
    predict_proba,
    predict_proba_values,
    raw_scores,
    save_model,
    train,
)
from .pruner import (
    CODEBOOK,
    CURVE_HEADER,
    ZERO,
    EvalReport,
    PrunedModel,
    auc_rank,
    evaluate,
    frequency_bucket_report,
    load_pruned,
    parameter_budget,
    prune,
    prune_curve,
    write_curve_csv,
)
from .serialization import CheckpointError
from .synth import TOY_MIN_COUNT, SyntheticConfig, synthetic_rows, synthetic_schema, toy_rows

__version__ = "0.1.0"

__all__ = [
    "AttributionScores",
    "BackboneParams",
    "CATEGORICAL",
    "CODEBOOK",
    "CURVE_HEADER",
    "CheckpointError",
    "Codebook",
    "DEEPFM",
    "DataError",
    "Dataset",
    "EmbeddingTable",
    "EvalReport",
    "FM",
    "FieldSchema",
    "Gradients",
    "Instance",
    "MAGNITUDE",
    "METHODS",
    "MISSING_TOKEN",
    "Model",
    "NUMERIC_BUCKETED",
    "NonFiniteError",
    "OOV_TOKEN",
    "PruneMask",
    "PrunedModel",
    "RemovalState",
    "SHAPLEY",
    "SyntheticConfig",
    "TAYLOR",
    "TOY_MIN_COUNT",
    "TrainConfig",
    "TrainingDiverged",
    "Vocabulary",
    "ZERO",
    "auc_rank",
    "backward",
    "bucketize_numeric",
    "build_vocabulary",
    "clamp_probability",
    "codebook_objective",
    "compute_codebook",
    "dataset_from_encoded",
    "decode_rows",
    "embed_lookup",
    "encode_rows",
    "estimate_shapley",
    "evaluate",
    "exact_shapley_global",
    "exact_shapley_local",
    "forward",
    "frequency_bucket_report",
    "impute",
    "init_model",
    "load_csv_dataset",
    "load_model",
    "load_pruned",
    "log_loss",
    "parameter_budget",
    "predict_proba",
    "predict_proba_values",
    "prune",
    "prune_curve",
    "raw_scores",
    "read_csv_rows",
    "removal_loss_delta",
    "save_model",
    "score_magnitude",
    "score_taylor",
    "synthetic_rows",
    "synthetic_schema",
    "toy_rows",
    "train",
    "write_csv_rows",
    "write_curve_csv",
]
